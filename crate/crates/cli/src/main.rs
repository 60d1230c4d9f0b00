fn main() {
    std::process::exit(geofeat_cli::cli::main_with(std::env::args_os()));
}
