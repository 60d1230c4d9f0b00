//! Raster layers to RGBA PNG.
//!
//! Multi-band layers are shown as a false-color composite of three bands,
//! each stretched linearly between its 2nd and 98th percentile (nearest
//! rank over the valid cells of the whole band). A band whose two
//! percentiles coincide renders as 128. Similarity scores go through a fixed
//! 5-stop viridis ramp over [0, 1]; class layers use a fixed categorical
//! palette. Nodata is fully transparent.

use geofeat::raster_io::Raster;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Composite,
    Ramp,
    Categorical,
}

/// Column, row, width, height in layer pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub col: usize,
    pub row: usize,
    pub width: usize,
    pub height: usize,
}

impl Window {
    pub fn full(r: &Raster) -> Self {
        Self { col: 0, row: 0, width: r.width, height: r.height }
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let v: Vec<usize> = text
            .split(',')
            .map(|s| s.trim().parse::<usize>().map_err(|_| format!("bad window component {s:?}")))
            .collect::<Result<_, _>>()?;
        match v[..] {
            [col, row, width, height] => Ok(Self { col, row, width, height }),
            _ => Err("window must be col,row,width,height".into()),
        }
    }

    fn check(&self, r: &Raster) -> Result<(), String> {
        if self.width == 0 || self.height == 0 || self.col + self.width > r.width || self.row + self.height > r.height {
            return Err(format!("window {self:?} outside the {}x{} layer", r.width, r.height));
        }
        Ok(())
    }
}

/// Stops at s = 0, 0.25, 0.5, 0.75, 1.
pub const VIRIDIS: [[u8; 3]; 5] = [[68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37]];

const PALETTE: [[u8; 3]; 12] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
    [174, 199, 232],
    [255, 187, 120],
];

pub fn ramp(s: f32) -> [u8; 3] {
    let s = s.clamp(0.0, 1.0) as f64 * 4.0;
    let i = (s.floor() as usize).min(3);
    let t = s - i as f64;
    let (a, b) = (VIRIDIS[i], VIRIDIS[i + 1]);
    std::array::from_fn(|c| (a[c] as f64 + (b[c] as f64 - a[c] as f64) * t).round() as u8)
}

pub fn class_color(class: f32) -> [u8; 3] {
    PALETTE[(class as i64).rem_euclid(PALETTE.len() as i64) as usize]
}

/// Nearest-rank percentile of sorted values.
pub fn percentile(sorted: &[f32], p: f64) -> f32 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// (low, high) stretch bounds of a band, `None` when it has no valid cell.
pub fn stretch_bounds(values: &[f32]) -> Option<(f32, f32)> {
    let mut v: Vec<f32> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f32::total_cmp);
    Some((percentile(&v, 2.0), percentile(&v, 98.0)))
}

fn stretch(v: f32, (lo, hi): (f32, f32)) -> u8 {
    if hi <= lo {
        return 128;
    }
    (((v - lo) / (hi - lo)) * 255.0).round().clamp(0.0, 255.0) as u8
}

/// RGBA pixels of `window`. `bands` are 0-based and only used by composites;
/// fewer than three repeat the last one.
pub fn render_rgba(r: &Raster, style: Style, bands: &[usize], window: Window) -> Result<Vec<u8>, String> {
    window.check(r)?;
    let mut chosen: Vec<usize> = if bands.is_empty() { (0..r.band_count.min(3)).collect() } else { bands.to_vec() };
    if let Some(b) = chosen.iter().find(|&&b| b >= r.band_count) {
        return Err(format!("band {} not in a {}-band layer", b + 1, r.band_count));
    }
    if chosen.len() > 3 {
        return Err("at most three bands".into());
    }
    while chosen.len() < 3 {
        chosen.push(*chosen.last().expect("at least one band"));
    }
    let bounds: Vec<Option<(f32, f32)>> = match style {
        Style::Composite => chosen.iter().map(|&b| stretch_bounds(r.band(b))).collect(),
        _ => Vec::new(),
    };
    let mut out = Vec::with_capacity(window.width * window.height * 4);
    for y in window.row..window.row + window.height {
        for x in window.col..window.col + window.width {
            let cell = y * r.width + x;
            let px = match style {
                Style::Composite => {
                    let vals: Vec<f32> = chosen.iter().map(|&b| r.band(b)[cell]).collect();
                    if vals.iter().any(|v| !v.is_finite()) {
                        None
                    } else {
                        Some(std::array::from_fn(|c| bounds[c].map_or(128, |bd| stretch(vals[c], bd))))
                    }
                }
                Style::Ramp => Some(r.band(0)[cell]).filter(|v| v.is_finite()).map(ramp),
                Style::Categorical => Some(r.band(0)[cell]).filter(|v| v.is_finite() && *v >= 0.0).map(class_color),
            };
            match px {
                Some([a, b, c]) => out.extend([a, b, c, 255]),
                None => out.extend([0, 0, 0, 0]),
            }
        }
    }
    Ok(out)
}

pub fn encode_png(width: usize, height: usize, rgba: &[u8]) -> Result<Vec<u8>, String> {
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, width as u32, height as u32);
        enc.set_color(png::ColorType::Rgba);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| e.to_string())?;
        w.write_image_data(rgba).map_err(|e| e.to_string())?;
        w.finish().map_err(|e| e.to_string())?;
    }
    Ok(buf)
}

pub fn render_png(r: &Raster, style: Style, bands: &[usize], window: Window) -> Result<Vec<u8>, String> {
    let rgba = render_rgba(r, style, bands, window)?;
    encode_png(window.width, window.height, &rgba)
}

#[cfg(test)]
mod tests {
    use super::*;
    use geofeat::raster_io::GeoTransform;

    fn raster(bands: usize, data: Vec<f32>) -> Raster {
        Raster::new(10, 10, bands, GeoTransform::unit(), "", data).unwrap()
    }

    #[test]
    fn ramp_endpoints() {
        assert_eq!(ramp(1.0), VIRIDIS[4]);
        assert_eq!(ramp(0.0), VIRIDIS[0]);
        assert_eq!(ramp(0.5), VIRIDIS[2]);
    }

    #[test]
    fn nearest_rank() {
        let v: Vec<f32> = (1..=100).map(|i| i as f32).collect();
        assert_eq!(percentile(&v, 2.0), 2.0);
        assert_eq!(percentile(&v, 98.0), 98.0);
        assert_eq!(percentile(&[5.0], 2.0), 5.0);
    }

    #[test]
    fn constant_band_is_mid_gray() {
        let r = raster(3, (0..300).map(|i| if i < 100 { 7.0 } else { i as f32 }).collect());
        let px = render_rgba(&r, Style::Composite, &[0, 1, 2], Window::full(&r)).unwrap();
        assert!(px.chunks(4).all(|p| p[0] == 128 && p[3] == 255));
        assert_eq!(px[4 * 99 + 1], 255);
    }

    #[test]
    fn nodata_transparent_and_window_shape() {
        let mut data = vec![0.5f32; 100];
        data[0] = f32::NAN;
        let r = raster(1, data);
        let px = render_rgba(&r, Style::Ramp, &[], Window { col: 0, row: 0, width: 3, height: 2 }).unwrap();
        assert_eq!(px.len(), 3 * 2 * 4);
        assert_eq!(px[3], 0);
        assert_eq!(px[7], 255);
        assert!(render_rgba(&r, Style::Ramp, &[], Window { col: 8, row: 0, width: 3, height: 1 }).is_err());
        assert!(render_rgba(&r, Style::Composite, &[1], Window::full(&r)).is_err());
    }

    #[test]
    fn png_round_trip_shape() {
        let r = raster(1, vec![1.0; 100]);
        let bytes = render_png(&r, Style::Categorical, &[], Window { col: 2, row: 3, width: 4, height: 5 }).unwrap();
        let dec = png::Decoder::new(std::io::Cursor::new(bytes));
        let reader = dec.read_info().unwrap();
        assert_eq!((reader.info().width, reader.info().height), (4, 5));
    }
}
