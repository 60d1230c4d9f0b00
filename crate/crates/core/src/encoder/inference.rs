use std::fs;
use std::path::PathBuf;
use std::time::Duration;

use rayon::prelude::*;

use super::checkpoint::{self, CheckpointManifest, RunParams};
use super::weights::sha256_hex;
use super::{PatchFeatureGrid, TileEncoder};
use crate::error::{Error, Result};
use crate::raster_io::{BandStats, RasterDataset};
use crate::tiler::{normalize_block, TilePlan};

#[derive(Debug, Clone)]
pub struct InferenceOptions {
    pub batch_size: usize,
    pub workers: usize,
    /// Sleep between consecutive batches.
    pub pause_ms: u64,
    pub checkpoint_dir: PathBuf,
    pub resume: bool,
    /// Return `Error::Interrupted` after this many batches were computed by
    /// this call. Used to exercise resume.
    pub stop_after_batches: Option<usize>,
    pub params: RunParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Progress {
    pub completed_batches: usize,
    pub total_batches: usize,
}

#[derive(Debug, Clone)]
pub struct InferenceOutcome {
    pub manifest: CheckpointManifest,
    pub checkpoint_dir: PathBuf,
    /// Batches found on disk at start.
    pub reused_batches: usize,
    pub computed_batches: usize,
}

impl InferenceOutcome {
    /// Grids of one batch, in plan order.
    pub fn read_batch(&self, id: usize) -> Result<Vec<PatchFeatureGrid>> {
        Ok(checkpoint::read_batch(&checkpoint::batch_path(&self.checkpoint_dir, id))?.1)
    }

    pub fn n_batches(&self) -> usize {
        self.manifest.n_batches()
    }

    pub fn cleanup(&self) -> Result<()> {
        checkpoint::clear(&self.checkpoint_dir)
    }
}

pub fn plan_fingerprint(plan: &TilePlan) -> String {
    sha256_hex(&serde_json::to_vec(plan).expect("plan serializes"))
}

fn encode_one(
    ds: &RasterDataset,
    encoder: &dyn TileEncoder,
    bands: &[usize],
    stats: &BandStats,
    size: usize,
    (col, row): (usize, usize),
) -> Result<PatchFeatureGrid> {
    let block = ds.read_window(col, row, size, size, bands)?;
    let mut tile = normalize_block(&block, stats)?;
    for v in tile.data.iter_mut().filter(|v| v.is_nan()) {
        *v = 0.0;
    }
    encoder.encode(&tile)
}

/// Encode every tile of `plan`, batch by batch, persisting each batch before
/// moving on. With `resume`, batches already recorded in a compatible
/// checkpoint are skipped.
pub fn run_inference(
    ds: &RasterDataset,
    plan: &TilePlan,
    encoder: &dyn TileEncoder,
    bands: &[usize],
    stats: &BandStats,
    options: &InferenceOptions,
    progress: &mut dyn FnMut(Progress),
) -> Result<InferenceOutcome> {
    if options.batch_size == 0 {
        return Err(Error::invalid("batch_size must be at least 1"));
    }
    if bands.len() != encoder.in_bands() {
        return Err(Error::ShapeMismatch(format!(
            "encoder takes {} bands, {} selected",
            encoder.in_bands(),
            bands.len()
        )));
    }
    if plan.sample_size != encoder.sample_size() {
        return Err(Error::ShapeMismatch(format!(
            "plan tiles are {}px, encoder expects {}px",
            plan.sample_size,
            encoder.sample_size()
        )));
    }
    if stats.len() != bands.len() {
        return Err(Error::ShapeMismatch(format!(
            "stats describe {} bands, {} selected",
            stats.len(),
            bands.len()
        )));
    }
    if plan.raster_width != ds.width || plan.raster_height != ds.height {
        return Err(Error::ShapeMismatch("tile plan was made for a different raster".into()));
    }

    let dir = options.checkpoint_dir.clone();
    let mut manifest = CheckpointManifest {
        model_fingerprint: encoder.fingerprint(),
        plan_fingerprint: plan_fingerprint(plan),
        params: options.params.clone(),
        batch_size: options.batch_size,
        n_tiles: plan.len(),
        completed: Default::default(),
    };
    if options.resume {
        if let Some(existing) = CheckpointManifest::load(&dir)? {
            existing.check_compatible(&manifest)?;
            manifest.completed = existing
                .completed
                .into_iter()
                .filter(|&id| checkpoint::batch_path(&dir, id).exists())
                .collect();
        }
    } else {
        checkpoint::clear(&dir)?;
    }
    fs::create_dir_all(&dir)?;
    manifest.save(&dir)?;

    let total = manifest.n_batches();
    let reused = manifest.completed.len();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;

    progress(Progress {
        completed_batches: reused,
        total_batches: total,
    });
    let mut computed = 0;
    for id in 0..total {
        if manifest.completed.contains(&id) {
            continue;
        }
        if options.stop_after_batches.is_some_and(|n| computed >= n) {
            return Err(Error::Interrupted {
                completed: manifest.completed.len(),
                total,
            });
        }
        if computed > 0 && options.pause_ms > 0 {
            std::thread::sleep(Duration::from_millis(options.pause_ms));
        }
        let offsets = &plan.offsets[plan.batch_range(options.batch_size, id)];
        let grids: Vec<PatchFeatureGrid> = pool.install(|| {
            offsets
                .par_iter()
                .map(|&off| encode_one(ds, encoder, bands, stats, plan.sample_size, off))
                .collect::<Result<_>>()
        })?;
        checkpoint::write_batch(&dir, id, &grids)?;
        manifest.completed.insert(id);
        manifest.save(&dir)?;
        computed += 1;
        progress(Progress {
            completed_batches: manifest.completed.len(),
            total_batches: total,
        });
    }
    log::info!("inference: {total} batches, {reused} reused, {computed} computed");
    Ok(InferenceOutcome {
        manifest,
        checkpoint_dir: dir,
        reused_batches: reused,
        computed_batches: computed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{build_reference_vit, ReferenceVit, ViTConfig};
    use crate::raster_io::{GeoTransform, Raster, WriteOptions};
    use crate::tiler::plan_tiles;
    use crate::raster_io::open_raster;

    fn encoder() -> ReferenceVit {
        let cfg = ViTConfig {
            patch_size: 4,
            embed_dim: 8,
            depth: 1,
            heads: 2,
            mlp_ratio: 2.0,
            in_bands: 2,
            sample_size: 16,
        };
        ReferenceVit::new(build_reference_vit(&cfg).unwrap()).unwrap()
    }

    fn raster(dir: &std::path::Path) -> RasterDataset {
        let (w, h) = (40, 36);
        let data = (0..2 * w * h)
            .map(|i| if i == 5 { f32::NAN } else { ((i * 37 % 101) as f32).sin() })
            .collect();
        let r = Raster::new(w, h, 2, GeoTransform::unit(), "EPSG:32633", data).unwrap();
        let p = dir.join("in.tif");
        r.write(&p, WriteOptions::default()).unwrap();
        open_raster(&p).unwrap()
    }

    fn options(dir: &std::path::Path, workers: usize) -> InferenceOptions {
        InferenceOptions {
            batch_size: 3,
            workers,
            pause_ms: 0,
            checkpoint_dir: dir.join("ck"),
            resume: false,
            stop_after_batches: None,
            params: RunParams {
                sample_size: 16,
                stride: 8,
                bands: vec![0, 1],
                adaptation: "none".into(),
                quantized: false,
            },
        }
    }

    fn all_grids(o: &InferenceOutcome) -> Vec<PatchFeatureGrid> {
        (0..o.n_batches()).flat_map(|id| o.read_batch(id).unwrap()).collect()
    }

    #[test]
    fn worker_count_does_not_change_output() {
        let dir = tempfile::tempdir().unwrap();
        let ds = raster(dir.path());
        let plan = plan_tiles(40, 36, 16, 8).unwrap();
        let stats = crate::raster_io::compute_band_stats(&ds, 1 << 20, 0).unwrap();
        let enc = encoder();
        let mut seen = Vec::new();
        let a = run_inference(&ds, &plan, &enc, &[0, 1], &stats, &options(dir.path(), 1), &mut |p| seen.push(p)).unwrap();
        let ga = all_grids(&a);
        assert_eq!(ga.len(), plan.len());
        assert!(ga.iter().all(|g| g.data.iter().all(|v| v.is_finite())));
        assert_eq!(seen.last().unwrap().completed_batches, plan.batch_count(3));
        let b = run_inference(&ds, &plan, &enc, &[0, 1], &stats, &options(dir.path(), 4), &mut |_| {}).unwrap();
        assert_eq!(all_grids(&b), ga);
    }

    #[test]
    fn interrupted_run_resumes_to_same_result() {
        let dir = tempfile::tempdir().unwrap();
        let ds = raster(dir.path());
        let plan = plan_tiles(40, 36, 16, 8).unwrap();
        let stats = BandStats::identity(2);
        let enc = encoder();
        let full = all_grids(&run_inference(&ds, &plan, &enc, &[0, 1], &stats, &options(dir.path(), 2), &mut |_| {}).unwrap());

        let mut opts = options(dir.path(), 2);
        opts.stop_after_batches = Some(2);
        let err = run_inference(&ds, &plan, &enc, &[0, 1], &stats, &opts, &mut |_| {}).unwrap_err();
        assert!(matches!(err, Error::Interrupted { completed: 2, .. }), "{err}");
        assert!(err.is_resumable());

        opts.stop_after_batches = None;
        opts.resume = true;
        let resumed = run_inference(&ds, &plan, &enc, &[0, 1], &stats, &opts, &mut |_| {}).unwrap();
        assert_eq!(resumed.reused_batches, 2);
        assert_eq!(resumed.computed_batches, plan.batch_count(3) - 2);
        assert_eq!(all_grids(&resumed), full);
    }

    #[test]
    fn resume_rejects_changed_plan() {
        let dir = tempfile::tempdir().unwrap();
        let ds = raster(dir.path());
        let stats = BandStats::identity(2);
        let enc = encoder();
        let mut opts = options(dir.path(), 1);
        opts.stop_after_batches = Some(1);
        let plan = plan_tiles(40, 36, 16, 8).unwrap();
        let _ = run_inference(&ds, &plan, &enc, &[0, 1], &stats, &opts, &mut |_| {});
        opts.resume = true;
        let other = plan_tiles(40, 36, 16, 12).unwrap();
        let err = run_inference(&ds, &other, &enc, &[0, 1], &stats, &opts, &mut |_| {}).unwrap_err();
        assert!(err.to_string().contains("plan fingerprint mismatch"), "{err}");
    }

    #[test]
    fn missing_batch_file_is_recomputed() {
        let dir = tempfile::tempdir().unwrap();
        let ds = raster(dir.path());
        let plan = plan_tiles(40, 36, 16, 8).unwrap();
        let stats = BandStats::identity(2);
        let enc = encoder();
        let mut opts = options(dir.path(), 1);
        let first = run_inference(&ds, &plan, &enc, &[0, 1], &stats, &opts, &mut |_| {}).unwrap();
        let full = all_grids(&first);
        fs::remove_file(checkpoint::batch_path(&opts.checkpoint_dir, 1)).unwrap();
        opts.resume = true;
        let again = run_inference(&ds, &plan, &enc, &[0, 1], &stats, &opts, &mut |_| {}).unwrap();
        assert_eq!(again.computed_batches, 1);
        assert_eq!(all_grids(&again), full);
        again.cleanup().unwrap();
        assert!(!opts.checkpoint_dir.exists());
    }

    #[test]
    fn band_count_checked() {
        let dir = tempfile::tempdir().unwrap();
        let ds = raster(dir.path());
        let plan = plan_tiles(40, 36, 16, 8).unwrap();
        let err = run_inference(&ds, &plan, &encoder(), &[0], &BandStats::identity(1), &options(dir.path(), 1), &mut |_| {});
        assert!(matches!(err, Err(Error::ShapeMismatch(_))));
    }
}
