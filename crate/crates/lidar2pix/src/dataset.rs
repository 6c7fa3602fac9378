//! Paired-sample dataset on disk: a line-oriented manifest plus per-pair
//! input raster, target image, and scene metadata files, with deterministic
//! seed-disjoint train/test splitting.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::EvalItem;
use crate::lidar::SensorConfig;
use crate::pix2pix::TrainPair;
use crate::raster::{to_model_range, ChannelMode, RasterImage};
use crate::raster::project_frame;
use crate::scene::{generate_scene, render_camera, simulate_lidar, SceneMeta, SceneParams};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid("Split", format!("unknown split '{other}'"))),
        }
    }
}

/// One catalogued pair. Paths follow the fixed layout under the dataset
/// root: `pairs/<id>.l2ri`, `pairs/<id>.png`, `pairs/<id>.meta`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairedSample {
    pub id: String,
    pub seed: u64,
    pub split: Split,
}

impl PairedSample {
    pub fn input_path(&self, root: &Path) -> PathBuf {
        root.join("pairs").join(format!("{}.l2ri", self.id))
    }
    pub fn target_path(&self, root: &Path) -> PathBuf {
        root.join("pairs").join(format!("{}.png", self.id))
    }
    pub fn meta_path(&self, root: &Path) -> PathBuf {
        root.join("pairs").join(format!("{}.meta", self.id))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub version: u32,
    pub mode: ChannelMode,
    pub width: usize,
    pub height: usize,
    pub subsample: usize,
    pub sensor: SensorConfig,
    pub entries: Vec<PairedSample>,
    /// Directory holding `manifest.txt` and `pairs/`. Not serialized.
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        self.sensor.validate()?;
        let mut ids: Vec<&str> = self.entries.iter().map(|e| e.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("DatasetManifest", "duplicate pair ids"));
        }
        let train: Vec<u64> = self
            .entries
            .iter()
            .filter(|e| e.split == Split::Train)
            .map(|e| e.seed)
            .collect();
        if self
            .entries
            .iter()
            .any(|e| e.split == Split::Test && train.contains(&e.seed))
        {
            return Err(Error::invalid("DatasetManifest", "test seed also appears in train"));
        }
        Ok(())
    }

    pub fn entries_in(&self, split: Split) -> Vec<&PairedSample> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "version={}", self.version).unwrap();
        writeln!(out, "mode={}", self.mode.name()).unwrap();
        writeln!(out, "width={}", self.width).unwrap();
        writeln!(out, "height={}", self.height).unwrap();
        writeln!(out, "subsample={}", self.subsample).unwrap();
        writeln!(out, "h_fov={}", self.sensor.h_fov).unwrap();
        writeln!(out, "v_fov={}", self.sensor.v_fov).unwrap();
        writeln!(out, "az_res={}", self.sensor.az_res).unwrap();
        writeln!(out, "el_res={}", self.sensor.el_res).unwrap();
        writeln!(out, "min_range={}", self.sensor.min_range).unwrap();
        writeln!(out, "max_range={}", self.sensor.max_range).unwrap();
        for e in &self.entries {
            writeln!(out, "pair={} {} {}", e.id, e.seed, e.split.name()).unwrap();
        }
        out
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut fields = std::collections::HashMap::new();
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, format!("line {}: missing '='", lineno + 1)))?;
            if key == "pair" {
                let mut it = value.split_whitespace();
                let (Some(id), Some(seed), Some(split)) = (it.next(), it.next(), it.next()) else {
                    return Err(Error::parse(path, format!("line {}: malformed pair entry", lineno + 1)));
                };
                entries.push(PairedSample {
                    id: id.to_string(),
                    seed: seed
                        .parse()
                        .map_err(|_| Error::parse(path, format!("line {}: bad seed", lineno + 1)))?,
                    split: Split::parse(split)?,
                });
            } else {
                fields.insert(key.to_string(), value.to_string());
            }
        }
        let get = |k: &str| {
            fields
                .get(k)
                .ok_or_else(|| Error::parse(path, format!("missing field '{k}'")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::parse(path, format!("field '{k}' is not a number")))
        };
        let manifest = DatasetManifest {
            version: num("version")? as u32,
            mode: ChannelMode::parse(get("mode")?)?,
            width: num("width")? as usize,
            height: num("height")? as usize,
            subsample: num("subsample")? as usize,
            sensor: SensorConfig {
                h_fov: num("h_fov")?,
                v_fov: num("v_fov")?,
                az_res: num("az_res")?,
                el_res: num("el_res")?,
                min_range: num("min_range")?,
                max_range: num("max_range")?,
            },
            entries,
            root: path.parent().unwrap_or(Path::new(".")).to_path_buf(),
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self) -> Result<PathBuf> {
        self.validate()?;
        let path = self.root.join(MANIFEST_FILE);
        std::fs::write(&path, self.to_text()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }

    /// Pairs of one split, mapped to the model's [-1,1] value range.
    pub fn train_pairs(&self, split: Split) -> Result<Vec<TrainPair>> {
        self.entries_in(split)
            .iter()
            .map(|e| {
                let (input, target, _) = load_pair(self, e)?;
                Ok(TrainPair {
                    input: to_model_range(&input),
                    target: to_model_range(&target),
                })
            })
            .collect()
    }

    /// Pairs of one split, packaged for evaluation.
    pub fn eval_items(&self, split: Split) -> Result<Vec<EvalItem>> {
        self.entries_in(split)
            .iter()
            .map(|e| {
                let (input, target, meta) = load_pair(self, e)?;
                Ok(EvalItem {
                    id: e.id.clone(),
                    input,
                    target,
                    meta,
                })
            })
            .collect()
    }
}

/// Worker count for pair generation: number of cores, capped by L2P_THREADS,
/// forced to 1 when L2P_DETERMINISTIC=1.
pub fn worker_threads() -> usize {
    if std::env::var("L2P_DETERMINISTIC").as_deref() == Ok("1") {
        return 1;
    }
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var("L2P_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        Some(cap) if cap >= 1 => cores.min(cap),
        _ => cores,
    }
}

/// Generate `count` scene/render/projection triples with seeds `seed..seed+count`
/// and write them plus the manifest under `out_dir`. Every entry starts in the
/// train split; call [`split`] afterwards. Output is a pure function of the
/// arguments regardless of worker count.
#[allow(clippy::too_many_arguments)]
pub fn build_dataset(
    count: usize,
    seed: u64,
    params: &SceneParams,
    sensor: &SensorConfig,
    mode: ChannelMode,
    width: usize,
    height: usize,
    subsample: usize,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    if count < 2 {
        return Err(Error::invalid("build_dataset", "count must be >= 2"));
    }
    let pairs_dir = out_dir.join("pairs");
    std::fs::create_dir_all(&pairs_dir).map_err(|e| Error::io(&pairs_dir, e))?;

    let build_one = |i: usize| -> Result<PairedSample> {
        let pair_seed = seed + i as u64;
        let entry = PairedSample {
            id: format!("{pair_seed:08}"),
            seed: pair_seed,
            split: Split::Train,
        };
        let scene = generate_scene(pair_seed, params)?;
        let cloud = simulate_lidar(&scene, sensor, subsample)?;
        let input = project_frame(&cloud, sensor, mode, width, height)?;
        let (target, meta) = render_camera(&scene, sensor, width, height)?;
        input.save(&entry.input_path(out_dir))?;
        target.save_rgb_png(&entry.target_path(out_dir))?;
        meta.save(&entry.meta_path(out_dir))?;
        Ok(entry)
    };

    let workers = worker_threads();
    let entries: Vec<PairedSample> = if workers <= 1 {
        (0..count).map(build_one).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::invalid("build_dataset", format!("thread pool: {e}")))?;
        pool.install(|| (0..count).into_par_iter().map(build_one).collect::<Result<_>>())?
    };

    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        mode,
        width,
        height,
        subsample,
        sensor: sensor.clone(),
        entries,
        root: out_dir.to_path_buf(),
    };
    manifest.save()?;
    Ok(manifest)
}

/// Reassign splits by a seeded shuffle. Seeds are unique per entry, so a
/// partition of entries is automatically seed-disjoint.
pub fn split(manifest: &DatasetManifest, test_fraction: f64, seed: u64) -> Result<DatasetManifest> {
    if !(0.0 < test_fraction && test_fraction < 1.0) {
        return Err(Error::invalid("split", "test_fraction must be in (0,1)"));
    }
    let n = manifest.entries.len();
    let n_test = ((n as f64) * test_fraction).round() as usize;
    if n_test == 0 || n_test == n {
        return Err(Error::invalid(
            "split",
            format!("fraction {test_fraction} leaves an empty side for {n} entries"),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut out = manifest.clone();
    for (rank, &idx) in order.iter().enumerate() {
        out.entries[idx].split = if rank < n_test { Split::Test } else { Split::Train };
    }
    out.validate()?;
    Ok(out)
}

/// Load one pair's artifacts, checking that input and target agree in size.
pub fn load_pair(
    manifest: &DatasetManifest,
    entry: &PairedSample,
) -> Result<(RasterImage, RasterImage, SceneMeta)> {
    let input = RasterImage::load(&entry.input_path(&manifest.root))?;
    let target = RasterImage::load_rgb_png(&entry.target_path(&manifest.root))?;
    let meta = SceneMeta::load(&entry.meta_path(&manifest.root))?;
    if input.width() != target.width() || input.height() != target.height() {
        return Err(Error::ShapeMismatch {
            expected: format!("target sized {}x{}", input.width(), input.height()),
            got: format!("{}x{}", target.width(), target.height()),
        });
    }
    if input.channels() != manifest.mode.channels() {
        return Err(Error::ShapeMismatch {
            expected: format!("{}-channel input", manifest.mode.channels()),
            got: format!("{} channels", input.channels()),
        });
    }
    Ok((input, target, meta))
}
