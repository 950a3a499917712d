//! Synthetic corpora: procedural clean images, degradation rosters, the
//! manifest, and loading pairs back for training.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use amirnet_core::degrade::{apply_degradation, derive_seed, DegradationKind, DegradationParams, DegradationSpec, DegradationTemplate, DegradeError};
use amirnet_core::image::{Image, ImageError, ImagePair};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::imageio::{load_image, save_image, ImageIoError};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const GENERATION_VERSION: &str = "amirnet-corpus/1";

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("no PNG images in {0}")]
    EmptyClean(PathBuf),
    #[error("{0} already holds a corpus; refusing to overwrite")]
    Collision(PathBuf),
    #[error("n_per_type must be at least 1")]
    NoEntries,
    #[error("roster: {0}")]
    Roster(String),
    #[error("manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("entry {id}: {source}")]
    Degrade { id: String, source: DegradeError },
    #[error("entry {id}: {source}")]
    Pair { id: String, source: ImageError },
    #[error(transparent)]
    Image(#[from] ImageIoError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Paths relative to the corpus root.
    pub clean: PathBuf,
    pub degraded: PathBuf,
    /// File the clean image was copied from.
    pub source: String,
    pub spec: DegradationSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub version: String,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn read(dir: &Path) -> Result<Self, CorpusError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| CorpusError::Manifest { path: path.clone(), reason: e.to_string() })?;
        if m.version != GENERATION_VERSION {
            return Err(CorpusError::Manifest { path, reason: format!("unknown version {}", m.version) });
        }
        Ok(m)
    }

    pub fn write(&self, dir: &Path) -> Result<(), CorpusError> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(io_err(&path))
    }

    pub fn count_by_kind(&self) -> BTreeMap<DegradationKind, usize> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            *out.entry(e.spec.kind()).or_default() += 1;
        }
        out
    }
}

/// Default severity per kind when a roster names the kind alone.
pub fn default_params(kind: DegradationKind) -> DegradationParams {
    match kind {
        DegradationKind::GaussianNoise => DegradationParams::GaussianNoise { sigma: 25.0 / 255.0 },
        DegradationKind::GaussianBlur => DegradationParams::GaussianBlur { sigma: 2.0 },
        DegradationKind::MotionBlur => DegradationParams::MotionBlur { length: 9.0, angle: 45.0 },
        DegradationKind::DefocusBlur => DegradationParams::DefocusBlur { radius: 3.0 },
        DegradationKind::LowLight => DegradationParams::LowLight { gamma: 2.5, gain: 0.4 },
        DegradationKind::BlockCompression => DegradationParams::BlockCompression { quality: 10 },
    }
}

fn parse_number(s: &str) -> Result<f64, CorpusError> {
    let bad = || CorpusError::Roster(format!("bad number {s:?}"));
    match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| bad())?;
            let b: f64 = b.trim().parse().map_err(|_| bad())?;
            Ok(a / b)
        }
        None => s.trim().parse().map_err(|_| bad()),
    }
}

fn set_param(p: &mut DegradationParams, key: &str, v: f64) -> Result<(), CorpusError> {
    let kind = p.kind();
    let unknown = || CorpusError::Roster(format!("{kind} has no parameter {key:?}"));
    match (p, key) {
        (DegradationParams::GaussianNoise { sigma }, "sigma") | (DegradationParams::GaussianBlur { sigma }, "sigma") => *sigma = v,
        (DegradationParams::MotionBlur { length, .. }, "length") => *length = v,
        (DegradationParams::MotionBlur { angle, .. }, "angle") => *angle = v,
        (DegradationParams::DefocusBlur { radius }, "radius") => *radius = v,
        (DegradationParams::LowLight { gamma, .. }, "gamma") => *gamma = v,
        (DegradationParams::LowLight { gain, .. }, "gain") => *gain = v,
        (DegradationParams::BlockCompression { quality }, "quality") => {
            if v.fract() != 0.0 || !(1.0..=100.0).contains(&v) {
                return Err(CorpusError::Roster(format!("quality {v} is not an integer in 1..=100")));
            }
            *quality = v as u8
        }
        _ => return Err(unknown()),
    }
    Ok(())
}

/// Parses `kind[:key=v1|v2;key=v]` entries separated by commas. Values may
/// be fractions (`25/255`); alternatives expand to the cartesian product
/// of choices, drawn per entry by its seed.
pub fn parse_roster(s: &str) -> Result<Vec<DegradationTemplate>, CorpusError> {
    let mut out = Vec::new();
    for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let (name, rest) = item.split_once(':').unwrap_or((item, ""));
        let kind = DegradationKind::ALL
            .into_iter()
            .find(|k| k.name() == name.trim())
            .ok_or_else(|| CorpusError::Roster(format!("unknown degradation {name:?}")))?;
        let mut choices = vec![default_params(kind)];
        for kv in rest.split(';').map(str::trim).filter(|t| !t.is_empty()) {
            let (key, vals) = kv.split_once('=').ok_or_else(|| CorpusError::Roster(format!("expected key=value, got {kv:?}")))?;
            let vals: Vec<f64> = vals.split('|').map(parse_number).collect::<Result<_, _>>()?;
            let mut next = Vec::new();
            for c in &choices {
                for &v in &vals {
                    let mut p = c.clone();
                    set_param(&mut p, key.trim(), v)?;
                    next.push(p);
                }
            }
            choices = next;
        }
        for c in &choices {
            c.validate().map_err(|e| CorpusError::Roster(e.to_string()))?;
        }
        out.push(DegradationTemplate { choices });
    }
    if out.is_empty() {
        return Err(CorpusError::Roster("empty roster".into()));
    }
    Ok(out)
}

/// Dead-leaves clean image: opaque discs with random colors and radii
/// drawn with density `∝ r⁻³` on `[1, side/2]`, painted until the canvas
/// is covered, then mapped into [0.08, 0.92].
pub fn synthesize_clean(height: usize, width: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rmin, rmax) = (1.0f64, (height.min(width) as f64 / 2.0).max(1.5));
    let (a, b) = (rmin.powi(-2), rmax.powi(-2));
    let mut data = vec![0.0f32; height * width * 3];
    let mut painted = vec![false; height * width];
    let mut remaining = height * width;
    // Leaves are laid front to back: a pixel keeps the first disc that
    // covers it.
    for _ in 0..20_000 {
        if remaining == 0 {
            break;
        }
        let u: f64 = rng.random();
        let r = (a - u * (a - b)).powf(-0.5);
        let cy = rng.random_range(-r..height as f64 + r);
        let cx = rng.random_range(-r..width as f64 + r);
        let col = [rng.random::<f32>(), rng.random::<f32>(), rng.random::<f32>()];
        let (y0, y1) = ((cy - r).floor().max(0.0) as usize, ((cy + r).ceil() as usize).min(height));
        let (x0, x1) = ((cx - r).floor().max(0.0) as usize, ((cx + r).ceil() as usize).min(width));
        for y in y0..y1 {
            for x in x0..x1 {
                let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                let i = y * width + x;
                if !painted[i] && dy * dy + dx * dx <= r * r {
                    painted[i] = true;
                    remaining -= 1;
                    data[i * 3..][..3].copy_from_slice(&col);
                }
            }
        }
    }
    for v in &mut data {
        *v = 0.08 + 0.84 * *v;
    }
    Image::new(height, width, 3, data).expect("values in range")
}

/// Writes `n` procedural clean images as `NNNNN.png` into `dir`.
pub fn write_clean_set(dir: &Path, n: usize, height: usize, width: usize, seed: u64) -> Result<Vec<PathBuf>, CorpusError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    (0..n)
        .map(|i| {
            let path = dir.join(format!("{i:05}.png"));
            save_image(&synthesize_clean(height, width, derive_seed(seed, i as u64)), &path)?;
            Ok(path)
        })
        .collect()
}

fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>, CorpusError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

/// Roster entry `t`, replicate `j` gets index `t · n_per_type + j`, clean
/// source `index mod |clean|` (sorted by file name) and degradation seed
/// `derive_seed(seed, index)`.
pub fn generate_corpus(
    clean_dir: &Path,
    roster: &[DegradationTemplate],
    n_per_type: usize,
    out_dir: &Path,
    seed: u64,
) -> Result<CorpusManifest, CorpusError> {
    if n_per_type == 0 {
        return Err(CorpusError::NoEntries);
    }
    let sources = list_pngs(clean_dir)?;
    if sources.is_empty() {
        return Err(CorpusError::EmptyClean(clean_dir.to_path_buf()));
    }
    if out_dir.join(MANIFEST_FILE).exists() {
        return Err(CorpusError::Collision(out_dir.to_path_buf()));
    }
    let clean_out = out_dir.join("clean");
    let deg_out = out_dir.join("degraded");
    for d in [&clean_out, &deg_out] {
        fs::create_dir_all(d).map_err(io_err(d))?;
    }
    let cleans = sources.iter().map(load_image).collect::<Result<Vec<_>, _>>()?;
    let mut entries = Vec::with_capacity(roster.len() * n_per_type);
    for (t, template) in roster.iter().enumerate() {
        for j in 0..n_per_type {
            let index = t * n_per_type + j;
            let id = format!("{index:05}");
            let src = index % sources.len();
            let spec = template.realize(derive_seed(seed, index as u64));
            let degraded = apply_degradation(&cleans[src], &spec).map_err(|source| CorpusError::Degrade { id: id.clone(), source })?;
            let clean_rel = PathBuf::from("clean").join(format!("{id}.png"));
            let deg_rel = PathBuf::from("degraded").join(format!("{id}.png"));
            save_image(&cleans[src], out_dir.join(&clean_rel))?;
            save_image(&degraded, out_dir.join(&deg_rel))?;
            entries.push(ManifestEntry {
                id,
                clean: clean_rel,
                degraded: deg_rel,
                source: sources[src].file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
                spec,
            });
        }
    }
    let manifest = CorpusManifest { version: GENERATION_VERSION.into(), seed, entries };
    manifest.write(out_dir)?;
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub kind: DegradationKind,
    pub pair: ImagePair,
}

/// Loads every pair of a generated corpus in manifest order.
pub fn load_corpus(dir: &Path) -> Result<Vec<Sample>, CorpusError> {
    let manifest = CorpusManifest::read(dir)?;
    manifest
        .entries
        .iter()
        .map(|e| {
            let clean = load_image(dir.join(&e.clean))?;
            let degraded = load_image(dir.join(&e.degraded))?;
            let pair = ImagePair::new(degraded, clean, Some(e.spec.clone())).map_err(|source| CorpusError::Pair { id: e.id.clone(), source })?;
            Ok(Sample { id: e.id.clone(), kind: e.spec.kind(), pair })
        })
        .collect()
}

/// Deterministic 10% hold-out: the first 8 bytes of SHA-256(id), read
/// big-endian, are ≡ 0 mod 10.
pub fn is_validation(id: &str) -> bool {
    let digest = Sha256::digest(id.as_bytes());
    let head = u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"));
    head % 10 == 0
}

/// `(train, validation)`, each in manifest order.
pub fn split(samples: &[Sample]) -> (Vec<Sample>, Vec<Sample>) {
    samples.iter().cloned().partition(|s| !is_validation(&s.id))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roster_parsing() {
        let r = parse_roster("gaussian_noise:sigma=15/255|50/255, low_light:gamma=2;gain=0.5|0.3,block_compression").unwrap();
        assert_eq!(r.len(), 3);
        assert_eq!(r[0].choices.len(), 2);
        assert_eq!(r[0].choices[1], DegradationParams::GaussianNoise { sigma: 50.0 / 255.0 });
        assert_eq!(r[1].choices, vec![
            DegradationParams::LowLight { gamma: 2.0, gain: 0.5 },
            DegradationParams::LowLight { gamma: 2.0, gain: 0.3 },
        ]);
        assert_eq!(r[2].choices, vec![DegradationParams::BlockCompression { quality: 10 }]);
        assert!(parse_roster("rain").is_err());
        assert!(parse_roster("gaussian_noise:radius=2").is_err());
        assert!(parse_roster("gaussian_noise:sigma=3").is_err());
        assert!(parse_roster("").is_err());
    }

    #[test]
    fn synthetic_images_deterministic_and_interior() {
        let a = synthesize_clean(24, 32, 5);
        assert_eq!(a, synthesize_clean(24, 32, 5));
        assert_ne!(a, synthesize_clean(24, 32, 6));
        assert!(a.data().iter().all(|&v| (0.079..=0.921).contains(&v)));
    }

    #[test]
    fn validation_split_near_ten_percent() {
        let n = (0..1000).filter(|i| is_validation(&format!("{i:05}"))).count();
        assert!((70..=130).contains(&n), "{n}");
    }
}
