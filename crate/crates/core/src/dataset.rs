//! Corpus manifests, material labels and the leakage-free train/test split.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fx::AugmentationRecord;

pub const SCHEMA_VERSION: u32 = 1;
pub const MATERIALS: [&str; 6] = ["wood", "metal", "rock", "cloth", "earth", "other"];
pub const DEFAULT_TEST_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: String,
    pub material: String,
    /// Id of the recording this entry derives from; its own id for originals.
    pub source: String,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augmentation: Option<AugmentationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            entries,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        if m.schema_version != SCHEMA_VERSION {
            return Err(Error::Version {
                found: m.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Manifest(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn resolve(&self, entry: &ManifestEntry, base: &Path) -> PathBuf {
        let p = Path::new(&entry.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }
}

/// Label is a lowercase token: letters, digits, `_` or `-`.
pub fn valid_label(label: &str) -> bool {
    !label.is_empty()
        && label
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '-')
}

#[derive(Debug, Clone, PartialEq)]
pub enum LabelRule {
    /// First directory below the root names the material.
    DirectoryName,
    Fixed(String),
}

fn collect_wavs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut items: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|d| d.map(|d| d.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<_>>()?;
    items.sort();
    for p in items {
        if p.is_dir() {
            collect_wavs(&p, out)?;
        } else if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            out.push(p);
        }
    }
    Ok(())
}

/// Alphabetical scan of `root/<material>/**/*.wav`. Paths are stored
/// relative to `root`; everything lands in the train split.
pub fn build_manifest(root: impl AsRef<Path>, rule: &LabelRule) -> Result<Manifest> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::Manifest(format!("{} is not a directory", root.display())));
    }
    let mut files = Vec::new();
    collect_wavs(root, &mut files)?;
    if files.is_empty() {
        return Err(Error::Manifest(format!("no WAV files under {}", root.display())));
    }
    let mut entries = Vec::with_capacity(files.len());
    for f in files {
        let rel = f.strip_prefix(root).expect("scanned below root");
        let rel_str = rel.to_string_lossy().replace('\\', "/");
        let material = match rule {
            LabelRule::Fixed(m) => m.clone(),
            LabelRule::DirectoryName => {
                if rel.components().count() > 1 {
                    rel.components().next().unwrap().as_os_str().to_string_lossy().to_lowercase()
                } else {
                    "other".to_string()
                }
            }
        };
        let reader = hound::WavReader::open(&f).map_err(|e| Error::Wav(format!("{}: {e}", f.display())))?;
        let spec = reader.spec();
        let frames = reader.duration();
        let id = rel_str.strip_suffix(".wav").or_else(|| rel_str.strip_suffix(".WAV")).unwrap_or(&rel_str).to_string();
        entries.push(ManifestEntry {
            source: id.clone(),
            id,
            path: rel_str.clone(),
            material,
            duration_s: frames as f64 / spec.sample_rate as f64,
            sample_rate: spec.sample_rate,
            split: Split::Train,
            augmentation: None,
        });
    }
    Ok(Manifest::new(entries))
}

/// Stratified split by material over source recordings: each material's
/// sources are shuffled and `round(fraction · n)` of them go to test. Every
/// entry follows its source, so augmented variants never cross the split.
pub fn split_dataset(m: &Manifest, test_fraction: f64, seed: u64) -> Result<Manifest> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::param("test_fraction", "must lie in (0, 1)"));
    }
    // material of a source: that of its own entry, else of its first variant
    let mut source_material: BTreeMap<&str, &str> = BTreeMap::new();
    for e in &m.entries {
        if e.id == e.source {
            source_material.insert(&e.source, &e.material);
        }
    }
    for e in &m.entries {
        source_material.entry(&e.source).or_insert(&e.material);
    }
    let mut by_material: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (src, mat) in &source_material {
        by_material.entry(mat).or_default().push(src);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test_sources: HashSet<&str> = HashSet::new();
    for (mat, mut sources) in by_material {
        if sources.len() < 2 {
            log::warn!("material {mat:?} has {} source(s); all assigned to train", sources.len());
            continue;
        }
        sources.shuffle(&mut rng);
        let n_test = (test_fraction * sources.len() as f64).round() as usize;
        test_sources.extend(&sources[..n_test]);
    }
    let entries = m
        .entries
        .iter()
        .map(|e| ManifestEntry {
            split: if test_sources.contains(e.source.as_str()) { Split::Test } else { Split::Train },
            ..e.clone()
        })
        .collect();
    Ok(Manifest {
        schema_version: m.schema_version,
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    MissingFile,
    Unreadable,
    DuplicateId,
    InvalidLabel,
    Leakage,
    SchemaVersion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub id: String,
    pub detail: String,
}

/// Sources whose entries straddle the split.
pub fn leakage_violations(m: &Manifest) -> Vec<Violation> {
    let mut splits: BTreeMap<&str, HashSet<Split>> = BTreeMap::new();
    for e in &m.entries {
        splits.entry(&e.source).or_default().insert(e.split);
        if let Some(a) = &e.augmentation {
            splits.entry(&a.source_id).or_default().insert(e.split);
        }
    }
    splits
        .into_iter()
        .filter(|(_, s)| s.len() > 1)
        .map(|(src, _)| Violation {
            kind: ViolationKind::Leakage,
            id: src.to_string(),
            detail: "source and its variants fall in both splits".into(),
        })
        .collect()
}

/// Structural checks plus existence/readability of every file relative to
/// `base`. An empty list means the manifest is valid.
pub fn validate_manifest(m: &Manifest, base: &Path) -> Vec<Violation> {
    let mut out = Vec::new();
    if m.schema_version != SCHEMA_VERSION {
        out.push(Violation {
            kind: ViolationKind::SchemaVersion,
            id: String::new(),
            detail: format!("schema {} (expected {SCHEMA_VERSION})", m.schema_version),
        });
    }
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for e in &m.entries {
        *seen.entry(&e.id).or_default() += 1;
        if seen[e.id.as_str()] == 2 {
            out.push(Violation {
                kind: ViolationKind::DuplicateId,
                id: e.id.clone(),
                detail: "id appears more than once".into(),
            });
        }
        if !valid_label(&e.material) {
            out.push(Violation {
                kind: ViolationKind::InvalidLabel,
                id: e.id.clone(),
                detail: format!("material {:?}", e.material),
            });
        }
        let path = m.resolve(e, base);
        if !path.exists() {
            out.push(Violation {
                kind: ViolationKind::MissingFile,
                id: e.id.clone(),
                detail: path.display().to_string(),
            });
        } else if let Err(err) = hound::WavReader::open(&path) {
            out.push(Violation {
                kind: ViolationKind::Unreadable,
                id: e.id.clone(),
                detail: err.to_string(),
            });
        }
    }
    out.extend(leakage_violations(m));
    out
}
