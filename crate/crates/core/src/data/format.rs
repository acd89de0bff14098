//! On-disk dataset format: a JSON manifest next to raw little-endian payloads.
//!
//! ```text
//! {name, shape: [H, W, C], domains: [{name, classes}],
//!  splits: {train: {count, images, labels, domain_ids}, test: {...}}}
//! ```
//!
//! `images` holds `count·H·W·C` u8 values (sample-major, row-major, channels
//! last), `labels` one u16 per sample and `domain_ids` one u8 per sample.
//! Payload references are paths relative to the manifest, optionally with a
//! byte offset (`{"path": "...", "offset": 16}`) for packed files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, DomainInfo, LabeledSample, Shape, Split};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub shape: [usize; 3],
    pub domains: Vec<DomainEntry>,
    pub splits: Splits,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainEntry {
    pub name: String,
    pub classes: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<SplitEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<SplitEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub count: usize,
    pub images: PayloadRef,
    pub labels: PayloadRef,
    pub domain_ids: PayloadRef,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PayloadRef {
    /// Whole file; its length must match exactly.
    Path(String),
    /// Region starting at `offset`; the file must hold at least the payload.
    Slice { path: String, offset: u64 },
}

impl PayloadRef {
    fn path(&self) -> &str {
        match self {
            PayloadRef::Path(p) | PayloadRef::Slice { path: p, .. } => p,
        }
    }

    fn read(&self, base: &Path, expected: usize) -> Result<Vec<u8>> {
        let path = base.join(self.path());
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let (offset, exact) = match self {
            PayloadRef::Path(_) => (0usize, true),
            PayloadRef::Slice { offset, .. } => (*offset as usize, false),
        };
        let available = bytes.len().saturating_sub(offset);
        if (exact && available != expected) || available < expected {
            return Err(Error::Corruption {
                path,
                detail: format!(
                    "expected {expected} payload bytes at offset {offset}, found {available}"
                ),
            });
        }
        Ok(bytes[offset..offset + expected].to_vec())
    }
}

impl DatasetManifest {
    pub fn shape(&self) -> Shape {
        Shape::new(self.shape[0], self.shape[1], self.shape[2])
    }

    pub fn num_classes(&self) -> usize {
        self.domains.iter().map(|d| d.classes).sum()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        manifest.check()?;
        Ok(manifest)
    }

    fn check(&self) -> Result<()> {
        if self.shape().is_empty() {
            return Err(Error::Format(format!("shape {:?} has a zero extent", self.shape)));
        }
        if self.domains.is_empty() || self.domains.iter().any(|d| d.classes == 0) {
            return Err(Error::Format("every declared domain needs at least one class".into()));
        }
        if self.domains.len() > 256 || self.num_classes() > 1 << 16 {
            return Err(Error::Format(
                "label payloads hold at most 65536 classes and 256 domains".into(),
            ));
        }
        if self.splits.train.is_none() && self.splits.test.is_none() {
            return Err(Error::Format("manifest declares no splits".into()));
        }
        Ok(())
    }

    fn entry(&self, split: Split) -> Option<&SplitEntry> {
        match split {
            Split::Train => self.splits.train.as_ref(),
            Split::Test => self.splits.test.as_ref(),
        }
    }
}

/// Load the single split declared by a manifest.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
    let path = manifest_path.as_ref();
    let manifest = DatasetManifest::read(path)?;
    let split = match (&manifest.splits.train, &manifest.splits.test) {
        (Some(_), None) => Split::Train,
        (None, Some(_)) => Split::Test,
        _ => {
            return Err(Error::Format(format!(
                "{} declares both splits; use load_split",
                path.display()
            )))
        }
    };
    decode(path, &manifest, split)
}

/// Load one split from a manifest that may declare both.
pub fn load_split(manifest_path: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let path = manifest_path.as_ref();
    let manifest = DatasetManifest::read(path)?;
    decode(path, &manifest, split)
}

fn decode(path: &Path, manifest: &DatasetManifest, split: Split) -> Result<Dataset> {
    let entry = manifest.entry(split).ok_or_else(|| {
        Error::Format(format!("{} has no '{}' split", path.display(), split.as_str()))
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let shape = manifest.shape();
    let n = entry.count;
    let images = entry.images.read(base, n * shape.len())?;
    let labels = entry.labels.read(base, n * 2)?;
    let domain_ids = entry.domain_ids.read(base, n)?;

    let domains: Vec<DomainInfo> = manifest
        .domains
        .iter()
        .map(|d| DomainInfo {
            name: d.name.clone(),
            classes: d.classes,
        })
        .collect();
    let num_classes = manifest.num_classes();
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let class_id = u16::from_le_bytes([labels[2 * i], labels[2 * i + 1]]) as usize;
        let domain_id = domain_ids[i] as usize;
        if class_id >= num_classes {
            return Err(Error::Validation(format!(
                "sample {i}: label {class_id} outside declared range 0..{num_classes}"
            )));
        }
        if domain_id >= domains.len() {
            return Err(Error::Validation(format!(
                "sample {i}: domain {domain_id} outside declared range 0..{}",
                domains.len()
            )));
        }
        let pixels = images[i * shape.len()..(i + 1) * shape.len()]
            .iter()
            .map(|&b| f64::from(b) / 255.0)
            .collect();
        samples.push(LabeledSample {
            pixels,
            class_id,
            domain_id,
        });
    }
    Dataset::new(manifest.name.clone(), split, shape, domains, samples)
}

struct Payloads {
    images: Vec<u8>,
    labels: Vec<u8>,
    domain_ids: Vec<u8>,
}

fn encode(ds: &Dataset) -> Result<Payloads> {
    if ds.num_classes() > 1 << 16 || ds.num_domains() > 256 {
        return Err(Error::Validation(
            "label payloads hold at most 65536 classes and 256 domains".into(),
        ));
    }
    let mut p = Payloads {
        images: Vec::with_capacity(ds.len() * ds.shape().len()),
        labels: Vec::with_capacity(ds.len() * 2),
        domain_ids: Vec::with_capacity(ds.len()),
    };
    for s in ds.samples() {
        p.images
            .extend(s.pixels.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
        p.labels.extend((s.class_id as u16).to_le_bytes());
        p.domain_ids.push(s.domain_id as u8);
    }
    Ok(p)
}

fn write(path: PathBuf, bytes: &[u8]) -> Result<()> {
    fs::write(&path, bytes).map_err(|e| Error::io(path, e))
}

fn write_split(ds: &Dataset, dir: &Path, stem: &str) -> Result<SplitEntry> {
    let p = encode(ds)?;
    let names = [
        format!("{stem}-images.u8"),
        format!("{stem}-labels.u16"),
        format!("{stem}-domains.u8"),
    ];
    write(dir.join(&names[0]), &p.images)?;
    write(dir.join(&names[1]), &p.labels)?;
    write(dir.join(&names[2]), &p.domain_ids)?;
    let [images, labels, domain_ids] = names.map(PayloadRef::Path);
    Ok(SplitEntry {
        count: ds.len(),
        images,
        labels,
        domain_ids,
    })
}

fn manifest_for(ds: &Dataset, splits: Splits) -> DatasetManifest {
    let shape = ds.shape();
    DatasetManifest {
        name: ds.name().to_string(),
        shape: [shape.height, shape.width, shape.channels],
        domains: ds
            .domains()
            .iter()
            .map(|d| DomainEntry {
                name: d.name.clone(),
                classes: d.classes,
            })
            .collect(),
        splits,
    }
}

fn write_manifest(path: PathBuf, manifest: &DatasetManifest) -> Result<PathBuf> {
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    write(path.clone(), format!("{text}\n").as_bytes())?;
    Ok(path)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Write `ds` as `<stem>-<split>.json` plus payloads. Pixels are quantized
/// to the nearest multiple of 1/255.
pub fn save_dataset(ds: &Dataset, dir: impl AsRef<Path>, stem: &str) -> Result<PathBuf> {
    let dir = dir.as_ref();
    ensure_dir(dir)?;
    let stem = format!("{stem}-{}", ds.split().as_str());
    let entry = write_split(ds, dir, &stem)?;
    let splits = match ds.split() {
        Split::Train => Splits {
            train: Some(entry),
            test: None,
        },
        Split::Test => Splits {
            train: None,
            test: Some(entry),
        },
    };
    write_manifest(dir.join(format!("{stem}.json")), &manifest_for(ds, splits))
}

/// Write both splits under a single manifest `<stem>.json`.
pub fn save_dataset_pair(
    train: &Dataset,
    test: &Dataset,
    dir: impl AsRef<Path>,
    stem: &str,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    if train.domains() != test.domains() || train.shape() != test.shape() {
        return Err(Error::Validation("train/test label spaces or shapes differ".into()));
    }
    ensure_dir(dir)?;
    let splits = Splits {
        train: Some(write_split(train, dir, &format!("{stem}-train"))?),
        test: Some(write_split(test, dir, &format!("{stem}-test"))?),
    };
    write_manifest(dir.join(format!("{stem}.json")), &manifest_for(train, splits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dataset(n: usize, shape: Shape, bytes: &[u8]) -> Dataset {
        let domains = vec![
            DomainInfo { name: "a".into(), classes: 2 },
            DomainInfo { name: "b".into(), classes: 3 },
        ];
        let samples = (0..n)
            .map(|i| {
                let class_id = i % 5;
                let pixels = (0..shape.len())
                    .map(|j| f64::from(bytes[(i * shape.len() + j) % bytes.len()]) / 255.0)
                    .collect();
                LabeledSample {
                    pixels,
                    class_id,
                    domain_id: usize::from(class_id >= 2),
                }
            })
            .collect();
        Dataset::new("toy", Split::Train, shape, domains, samples).unwrap()
    }

    #[test]
    fn consistent_manifest_loads() {
        let dir = tempfile::tempdir().unwrap();
        let ds = dataset(10, Shape::new(28, 28, 3), &[0, 17, 128, 255]);
        let path = save_dataset(&ds, dir.path(), "toy").unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded.len(), 10);
        assert_eq!(loaded.shape(), Shape::new(28, 28, 3));
        let raw = fs::metadata(dir.path().join("toy-train-images.u8")).unwrap().len();
        assert_eq!(raw, 10 * 28 * 28 * 3);
    }

    #[test]
    fn rescale_endpoints() {
        let dir = tempfile::tempdir().unwrap();
        let ds = dataset(2, Shape::new(1, 2, 1), &[255, 0]);
        let loaded = load_dataset(save_dataset(&ds, dir.path(), "e").unwrap()).unwrap();
        assert_eq!(loaded.samples()[0].pixels, vec![1.0, 0.0]);
    }

    #[test]
    fn short_payload_is_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let ds = dataset(4, Shape::new(3, 3, 1), &[9]);
        let path = save_dataset(&ds, dir.path(), "s").unwrap();
        let images = dir.path().join("s-train-images.u8");
        let mut bytes = fs::read(&images).unwrap();
        bytes.pop();
        fs::write(&images, bytes).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Corruption { .. })));
    }

    #[test]
    fn label_out_of_range_is_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let ds = dataset(3, Shape::new(1, 1, 1), &[1]);
        let path = save_dataset(&ds, dir.path(), "l").unwrap();
        fs::write(dir.path().join("l-train-labels.u16"), [5, 0, 0, 0, 1, 0]).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Validation(_))));
    }

    #[test]
    fn malformed_manifest_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        fs::write(&path, "{\"name\": \"x\", \"shape\": [1,1]}").unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Format(_))));
        fs::write(
            &path,
            r#"{"name":"x","shape":[1,1,1],"domains":[{"name":"a","classes":1}],"splits":{}}"#,
        )
        .unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Format(_))));
    }

    #[test]
    fn offset_payloads_and_paired_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let tr = dataset(5, Shape::new(2, 2, 1), &[3, 200]);
        let te = tr.with_samples(tr.samples()[..2].to_vec());
        let te = Dataset::new("toy", Split::Test, te.shape(), te.domains().to_vec(), te.samples().to_vec()).unwrap();
        let path = save_dataset_pair(&tr, &te, dir.path(), "pair").unwrap();
        assert!(load_dataset(&path).is_err());
        assert_eq!(load_split(&path, Split::Train).unwrap(), tr);
        assert_eq!(load_split(&path, Split::Test).unwrap(), te);

        // Repack the test images behind an 8-byte header.
        let mut manifest = DatasetManifest::read(&path).unwrap();
        let mut packed = vec![0xAA; 8];
        packed.extend(fs::read(dir.path().join("pair-test-images.u8")).unwrap());
        packed.extend([1, 2, 3]);
        fs::write(dir.path().join("packed.bin"), packed).unwrap();
        manifest.splits.test.as_mut().unwrap().images = PayloadRef::Slice {
            path: "packed.bin".into(),
            offset: 8,
        };
        fs::write(&path, serde_json::to_string(&manifest).unwrap()).unwrap();
        assert_eq!(load_split(&path, Split::Test).unwrap(), te);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn save_then_load_is_identity(
            n in 1usize..12,
            h in 1usize..6,
            w in 1usize..6,
            c in 1usize..4,
            bytes in proptest::collection::vec(any::<u8>(), 1..64),
        ) {
            let dir = tempfile::tempdir().unwrap();
            let ds = dataset(n, Shape::new(h, w, c), &bytes);
            let loaded = load_dataset(save_dataset(&ds, dir.path(), "p").unwrap()).unwrap();
            prop_assert_eq!(loaded, ds);
        }
    }
}
