//! Labeled image samples, datasets and the session split.

mod format;
pub mod medmnist;
mod sessions;
mod synthetic;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

pub use format::{
    load_dataset, load_split, save_dataset, save_dataset_pair, DatasetManifest, DomainEntry,
    PayloadRef, SplitEntry,
};
pub use sessions::{split_sessions, SessionData};
pub use synthetic::{generate_synthetic, SyntheticSpec};

/// Image shape, stored row-major as `height × width × channels`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Shape {
            height,
            width,
            channels,
        }
    }

    pub const fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub const fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// One image with its class and domain labels. Pixels are in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub pixels: Vec<f64>,
    pub class_id: usize,
    pub domain_id: usize,
}

impl LabeledSample {
    pub fn new(pixels: Vec<f64>, class_id: usize, domain_id: usize) -> Result<Self> {
        ensure!(
            pixels.iter().all(|p| (0.0..=1.0).contains(p)),
            Validation,
            "pixel values must lie in [0, 1]"
        );
        Ok(LabeledSample {
            pixels,
            class_id,
            domain_id,
        })
    }
}

/// A named domain and the contiguous block of class ids it owns.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainInfo {
    pub name: String,
    pub classes: usize,
}

/// An immutable collection of same-shaped samples.
///
/// Class ids are assigned contiguously per domain in declaration order, so
/// domain `d` owns classes `[Σ_{e<d} classes_e, Σ_{e≤d} classes_e)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    name: String,
    split: Split,
    shape: Shape,
    domains: Vec<DomainInfo>,
    class_domains: Vec<usize>,
    samples: Vec<LabeledSample>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        split: Split,
        shape: Shape,
        domains: Vec<DomainInfo>,
        samples: Vec<LabeledSample>,
    ) -> Result<Self> {
        ensure!(!shape.is_empty(), Validation, "image shape {shape} is empty");
        let class_domains: Vec<usize> = domains
            .iter()
            .enumerate()
            .flat_map(|(d, info)| std::iter::repeat_n(d, info.classes))
            .collect();
        for (i, s) in samples.iter().enumerate() {
            ensure!(
                s.pixels.len() == shape.len(),
                Validation,
                "sample {i} has {} values, expected {} for shape {shape}",
                s.pixels.len(),
                shape.len()
            );
            ensure!(
                s.class_id < class_domains.len(),
                Validation,
                "sample {i}: class {} outside declared range 0..{}",
                s.class_id,
                class_domains.len()
            );
            ensure!(
                s.domain_id == class_domains[s.class_id],
                Validation,
                "sample {i}: domain {} disagrees with class {} (domain {})",
                s.domain_id,
                s.class_id,
                class_domains[s.class_id]
            );
            ensure!(
                s.pixels.iter().all(|p| (0.0..=1.0).contains(p)),
                Validation,
                "sample {i} has pixels outside [0, 1]"
            );
        }
        Ok(Dataset {
            name: name.into(),
            split,
            shape,
            domains,
            class_domains,
            samples,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn domains(&self) -> &[DomainInfo] {
        &self.domains
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_domains.len()
    }

    pub fn num_domains(&self) -> usize {
        self.domains.len()
    }

    /// `class_domain_map()[c]` is the domain owning class `c`.
    pub fn class_domain_map(&self) -> &[usize] {
        &self.class_domains
    }

    pub fn domain_of(&self, class_id: usize) -> Option<usize> {
        self.class_domains.get(class_id).copied()
    }

    /// Classes owned by domain `d`.
    pub fn domain_classes(&self, d: usize) -> std::ops::Range<usize> {
        let start: usize = self.domains[..d].iter().map(|x| x.classes).sum();
        start..start + self.domains[d].classes
    }

    /// Indices of samples per class id.
    pub fn class_index(&self) -> Vec<Vec<usize>> {
        let mut index = vec![Vec::new(); self.num_classes()];
        for (i, s) in self.samples.iter().enumerate() {
            index[s.class_id].push(i);
        }
        index
    }

    /// New dataset with the same label space holding only the given samples.
    pub fn with_samples(&self, samples: Vec<LabeledSample>) -> Dataset {
        Dataset {
            name: self.name.clone(),
            split: self.split,
            shape: self.shape,
            domains: self.domains.clone(),
            class_domains: self.class_domains.clone(),
            samples,
        }
    }

    pub fn filter_classes(&self, keep: impl Fn(usize) -> bool) -> Dataset {
        self.with_samples(
            self.samples
                .iter()
                .filter(|s| keep(s.class_id))
                .cloned()
                .collect(),
        )
    }
}

/// Several `(train, test)` datasets merged into one global label space.
///
/// Datasets are concatenated in order: the class and domain ids of member
/// `k` are shifted by the totals of members `0..k`.
#[derive(Clone, Debug)]
pub struct DatasetPool {
    members: Vec<PoolMember>,
    train: Dataset,
    test: Dataset,
}

#[derive(Clone, Debug)]
pub struct PoolMember {
    pub name: String,
    pub class_offset: usize,
    pub classes: usize,
    pub domain_offset: usize,
    pub domains: usize,
}

impl DatasetPool {
    pub fn new(pairs: Vec<(Dataset, Dataset)>) -> Result<Self> {
        ensure!(!pairs.is_empty(), Validation, "dataset pool is empty");
        let shape = pairs[0].0.shape();
        let mut members = Vec::with_capacity(pairs.len());
        let mut domains = Vec::new();
        let mut train = Vec::new();
        let mut test = Vec::new();
        let (mut class_offset, mut domain_offset) = (0, 0);
        for (tr, te) in &pairs {
            ensure!(
                tr.domains() == te.domains(),
                Validation,
                "train/test label spaces of '{}' differ",
                tr.name()
            );
            ensure!(
                tr.shape() == shape && te.shape() == shape,
                Validation,
                "dataset '{}' has shape {} but the pool uses {shape}",
                tr.name(),
                tr.shape()
            );
            ensure!(
                tr.split() == Split::Train && te.split() == Split::Test,
                Validation,
                "dataset '{}' pair must be (train, test)",
                tr.name()
            );
            members.push(PoolMember {
                name: tr.name().to_string(),
                class_offset,
                classes: tr.num_classes(),
                domain_offset,
                domains: tr.num_domains(),
            });
            domains.extend(tr.domains().iter().cloned());
            let shift = |s: &LabeledSample| LabeledSample {
                pixels: s.pixels.clone(),
                class_id: s.class_id + class_offset,
                domain_id: s.domain_id + domain_offset,
            };
            train.extend(tr.samples().iter().map(shift));
            test.extend(te.samples().iter().map(shift));
            class_offset += tr.num_classes();
            domain_offset += tr.num_domains();
        }
        let name = members
            .iter()
            .map(|m| m.name.as_str())
            .collect::<Vec<_>>()
            .join("+");
        Ok(DatasetPool {
            members,
            train: Dataset::new(name.clone(), Split::Train, shape, domains.clone(), train)?,
            test: Dataset::new(name, Split::Test, shape, domains, test)?,
        })
    }

    pub fn single(train: Dataset, test: Dataset) -> Result<Self> {
        Self::new(vec![(train, test)])
    }

    pub fn members(&self) -> &[PoolMember] {
        &self.members
    }

    pub fn train(&self) -> &Dataset {
        &self.train
    }

    pub fn test(&self) -> &Dataset {
        &self.test
    }

    pub fn shape(&self) -> Shape {
        self.train.shape()
    }

    pub fn num_classes(&self) -> usize {
        self.train.num_classes()
    }

    pub fn num_domains(&self) -> usize {
        self.train.num_domains()
    }

    pub fn class_domain_map(&self) -> &[usize] {
        self.train.class_domain_map()
    }

    /// Resolve dataset-local class ids to global ids. `dataset` may name one
    /// member or several joined with `+`; local ids then index the
    /// concatenation of those members' classes. `None` means ids are global.
    pub fn resolve_classes(&self, dataset: Option<&str>, local: &[usize]) -> Result<Vec<usize>> {
        let Some(spec) = dataset else {
            for &c in local {
                if c >= self.num_classes() {
                    return Err(Error::Schedule(format!(
                        "class {c} outside pool range 0..{}",
                        self.num_classes()
                    )));
                }
            }
            return Ok(local.to_vec());
        };
        let mut table = Vec::new();
        for name in spec.split('+').map(str::trim) {
            let member = self
                .members
                .iter()
                .find(|m| m.name == name)
                .ok_or_else(|| Error::Schedule(format!("unknown dataset '{name}'")))?;
            table.extend(member.class_offset..member.class_offset + member.classes);
        }
        local
            .iter()
            .map(|&c| {
                table.get(c).copied().ok_or_else(|| {
                    Error::Schedule(format!(
                        "class {c} outside range 0..{} of '{spec}'",
                        table.len()
                    ))
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(name: &str, split: Split, classes: &[usize]) -> Dataset {
        let shape = Shape::new(2, 2, 1);
        let domains: Vec<DomainInfo> = classes
            .iter()
            .enumerate()
            .map(|(i, &c)| DomainInfo {
                name: format!("{name}-{i}"),
                classes: c,
            })
            .collect();
        let mut samples = Vec::new();
        let mut class = 0;
        for (d, &n) in classes.iter().enumerate() {
            for _ in 0..n {
                samples.push(LabeledSample::new(vec![0.5; 4], class, d).unwrap());
                class += 1;
            }
        }
        Dataset::new(name, split, shape, domains, samples).unwrap()
    }

    #[test]
    fn rejects_wrong_domain_for_class() {
        let shape = Shape::new(1, 1, 1);
        let domains = vec![
            DomainInfo { name: "a".into(), classes: 1 },
            DomainInfo { name: "b".into(), classes: 1 },
        ];
        let bad = vec![LabeledSample::new(vec![0.0], 1, 0).unwrap()];
        assert!(matches!(
            Dataset::new("x", Split::Train, shape, domains, bad),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn rejects_out_of_range_pixels() {
        assert!(LabeledSample::new(vec![1.5], 0, 0).is_err());
        assert!(LabeledSample::new(vec![-0.1], 0, 0).is_err());
    }

    #[test]
    fn pool_offsets_classes_and_domains() {
        let a = (tiny("A", Split::Train, &[2, 1]), tiny("A", Split::Test, &[2, 1]));
        let b = (tiny("B", Split::Train, &[3]), tiny("B", Split::Test, &[3]));
        let pool = DatasetPool::new(vec![a, b]).unwrap();
        assert_eq!(pool.num_classes(), 6);
        assert_eq!(pool.num_domains(), 3);
        assert_eq!(pool.class_domain_map(), &[0, 0, 1, 2, 2, 2]);
        assert_eq!(pool.resolve_classes(Some("B"), &[0, 2]).unwrap(), vec![3, 5]);
        assert_eq!(pool.resolve_classes(Some("A+B"), &[2, 3]).unwrap(), vec![2, 3]);
        assert!(pool.resolve_classes(Some("C"), &[0]).is_err());
        assert!(pool.resolve_classes(Some("B"), &[3]).is_err());
        assert!(pool.resolve_classes(None, &[6]).is_err());
    }
}
