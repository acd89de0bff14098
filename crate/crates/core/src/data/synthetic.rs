//! Layered synthetic images: a per-domain style (intensity band, oriented
//! texture, channel tint) under a per-class geometry (a blob whose position
//! encodes the class within its domain).
//!
//! Every pixel of domain `d` lies inside the band
//! `[d/D + g, (d+1)/D - g]`, so domains are separated by mean intensity by
//! construction, while classes within a domain share the band and texture
//! and differ only by blob placement.

use std::f64::consts::TAU;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, DomainInfo, LabeledSample, Shape, Split};
use crate::error::{ensure, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    #[serde(default = "default_name")]
    pub name: String,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Number of classes in each domain; its length is the domain count.
    pub classes_per_domain: Vec<usize>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Standard deviation of additive pixel noise before banding.
    #[serde(default = "default_noise")]
    pub noise: f64,
    /// Maximum blob displacement in pixels.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
}

fn default_name() -> String {
    "synthetic".to_string()
}

fn default_noise() -> f64 {
    0.08
}

fn default_jitter() -> f64 {
    1.0
}

impl SyntheticSpec {
    pub fn new(classes_per_domain: Vec<usize>, train_per_class: usize, test_per_class: usize) -> Self {
        SyntheticSpec {
            name: default_name(),
            height: 16,
            width: 16,
            channels: 1,
            classes_per_domain,
            train_per_class,
            test_per_class,
            noise: default_noise(),
            jitter: default_jitter(),
        }
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.height, self.width, self.channels)
    }

    pub fn num_domains(&self) -> usize {
        self.classes_per_domain.len()
    }

    /// Inclusive intensity band for domain `d`.
    pub fn band(&self, d: usize) -> (f64, f64) {
        let n = self.num_domains() as f64;
        let gap = 0.1 / n;
        (d as f64 / n + gap, (d as f64 + 1.0) / n - gap)
    }

    fn validate(&self) -> Result<()> {
        ensure!(self.num_domains() >= 1, Validation, "at least one domain is required");
        ensure!(
            self.num_domains() <= 64,
            Validation,
            "at most 64 domains fit the intensity banding"
        );
        ensure!(
            self.classes_per_domain.iter().all(|&c| c >= 1),
            Validation,
            "every domain needs at least one class"
        );
        ensure!(
            self.train_per_class >= 1 && self.test_per_class >= 1,
            Validation,
            "every class needs at least one train and one test sample"
        );
        ensure!(!self.shape().is_empty(), Validation, "image shape {} is empty", self.shape());
        ensure!(
            self.noise.is_finite() && self.noise >= 0.0 && self.jitter.is_finite() && self.jitter >= 0.0,
            Validation,
            "noise and jitter must be finite and non-negative"
        );
        Ok(())
    }
}

/// Fixed per-domain style parameters.
struct DomainStyle {
    band: (f64, f64),
    frequency: f64,
    orientation: f64,
    phase: f64,
    tint: Vec<f64>,
}

impl DomainStyle {
    fn new(spec: &SyntheticSpec, d: usize) -> Self {
        // Golden-angle spacing keeps orientations distinct for any domain count.
        let orientation = d as f64 * 2.399_963_229_728_653;
        let tint = (0..spec.channels)
            .map(|c| 0.6 + 0.4 * (0.5 + 0.5 * (orientation + c as f64 * TAU / 3.0).cos()))
            .collect();
        DomainStyle {
            band: spec.band(d),
            frequency: 1.0 + (d % 3) as f64,
            orientation,
            phase: d as f64 * 0.7,
            tint,
        }
    }
}

fn render(
    spec: &SyntheticSpec,
    style: &DomainStyle,
    local_class: usize,
    classes_in_domain: usize,
    rng: &mut rng::Rng,
) -> Vec<f64> {
    let shape = spec.shape();
    let (h, w) = (shape.height as f64, shape.width as f64);
    let angle = TAU * local_class as f64 / classes_in_domain as f64 + style.phase;
    let radius = 0.3 * h.min(w);
    let cy = (h - 1.0) / 2.0 + radius * angle.sin() + rng.random_range(-spec.jitter..=spec.jitter);
    let cx = (w - 1.0) / 2.0 + radius * angle.cos() + rng.random_range(-spec.jitter..=spec.jitter);
    let sigma = h.min(w) / 8.0;
    let amplitude = rng.random_range(0.8..=1.0);
    let texture_shift = rng.random_range(0.0..TAU);
    let noise = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).expect("valid normal");
    let (lo, hi) = style.band;
    let (ux, uy) = (style.orientation.cos(), style.orientation.sin());

    let mut pixels = vec![0.0; shape.len()];
    for y in 0..shape.height {
        for x in 0..shape.width {
            let (fy, fx) = (y as f64, x as f64);
            let texture =
                0.5 + 0.5 * (TAU * style.frequency * (fx * ux + fy * uy) / w + texture_shift).sin();
            let r2 = (fy - cy).powi(2) + (fx - cx).powi(2);
            let blob = amplitude * (-r2 / (2.0 * sigma * sigma)).exp();
            let base = 0.3 * texture + 0.7 * blob;
            for c in 0..shape.channels {
                let v = (base * style.tint[c] + noise.sample(rng)).clamp(0.0, 1.0);
                pixels[shape.index(y, x, c)] = quantize_in_band(lo + (hi - lo) * v, lo, hi);
            }
        }
    }
    pixels
}

/// Round to a multiple of 1/255 that stays inside `[lo, hi]`, so the on-disk
/// u8 encoding is lossless and banding survives quantization.
fn quantize_in_band(p: f64, lo: f64, hi: f64) -> f64 {
    let mut q = (p * 255.0).round();
    if q / 255.0 < lo {
        q += 1.0;
    }
    if q / 255.0 > hi {
        q -= 1.0;
    }
    q / 255.0
}

/// Deterministic `(train, test)` pair for `spec` and `seed`.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let styles: Vec<DomainStyle> = (0..spec.num_domains()).map(|d| DomainStyle::new(spec, d)).collect();
    let domains: Vec<DomainInfo> = spec
        .classes_per_domain
        .iter()
        .enumerate()
        .map(|(d, &classes)| DomainInfo {
            name: format!("domain-{d}"),
            classes,
        })
        .collect();

    let build = |split: Split, per_class: usize| -> Result<Dataset> {
        let mut rng = rng::stream(seed, split.as_str());
        let mut samples = Vec::new();
        let mut class_id = 0;
        for (d, &classes) in spec.classes_per_domain.iter().enumerate() {
            for local in 0..classes {
                for _ in 0..per_class {
                    let pixels = render(spec, &styles[d], local, classes, &mut rng);
                    samples.push(LabeledSample {
                        pixels,
                        class_id,
                        domain_id: d,
                    });
                }
                class_id += 1;
            }
        }
        Dataset::new(spec.name.clone(), split, spec.shape(), domains.clone(), samples)
    };
    Ok((build(Split::Train, spec.train_per_class)?, build(Split::Test, spec.test_per_class)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn deterministic_given_seed() {
        let mut spec = SyntheticSpec::new(vec![4, 4, 4], 50, 20);
        spec.channels = 3;
        let a = generate_synthetic(&spec, 7).unwrap();
        let b = generate_synthetic(&spec, 7).unwrap();
        assert_eq!(a, b);
        let bits = |d: &Dataset| -> Vec<u64> {
            d.samples().iter().flat_map(|s| s.pixels.iter().map(|p| p.to_bits())).collect()
        };
        assert_eq!(bits(&a.0), bits(&b.0));
        assert_eq!(a.0.len(), 12 * 50);
        assert_eq!(a.1.len(), 12 * 20);
        let c = generate_synthetic(&spec, 8).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn single_domain_map() {
        let (train, _) = generate_synthetic(&SyntheticSpec::new(vec![2], 3, 1), 1).unwrap();
        assert_eq!(train.class_domain_map(), &[0, 0]);
    }

    #[test]
    fn domain_mean_intensities_sit_in_disjoint_bands() {
        let spec = SyntheticSpec::new(vec![3, 2, 5, 1], 10, 4);
        let (train, test) = generate_synthetic(&spec, 3).unwrap();
        for ds in [&train, &test] {
            for d in 0..spec.num_domains() {
                let (lo, hi) = spec.band(d);
                let (mut sum, mut n) = (0.0, 0usize);
                for s in ds.samples().iter().filter(|s| s.domain_id == d) {
                    // Stronger than the mean: every pixel is in band.
                    assert!(s.pixels.iter().all(|&p| p >= lo && p <= hi));
                    sum += s.pixels.iter().sum::<f64>();
                    n += s.pixels.len();
                }
                let mean = sum / n as f64;
                assert!(mean >= lo && mean <= hi, "domain {d} mean {mean} outside [{lo}, {hi}]");
                if d + 1 < spec.num_domains() {
                    assert!(hi < spec.band(d + 1).0);
                }
            }
        }
    }

    #[test]
    fn pixels_are_byte_exact() {
        let (train, _) = generate_synthetic(&SyntheticSpec::new(vec![2, 2], 4, 1), 5).unwrap();
        for s in train.samples() {
            for &p in &s.pixels {
                assert_eq!((p * 255.0).round() / 255.0, p);
            }
        }
    }

    #[test]
    fn zero_classes_or_samples_rejected() {
        for spec in [
            SyntheticSpec::new(vec![], 1, 1),
            SyntheticSpec::new(vec![2, 0], 1, 1),
            SyntheticSpec::new(vec![2], 0, 1),
            SyntheticSpec::new(vec![2], 1, 0),
        ] {
            assert!(matches!(generate_synthetic(&spec, 0), Err(Error::Validation(_))));
        }
    }
}
