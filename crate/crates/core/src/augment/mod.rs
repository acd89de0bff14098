//! Image mixing, standard augmentations and pseudo-class construction.
//!
//! A pseudo class is an unordered pair of distinct real classes; fusing one
//! sample of each yields a sample of that pseudo class. With `C` real classes
//! and `D` real domains there are `C(C-1)/2` pseudo classes, with ids
//! `C..C+N_C`, and `D(D-1)/2` pseudo domains, with ids `D..D+N_D`. A fused
//! pair from one domain stays in that domain; a cross-domain pair lands in
//! the pseudo domain of its domain pair.

use rand::Rng as _;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabeledSample, Shape};
use crate::error::{ensure, Error, Result};
use crate::rng::Rng;

/// Number of unordered pairs of distinct classes.
pub fn pseudo_class_count(classes: usize) -> usize {
    classes * classes.saturating_sub(1) / 2
}

/// Number of unordered pairs of distinct domains.
pub fn pseudo_domain_count(domains: usize) -> usize {
    domains * domains.saturating_sub(1) / 2
}

/// Position of `(lo, hi)`, `lo < hi < n`, in lexicographic pair order.
fn pair_index(lo: usize, hi: usize, n: usize) -> usize {
    lo * (2 * n - lo - 1) / 2 + (hi - lo - 1)
}

/// Axis-aligned pixel rectangle: columns `x..x+w`, rows `y..y+h`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn full(shape: Shape) -> Self {
        Rect {
            x: 0,
            y: 0,
            w: shape.width,
            h: shape.height,
        }
    }

    fn check(&self, shape: Shape) -> Result<()> {
        ensure!(
            self.x + self.w <= shape.width && self.y + self.h <= shape.height,
            Validation,
            "rectangle {self:?} exceeds image {shape}"
        );
        Ok(())
    }

    /// Rectangle of side fractions `frac` centred at a uniform random point,
    /// clipped to the image.
    pub fn sample(shape: Shape, frac: f64, rng: &mut Rng) -> Rect {
        let frac = frac.clamp(0.0, 1.0);
        let w = (shape.width as f64 * frac).round() as usize;
        let h = (shape.height as f64 * frac).round() as usize;
        let cx = rng.random_range(0..shape.width) as isize;
        let cy = rng.random_range(0..shape.height) as isize;
        let x0 = (cx - (w / 2) as isize).max(0) as usize;
        let y0 = (cy - (h / 2) as isize).max(0) as usize;
        let x1 = (cx + w.div_ceil(2) as isize).min(shape.width as isize) as usize;
        let y1 = (cy + h.div_ceil(2) as isize).min(shape.height as isize) as usize;
        Rect {
            x: x0,
            y: y0,
            w: x1.saturating_sub(x0),
            h: y1.saturating_sub(y0),
        }
    }
}

fn same_shape(a: &LabeledSample, b: &LabeledSample) -> Result<()> {
    ensure!(
        a.pixels.len() == b.pixels.len(),
        Validation,
        "cannot mix images of {} and {} values",
        a.pixels.len(),
        b.pixels.len()
    );
    Ok(())
}

/// `lam·a + (1-lam)·b`, elementwise.
pub fn mixup(a: &LabeledSample, b: &LabeledSample, lam: f64) -> Result<Vec<f64>> {
    same_shape(a, b)?;
    ensure!((0.0..=1.0).contains(&lam), Validation, "mixing coefficient {lam} outside [0, 1]");
    Ok(a.pixels
        .iter()
        .zip(&b.pixels)
        .map(|(&x, &y)| (lam * x + (1.0 - lam) * y).clamp(x.min(y), x.max(y)))
        .collect())
}

/// `a` with the pixels inside `rect` copied from `b`.
pub fn cutmix(a: &LabeledSample, b: &LabeledSample, shape: Shape, rect: Rect) -> Result<Vec<f64>> {
    same_shape(a, b)?;
    ensure!(a.pixels.len() == shape.len(), Validation, "image does not have shape {shape}");
    rect.check(shape)?;
    let mut out = a.pixels.clone();
    if rect.w == 0 {
        return Ok(out);
    }
    for y in rect.y..rect.y + rect.h {
        let row = shape.index(y, rect.x, 0)..shape.index(y, rect.x + rect.w, 0);
        out[row.clone()].copy_from_slice(&b.pixels[row]);
    }
    Ok(out)
}

/// `a` with the pixels inside `rect` set to `fill`.
pub fn cutout(a: &LabeledSample, shape: Shape, rect: Rect, fill: f64) -> Result<Vec<f64>> {
    ensure!(a.pixels.len() == shape.len(), Validation, "image does not have shape {shape}");
    ensure!((0.0..=1.0).contains(&fill), Validation, "fill {fill} outside [0, 1]");
    rect.check(shape)?;
    let mut out = a.pixels.clone();
    for y in rect.y..rect.y + rect.h {
        for x in rect.x..rect.x + rect.w {
            for c in 0..shape.channels {
                out[shape.index(y, x, c)] = fill;
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixKind {
    Mixup,
    Cutmix,
    Cutout,
}

/// A mixing operation with its parameters. `alpha` shapes the
/// `Beta(alpha, alpha)` mixing coefficient of mixup and cutmix; `patch` is
/// the cutout side fraction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixOp {
    pub kind: MixKind,
    pub alpha: f64,
    pub patch: f64,
}

impl MixOp {
    pub fn new(kind: MixKind, alpha: f64, patch: f64) -> Result<Self> {
        ensure!(alpha.is_finite() && alpha > 0.0, Validation, "alpha must be positive, got {alpha}");
        ensure!(patch > 0.0 && patch <= 1.0, Validation, "patch fraction {patch} outside (0, 1]");
        Ok(MixOp { kind, alpha, patch })
    }

    pub fn mixup(alpha: f64) -> Result<Self> {
        Self::new(MixKind::Mixup, alpha, 0.5)
    }

    /// Fuse `a` and `b` with a freshly drawn coefficient.
    pub fn fuse(&self, a: &LabeledSample, b: &LabeledSample, shape: Shape, rng: &mut Rng) -> Result<Vec<f64>> {
        let lam = Beta::new(self.alpha, self.alpha)
            .map_err(|e| Error::Validation(e.to_string()))?
            .sample(rng);
        match self.kind {
            MixKind::Mixup => mixup(a, b, lam),
            MixKind::Cutmix => cutmix(a, b, shape, Rect::sample(shape, (1.0 - lam).sqrt(), rng)),
            MixKind::Cutout => Err(Error::Validation(
                "cutout has a single source image and cannot form a pseudo class".into(),
            )),
        }
    }
}

impl Default for MixOp {
    fn default() -> Self {
        MixOp {
            kind: MixKind::Mixup,
            alpha: 1.0,
            patch: 0.5,
        }
    }
}

/// Pseudo class and pseudo domain ids over a real label space.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PseudoLabelSpace {
    class_domains: Vec<usize>,
    domains: usize,
}

impl PseudoLabelSpace {
    /// `class_domains[c]` is the real domain of real class `c`; domains must
    /// be numbered `0..D` with every domain used.
    pub fn new(class_domains: Vec<usize>) -> Result<Self> {
        ensure!(!class_domains.is_empty(), Validation, "label space has no classes");
        let domains = class_domains.iter().max().map_or(0, |d| d + 1);
        for d in 0..domains {
            ensure!(class_domains.contains(&d), Validation, "domain {d} owns no class");
        }
        Ok(PseudoLabelSpace {
            class_domains,
            domains,
        })
    }

    pub fn real_classes(&self) -> usize {
        self.class_domains.len()
    }

    pub fn real_domains(&self) -> usize {
        self.domains
    }

    pub fn pseudo_classes(&self) -> usize {
        pseudo_class_count(self.real_classes())
    }

    pub fn pseudo_domains(&self) -> usize {
        pseudo_domain_count(self.domains)
    }

    pub fn total_classes(&self) -> usize {
        self.real_classes() + self.pseudo_classes()
    }

    pub fn total_domains(&self) -> usize {
        self.domains + self.pseudo_domains()
    }

    /// Pseudo class of the unordered pair `{c1, c2}`.
    pub fn class_pair_id(&self, c1: usize, c2: usize) -> Option<usize> {
        let n = self.real_classes();
        (c1 != c2 && c1 < n && c2 < n).then(|| n + pair_index(c1.min(c2), c1.max(c2), n))
    }

    /// Pseudo domain of the unordered pair `{d1, d2}`, `d1 != d2`.
    pub fn domain_pair_id(&self, d1: usize, d2: usize) -> Option<usize> {
        let n = self.domains;
        (d1 != d2 && d1 < n && d2 < n).then(|| n + pair_index(d1.min(d2), d1.max(d2), n))
    }

    /// Inverse of [`class_pair_id`](Self::class_pair_id).
    pub fn class_pair(&self, pseudo: usize) -> Option<(usize, usize)> {
        let n = self.real_classes();
        let mut k = pseudo.checked_sub(n)?;
        for lo in 0..n {
            let row = n - lo - 1;
            if k < row {
                return Some((lo, lo + 1 + k));
            }
            k -= row;
        }
        None
    }

    /// Domain of any real or pseudo class.
    pub fn domain_of(&self, class_id: usize) -> Option<usize> {
        if let Some(&d) = self.class_domains.get(class_id) {
            return Some(d);
        }
        let (a, b) = self.class_pair(class_id)?;
        let (da, db) = (self.class_domains[a], self.class_domains[b]);
        if da == db {
            Some(da)
        } else {
            self.domain_pair_id(da, db)
        }
    }

    /// Domain of every class `0..C+N_C`.
    pub fn extended_class_domains(&self) -> Vec<usize> {
        (0..self.total_classes())
            .map(|c| self.domain_of(c).expect("class in range"))
            .collect()
    }
}

/// Draw `count` pseudo samples by fusing samples of two distinct real
/// classes chosen uniformly among all class pairs.
pub fn build_pseudo_batch(
    base: &Dataset,
    space: &PseudoLabelSpace,
    op: &MixOp,
    count: usize,
    rng: &mut Rng,
) -> Result<Vec<LabeledSample>> {
    PseudoSampler::new(base, space)?.sample(op, count, rng)
}

/// Reusable per-class index for repeated pseudo-batch draws.
pub struct PseudoSampler<'a> {
    base: &'a Dataset,
    space: &'a PseudoLabelSpace,
    by_class: Vec<Vec<usize>>,
    populated: Vec<usize>,
}

impl<'a> PseudoSampler<'a> {
    pub fn new(base: &'a Dataset, space: &'a PseudoLabelSpace) -> Result<Self> {
        ensure!(
            base.num_classes() <= space.real_classes(),
            Validation,
            "dataset has {} classes but the pseudo space covers {}",
            base.num_classes(),
            space.real_classes()
        );
        let by_class = base.class_index();
        let populated: Vec<usize> = (0..by_class.len()).filter(|&c| !by_class[c].is_empty()).collect();
        ensure!(
            populated.len() >= 2,
            Validation,
            "pseudo classes need samples from at least two classes, found {}",
            populated.len()
        );
        Ok(PseudoSampler {
            base,
            space,
            by_class,
            populated,
        })
    }

    pub fn sample(&self, op: &MixOp, count: usize, rng: &mut Rng) -> Result<Vec<LabeledSample>> {
        let shape = self.base.shape();
        let n = self.populated.len();
        (0..count)
            .map(|_| {
                let i = rng.random_range(0..n);
                let mut j = rng.random_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                let (c1, c2) = (self.populated[i], self.populated[j]);
                let pick = |c: usize, rng: &mut Rng| {
                    let idx = &self.by_class[c];
                    &self.base.samples()[idx[rng.random_range(0..idx.len())]]
                };
                let a = pick(c1, rng);
                let b = pick(c2, rng);
                let pixels = op.fuse(a, b, shape, rng)?;
                let class_id = self.space.class_pair_id(c1, c2).expect("distinct real classes");
                Ok(LabeledSample {
                    pixels,
                    class_id,
                    domain_id: self.space.domain_of(class_id).expect("pseudo class in range"),
                })
            })
            .collect()
    }
}

/// Random horizontal flip, pad-and-crop and brightness jitter, each applied
/// with probability `p`. Turn `flip` off for data whose labels are not
/// mirror-invariant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StandardAugment {
    pub enabled: bool,
    pub p: f64,
    pub flip: bool,
    pub crop_pad: usize,
    pub jitter: f64,
}

impl Default for StandardAugment {
    fn default() -> Self {
        StandardAugment {
            enabled: true,
            p: 0.5,
            flip: true,
            crop_pad: 2,
            jitter: 0.1,
        }
    }
}

impl StandardAugment {
    pub fn disabled() -> Self {
        StandardAugment {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!((0.0..=1.0).contains(&self.p), Validation, "augment probability {} outside [0, 1]", self.p);
        ensure!(
            (0.0..=1.0).contains(&self.jitter),
            Validation,
            "brightness jitter {} outside [0, 1]",
            self.jitter
        );
        Ok(())
    }

    pub fn apply(&self, pixels: &mut [f64], shape: Shape, rng: &mut Rng) {
        if !self.enabled {
            return;
        }
        if self.flip && rng.random_bool(self.p) {
            for y in 0..shape.height {
                for x in 0..shape.width / 2 {
                    for c in 0..shape.channels {
                        pixels.swap(shape.index(y, x, c), shape.index(y, shape.width - 1 - x, c));
                    }
                }
            }
        }
        if self.crop_pad > 0 && rng.random_bool(self.p) {
            // Shift by (dy, dx) within the zero-padded image.
            let pad = self.crop_pad as i64;
            let dy = rng.random_range(-pad..=pad);
            let dx = rng.random_range(-pad..=pad);
            let src = pixels.to_vec();
            for y in 0..shape.height {
                for x in 0..shape.width {
                    let (sy, sx) = (y as i64 + dy, x as i64 + dx);
                    let inside = sy >= 0 && sx >= 0 && (sy as usize) < shape.height && (sx as usize) < shape.width;
                    for c in 0..shape.channels {
                        pixels[shape.index(y, x, c)] = if inside {
                            src[shape.index(sy as usize, sx as usize, c)]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
        if self.jitter > 0.0 && rng.random_bool(self.p) {
            let shift = rng.random_range(-self.jitter..=self.jitter);
            pixels.iter_mut().for_each(|v| *v = (*v + shift).clamp(0.0, 1.0));
        }
    }
}
