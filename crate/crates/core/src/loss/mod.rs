//! Training objectives over cosine logits.
//!
//! For a sample with label `y` and cosines `c_j`, the margin loss with scale
//! `r` and margin `m` is the cross-entropy of the logits `z_y = r(c_y − m)`,
//! `z_j = r·c_j` (`j ≠ y`). The global loss `L_A` competes over every class;
//! the domain loss `L_D` restricts the competition to the classes of the
//! sample's own domain, averages per domain and then over the domains
//! present in the batch. The training objective is `λ·L_A + (1−λ)·L_D`.

mod classifier;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use classifier::{cosine_backward, CosineClassifier, RowOrigin};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda: f64,
    pub r_a: f64,
    pub r_d: f64,
    pub m_a: f64,
    pub m_d: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 0.8,
            r_a: 30.0,
            r_d: 30.0,
            m_a: 0.4,
            m_d: 0.4,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.lambda, self.r_a, self.r_d, self.m_a, self.m_d]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::Validation("loss settings must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Validation(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if self.r_a <= 0.0 || self.r_d <= 0.0 {
            return Err(Error::Validation("scales r_a and r_d must be positive".into()));
        }
        if self.m_a < 0.0 || self.m_d < 0.0 {
            return Err(Error::Validation("margins must be non-negative".into()));
        }
        Ok(())
    }
}

/// A scalar loss and its gradient with respect to the input matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub loss: f64,
    pub grad: Vec<Vec<f64>>,
}

impl LossValue {
    fn zeros(rows: &[Vec<f64>]) -> Self {
        LossValue {
            loss: 0.0,
            grad: rows.iter().map(|r| vec![0.0; r.len()]).collect(),
        }
    }
}

fn check_batch(rows: &[Vec<f64>], labels: &[usize]) -> Result<()> {
    if rows.len() != labels.len() {
        return Err(Error::Validation(format!(
            "{} rows but {} labels",
            rows.len(),
            labels.len()
        )));
    }
    if rows.is_empty() {
        return Err(Error::Validation("empty batch".into()));
    }
    let k = rows[0].len();
    for (n, (row, &y)) in rows.iter().zip(labels).enumerate() {
        if row.len() != k {
            return Err(Error::Validation(format!("row {n} has {} columns, expected {k}", row.len())));
        }
        if y >= k {
            return Err(Error::Validation(format!("label {y} of row {n} outside 0..{k}")));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite input in row {n}")));
        }
    }
    Ok(())
}

/// Margin softmax over the columns `cols` of one row; `label` must be in
/// `cols`. Adds `weight·∂loss/∂row` into `grad` and returns the loss.
fn margin_term(
    row: &[f64],
    cols: &[usize],
    label: usize,
    scale: f64,
    margin: f64,
    weight: f64,
    grad: &mut [f64],
) -> f64 {
    let logit = |j: usize| {
        if j == label {
            scale * (row[j] - margin)
        } else {
            scale * row[j]
        }
    };
    let max = cols.iter().map(|&j| logit(j)).fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = cols.iter().map(|&j| (logit(j) - max).exp()).sum();
    let lse = max + sum.ln();
    for &j in cols {
        let p = (logit(j) - lse).exp();
        let target = if j == label { 1.0 } else { 0.0 };
        grad[j] += weight * scale * (p - target);
    }
    lse - logit(label)
}

/// Scaled, margin-adjusted softmax cross-entropy over all columns, averaged
/// over the batch.
pub fn margin_loss(cosines: &[Vec<f64>], labels: &[usize], scale: f64, margin: f64) -> Result<LossValue> {
    check_batch(cosines, labels)?;
    let n = cosines.len() as f64;
    let cols: Vec<usize> = (0..cosines[0].len()).collect();
    let mut out = LossValue::zeros(cosines);
    for ((row, &y), g) in cosines.iter().zip(labels).zip(&mut out.grad) {
        out.loss += margin_term(row, &cols, y, scale, margin, 1.0 / n, g) / n;
    }
    Ok(out)
}

/// Mean softmax cross-entropy of raw logits; gradient `(softmax − onehot)/N`.
pub fn cross_entropy_loss(logits: &[Vec<f64>], labels: &[usize]) -> Result<LossValue> {
    margin_loss(logits, labels, 1.0, 0.0)
}

/// Global cosine-margin loss `L_A` (scale `r_a`, margin `m_a`).
pub fn loss_la(cosines: &[Vec<f64>], labels: &[usize], cfg: &LossConfig) -> Result<LossValue> {
    margin_loss(cosines, labels, cfg.r_a, cfg.m_a)
}

/// Per-domain cosine-margin loss `L_D` (scale `r_d`, margin `m_d`).
///
/// `class_domains[j]` is the domain of column `j`. Each sample competes only
/// against the columns of its label's domain; losses are averaged within
/// each domain, then across the domains present in the batch.
pub fn loss_ld(
    cosines: &[Vec<f64>],
    labels: &[usize],
    cfg: &LossConfig,
    class_domains: &[usize],
) -> Result<LossValue> {
    check_batch(cosines, labels)?;
    let k = cosines[0].len();
    if class_domains.len() != k {
        return Err(Error::Validation(format!(
            "domain map covers {} classes but the batch has {k} columns",
            class_domains.len()
        )));
    }
    let domains = class_domains.iter().max().map_or(0, |d| d + 1);
    let mut columns = vec![Vec::new(); domains];
    for (j, &d) in class_domains.iter().enumerate() {
        columns[d].push(j);
    }
    let mut counts = vec![0usize; domains];
    for &y in labels {
        counts[class_domains[y]] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count() as f64;

    let mut out = LossValue::zeros(cosines);
    for ((row, &y), g) in cosines.iter().zip(labels).zip(&mut out.grad) {
        let d = class_domains[y];
        let weight = 1.0 / (present * counts[d] as f64);
        out.loss += weight * margin_term(row, &columns[d], y, cfg.r_d, cfg.m_d, weight, g);
    }
    Ok(out)
}

/// Blended objective with its two components.
#[derive(Clone, Debug, PartialEq)]
pub struct TotalLoss {
    pub value: LossValue,
    pub la: f64,
    pub ld: f64,
}

/// `λ·L_A + (1−λ)·L_D`. A component whose weight is zero is not evaluated.
pub fn total_loss(
    cosines: &[Vec<f64>],
    labels: &[usize],
    cfg: &LossConfig,
    class_domains: &[usize],
) -> Result<TotalLoss> {
    cfg.validate()?;
    let lambda = cfg.lambda;
    let a = (lambda > 0.0).then(|| loss_la(cosines, labels, cfg)).transpose()?;
    let d = (lambda < 1.0)
        .then(|| loss_ld(cosines, labels, cfg, class_domains))
        .transpose()?;
    let (la, ld) = (a.as_ref().map_or(0.0, |v| v.loss), d.as_ref().map_or(0.0, |v| v.loss));
    let value = match (a, d) {
        (Some(a), None) => a,
        (None, Some(d)) => d,
        (Some(a), Some(d)) => LossValue {
            loss: lambda * a.loss + (1.0 - lambda) * d.loss,
            grad: a
                .grad
                .iter()
                .zip(&d.grad)
                .map(|(ga, gd)| ga.iter().zip(gd).map(|(x, y)| lambda * x + (1.0 - lambda) * y).collect())
                .collect(),
        },
        (None, None) => unreachable!("lambda is in [0, 1]"),
    };
    Ok(TotalLoss { value, la, ld })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng as _;

    /// Direct transcription of the per-sample formula, no shared helpers.
    fn scalar_margin(row: &[f64], cols: &[usize], y: usize, r: f64, m: f64) -> f64 {
        let num = (r * (row[y] - m)).exp();
        let mut den = num;
        for &j in cols {
            if j != y {
                den += (r * row[j]).exp();
            }
        }
        -(num / den).ln()
    }

    fn random_batch(r: &mut rng::Rng, n: usize, k: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
        let cos = (0..n).map(|_| (0..k).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let labels = (0..n).map(|_| r.random_range(0..k)).collect();
        (cos, labels)
    }

    #[test]
    fn uniform_logits_give_ln_c() {
        let v = cross_entropy_loss(&[vec![0.3; 4], vec![-2.0; 4]], &[1, 3]).unwrap();
        assert!((v.loss - 4f64.ln()).abs() < 1e-15);
        assert!((v.loss - 1.3862944).abs() < 1e-7);
        let cfg = LossConfig { m_a: 0.0, ..LossConfig::default() };
        let v = loss_la(&[vec![0.1; 5]], &[2], &cfg).unwrap();
        assert!((v.loss - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_logit_has_vanishing_loss() {
        let v = cross_entropy_loss(&[vec![1e6, 0.0, 0.0]], &[0]).unwrap();
        assert_eq!(v.loss, 0.0);
        assert!(v.grad[0].iter().all(|g| g.abs() < 1e-300 || g.is_finite()));
    }

    #[test]
    fn cross_entropy_matches_scalar_loop() {
        let mut r = rng::seeded(21);
        let (logits, labels) = random_batch(&mut r, 6, 3);
        let v = cross_entropy_loss(&logits, &labels).unwrap();
        let expected: f64 = logits
            .iter()
            .zip(&labels)
            .map(|(row, &y)| scalar_margin(row, &[0, 1, 2], y, 1.0, 0.0))
            .sum::<f64>()
            / 6.0;
        assert!((v.loss - expected).abs() < 1e-12);
        for (row, (g, &y)) in logits.iter().zip(v.grad.iter().zip(&labels)) {
            let z: f64 = row.iter().map(|x| x.exp()).sum();
            for j in 0..3 {
                let want = (row[j].exp() / z - f64::from(u8::from(j == y))) / 6.0;
                assert!((g[j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn la_margin_free_equals_scaled_ce() {
        let mut r = rng::seeded(2);
        let (cos, labels) = random_batch(&mut r, 9, 5);
        let cfg = LossConfig { m_a: 0.0, r_a: 17.0, ..LossConfig::default() };
        let scaled: Vec<Vec<f64>> = cos.iter().map(|row| row.iter().map(|c| 17.0 * c).collect()).collect();
        let a = loss_la(&cos, &labels, &cfg).unwrap();
        let b = cross_entropy_loss(&scaled, &labels).unwrap();
        assert!((a.loss - b.loss).abs() < 1e-12);
    }

    #[test]
    fn la_two_class_value() {
        let v = loss_la(&[vec![1.0, 0.0]], &[0], &LossConfig::default()).unwrap();
        let expected = (-18f64).exp().ln_1p();
        assert!((v.loss - expected).abs() < 1e-14);
        assert!((v.loss - 1.523e-8).abs() < 1e-11);
    }

    #[test]
    fn ld_degenerate_partitions() {
        let mut r = rng::seeded(8);
        let (cos, labels) = random_batch(&mut r, 10, 4);
        let cfg = LossConfig::default();
        let la = loss_la(&cos, &labels, &cfg).unwrap();
        let ld = loss_ld(&cos, &labels, &cfg, &[0, 0, 0, 0]).unwrap();
        assert!((la.loss - ld.loss).abs() < 1e-12);
        let singletons = loss_ld(&cos, &labels, &cfg, &[0, 1, 2, 3]).unwrap();
        assert_eq!(singletons.loss, 0.0);
        assert!(singletons.grad.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn ld_matches_per_domain_brute_force() {
        let mut r = rng::seeded(13);
        let domains = [0, 0, 1, 1];
        let cfg = LossConfig { r_d: 12.0, m_d: 0.25, ..LossConfig::default() };
        for _ in 0..20 {
            let (cos, labels) = random_batch(&mut r, 7, 4);
            let v = loss_ld(&cos, &labels, &cfg, &domains).unwrap();
            let mut per_domain = [(0.0, 0usize); 2];
            for (row, &y) in cos.iter().zip(&labels) {
                let d = domains[y];
                let cols: Vec<usize> = (0..4).filter(|&j| domains[j] == d).collect();
                per_domain[d].0 += scalar_margin(row, &cols, y, 12.0, 0.25);
                per_domain[d].1 += 1;
            }
            let present: Vec<f64> = per_domain.iter().filter(|p| p.1 > 0).map(|p| p.0 / p.1 as f64).collect();
            let expected = present.iter().sum::<f64>() / present.len() as f64;
            assert!((v.loss - expected).abs() < 1e-12);
            for (g, &y) in v.grad.iter().zip(&labels) {
                for j in 0..4 {
                    if domains[j] != domains[y] {
                        assert_eq!(g[j], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn ld_rejects_unmapped_class() {
        let r = loss_ld(&[vec![0.0, 0.0, 0.0]], &[0], &LossConfig::default(), &[0, 0]);
        assert!(matches!(r, Err(Error::Validation(_))));
    }

    #[test]
    fn total_endpoints_and_blend() {
        let mut r = rng::seeded(4);
        let (cos, labels) = random_batch(&mut r, 12, 6);
        let domains = [0, 0, 1, 1, 1, 2];
        let base = LossConfig::default();
        let la = loss_la(&cos, &labels, &base).unwrap();
        let ld = loss_ld(&cos, &labels, &base, &domains).unwrap();
        let one = total_loss(&cos, &labels, &LossConfig { lambda: 1.0, ..base }, &domains).unwrap();
        assert_eq!(one.value, la);
        let zero = total_loss(&cos, &labels, &LossConfig { lambda: 0.0, ..base }, &domains).unwrap();
        assert_eq!(zero.value, ld);
        let blended = total_loss(&cos, &labels, &base, &domains).unwrap();
        assert!((blended.value.loss - (0.8 * la.loss + 0.2 * ld.loss)).abs() < 1e-12);
        assert_eq!((blended.la, blended.ld), (la.loss, ld.loss));
    }

    #[test]
    fn stable_at_extreme_scales() {
        let cfg = LossConfig { r_a: 64.0, r_d: 64.0, m_a: 0.0, m_d: 0.0, lambda: 0.5 };
        let cos = vec![vec![1.0, -1.0, 1.0], vec![-1.0, -1.0, 1.0]];
        let v = total_loss(&cos, &[1, 0], &cfg, &[0, 0, 1]).unwrap();
        assert!(v.value.loss.is_finite());
        assert!(v.value.grad.iter().flatten().all(|g| g.is_finite()));
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::default().validate().is_ok());
        assert!(LossConfig { lambda: 1.2, ..LossConfig::default() }.validate().is_err());
        assert!(LossConfig { r_a: 0.0, ..LossConfig::default() }.validate().is_err());
        assert!(LossConfig { m_d: -0.1, ..LossConfig::default() }.validate().is_err());
        assert!(LossConfig { m_a: f64::NAN, ..LossConfig::default() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn softmax_shift_invariance(
            seed in any::<u64>(),
            shift in -5.0f64..5.0,
        ) {
            let mut r = rng::seeded(seed);
            let (cos, labels) = random_batch(&mut r, 4, 5);
            let domains = [0, 1, 0, 1, 1];
            let cfg = LossConfig::default();
            let shifted: Vec<Vec<f64>> = cos.iter().map(|row| row.iter().map(|c| c + shift).collect()).collect();
            // A shift of cosines by s shifts every scaled logit by r·s.
            let a = loss_la(&cos, &labels, &cfg).unwrap().loss;
            let b = loss_la(&shifted, &labels, &cfg).unwrap().loss;
            prop_assert!((a - b).abs() < 1e-9);
            let a = loss_ld(&cos, &labels, &cfg, &domains).unwrap().loss;
            let b = loss_ld(&shifted, &labels, &cfg, &domains).unwrap().loss;
            prop_assert!((a - b).abs() < 1e-9);
            let a = cross_entropy_loss(&cos, &labels).unwrap().loss;
            let b = cross_entropy_loss(&shifted, &labels).unwrap().loss;
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn la_nondecreasing_in_margin(seed in any::<u64>(), m1 in 0.0f64..1.0, dm in 0.0f64..1.0) {
            let mut r = rng::seeded(seed);
            let (cos, labels) = random_batch(&mut r, 5, 4);
            let lo = LossConfig { m_a: m1, ..LossConfig::default() };
            let hi = LossConfig { m_a: m1 + dm, ..LossConfig::default() };
            prop_assert!(loss_la(&cos, &labels, &hi).unwrap().loss >= loss_la(&cos, &labels, &lo).unwrap().loss);
        }
    }
}
