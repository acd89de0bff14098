//! Central finite-difference checks of every analytic gradient.
//!
//! Each trial draws a small random instance, evaluates the analytic gradient
//! and compares it against `(f(θ+h) − f(θ−h)) / 2h` on a set of coordinates.
//! The error of a trial is `‖a − n‖ / max(‖a‖, ‖n‖)` over the checked
//! coordinates. Network coordinates whose perturbation flips a ReLU or
//! max-pool branch are skipped: the function has a kink there.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::data::Shape;
use crate::embed::{normalize_backward, normalize_embedding, Architecture, EmbeddingNetwork, LayerSpec};
use crate::error::{Error, Result};
use crate::loss::{cosine_backward, cross_entropy_loss, loss_la, loss_ld, total_loss, LossConfig, LossValue};
use crate::rng::{self, Rng};

pub const DEFAULT_TOLERANCE: f64 = 1e-5;
const STEP: f64 = 1e-6;
/// Coordinates sampled per network trial.
const NETWORK_COORDS: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Ce,
    LossLa,
    LossLd,
    Total,
    Normalize,
    Network,
    Pipeline,
}

impl Component {
    pub const ALL: [Component; 7] = [
        Component::Ce,
        Component::LossLa,
        Component::LossLd,
        Component::Total,
        Component::Normalize,
        Component::Network,
        Component::Pipeline,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Component::Ce => "ce",
            Component::LossLa => "loss_la",
            Component::LossLd => "loss_ld",
            Component::Total => "total",
            Component::Normalize => "normalize",
            Component::Network => "network",
            Component::Pipeline => "pipeline",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Component::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Component::ALL.iter().map(|c| c.as_str()).collect();
                Error::Usage(format!("unknown component '{s}'; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComponentReport {
    pub component: Component,
    pub trials: usize,
    pub coordinates: usize,
    /// Coordinates skipped because a perturbation crossed a kink.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl ComponentReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

impl fmt::Display for ComponentReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<10} trials {:>4}  coords {:>6}  skipped {:>4}  max rel err {:.3e}  {}",
            self.component.as_str(),
            self.trials,
            self.coordinates,
            self.skipped,
            self.max_rel_error,
            if self.passed() { "ok" } else { "FAIL" }
        )
    }
}

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub trials: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub components: Vec<Component>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            trials: 100,
            seed: 0,
            tolerance: DEFAULT_TOLERANCE,
            components: Component::ALL.to_vec(),
        }
    }
}

pub fn run_gradcheck(opts: &GradcheckOptions) -> Result<Vec<ComponentReport>> {
    if opts.trials == 0 {
        return Err(Error::Usage("gradcheck needs at least one trial".into()));
    }
    opts.components
        .iter()
        .map(|&c| check_component(c, opts.trials, opts.seed, opts.tolerance))
        .collect()
}

pub fn check_component(component: Component, trials: usize, seed: u64, tolerance: f64) -> Result<ComponentReport> {
    let mut r = rng::stream(seed, component.as_str());
    let mut acc = Accumulator::default();
    for _ in 0..trials {
        match component {
            Component::Ce => loss_trial(&mut r, &mut acc, |cos, labels, _, _| {
                let logits: Vec<Vec<f64>> = cos.iter().map(|row| row.iter().map(|c| 5.0 * c).collect()).collect();
                let v = cross_entropy_loss(&logits, labels)?;
                Ok(LossValue {
                    loss: v.loss,
                    grad: v.grad.iter().map(|g| g.iter().map(|x| 5.0 * x).collect()).collect(),
                })
            })?,
            Component::LossLa => loss_trial(&mut r, &mut acc, |cos, labels, cfg, _| loss_la(cos, labels, cfg))?,
            Component::LossLd => loss_trial(&mut r, &mut acc, |cos, labels, cfg, domains| {
                loss_ld(cos, labels, cfg, domains)
            })?,
            Component::Total => loss_trial(&mut r, &mut acc, |cos, labels, cfg, domains| {
                total_loss(cos, labels, cfg, domains).map(|t| t.value)
            })?,
            Component::Normalize => normalize_trial(&mut r, &mut acc)?,
            Component::Network => network_trial(&mut r, &mut acc)?,
            Component::Pipeline => pipeline_trial(&mut r, &mut acc)?,
        }
    }
    Ok(ComponentReport {
        component,
        trials,
        coordinates: acc.coordinates,
        skipped: acc.skipped,
        max_rel_error: acc.max_rel,
        tolerance,
    })
}

#[derive(Default)]
struct Accumulator {
    coordinates: usize,
    skipped: usize,
    max_rel: f64,
}

impl Accumulator {
    fn record(&mut self, analytic: &[f64], numeric: &[f64]) {
        self.coordinates += analytic.len();
        let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let scale = l2(analytic).max(l2(numeric));
        let rel = if scale > 0.0 { diff / scale } else { 0.0 };
        self.max_rel = self.max_rel.max(rel);
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn central(f: impl Fn(f64) -> Result<f64>, x: f64) -> Result<f64> {
    Ok((f(x + STEP)? - f(x - STEP)?) / (2.0 * STEP))
}

fn gaussian(r: &mut Rng) -> f64 {
    StandardNormal.sample(r)
}

/// Random cosine batch with a random domain partition and loss settings
/// scaled down so that the softmax is not saturated.
fn loss_trial(
    r: &mut Rng,
    acc: &mut Accumulator,
    f: impl Fn(&[Vec<f64>], &[usize], &LossConfig, &[usize]) -> Result<LossValue>,
) -> Result<()> {
    let classes = r.random_range(2..7);
    let domains = r.random_range(1..=classes.min(3));
    let class_domains: Vec<usize> = (0..classes).map(|c| if c < domains { c } else { r.random_range(0..domains) }).collect();
    let n = r.random_range(1..6);
    // Keep cosines away from ±1 so the perturbation stays inside [−1, 1].
    let cos: Vec<Vec<f64>> = (0..n).map(|_| (0..classes).map(|_| r.random_range(-0.9..0.9)).collect()).collect();
    let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..classes)).collect();
    let cfg = LossConfig {
        lambda: r.random_range(0.0..=1.0),
        r_a: r.random_range(1.0..8.0),
        r_d: r.random_range(1.0..8.0),
        m_a: r.random_range(0.0..0.5),
        m_d: r.random_range(0.0..0.5),
    };
    let analytic = f(&cos, &labels, &cfg, &class_domains)?;
    let mut a = Vec::new();
    let mut num = Vec::new();
    for i in 0..n {
        for j in 0..classes {
            let probe = |v: f64| {
                let mut c = cos.clone();
                c[i][j] = v;
                f(&c, &labels, &cfg, &class_domains).map(|l| l.loss)
            };
            a.push(analytic.grad[i][j]);
            num.push(central(probe, cos[i][j])?);
        }
    }
    acc.record(&a, &num);
    Ok(())
}

/// `⟨u, v/‖v‖⟩` against its gradient in `v`.
fn normalize_trial(r: &mut Rng, acc: &mut Accumulator) -> Result<()> {
    let d = r.random_range(2..10);
    let v: Vec<f64> = (0..d).map(|_| gaussian(r)).collect();
    let u: Vec<f64> = (0..d).map(|_| gaussian(r)).collect();
    let f = |x: &[f64]| -> Result<f64> {
        let e = normalize_embedding(x)?;
        Ok(e.as_slice().iter().zip(&u).map(|(a, b)| a * b).sum())
    };
    let analytic = normalize_backward(&v, &u);
    let mut num = Vec::with_capacity(d);
    for k in 0..d {
        num.push(central(
            |t| {
                let mut x = v.clone();
                x[k] = t;
                f(&x)
            },
            v[k],
        )?);
    }
    acc.record(&analytic, &num);
    Ok(())
}

fn small_architecture(r: &mut Rng) -> Architecture {
    let input = Shape::new(2 * r.random_range(2..4), 2 * r.random_range(2..4), r.random_range(1..3));
    let d = r.random_range(2..6);
    if r.random_bool(0.5) {
        Architecture {
            input,
            layers: vec![
                LayerSpec::Conv3x3 { out: r.random_range(2..4) },
                LayerSpec::Relu,
                LayerSpec::MaxPool2,
                LayerSpec::Affine { out: r.random_range(3..8) },
                LayerSpec::Relu,
                LayerSpec::Affine { out: d },
            ],
        }
    } else {
        Architecture::affine(input, &[r.random_range(3..8)], d)
    }
}

fn random_pixels(r: &mut Rng, n: usize, len: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..len).map(|_| r.random::<f64>()).collect()).collect()
}

/// Perturb network parameter `k` to `value` and rebuild.
fn with_param(net: &EmbeddingNetwork<f64>, k: usize, value: f64) -> Result<EmbeddingNetwork<f64>> {
    let mut params = net.params().to_vec();
    params[k] = value;
    EmbeddingNetwork::from_params(net.architecture().clone(), params)
}

/// Check `∂/∂θ Σ_n ⟨u_n, f(x_n)⟩` on sampled parameter coordinates,
/// skipping those that change the branch signature.
fn network_trial(r: &mut Rng, acc: &mut Accumulator) -> Result<()> {
    let arch = small_architecture(r);
    let net = EmbeddingNetwork::<f64>::new(arch, r.random())?;
    let n = r.random_range(1..4);
    let x = random_pixels(r, n, net.input_len());
    let u: Vec<Vec<f64>> = (0..n).map(|_| (0..net.embed_dim()).map(|_| gaussian(r)).collect()).collect();
    let (_, trace) = net.forward_trace(&x)?;
    let signature = trace.branch_signature(&net);
    let analytic = net.backward(&trace, &u)?;
    let objective = |m: &EmbeddingNetwork<f64>| -> Result<(f64, Vec<u32>)> {
        let (out, t) = m.forward_trace(&x)?;
        let v = out.iter().zip(&u).map(|(o, g)| o.iter().zip(g).map(|(a, b)| a * b).sum::<f64>()).sum();
        Ok((v, t.branch_signature(m)))
    };
    let coords = index::sample(r, net.num_params(), NETWORK_COORDS.min(net.num_params()));
    let (mut a, mut num) = (Vec::new(), Vec::new());
    for k in coords {
        let p = net.params()[k];
        let (plus, sp) = objective(&with_param(&net, k, p + STEP)?)?;
        let (minus, sm) = objective(&with_param(&net, k, p - STEP)?)?;
        if sp != signature || sm != signature {
            acc.skipped += 1;
            continue;
        }
        a.push(analytic.as_slice()[k]);
        num.push((plus - minus) / (2.0 * STEP));
    }
    acc.record(&a, &num);
    Ok(())
}

/// Pixels → network → normalization → cosine classifier → total loss, with
/// respect to network parameters and raw classifier weights.
fn pipeline_trial(r: &mut Rng, acc: &mut Accumulator) -> Result<()> {
    // Redraw until no embedding is near zero, where normalization is singular.
    let (net, x) = loop {
        let net = EmbeddingNetwork::<f64>::new(small_architecture(r), r.random())?;
        let n = r.random_range(2..5);
        let x = random_pixels(r, n, net.input_len());
        if net.forward(&x)?.iter().all(|e| l2(e) > 1e-3) {
            break (net, x);
        }
    };
    let dim = net.embed_dim();
    let n = x.len();
    let classes = r.random_range(2..6);
    let domains = r.random_range(1..=classes.min(3));
    let class_domains: Vec<usize> = (0..classes).map(|c| if c < domains { c } else { r.random_range(0..domains) }).collect();
    let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..classes)).collect();
    let weights: Vec<f64> = (0..classes * dim).map(|_| gaussian(r)).collect();
    let cfg = LossConfig {
        lambda: r.random_range(0.0..=1.0),
        r_a: r.random_range(1.0..6.0),
        r_d: r.random_range(1.0..6.0),
        m_a: r.random_range(0.0..0.5),
        m_d: r.random_range(0.0..0.5),
    };

    let loss_of = |m: &EmbeddingNetwork<f64>, w: &[f64]| -> Result<(f64, Vec<u32>)> {
        let (raw, t) = m.forward_trace(&x)?;
        let cos = cosines(&raw, w, dim)?;
        Ok((total_loss(&cos, &labels, &cfg, &class_domains)?.value.loss, t.branch_signature(m)))
    };

    let (raw, trace) = net.forward_trace(&x)?;
    let signature = trace.branch_signature(&net);
    let cos = cosines(&raw, &weights, dim)?;
    let total = total_loss(&cos, &labels, &cfg, &class_domains)?;
    let (emb_grad, w_grad) = cosine_backward(&total.value.grad, &raw, &weights, dim)?;
    let net_grad = net.backward(&trace, &emb_grad)?;

    let (mut a, mut num) = (Vec::new(), Vec::new());
    for k in index::sample(r, net.num_params(), NETWORK_COORDS.min(net.num_params())) {
        let p = net.params()[k];
        let (plus, sp) = loss_of(&with_param(&net, k, p + STEP)?, &weights)?;
        let (minus, sm) = loss_of(&with_param(&net, k, p - STEP)?, &weights)?;
        if sp != signature || sm != signature {
            acc.skipped += 1;
            continue;
        }
        a.push(net_grad.as_slice()[k]);
        num.push((plus - minus) / (2.0 * STEP));
    }
    for k in 0..weights.len() {
        let probe = |v: f64| {
            let mut w = weights.clone();
            w[k] = v;
            loss_of(&net, &w).map(|(l, _)| l)
        };
        a.push(w_grad[k]);
        num.push(central(probe, weights[k])?);
    }
    acc.record(&a, &num);
    Ok(())
}

/// Cosines between normalized embeddings and normalized weight rows.
fn cosines(raw: &[Vec<f64>], weights: &[f64], dim: usize) -> Result<Vec<Vec<f64>>> {
    let rows: Vec<Vec<f64>> = weights
        .chunks_exact(dim)
        .map(|w| normalize_embedding(w).map(|e| e.into_inner()))
        .collect::<Result<_>>()?;
    raw.iter()
        .map(|x| {
            let e = normalize_embedding(x)?;
            Ok(rows
                .iter()
                .map(|w| w.iter().zip(e.as_slice()).map(|(a, b)| a * b).sum())
                .collect())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_component_passes_a_short_run() {
        for c in Component::ALL {
            let rep = check_component(c, 10, 3, DEFAULT_TOLERANCE).unwrap();
            assert!(rep.passed(), "{rep}");
            assert!(rep.coordinates > 0);
        }
    }

    #[test]
    fn component_names_roundtrip() {
        for c in Component::ALL {
            assert_eq!(c.as_str().parse::<Component>().unwrap(), c);
        }
        assert!(matches!("bogus".parse::<Component>(), Err(Error::Usage(_))));
    }

    #[test]
    fn deterministic_given_seed() {
        let a = check_component(Component::Pipeline, 5, 9, DEFAULT_TOLERANCE).unwrap();
        let b = check_component(Component::Pipeline, 5, 9, DEFAULT_TOLERANCE).unwrap();
        assert_eq!(a, b);
    }
}
