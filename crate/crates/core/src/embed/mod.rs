//! Embedding network, hypersphere normalization, momentum SGD and
//! checkpoints.

mod arch;
mod checkpoint;
mod network;

use crate::error::{Error, Result};

pub use arch::{ArchKind, Architecture, LayerSpec};
pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use network::{EmbeddingNetwork, ForwardTrace, Gradients, Real};

/// Norms at or below this are rejected by [`normalize_embedding`].
pub const NORM_EPS: f64 = 1e-12;

/// A unit-L2-norm vector.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedEmbedding(Vec<f64>);

impl NormalizedEmbedding {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl AsRef<[f64]> for NormalizedEmbedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn normalize_embedding(raw: &[f64]) -> Result<NormalizedEmbedding> {
    let norm = l2_norm(raw);
    if norm.is_nan() || norm <= NORM_EPS {
        return Err(Error::DegenerateEmbedding {
            norm,
            eps: NORM_EPS,
        });
    }
    Ok(NormalizedEmbedding(raw.iter().map(|x| x / norm).collect()))
}

/// Vector-Jacobian product of `v ↦ v/‖v‖`: `(I − v̂v̂ᵀ) u / ‖v‖`.
pub fn normalize_backward(raw: &[f64], upstream: &[f64]) -> Vec<f64> {
    let norm = l2_norm(raw);
    let proj: f64 = raw.iter().zip(upstream).map(|(v, u)| v * u).sum::<f64>() / norm;
    raw.iter()
        .zip(upstream)
        .map(|(v, u)| (u - proj * v / norm) / norm)
        .collect()
}

/// Anything that maps images to raw embedding vectors.
pub trait Embedder {
    fn embed_dim(&self) -> usize;
    fn embed(&self, inputs: &[&[f64]]) -> Result<Vec<Vec<f64>>>;

    /// Whether the mapping can no longer change. Fixed functions are frozen.
    fn is_frozen(&self) -> bool {
        true
    }

    fn embed_normalized(&self, inputs: &[&[f64]]) -> Result<Vec<NormalizedEmbedding>> {
        self.embed(inputs)?.iter().map(|e| normalize_embedding(e)).collect()
    }
}

impl<T: Real> Embedder for EmbeddingNetwork<T> {
    fn embed_dim(&self) -> usize {
        EmbeddingNetwork::embed_dim(self)
    }

    fn embed(&self, inputs: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        self.forward(inputs)
    }

    fn is_frozen(&self) -> bool {
        EmbeddingNetwork::is_frozen(self)
    }
}

/// Momentum SGD: `v ← μ·v + g`, `θ ← θ − η·v`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd<T: Real = f64> {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<T>,
}

impl<T: Real> Sgd<T> {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Validation(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Validation(format!("momentum {momentum} outside [0, 1)")));
        }
        Ok(Sgd {
            lr,
            momentum,
            velocity: Vec::new(),
        })
    }

    pub fn velocity(&self) -> &[T] {
        &self.velocity
    }

    /// One update of a raw parameter slice.
    pub fn apply(&mut self, params: &mut [T], grads: &[T]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Validation(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        if self.velocity.len() != params.len() {
            self.velocity = vec![T::zero(); params.len()];
        }
        let (lr, mu) = (T::of(self.lr), T::of(self.momentum));
        for ((p, v), &g) in params.iter_mut().zip(&mut self.velocity).zip(grads) {
            *v = mu * *v + g;
            *p = *p - lr * *v;
        }
        Ok(())
    }

    /// One update of a network; rejected once the network is frozen.
    pub fn step(&mut self, net: &mut EmbeddingNetwork<T>, grads: &Gradients<T>) -> Result<()> {
        let params = net.params_mut()?;
        self.apply(params, grads.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Shape;
    use crate::rng;
    use rand::Rng as _;

    fn tiny(seed: u64) -> EmbeddingNetwork {
        EmbeddingNetwork::new(Architecture::affine(Shape::new(2, 2, 1), &[5], 3), seed).unwrap()
    }

    #[test]
    fn normalize_cases() {
        let e = normalize_embedding(&[3.0, 4.0]).unwrap();
        assert_eq!(e.as_slice(), &[0.6, 0.8]);
        let again = normalize_embedding(e.as_slice()).unwrap();
        assert!(again.as_slice().iter().zip(e.as_slice()).all(|(a, b)| (a - b).abs() < 1e-16));
        let mut r = rng::seeded(3);
        for _ in 0..50 {
            let v: Vec<f64> = (0..17).map(|_| r.random_range(-5.0..5.0)).collect();
            assert!((l2_norm(normalize_embedding(&v).unwrap().as_slice()) - 1.0).abs() < 1e-9);
        }
        assert!(matches!(
            normalize_embedding(&[0.0, 1e-13]),
            Err(Error::DegenerateEmbedding { .. })
        ));
    }

    #[test]
    fn normalize_backward_matches_finite_differences() {
        let mut r = rng::seeded(5);
        let v: Vec<f64> = (0..6).map(|_| r.random_range(-2.0..2.0)).collect();
        let u: Vec<f64> = (0..6).map(|_| r.random_range(-1.0..1.0)).collect();
        let f = |x: &[f64]| -> f64 {
            let n = normalize_embedding(x).unwrap();
            n.as_slice().iter().zip(&u).map(|(a, b)| a * b).sum()
        };
        let analytic = normalize_backward(&v, &u);
        let h = 1e-5;
        for i in 0..v.len() {
            let (mut p, mut m) = (v.clone(), v.clone());
            p[i] += h;
            m[i] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            assert!((fd - analytic[i]).abs() <= 1e-5 * fd.abs().max(analytic[i].abs()).max(1e-3));
        }
    }

    #[test]
    fn plain_step() {
        let mut sgd = Sgd::<f64>::new(0.01, 0.0).unwrap();
        let mut p = vec![1.0, -2.0];
        sgd.apply(&mut p, &[0.5, -4.0]).unwrap();
        assert_eq!(p, vec![1.0 - 0.01 * 0.5, -2.0 + 0.01 * 4.0]);
    }

    #[test]
    fn zero_grads_decay_velocity() {
        let mut sgd = Sgd::<f64>::new(0.1, 0.9).unwrap();
        let mut p = vec![1.0];
        sgd.apply(&mut p, &[1.0]).unwrap();
        let before = p[0];
        let v0 = sgd.velocity()[0];
        sgd.apply(&mut p, &[0.0]).unwrap();
        assert_eq!(sgd.velocity()[0], 0.9 * v0);
        assert_eq!(p[0], before - 0.1 * 0.9 * v0);
    }

    #[test]
    fn momentum_recurrence() {
        let (lr, mu) = (0.05, 0.9);
        let (g1, g2) = (0.7, -0.3);
        let mut sgd = Sgd::<f64>::new(lr, mu).unwrap();
        let mut p = vec![2.0];
        sgd.apply(&mut p, &[g1]).unwrap();
        sgd.apply(&mut p, &[g2]).unwrap();
        // v1 = g1, θ1 = θ0 − lr·g1; v2 = μ·g1 + g2, θ2 = θ1 − lr·v2.
        let expected = 2.0 - lr * g1 - lr * (mu * g1 + g2);
        assert!((p[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn sgd_rejects_bad_settings_and_grads() {
        assert!(Sgd::<f64>::new(0.0, 0.5).is_err());
        assert!(Sgd::<f64>::new(0.1, 1.0).is_err());
        let mut sgd = Sgd::<f64>::new(0.1, 0.5).unwrap();
        assert!(matches!(sgd.apply(&mut [0.0], &[f64::NAN]), Err(Error::Numeric(_))));
    }

    #[test]
    fn frozen_network_rejects_updates_but_still_embeds() {
        let mut net = tiny(1);
        let x = vec![vec![0.1, 0.2, 0.3, 0.4]];
        let before = net.forward(&x).unwrap();
        let sum = net.checksum();
        net.freeze();
        assert!(net.is_frozen());
        assert_eq!(net.forward(&x).unwrap(), before);
        let grads = Gradients(vec![0.0; net.num_params()]);
        let mut sgd = Sgd::new(0.1, 0.0).unwrap();
        assert!(matches!(sgd.step(&mut net, &grads), Err(Error::Frozen)));
        assert_eq!(net.checksum(), sum);
    }
}
