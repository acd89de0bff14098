use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;
use rand::Rng as _;
use sha2::{Digest, Sha256};

use super::arch::{resolve, Architecture, Layer};
use crate::error::{Error, Result};
use crate::rng;

/// Floating-point storage for network parameters and activations.
pub trait Real: Float + Default + Debug + Send + Sync + Sum + 'static {
    const NAME: &'static str;
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f64 {
    const NAME: &'static str = "f64";
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }
}

impl Real for f32 {
    const NAME: &'static str = "f32";
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        f64::from(self)
    }
}

/// Samples per gradient-reduction chunk. Fixed so that the summation order,
/// and therefore the result, does not depend on the thread count.
const CHUNK: usize = 8;

/// Feed-forward embedding network with parameters in one flat vector, laid
/// out layer by layer as weights then biases. Conv weights are
/// `[ky][kx][in][out]`, affine weights `[in][out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingNetwork<T: Real = f64> {
    arch: Architecture,
    layers: Vec<Layer>,
    params: Vec<T>,
    frozen: bool,
    version: u64,
    threads: usize,
}

/// Activations recorded by [`EmbeddingNetwork::forward_trace`].
#[derive(Clone, Debug)]
pub struct ForwardTrace<T: Real> {
    version: u64,
    /// Per sample: the input followed by every layer output.
    activations: Vec<Vec<Vec<T>>>,
}

impl<T: Real> ForwardTrace<T> {
    pub fn batch_size(&self) -> usize {
        self.activations.len()
    }

    /// Pattern of ReLU signs and max-pool winners, used to detect kinks
    /// crossed by finite-difference probes.
    pub fn branch_signature(&self, net: &EmbeddingNetwork<T>) -> Vec<u32> {
        let mut sig = Vec::new();
        for acts in &self.activations {
            for (l, layer) in net.layers.iter().enumerate() {
                match layer {
                    Layer::Relu { .. } => sig.extend(acts[l].iter().map(|&v| u32::from(v > T::zero()))),
                    Layer::MaxPool { input } => {
                        sig.extend(pool_argmax(*input, &acts[l]).into_iter().map(|i| i as u32))
                    }
                    _ => {}
                }
            }
        }
        sig
    }
}

/// Gradient with respect to every parameter, in parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T: Real>(pub Vec<T>);

impl<T: Real> Gradients<T> {
    pub fn as_slice(&self) -> &[T] {
        &self.0
    }
}

impl<T: Real> EmbeddingNetwork<T> {
    /// Kaiming-uniform weights (bound `sqrt(6 / fan_in)`), zero biases.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        let (layers, count) = resolve(&arch)?;
        let mut params = vec![T::zero(); count];
        let mut r = rng::stream(seed, "init");
        for layer in &layers {
            if let Some((fan_in, start, len, _)) = layer.weights() {
                let bound = (6.0 / fan_in as f64).sqrt();
                for p in &mut params[start..start + len] {
                    *p = T::of(r.random_range(-bound..bound));
                }
            }
        }
        Ok(EmbeddingNetwork {
            arch,
            layers,
            params,
            frozen: false,
            version: 0,
            threads: 1,
        })
    }

    pub fn from_params(arch: Architecture, params: Vec<T>) -> Result<Self> {
        let (layers, count) = resolve(&arch)?;
        if params.len() != count {
            return Err(Error::Validation(format!(
                "architecture needs {count} parameters, got {}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric("non-finite parameter".into()));
        }
        Ok(EmbeddingNetwork {
            arch,
            layers,
            params,
            frozen: false,
            version: 0,
            threads: 1,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn input_len(&self) -> usize {
        self.arch.input.len()
    }

    pub fn embed_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::out_len)
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    /// Mutable parameters; bumps the version so older traces are rejected.
    pub fn params_mut(&mut self) -> Result<&mut [T]> {
        if self.frozen {
            return Err(Error::Frozen);
        }
        self.version += 1;
        Ok(&mut self.params)
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn set_threads(&mut self, threads: usize) {
        self.threads = threads.max(1);
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// SHA-256 over the parameters as little-endian f64.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.f64().to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn check_inputs<I: AsRef<[f64]>>(&self, inputs: &[I]) -> Result<()> {
        let want = self.input_len();
        for (i, x) in inputs.iter().enumerate() {
            if x.as_ref().len() != want {
                return Err(Error::Validation(format!(
                    "input {i} has {} values, network expects {want} ({})",
                    x.as_ref().len(),
                    self.arch.input
                )));
            }
        }
        Ok(())
    }

    /// Raw (unnormalized) embeddings, one row per input.
    pub fn forward<I: AsRef<[f64]> + Sync>(&self, inputs: &[I]) -> Result<Vec<Vec<f64>>> {
        self.check_inputs(inputs)?;
        let rows = self.map_chunks(inputs.len(), |range| {
            range
                .map(|i| {
                    let acts = self.forward_sample(inputs[i].as_ref());
                    acts.last().expect("at least one layer").iter().map(|v| v.f64()).collect()
                })
                .collect::<Vec<Vec<f64>>>()
        });
        let out: Vec<Vec<f64>> = rows.into_iter().flatten().collect();
        finite_rows(&out)?;
        Ok(out)
    }

    /// Forward pass that keeps the activations needed by [`backward`](Self::backward).
    pub fn forward_trace<I: AsRef<[f64]> + Sync>(
        &self,
        inputs: &[I],
    ) -> Result<(Vec<Vec<f64>>, ForwardTrace<T>)> {
        self.check_inputs(inputs)?;
        let activations: Vec<Vec<Vec<T>>> = self
            .map_chunks(inputs.len(), |range| {
                range.map(|i| self.forward_sample(inputs[i].as_ref())).collect::<Vec<_>>()
            })
            .into_iter()
            .flatten()
            .collect();
        let out: Vec<Vec<f64>> = activations
            .iter()
            .map(|a| a.last().expect("at least one layer").iter().map(|v| v.f64()).collect())
            .collect();
        finite_rows(&out)?;
        Ok((
            out,
            ForwardTrace {
                version: self.version,
                activations,
            },
        ))
    }

    /// Gradient of `Σ_n ⟨upstream_n, forward(x_n)⟩` with respect to every
    /// parameter.
    pub fn backward(&self, trace: &ForwardTrace<T>, upstream: &[Vec<f64>]) -> Result<Gradients<T>> {
        if trace.version != self.version {
            return Err(Error::Usage(
                "trace was recorded with different parameters; run forward_trace again".into(),
            ));
        }
        if upstream.len() != trace.batch_size() {
            return Err(Error::Usage(format!(
                "upstream has {} rows, trace holds {} samples",
                upstream.len(),
                trace.batch_size()
            )));
        }
        let d = self.embed_dim();
        if let Some(bad) = upstream.iter().position(|g| g.len() != d) {
            return Err(Error::Validation(format!("upstream row {bad} is not of length {d}")));
        }
        if upstream.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::Numeric("non-finite upstream gradient".into()));
        }
        let partials = self.map_chunks(upstream.len(), |range| {
            let mut acc = vec![T::zero(); self.params.len()];
            for i in range {
                self.backward_sample(&trace.activations[i], &upstream[i], &mut acc);
            }
            acc
        });
        let mut total = vec![T::zero(); self.params.len()];
        for part in partials {
            for (t, p) in total.iter_mut().zip(part) {
                *t = *t + p;
            }
        }
        Ok(Gradients(total))
    }

    /// Apply `f` to fixed-size chunks of `0..n`, in parallel when threads > 1,
    /// returning results in chunk order.
    fn map_chunks<R: Send>(&self, n: usize, f: impl Fn(std::ops::Range<usize>) -> R + Sync) -> Vec<R> {
        let chunks: Vec<std::ops::Range<usize>> =
            (0..n).step_by(CHUNK).map(|s| s..(s + CHUNK).min(n)).collect();
        if self.threads <= 1 || chunks.len() <= 1 {
            return chunks.into_iter().map(&f).collect();
        }
        let per_thread = chunks.len().div_ceil(self.threads);
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunks
                .chunks(per_thread)
                .map(|group| {
                    let f = &f;
                    scope.spawn(move || group.iter().cloned().map(f).collect::<Vec<R>>())
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("worker panicked"))
                .collect()
        })
    }

    fn forward_sample(&self, input: &[f64]) -> Vec<Vec<T>> {
        let mut acts: Vec<Vec<T>> = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.iter().map(|&v| T::of(v)).collect());
        for layer in &self.layers {
            let x = acts.last().expect("input pushed");
            let y = match *layer {
                Layer::Conv { input, out, weight, bias } => {
                    conv_forward(input, out, &self.params[weight..bias], &self.params[bias..bias + out], x)
                }
                Layer::Relu { .. } => x.iter().map(|&v| v.max(T::zero())).collect(),
                Layer::MaxPool { input } => pool_argmax(input, x).into_iter().map(|i| x[i]).collect(),
                Layer::Affine { inputs, out, weight, bias } => {
                    let w = &self.params[weight..weight + inputs * out];
                    let mut y = self.params[bias..bias + out].to_vec();
                    for (i, &xi) in x.iter().enumerate() {
                        if xi != T::zero() {
                            axpy(xi, &w[i * out..(i + 1) * out], &mut y);
                        }
                    }
                    y
                }
            };
            acts.push(y);
        }
        acts
    }

    fn backward_sample(&self, acts: &[Vec<T>], upstream: &[f64], grad: &mut [T]) {
        let mut g: Vec<T> = upstream.iter().map(|&v| T::of(v)).collect();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let x = &acts[l];
            let need_input_grad = l > 0;
            g = match *layer {
                Layer::Conv { input, out, weight, bias } => conv_backward(
                    input,
                    out,
                    &self.params[weight..bias],
                    x,
                    &g,
                    grad,
                    weight,
                    bias,
                    need_input_grad,
                ),
                Layer::Relu { .. } => x
                    .iter()
                    .zip(&g)
                    .map(|(&xi, &gi)| if xi > T::zero() { gi } else { T::zero() })
                    .collect(),
                Layer::MaxPool { input } => {
                    let mut gin = vec![T::zero(); x.len()];
                    for (k, i) in pool_argmax(input, x).into_iter().enumerate() {
                        gin[i] = gin[i] + g[k];
                    }
                    gin
                }
                Layer::Affine { inputs, out, weight, bias } => {
                    let w = &self.params[weight..weight + inputs * out];
                    for (b, &gi) in grad[bias..bias + out].iter_mut().zip(&g) {
                        *b = *b + gi;
                    }
                    let mut gin = vec![T::zero(); if need_input_grad { inputs } else { 0 }];
                    for (i, &xi) in x.iter().enumerate() {
                        let row = weight + i * out;
                        if xi != T::zero() {
                            axpy(xi, &g, &mut grad[row..row + out]);
                        }
                        if need_input_grad {
                            gin[i] = dot(&w[i * out..(i + 1) * out], &g);
                        }
                    }
                    gin
                }
            };
            if !need_input_grad {
                break;
            }
        }
    }
}

fn finite_rows(rows: &[Vec<f64>]) -> Result<()> {
    if rows.iter().flatten().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric("non-finite activation in forward pass".into()))
    }
}

#[inline]
fn axpy<T: Real>(a: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + a * xi;
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

fn conv_forward<T: Real>(input: crate::data::Shape, out: usize, w: &[T], b: &[T], x: &[T]) -> Vec<T> {
    let (h, wd, cin) = (input.height, input.width, input.channels);
    let mut y = vec![T::zero(); h * wd * out];
    for oy in 0..h {
        for ox in 0..wd {
            let o = &mut y[(oy * wd + ox) * out..(oy * wd + ox + 1) * out];
            o.copy_from_slice(b);
            for ky in 0..3 {
                let sy = oy + ky;
                if sy < 1 || sy > h {
                    continue;
                }
                for kx in 0..3 {
                    let sx = ox + kx;
                    if sx < 1 || sx > wd {
                        continue;
                    }
                    let px = &x[((sy - 1) * wd + sx - 1) * cin..((sy - 1) * wd + sx) * cin];
                    let wk = &w[(ky * 3 + kx) * cin * out..];
                    for (ci, &v) in px.iter().enumerate() {
                        if v != T::zero() {
                            axpy(v, &wk[ci * out..(ci + 1) * out], o);
                        }
                    }
                }
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Real>(
    input: crate::data::Shape,
    out: usize,
    w: &[T],
    x: &[T],
    g: &[T],
    grad: &mut [T],
    weight: usize,
    bias: usize,
    need_input_grad: bool,
) -> Vec<T> {
    let (h, wd, cin) = (input.height, input.width, input.channels);
    let mut gin = vec![T::zero(); if need_input_grad { x.len() } else { 0 }];
    for oy in 0..h {
        for ox in 0..wd {
            let go = &g[(oy * wd + ox) * out..(oy * wd + ox + 1) * out];
            for (b, &gi) in grad[bias..bias + out].iter_mut().zip(go) {
                *b = *b + gi;
            }
            for ky in 0..3 {
                let sy = oy + ky;
                if sy < 1 || sy > h {
                    continue;
                }
                for kx in 0..3 {
                    let sx = ox + kx;
                    if sx < 1 || sx > wd {
                        continue;
                    }
                    let base = ((sy - 1) * wd + sx - 1) * cin;
                    let k = (ky * 3 + kx) * cin * out;
                    for ci in 0..cin {
                        let v = x[base + ci];
                        let row = k + ci * out;
                        if v != T::zero() {
                            axpy(v, go, &mut grad[weight + row..weight + row + out]);
                        }
                        if need_input_grad {
                            gin[base + ci] = gin[base + ci] + dot(&w[row..row + out], go);
                        }
                    }
                }
            }
        }
    }
    gin
}

/// Flat input index of the maximum in each 2×2 window (first wins on ties).
fn pool_argmax<T: Real>(input: crate::data::Shape, x: &[T]) -> Vec<usize> {
    let (oh, ow, c) = (input.height / 2, input.width / 2, input.channels);
    let mut idx = Vec::with_capacity(oh * ow * c);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best = input.index(2 * oy, 2 * ox, ch);
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = input.index(2 * oy + dy, 2 * ox + dx, ch);
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                idx.push(best);
            }
        }
    }
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Shape;

    fn inputs(n: usize, len: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut r = rng::stream(seed, "inputs");
        (0..n).map(|_| (0..len).map(|_| r.random_range(0.0..1.0)).collect()).collect()
    }

    fn small_conv() -> Architecture {
        Architecture::conv(Shape::new(6, 6, 2), &[3], &[5], 4)
    }

    #[test]
    fn output_is_n_by_d() {
        let net = EmbeddingNetwork::<f64>::new(small_conv(), 0).unwrap();
        let out = net.forward(&inputs(7, 72, 0)).unwrap();
        assert_eq!(out.len(), 7);
        assert!(out.iter().all(|e| e.len() == 4));
        assert!(net.forward(&[vec![0.0; 71]]).is_err());
    }

    #[test]
    fn zero_final_layer_gives_zero_output() {
        let net = EmbeddingNetwork::<f64>::new(small_conv(), 1).unwrap();
        let mut params = net.params().to_vec();
        let last = net.layers.iter().rev().find_map(|l| l.weights()).unwrap();
        let (_, start, _, _) = last;
        for p in &mut params[start..] {
            *p = 0.0;
        }
        let net = EmbeddingNetwork::from_params(small_conv(), params).unwrap();
        for e in net.forward(&inputs(3, 72, 1)).unwrap() {
            assert!(e.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn single_affine_is_a_matrix_product() {
        let arch = Architecture::affine(Shape::new(1, 3, 1), &[], 2);
        // weights [in][out] then biases
        let params = vec![1.0, 2.0, -1.0, 0.5, 3.0, 0.0, 0.25, -0.5];
        let net = EmbeddingNetwork::from_params(arch, params).unwrap();
        let out = net.forward(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(out[0], vec![1.0 - 2.0 + 9.0 + 0.25, 2.0 + 1.0 - 0.5]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = EmbeddingNetwork::<f64>::new(small_conv(), 2).unwrap();
        let (_, trace) = net.forward_trace(&inputs(3, 72, 2)).unwrap();
        let g = net.backward(&trace, &vec![vec![0.0; 4]; 3]).unwrap();
        assert_eq!(g.as_slice().len(), net.num_params());
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let net = EmbeddingNetwork::<f64>::new(small_conv(), 3).unwrap();
        let x = inputs(2, 72, 3);
        let up = inputs(2, 4, 4);
        let objective = |n: &EmbeddingNetwork<f64>| -> f64 {
            let out = n.forward(&x).unwrap();
            out.iter().flatten().zip(up.iter().flatten()).map(|(a, b)| a * b).sum()
        };
        let (_, trace) = net.forward_trace(&x).unwrap();
        let sig = trace.branch_signature(&net);
        let g = net.backward(&trace, &up).unwrap();
        let h = 1e-6;
        let mut checked = 0;
        for i in (0..net.num_params()).step_by(7) {
            let shifted = |d: f64| {
                let mut p = net.params().to_vec();
                p[i] += d;
                EmbeddingNetwork::from_params(small_conv(), p).unwrap()
            };
            let (plus, minus) = (shifted(h), shifted(-h));
            let same = |n: &EmbeddingNetwork<f64>| n.forward_trace(&x).unwrap().1.branch_signature(n) == sig;
            if !same(&plus) || !same(&minus) {
                continue;
            }
            let numeric = (objective(&plus) - objective(&minus)) / (2.0 * h);
            let scale = numeric.abs().max(g.0[i].abs()).max(1e-8);
            assert!((numeric - g.0[i]).abs() / scale < 1e-6, "param {i}: {numeric} vs {}", g.0[i]);
            checked += 1;
        }
        assert!(checked > 10);
    }

    #[test]
    fn f32_tracks_f64() {
        let wide = EmbeddingNetwork::<f64>::new(small_conv(), 5).unwrap();
        let narrow = EmbeddingNetwork::<f32>::from_params(
            small_conv(),
            wide.params().iter().map(|&p| p as f32).collect(),
        )
        .unwrap();
        let x = inputs(4, 72, 5);
        let (a, b) = (wide.forward(&x).unwrap(), narrow.forward(&x).unwrap());
        for (ra, rb) in a.iter().zip(&b) {
            for (u, v) in ra.iter().zip(rb) {
                assert!((u - v).abs() < 1e-4 * (1.0 + u.abs()));
            }
        }
        assert_ne!(wide.checksum(), narrow.checksum());
    }

    #[test]
    fn threads_do_not_change_results() {
        let mut net = EmbeddingNetwork::<f64>::new(small_conv(), 6).unwrap();
        let x = inputs(19, 72, 6);
        let up = inputs(19, 4, 7);
        let (_, trace) = net.forward_trace(&x).unwrap();
        let one = net.backward(&trace, &up).unwrap();
        net.set_threads(3);
        let (_, trace) = net.forward_trace(&x).unwrap();
        assert_eq!(net.backward(&trace, &up).unwrap(), one);
    }
}
