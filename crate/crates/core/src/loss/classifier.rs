use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embed::{l2_norm, normalize_backward, normalize_embedding, NormalizedEmbedding, Sgd};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowOrigin {
    Learned,
    Prototype,
}

/// Unit-norm class rows with zero bias; logits are cosines to the embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct CosineClassifier {
    dim: usize,
    /// Row-major `rows × dim`.
    weights: Vec<f64>,
    class_ids: Vec<usize>,
    domains: Vec<usize>,
    origins: Vec<RowOrigin>,
}

impl CosineClassifier {
    pub fn new(dim: usize) -> Self {
        CosineClassifier {
            dim,
            weights: Vec::new(),
            class_ids: Vec::new(),
            domains: Vec::new(),
            origins: Vec::new(),
        }
    }

    /// Learned rows for classes `0..class_domains.len()`, drawn uniformly on
    /// the sphere.
    pub fn random(dim: usize, class_domains: &[usize], rng: &mut Rng) -> Result<Self> {
        let mut clf = Self::new(dim);
        for (c, &d) in class_domains.iter().enumerate() {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            clf.push(c, d, &v, RowOrigin::Learned)?;
        }
        Ok(clf)
    }

    /// Append a row; `vector` is unit-normalized on the way in.
    pub fn push(&mut self, class_id: usize, domain: usize, vector: &[f64], origin: RowOrigin) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Validation(format!(
                "row has dimension {}, classifier uses {}",
                vector.len(),
                self.dim
            )));
        }
        if self.class_ids.contains(&class_id) {
            return Err(Error::Validation(format!("class {class_id} already has a row")));
        }
        let unit = normalize_embedding(vector)?;
        self.weights.extend(unit.as_slice());
        self.class_ids.push(class_id);
        self.domains.push(domain);
        self.origins.push(origin);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.class_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn class_ids(&self) -> &[usize] {
        &self.class_ids
    }

    /// Domain of each row, in row order.
    pub fn class_domain_map(&self) -> &[usize] {
        &self.domains
    }

    pub fn origins(&self) -> &[RowOrigin] {
        &self.origins
    }

    /// Keep only the first `n` rows.
    pub fn truncate(&mut self, n: usize) {
        self.weights.truncate(n * self.dim);
        self.class_ids.truncate(n);
        self.domains.truncate(n);
        self.origins.truncate(n);
    }

    /// Relabel rows (e.g. from training-local to global ids).
    pub fn relabel(&mut self, class_ids: Vec<usize>, domains: Vec<usize>) -> Result<()> {
        if class_ids.len() != self.rows() || domains.len() != self.rows() {
            return Err(Error::Validation("relabel must cover every row".into()));
        }
        self.class_ids = class_ids;
        self.domains = domains;
        Ok(())
    }

    /// `cos θ_j = ⟨W_j, e⟩` for every row.
    pub fn cosine_logits(&self, emb: &NormalizedEmbedding) -> Result<Vec<f64>> {
        if emb.dim() != self.dim {
            return Err(Error::Validation(format!(
                "embedding has dimension {}, classifier uses {}",
                emb.dim(),
                self.dim
            )));
        }
        Ok(self
            .weights
            .chunks_exact(self.dim)
            .map(|w| w.iter().zip(emb.as_slice()).map(|(a, b)| a * b).sum::<f64>().clamp(-1.0, 1.0))
            .collect())
    }

    /// Class id of the most similar row; ties go to the lowest class id.
    pub fn predict(&self, emb: &NormalizedEmbedding) -> Result<usize> {
        if self.is_empty() {
            return Err(Error::Validation("classifier has no rows".into()));
        }
        let logits = self.cosine_logits(emb)?;
        let mut best = 0;
        for i in 1..logits.len() {
            if logits[i] > logits[best] || (logits[i] == logits[best] && self.class_ids[i] < self.class_ids[best]) {
                best = i;
            }
        }
        Ok(self.class_ids[best])
    }

    /// Projected momentum step on the rows: update, then renormalize each row.
    pub fn apply_update(&mut self, sgd: &mut Sgd<f64>, grads: &[f64]) -> Result<()> {
        sgd.apply(&mut self.weights, grads)?;
        for row in self.weights.chunks_exact_mut(self.dim) {
            let n = l2_norm(row);
            if n.is_nan() || n <= crate::embed::NORM_EPS {
                return Err(Error::Numeric("classifier row collapsed to zero".into()));
            }
            row.iter_mut().for_each(|v| *v /= n);
        }
        Ok(())
    }
}

/// Chain `∂L/∂cos` through `cos_nj = ⟨W_j/‖W_j‖, x_n/‖x_n‖⟩`.
///
/// `weights` is row-major `K × d` and need not be unit norm. Returns the
/// gradients with respect to the raw embeddings (`N × d`) and the raw
/// weights (flat `K·d`).
pub fn cosine_backward(
    grad_cos: &[Vec<f64>],
    raw_embeddings: &[Vec<f64>],
    weights: &[f64],
    dim: usize,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if grad_cos.len() != raw_embeddings.len() {
        return Err(Error::Validation("gradient and embedding batches differ in size".into()));
    }
    let k = weights.len() / dim.max(1);
    if dim == 0 || weights.len() != k * dim || grad_cos.iter().any(|g| g.len() != k) {
        return Err(Error::Validation("classifier shape does not match the gradient".into()));
    }
    let w_rows: Vec<&[f64]> = weights.chunks_exact(dim).collect();
    let w_unit: Vec<Vec<f64>> = w_rows
        .iter()
        .map(|w| normalize_embedding(w).map(NormalizedEmbedding::into_inner))
        .collect::<Result<_>>()?;
    let x_unit: Vec<Vec<f64>> = raw_embeddings
        .iter()
        .map(|x| normalize_embedding(x).map(NormalizedEmbedding::into_inner))
        .collect::<Result<_>>()?;

    let mut emb_grads = Vec::with_capacity(raw_embeddings.len());
    let mut w_unit_grad = vec![vec![0.0; dim]; k];
    for ((g, x), xu) in grad_cos.iter().zip(raw_embeddings).zip(&x_unit) {
        let mut gx = vec![0.0; dim];
        for (j, &gj) in g.iter().enumerate() {
            if gj == 0.0 {
                continue;
            }
            for t in 0..dim {
                gx[t] += gj * w_unit[j][t];
                w_unit_grad[j][t] += gj * xu[t];
            }
        }
        if x.len() != dim {
            return Err(Error::Validation(format!("embedding of dimension {} != {dim}", x.len())));
        }
        emb_grads.push(normalize_backward(x, &gx));
    }
    let weight_grads = w_rows
        .iter()
        .zip(&w_unit_grad)
        .flat_map(|(w, gu)| normalize_backward(w, gu))
        .collect();
    Ok((emb_grads, weight_grads))
}
