//! Base-session training: minibatch momentum SGD over real plus pseudo-class
//! samples, optimizing the blended cosine-margin objective, with early
//! stopping on a stratified validation slice.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{MixKind, MixOp, PseudoLabelSpace, PseudoSampler, StandardAugment};
use crate::data::{Dataset, DomainInfo, LabeledSample, SessionData};
use crate::embed::{normalize_embedding, EmbeddingNetwork, NormalizedEmbedding, Real, Sgd};
use crate::error::{Error, Result};
use crate::loss::{cosine_backward, total_loss, CosineClassifier, LossConfig};
use crate::rng;

use super::SessionRole;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOptions {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Fraction of each base class held out for early stopping; 0 disables it.
    pub val_fraction: f64,
    /// Flip / crop / brightness jitter on real samples.
    pub augment: StandardAugment,
    /// Pseudo-class samples appended to every real batch; 0 trains on real
    /// classes only.
    pub pseudo_per_batch: usize,
    pub mix: MixOp,
    pub threads: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            lr: 0.002,
            momentum: 0.9,
            batch_size: 128,
            epochs: 30,
            patience: 10,
            val_fraction: 0.1,
            augment: StandardAugment::default(),
            pseudo_per_batch: 32,
            mix: MixOp::default(),
            threads: 1,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Validation("batch_size and epochs must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.val_fraction) {
            return Err(Error::Validation(format!(
                "val_fraction {} outside [0, 0.5)",
                self.val_fraction
            )));
        }
        MixOp::new(self.mix.kind, self.mix.alpha, self.mix.patch)?;
        self.augment.validate()?;
        if self.pseudo_per_batch > 0 && self.mix.kind == MixKind::Cutout {
            return Err(Error::Validation(
                "cutout has a single source image and cannot form pseudo classes".into(),
            ));
        }
        Sgd::<f64>::new(self.lr, self.momentum).map(|_| ())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub loss_a: f64,
    pub loss_d: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_accuracy: Option<f64>,
    pub real_classes: usize,
    pub pseudo_classes: usize,
    pub classifier_rows: usize,
    pub history: Vec<EpochRecord>,
}

/// Backbone and real-class classifier after base training.
#[derive(Clone, Debug)]
pub struct BaseModel<T: Real> {
    pub network: EmbeddingNetwork<T>,
    pub classifier: CosineClassifier,
    pub summary: TrainSummary,
}

/// Base session relabelled to local ids: classes `0..C` grouped by domain,
/// domains `0..D`.
struct LocalSpace {
    dataset: Dataset,
    global_classes: Vec<usize>,
    global_domains: Vec<usize>,
}

fn localize(session: &SessionData) -> Result<LocalSpace> {
    let train = &session.train;
    let mut classes = session.classes.clone();
    let domain_of = |c: usize| train.domain_of(c).expect("session classes are in the pool");
    classes.sort_by_key(|&c| (domain_of(c), c));
    let mut domains: Vec<usize> = classes.iter().map(|&c| domain_of(c)).collect();
    domains.dedup();
    let mut local_class = vec![usize::MAX; train.num_classes()];
    for (i, &c) in classes.iter().enumerate() {
        local_class[c] = i;
    }
    let local_domain = |d: usize| domains.iter().position(|&x| x == d).expect("domain listed");
    let infos = domains
        .iter()
        .map(|&d| DomainInfo {
            name: train.domains()[d].name.clone(),
            classes: classes.iter().filter(|&&c| domain_of(c) == d).count(),
        })
        .collect();
    let samples = train
        .samples()
        .iter()
        .map(|s| LabeledSample {
            pixels: s.pixels.clone(),
            class_id: local_class[s.class_id],
            domain_id: local_domain(s.domain_id),
        })
        .collect();
    let dataset = Dataset::new(train.name(), train.split(), train.shape(), infos, samples)?;
    Ok(LocalSpace {
        global_domains: classes.iter().map(|&c| domain_of(c)).collect(),
        global_classes: classes,
        dataset,
    })
}

/// Per-class seeded split into (train, validation) sample indices.
fn stratified_split(ds: &Dataset, fraction: f64, r: &mut rng::Rng) -> (Vec<usize>, Vec<usize>) {
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for mut idx in ds.class_index() {
        idx.shuffle(r);
        let take = if fraction > 0.0 && idx.len() >= 2 {
            ((idx.len() as f64 * fraction).round() as usize).clamp(1, idx.len() - 1)
        } else {
            0
        };
        val.extend_from_slice(&idx[..take]);
        train.extend_from_slice(&idx[take..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Normalized embeddings of `samples`, in batches.
pub(crate) fn embed_all<T: Real>(
    net: &EmbeddingNetwork<T>,
    samples: &[&[f64]],
    batch: usize,
) -> Result<Vec<NormalizedEmbedding>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch.max(1)) {
        for raw in net.forward(chunk)? {
            out.push(normalize_embedding(&raw)?);
        }
    }
    Ok(out)
}

fn accuracy(clf: &CosineClassifier, embeddings: &[NormalizedEmbedding], labels: &[usize]) -> Result<f64> {
    let mut correct = 0usize;
    for (e, &y) in embeddings.iter().zip(labels) {
        correct += usize::from(clf.predict(e)? == y);
    }
    Ok(correct as f64 / labels.len() as f64)
}

/// Train `net` on the base session. The returned classifier holds only the
/// real-class rows, labelled with global class and domain ids.
pub fn train_base<T: Real>(
    session: &SessionData,
    mut net: EmbeddingNetwork<T>,
    loss_cfg: &LossConfig,
    opts: &TrainOptions,
    seed: u64,
) -> Result<BaseModel<T>> {
    if session.role != SessionRole::Base {
        return Err(Error::Usage(format!("session {} is not the base session", session.index)));
    }
    loss_cfg.validate()?;
    opts.validate()?;
    if net.is_frozen() {
        return Err(Error::Frozen);
    }
    net.set_threads(opts.threads);
    let local = localize(session)?;
    let ds = &local.dataset;
    let real = ds.num_classes();
    let space = PseudoLabelSpace::new(ds.class_domain_map().to_vec())?;
    let use_pseudo = opts.pseudo_per_batch > 0 && real >= 2;
    let sampler = if use_pseudo { Some(PseudoSampler::new(ds, &space)?) } else { None };
    let row_domains: Vec<usize> = if use_pseudo {
        space.extended_class_domains()
    } else {
        ds.class_domain_map().to_vec()
    };

    let mut split_rng = rng::stream(seed, "validation-split");
    let (train_idx, val_idx) = stratified_split(ds, opts.val_fraction, &mut split_rng);
    if train_idx.is_empty() {
        return Err(Error::InsufficientData("base session has no training samples".into()));
    }
    let val_pixels: Vec<&[f64]> = val_idx.iter().map(|&i| ds.samples()[i].pixels.as_slice()).collect();
    let val_labels: Vec<usize> = val_idx.iter().map(|&i| ds.samples()[i].class_id).collect();

    let dim = net.embed_dim();
    let mut clf = CosineClassifier::random(dim, &row_domains, &mut rng::stream(seed, "classifier-init"))?;
    let mut net_sgd = Sgd::<T>::new(opts.lr, opts.momentum)?;
    let mut clf_sgd = Sgd::<f64>::new(opts.lr, opts.momentum)?;
    let mut r = rng::stream(seed, "batches");
    let shape = ds.shape();

    let mut best: Option<(f64, usize, Vec<T>, CosineClassifier)> = None;
    let mut history = Vec::new();
    let mut order = train_idx.clone();
    for epoch in 0..opts.epochs {
        order.shuffle(&mut r);
        let (mut loss_sum, mut la_sum, mut ld_sum, mut steps) = (0.0, 0.0, 0.0, 0usize);
        for (step, chunk) in order.chunks(opts.batch_size).enumerate() {
            let mut pixels: Vec<Vec<f64>> = Vec::with_capacity(chunk.len() + opts.pseudo_per_batch);
            let mut labels = Vec::with_capacity(pixels.capacity());
            for &i in chunk {
                let s = &ds.samples()[i];
                let mut px = s.pixels.clone();
                opts.augment.apply(&mut px, shape, &mut r);
                pixels.push(px);
                labels.push(s.class_id);
            }
            if let Some(sampler) = &sampler {
                for s in sampler.sample(&opts.mix, opts.pseudo_per_batch, &mut r)? {
                    pixels.push(s.pixels);
                    labels.push(s.class_id);
                }
            }

            let (raw, trace) = net.forward_trace(&pixels)?;
            let units: Vec<NormalizedEmbedding> =
                raw.iter().map(|e| normalize_embedding(e)).collect::<Result<_>>()?;
            let cosines: Vec<Vec<f64>> = units.iter().map(|u| clf.cosine_logits(u)).collect::<Result<_>>()?;
            let total = total_loss(&cosines, &labels, loss_cfg, &row_domains)?;
            if !total.value.loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    step,
                    loss: total.value.loss,
                });
            }
            let (emb_grads, w_grads) = cosine_backward(&total.value.grad, &raw, clf.weights(), dim)?;
            let grads = net.backward(&trace, &emb_grads)?;
            net_sgd.step(&mut net, &grads)?;
            clf.apply_update(&mut clf_sgd, &w_grads)?;

            loss_sum += total.value.loss;
            la_sum += total.la;
            ld_sum += total.ld;
            steps += 1;
        }

        let val_accuracy = if val_idx.is_empty() {
            None
        } else {
            let mut real_rows = clf.clone();
            real_rows.truncate(real);
            let emb = embed_all(&net, &val_pixels, opts.batch_size)?;
            Some(accuracy(&real_rows, &emb, &val_labels)?)
        };
        let n = steps as f64;
        history.push(EpochRecord {
            epoch,
            loss: loss_sum / n,
            loss_a: la_sum / n,
            loss_d: ld_sum / n,
            val_accuracy,
        });
        log::info!(
            "epoch {epoch}: loss {:.4} (A {:.4}, D {:.4}) val {:?}",
            loss_sum / n,
            la_sum / n,
            ld_sum / n,
            val_accuracy
        );

        let score = val_accuracy.unwrap_or(f64::NEG_INFINITY);
        let improved = best.as_ref().is_none_or(|(b, ..)| score > *b) || val_accuracy.is_none();
        if improved {
            best = Some((score, epoch, net.params().to_vec(), clf.clone()));
        } else if let Some((_, best_epoch, ..)) = &best {
            if epoch - best_epoch >= opts.patience {
                log::info!("early stop at epoch {epoch}; best epoch {best_epoch}");
                break;
            }
        }
    }

    let (score, best_epoch, params, mut clf) = best.expect("at least one epoch ran");
    let network = EmbeddingNetwork::from_params(net.architecture().clone(), params).map(|mut n| {
        n.set_threads(opts.threads);
        n
    })?;
    clf.truncate(real);
    clf.relabel(local.global_classes, local.global_domains)?;
    Ok(BaseModel {
        network,
        classifier: clf,
        summary: TrainSummary {
            epochs_run: history.len(),
            best_epoch,
            best_val_accuracy: (!val_idx.is_empty()).then_some(score),
            real_classes: real,
            pseudo_classes: if use_pseudo { space.pseudo_classes() } else { 0 },
            classifier_rows: row_domains.len(),
            history,
        },
    })
}
