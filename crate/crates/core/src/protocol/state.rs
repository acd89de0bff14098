//! Frozen-backbone incremental phase: prototype rows per new class and
//! per-task evaluation after every session.

use crate::data::{Dataset, SessionData};
use crate::embed::{normalize_embedding, Embedder, NormalizedEmbedding};
use crate::error::{Error, Result};
use crate::loss::{CosineClassifier, RowOrigin};

use super::metrics::{compute_metrics, Metrics};

/// Embeddings and labels of one task's test partition.
#[derive(Clone, Debug)]
pub struct EmbeddedSet {
    pub embeddings: Vec<NormalizedEmbedding>,
    pub labels: Vec<usize>,
}

impl EmbeddedSet {
    pub fn embed<E: Embedder + ?Sized>(embedder: &E, ds: &Dataset, batch: usize) -> Result<Self> {
        let mut embeddings = Vec::with_capacity(ds.len());
        for chunk in ds.samples().chunks(batch.max(1)) {
            let px: Vec<&[f64]> = chunk.iter().map(|s| s.pixels.as_slice()).collect();
            embeddings.extend(embedder.embed_normalized(&px)?);
        }
        Ok(EmbeddedSet {
            embeddings,
            labels: ds.samples().iter().map(|s| s.class_id).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Correct predictions over an embedded set.
pub fn count_correct(clf: &CosineClassifier, set: &EmbeddedSet) -> Result<usize> {
    let mut correct = 0;
    for (e, &y) in set.embeddings.iter().zip(&set.labels) {
        correct += usize::from(clf.predict(e)? == y);
    }
    Ok(correct)
}

/// Accuracy over an embedded set; an empty set is a validation error.
pub fn evaluate_embedded(clf: &CosineClassifier, set: &EmbeddedSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Validation("empty test partition".into()));
    }
    Ok(count_correct(clf, set)? as f64 / set.len() as f64)
}

/// Append one prototype row per class of `session`: the normalized mean of
/// the normalized embeddings of its shots. Existing rows are untouched.
pub fn extend_with_prototypes<E: Embedder + ?Sized>(
    embedder: &E,
    clf: &mut CosineClassifier,
    session: &SessionData,
) -> Result<()> {
    if !embedder.is_frozen() {
        return Err(Error::Usage("prototype extension needs a frozen backbone".into()));
    }
    let by_class = session.train.class_index();
    for &c in &session.classes {
        let idx = &by_class[c];
        if idx.is_empty() {
            return Err(Error::InsufficientData(format!(
                "session {} has no training samples for class {c}",
                session.index
            )));
        }
        let px: Vec<&[f64]> = idx.iter().map(|&i| session.train.samples()[i].pixels.as_slice()).collect();
        let embedded = embedder.embed_normalized(&px)?;
        let mut sum = vec![0.0; clf.dim()];
        for e in &embedded {
            for (s, v) in sum.iter_mut().zip(e.as_slice()) {
                *s += v;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / embedded.len() as f64).collect();
        let proto = normalize_embedding(&mean)?;
        let domain = session.train.domain_of(c).expect("session classes are in the pool");
        clf.push(c, domain, proto.as_slice(), RowOrigin::Prototype)?;
    }
    Ok(())
}

/// Per-task accuracies after one session plus accuracy on the cumulative
/// test set.
#[derive(Clone, Debug, PartialEq)]
pub struct SessionEvaluation {
    pub per_task: Vec<f64>,
    pub cumulative: f64,
}

/// Incremental protocol driver over a frozen embedder. Test embeddings are
/// computed once per task and reused by every later session.
pub struct ProtocolState<E: Embedder> {
    embedder: E,
    classifier: CosineClassifier,
    tasks: Vec<EmbeddedSet>,
    matrix: Vec<Vec<f64>>,
    cumulative: Vec<f64>,
    eval_batch: usize,
}

impl<E: Embedder> ProtocolState<E> {
    /// Start from a trained base classifier and evaluate the base session.
    pub fn new(embedder: E, classifier: CosineClassifier, base: &SessionData, eval_batch: usize) -> Result<Self> {
        if !embedder.is_frozen() {
            return Err(Error::Usage("the backbone must be frozen before the incremental phase".into()));
        }
        if base.index != 0 {
            return Err(Error::Usage(format!("session {} is not the base session", base.index)));
        }
        let mut state = ProtocolState {
            embedder,
            classifier,
            tasks: Vec::new(),
            matrix: Vec::new(),
            cumulative: Vec::new(),
            eval_batch,
        };
        state.evaluate_new_task(base)?;
        Ok(state)
    }

    /// Run one incremental session: extend the classifier and evaluate.
    pub fn advance(&mut self, session: &SessionData) -> Result<SessionEvaluation> {
        let expected = self.tasks.len();
        if session.index != expected {
            return Err(Error::Usage(format!(
                "expected session {expected}, got session {}",
                session.index
            )));
        }
        extend_with_prototypes(&self.embedder, &mut self.classifier, session)?;
        self.evaluate_new_task(session)
    }

    fn evaluate_new_task(&mut self, session: &SessionData) -> Result<SessionEvaluation> {
        let set = EmbeddedSet::embed(&self.embedder, &session.task_test, self.eval_batch)?;
        if set.is_empty() {
            return Err(Error::Validation(format!("session {} has an empty test partition", session.index)));
        }
        self.tasks.push(set);
        let eval = self.evaluate_session()?;
        self.matrix.push(eval.per_task.clone());
        self.cumulative.push(eval.cumulative);
        Ok(eval)
    }

    /// Evaluate the current classifier on every task seen so far.
    pub fn evaluate_session(&self) -> Result<SessionEvaluation> {
        let (mut correct, mut total) = (0usize, 0usize);
        let mut per_task = Vec::with_capacity(self.tasks.len());
        for set in &self.tasks {
            let c = count_correct(&self.classifier, set)?;
            per_task.push(c as f64 / set.len() as f64);
            correct += c;
            total += set.len();
        }
        Ok(SessionEvaluation {
            per_task,
            cumulative: correct as f64 / total as f64,
        })
    }

    pub fn session(&self) -> usize {
        self.tasks.len() - 1
    }

    pub fn classifier(&self) -> &CosineClassifier {
        &self.classifier
    }

    pub fn embedder(&self) -> &E {
        &self.embedder
    }

    pub fn into_embedder(self) -> E {
        self.embedder
    }

    /// Lower-triangular `a_{t,i}` so far.
    pub fn accuracy_matrix(&self) -> &[Vec<f64>] {
        &self.matrix
    }

    /// Accuracy on the cumulative test set after each session.
    pub fn cumulative_accuracy(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn metrics(&self) -> Result<Metrics> {
        compute_metrics(&self.matrix)
    }
}
