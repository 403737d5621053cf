//! Parsing of the `prior=` key shared by several subcommands.
//!
//! Grammar (colon-separated, paths may not contain ':'):
//!   stored                      use the per-token surprisals already on
//!                               each record (no model)
//!   uniform                     uniform prior over the task vocabulary
//!   laplace:N:B                 length prior centered at N with scale B
//!   ngram:PATH                  load a previously fitted n-gram model
//!   fit-ngram:SAMPLES:ORDER:K   fit an ORDER-gram with add-K smoothing on
//!                               the traces in a sample JSONL file
//!   policy:CKPT                 frozen policy snapshot as the prior

use std::io::BufReader;
use std::path::Path;
use std::sync::Arc;

use cib_core::policy::PolicyCheckpoint;
use cib_core::prior::{LaplaceLengthPrior, NGramPrior, PolicySnapshotPrior, SharedPrior, UniformPrior};
use cib_core::sample::read_trace_samples;
use cib_core::vocab::{TokenSeq, Vocab};

use crate::config::CliError;

/// A parsed prior choice: either "use stored surprisals" or a live model
/// (plus the fitted n-gram when one was just built, so it can be saved).
pub struct BuiltPrior {
    pub model: Option<SharedPrior>,
    pub fitted: Option<Arc<NGramPrior>>,
}

impl std::fmt::Debug for BuiltPrior {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BuiltPrior")
            .field("model", &self.model.as_ref().map(|m| m.id()))
            .field("fitted", &self.fitted.is_some())
            .finish()
    }
}

impl BuiltPrior {
    /// The model, or a validation error for commands that need one.
    pub fn require_model(&self, command: &str) -> Result<SharedPrior, CliError> {
        self.model.clone().ok_or_else(|| {
            CliError::Validation(format!("'{command}' needs a prior model; 'stored' only works \
                 where records already carry surprisals"))
        })
    }
}

fn validation(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

/// Parse and build a prior spec against the task vocabulary.
pub fn build(spec: &str, vocab: &Vocab) -> Result<BuiltPrior, CliError> {
    let built = |model: SharedPrior| BuiltPrior { model: Some(model), fitted: None };
    if spec == "stored" {
        return Ok(BuiltPrior { model: None, fitted: None });
    }
    if spec == "uniform" {
        return Ok(built(Arc::new(UniformPrior::new(vocab.size()))));
    }
    if let Some(rest) = spec.strip_prefix("laplace:") {
        let (n, b) = rest
            .split_once(':')
            .ok_or_else(|| validation(format!("prior '{spec}' must be laplace:N:B")))?;
        let n_gold = n
            .parse::<usize>()
            .map_err(|_| validation(format!("laplace length '{n}' is not an integer")))?;
        let scale = b
            .parse::<f64>()
            .map_err(|_| validation(format!("laplace scale '{b}' is not a number")))?;
        let prior = LaplaceLengthPrior::new(n_gold, scale)
            .map_err(|e| validation(format!("prior '{spec}': {e}")))?;
        return Ok(built(Arc::new(prior)));
    }
    if let Some(path) = spec.strip_prefix("ngram:") {
        let prior = NGramPrior::load(Path::new(path))
            .map_err(|e| validation(format!("cannot load prior '{path}': {e}")))?;
        if prior.vocab_hash() != vocab.hash() {
            return Err(validation(format!(
                "prior '{path}' was fitted on a different vocabulary"
            )));
        }
        return Ok(built(Arc::new(prior)));
    }
    if let Some(rest) = spec.strip_prefix("fit-ngram:") {
        let mut parts = rest.rsplitn(3, ':');
        let k = parts.next();
        let order = parts.next();
        let path = parts.next();
        let (path, order, k) = match (path, order, k) {
            (Some(p), Some(o), Some(k)) => (p, o, k),
            _ => return Err(validation(format!("prior '{spec}' must be fit-ngram:SAMPLES:ORDER:K"))),
        };
        let order = order
            .parse::<usize>()
            .map_err(|_| validation(format!("n-gram order '{order}' is not an integer")))?;
        let k = k
            .parse::<f64>()
            .map_err(|_| validation(format!("smoothing '{k}' is not a number")))?;
        let file = std::fs::File::open(path)
            .map_err(|e| validation(format!("cannot open samples '{path}': {e}")))?;
        let samples = read_trace_samples(BufReader::new(file))
            .map_err(|e| validation(format!("samples '{path}': {e}")))?;
        let corpus: Vec<TokenSeq> = samples.into_iter().map(|s| s.trace).collect();
        let prior = NGramPrior::fit(&corpus, order, k, vocab)
            .map_err(|e| validation(format!("prior '{spec}': {e}")))?;
        let fitted = Arc::new(prior);
        return Ok(BuiltPrior { model: Some(fitted.clone()), fitted: Some(fitted) });
    }
    if let Some(path) = spec.strip_prefix("policy:") {
        let ckpt = PolicyCheckpoint::load(Path::new(path))
            .map_err(|e| validation(format!("cannot load checkpoint '{path}': {e}")))?;
        if ckpt.vocab_hash != vocab.hash() {
            return Err(validation(format!(
                "checkpoint '{path}' was trained on a different vocabulary"
            )));
        }
        let prior = PolicySnapshotPrior::new(ckpt.params, vocab.bos_id(), ckpt.vocab_hash);
        return Ok(built(Arc::new(prior)));
    }
    Err(validation(format!(
        "unknown prior '{spec}'; expected stored | uniform | laplace:N:B | ngram:PATH | \
         fit-ngram:SAMPLES:ORDER:K | policy:CKPT"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grammar_accepts_each_form_and_names_bad_specs() {
        let vocab = Vocab::arithmetic();
        assert!(build("uniform", &vocab).unwrap().model.is_some());
        assert!(build("stored", &vocab).unwrap().model.is_none());
        let laplace = build("laplace:40:2.5", &vocab).unwrap().model.unwrap();
        assert!(!laplace.is_per_token());
        for bad in ["laplace:40", "laplace:x:1", "wat", "fit-ngram:corpus"] {
            let err = build(bad, &vocab).unwrap_err();
            assert!(matches!(err, CliError::Validation(_)), "{bad}");
        }
        let missing = build("ngram:/definitely/not/there.bin", &vocab).unwrap_err();
        assert!(matches!(missing, CliError::Validation(m) if m.contains("not/there.bin")));
    }

    #[test]
    fn stored_is_rejected_where_a_model_is_required() {
        let vocab = Vocab::arithmetic();
        let stored = build("stored", &vocab).unwrap();
        assert!(matches!(stored.require_model("train"), Err(CliError::Validation(_))));
        let uniform = build("uniform", &vocab).unwrap();
        assert!(uniform.require_model("train").is_ok());
    }
}
