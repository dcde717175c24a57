//! End-to-end explanation of one image: perturb, trace, score, rank, and
//! extract patches for each requested metric.

use alloc::vec::Vec;

use crate::deconvnet::{extract_top_patches, PatchSet};
use crate::error::{Error, Result};
use crate::importance::{rank, score_layers, ImportanceScore, Metric, PrecisionConfig, RankedSet, TraceBatch};
use crate::network::{forward_batch, NetworkSpec};
use crate::perturbation::{perturb_batch, PerturbationConfig};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ExplainConfig {
    pub perturbation: PerturbationConfig,
    pub selection: PrecisionConfig,
    /// Patch threshold as a fraction of the reconstruction's peak magnitude.
    pub eps: f32,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            perturbation: PerturbationConfig::default(),
            selection: PrecisionConfig::default(),
            eps: 0.1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MetricResult {
    pub metric: Metric,
    /// Every neuron in the layer range, ordered by (layer, channel).
    pub scores: Vec<ImportanceScore>,
    pub ranked: RankedSet,
    pub patches: PatchSet,
}

#[derive(Clone, Debug)]
pub struct Explanation {
    pub batch: TraceBatch,
    pub results: Vec<MetricResult>,
}

impl Explanation {
    pub fn result(&self, metric: Metric) -> Option<&MetricResult> {
        self.results.iter().find(|r| r.metric == metric)
    }
}

pub fn check_image(image: &Tensor) -> Result<()> {
    if image.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::invalid("image values must lie in [0, 1]"));
    }
    Ok(())
}

/// Recorded traces of the unperturbed image (sample id 0) and its `n`
/// perturbed copies (sample ids `1..=n`).
pub fn trace_batch(net: &NetworkSpec, image: &Tensor, cfg: &PerturbationConfig) -> Result<TraceBatch> {
    check_image(image)?;
    let mut images = Vec::with_capacity(cfg.n + 1);
    images.push(image.clone());
    images.extend(perturb_batch(image, cfg)?);
    let mut traces = forward_batch(net, &images)?;
    let samples = traces.split_off(1);
    let original = traces.pop().expect("original trace");
    TraceBatch::new(original, samples)
}

/// Scores and ranks for one metric over an existing trace batch.
pub fn rank_metric(
    net: &NetworkSpec,
    batch: &TraceBatch,
    metric: Metric,
    cfg: &PrecisionConfig,
) -> Result<(Vec<ImportanceScore>, RankedSet)> {
    let scores = score_layers(net, batch, metric, cfg)?;
    let ranked = rank(&scores, cfg)?;
    Ok((scores, ranked))
}

/// Scores, ranks and extracts patches for each metric over an existing
/// trace batch.
pub fn explain_metrics(
    net: &NetworkSpec,
    image: &Tensor,
    batch: &TraceBatch,
    metrics: &[Metric],
    cfg: &ExplainConfig,
) -> Result<Vec<MetricResult>> {
    if metrics.is_empty() {
        return Err(Error::Empty("metric list"));
    }
    let mut results = Vec::with_capacity(metrics.len());
    for &metric in metrics {
        let (scores, ranked) = rank_metric(net, batch, metric, &cfg.selection)?;
        // An all-degenerate metric yields no patches rather than an error.
        let patches = if ranked.is_empty() {
            PatchSet {
                patches: Vec::new(),
                shortfalls: Vec::new(),
            }
        } else {
            extract_top_patches(net, batch, &ranked, image, cfg.eps)?
        };
        results.push(MetricResult {
            metric,
            scores,
            ranked,
            patches,
        });
    }
    Ok(results)
}

pub fn explain(net: &NetworkSpec, image: &Tensor, metrics: &[Metric], cfg: &ExplainConfig) -> Result<Explanation> {
    cfg.selection.validate()?;
    cfg.selection.layers.check(net)?;
    let batch = trace_batch(net, image, &cfg.perturbation)?;
    let results = explain_metrics(net, image, &batch, metrics, cfg)?;
    Ok(Explanation { batch, results })
}
