//! Neuron importance metrics, top-N ranking and ranked-set similarity.
//!
//! A neuron is one output channel of a conv layer. Four single-image
//! baselines (activation sum/variance, outgoing weight sum/variance) are
//! computed from the unperturbed image's trace and the network weights; the
//! two batch metrics (activation-output correlation, activation precision)
//! look at the whole perturbation batch.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::network::{ActivationTrace, NetworkSpec};
use crate::stats;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NeuronId {
    /// Conv layer, 1-based.
    pub layer: usize,
    /// Output channel, 0-based.
    pub channel: usize,
}

impl NeuronId {
    pub fn new(layer: usize, channel: usize) -> Self {
        Self { layer, channel }
    }
}

impl fmt::Display for NeuronId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}:c{}", self.layer, self.channel)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    ActSum,
    ActVar,
    WeightSum,
    WeightVar,
    ActOutCorr,
    ActPrecision,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::ActSum,
        Metric::ActVar,
        Metric::WeightSum,
        Metric::WeightVar,
        Metric::ActOutCorr,
        Metric::ActPrecision,
    ];

    pub const BASELINES: [Metric; 4] = [Metric::ActSum, Metric::ActVar, Metric::WeightSum, Metric::WeightVar];

    pub fn name(self) -> &'static str {
        match self {
            Metric::ActSum => "act-sum",
            Metric::ActVar => "act-var",
            Metric::WeightSum => "weight-sum",
            Metric::WeightVar => "weight-var",
            Metric::ActOutCorr => "act-out-corr",
            Metric::ActPrecision => "act-precision",
        }
    }

    /// Degenerate correlation scores rank after every valid one; every other
    /// metric drops degenerate neurons from the ranking.
    fn keeps_degenerate(self) -> bool {
        self == Metric::ActOutCorr
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(alloc::format!("unknown metric {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImportanceScore {
    pub neuron: NeuronId,
    pub metric: Metric,
    pub value: f64,
    pub degenerate: bool,
}

impl ImportanceScore {
    fn valid(neuron: NeuronId, metric: Metric, value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::NonFinite("importance score"));
        }
        Ok(Self {
            neuron,
            metric,
            value,
            degenerate: false,
        })
    }

    fn degenerate(neuron: NeuronId, metric: Metric) -> Self {
        Self {
            neuron,
            metric,
            value: 0.0,
            degenerate: true,
        }
    }
}

/// Inclusive range of 1-based conv layer indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerRange {
    pub first: usize,
    pub last: usize,
}

impl LayerRange {
    pub fn new(first: usize, last: usize) -> Result<Self> {
        if first == 0 || first > last {
            return Err(Error::invalid(alloc::format!("empty or invalid layer range {first}..{last}")));
        }
        Ok(Self { first, last })
    }

    pub fn contains(&self, layer: usize) -> bool {
        (self.first..=self.last).contains(&layer)
    }

    pub fn iter(&self) -> core::ops::RangeInclusive<usize> {
        self.first..=self.last
    }

    pub fn len(&self) -> usize {
        self.last + 1 - self.first
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn check(&self, net: &NetworkSpec) -> Result<()> {
        if self.first == 0 || self.first > self.last || self.last > net.conv_layer_count() {
            return Err(Error::invalid(alloc::format!(
                "layer range {}..{} outside the network's {} conv layers",
                self.first,
                self.last,
                net.conv_layer_count()
            )));
        }
        Ok(())
    }
}

impl fmt::Display for LayerRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.first, self.last)
    }
}

impl FromStr for LayerRange {
    type Err = Error;

    /// `a..b` (inclusive) or a single layer `a`.
    fn from_str(s: &str) -> Result<Self> {
        let parse = |t: &str| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::invalid(alloc::format!("bad layer range {s:?}")))
        };
        match s.split_once("..") {
            Some((a, b)) => LayerRange::new(parse(a)?, parse(b.trim_start_matches('='))?),
            None => {
                let a = parse(s)?;
                LayerRange::new(a, a)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrecisionConfig {
    /// Neurons whose mean absolute activation over the batch falls below
    /// this are discarded.
    pub lambda: f64,
    /// Neurons selected per layer.
    pub top_n: usize,
    pub layers: LayerRange,
}

impl Default for PrecisionConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            top_n: 5,
            layers: LayerRange { first: 2, last: 6 },
        }
    }
}

impl PrecisionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid("lambda must be >= 0"));
        }
        if self.top_n == 0 {
            return Err(Error::invalid("top-N must be >= 1"));
        }
        LayerRange::new(self.layers.first, self.layers.last).map(|_| ())
    }
}

/// Recorded traces for one query image: its own trace plus one per
/// perturbed sample.
#[derive(Clone, Debug)]
pub struct TraceBatch {
    pub original: ActivationTrace,
    pub samples: Vec<ActivationTrace>,
    /// Class the network predicts for the unperturbed image; its probability
    /// is the output tracked across the batch.
    pub target_class: usize,
}

impl TraceBatch {
    pub fn new(original: ActivationTrace, samples: Vec<ActivationTrace>) -> Result<Self> {
        if !original.is_recorded() || samples.iter().any(|s| !s.is_recorded()) {
            return Err(Error::MissingTrace("recorded activations"));
        }
        let target_class = original.predicted_class();
        Ok(Self {
            original,
            samples,
            target_class,
        })
    }

    fn channel_of<'a>(trace: &'a ActivationTrace, neuron: NeuronId) -> Result<&'a [f32]> {
        let act = trace.conv_activation(neuron.layer).ok_or(Error::NeuronOutOfRange(neuron))?;
        if neuron.channel >= act.shape()[0] {
            return Err(Error::NeuronOutOfRange(neuron));
        }
        Ok(act.channel(neuron.channel))
    }

    /// The neuron's feature map in the unperturbed image's trace.
    pub fn original_map(&self, neuron: NeuronId) -> Result<&[f32]> {
        Self::channel_of(&self.original, neuron)
    }

    /// The neuron's feature map for every perturbed sample.
    pub fn sample_maps(&self, neuron: NeuronId) -> Result<Vec<&[f32]>> {
        self.samples.iter().map(|t| Self::channel_of(t, neuron)).collect()
    }

    /// Probability of the target class for every perturbed sample.
    pub fn outputs(&self) -> Vec<f64> {
        self.samples.iter().map(|t| t.probability(self.target_class) as f64).collect()
    }

    /// `1 - p(target)` per perturbed sample, resolved from the logits.
    pub fn complements(&self) -> Vec<f64> {
        self.samples
            .iter()
            .map(|t| t.complement_probability(self.target_class))
            .collect()
    }

    fn require_pairs(&self) -> Result<()> {
        if self.samples.len() < 2 {
            return Err(Error::invalid("batch metrics need at least two perturbed samples"));
        }
        Ok(())
    }
}

pub fn score_act_sum(batch: &TraceBatch, neuron: NeuronId) -> Result<ImportanceScore> {
    let map = batch.original_map(neuron)?;
    ImportanceScore::valid(neuron, Metric::ActSum, stats::sum(map))
}

pub fn score_act_var(batch: &TraceBatch, neuron: NeuronId) -> Result<ImportanceScore> {
    let map = batch.original_map(neuron)?;
    ImportanceScore::valid(neuron, Metric::ActVar, stats::variance(map)?)
}

/// Slice `w[:, channel, :, :]` of the next conv layer: every weight that reads
/// the neuron's feature map. `None` when the next reader is not a conv layer.
fn outgoing_weights(net: &NetworkSpec, neuron: NeuronId) -> Result<Option<Vec<f32>>> {
    let own = net.conv_layer(neuron.layer).ok_or(Error::NeuronOutOfRange(neuron))?;
    if neuron.channel >= own.out_channels() {
        return Err(Error::NeuronOutOfRange(neuron));
    }
    let Some(next) = net.next_conv_reader(neuron.layer) else {
        return Ok(None);
    };
    let (kh, kw) = next.kernel();
    let k = kh * kw;
    let in_c = next.in_channels();
    let w = next.weights().data();
    Ok(Some(
        (0..next.out_channels())
            .flat_map(|o| {
                let start = (o * in_c + neuron.channel) * k;
                w[start..start + k].iter().copied()
            })
            .collect(),
    ))
}

pub fn score_weight_sum(net: &NetworkSpec, neuron: NeuronId) -> Result<ImportanceScore> {
    match outgoing_weights(net, neuron)? {
        Some(w) => ImportanceScore::valid(neuron, Metric::WeightSum, stats::sum(&w)),
        None => Ok(ImportanceScore::degenerate(neuron, Metric::WeightSum)),
    }
}

pub fn score_weight_var(net: &NetworkSpec, neuron: NeuronId) -> Result<ImportanceScore> {
    match outgoing_weights(net, neuron)? {
        Some(w) => ImportanceScore::valid(neuron, Metric::WeightVar, stats::variance(&w)?),
        None => Ok(ImportanceScore::degenerate(neuron, Metric::WeightVar)),
    }
}

/// `|pearson(s_i, o_i)|` where `s_i` is the sum of the neuron's feature map
/// for sample `i` and `o_i` the target-class probability. Degenerate when
/// either sequence is constant.
pub fn score_correlation(batch: &TraceBatch, neuron: NeuronId) -> Result<ImportanceScore> {
    batch.require_pairs()?;
    let s: Vec<f64> = batch.sample_maps(neuron)?.iter().map(|m| stats::sum(m)).collect();
    // |r| is the same against 1 - p, which keeps its precision near p = 1
    correlation_from_pairs(neuron, &s, &batch.complements())
}

pub(crate) fn correlation_from_pairs(neuron: NeuronId, s: &[f64], o: &[f64]) -> Result<ImportanceScore> {
    match stats::pearson_abs(s, o) {
        Ok(r) => ImportanceScore::valid(neuron, Metric::ActOutCorr, r),
        Err(Error::DegenerateCorrelation) => Ok(ImportanceScore::degenerate(neuron, Metric::ActOutCorr)),
        Err(e) => Err(e),
    }
}

/// Cells whose across-batch variance is below this contribute
/// [`PRECISION_CAP`] instead of an unbounded reciprocal.
pub const PRECISION_VARIANCE_FLOOR: f64 = 1e-12;
pub const PRECISION_CAP: f64 = 1e12;

/// Mean over feature-map cells of `1 / Var_i(z_i[r][c])`, the variance taken
/// across the perturbed samples. Neurons whose mean absolute activation is
/// below `cfg.lambda` are degenerate.
pub fn score_precision(batch: &TraceBatch, neuron: NeuronId, cfg: &PrecisionConfig) -> Result<ImportanceScore> {
    batch.require_pairs()?;
    let maps = batch.sample_maps(neuron)?;
    precision_from_maps(neuron, &maps, cfg.lambda)
}

pub(crate) fn precision_from_maps(neuron: NeuronId, maps: &[&[f32]], lambda: f64) -> Result<ImportanceScore> {
    let n = maps.len() as f64;
    let cells = maps[0].len();
    let mut abs_total = 0.0f64;
    let mut reciprocal_total = 0.0f64;
    for cell in 0..cells {
        let mut sum = 0.0f64;
        for m in maps {
            let v = m[cell] as f64;
            sum += v;
            abs_total += v.abs();
        }
        let mean = sum / n;
        let var = maps
            .iter()
            .map(|m| {
                let d = m[cell] as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        reciprocal_total += if var < PRECISION_VARIANCE_FLOOR {
            PRECISION_CAP
        } else {
            1.0 / var
        };
    }
    if abs_total / (n * cells as f64) < lambda {
        return Ok(ImportanceScore::degenerate(neuron, Metric::ActPrecision));
    }
    ImportanceScore::valid(neuron, Metric::ActPrecision, reciprocal_total / cells as f64)
}

pub fn score(
    net: &NetworkSpec,
    batch: &TraceBatch,
    metric: Metric,
    neuron: NeuronId,
    cfg: &PrecisionConfig,
) -> Result<ImportanceScore> {
    match metric {
        Metric::ActSum => score_act_sum(batch, neuron),
        Metric::ActVar => score_act_var(batch, neuron),
        Metric::WeightSum => score_weight_sum(net, neuron),
        Metric::WeightVar => score_weight_var(net, neuron),
        Metric::ActOutCorr => score_correlation(batch, neuron),
        Metric::ActPrecision => score_precision(batch, neuron, cfg),
    }
}

/// Scores every channel of every conv layer in `cfg.layers`, ordered by
/// (layer, channel).
pub fn score_layers(
    net: &NetworkSpec,
    batch: &TraceBatch,
    metric: Metric,
    cfg: &PrecisionConfig,
) -> Result<Vec<ImportanceScore>> {
    cfg.validate()?;
    cfg.layers.check(net)?;
    let mut out = Vec::new();
    for layer in cfg.layers.iter() {
        let channels = net.conv_layer(layer).map(|c| c.out_channels()).unwrap_or(0);
        for channel in 0..channels {
            out.push(score(net, batch, metric, NeuronId::new(layer, channel), cfg)?);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSelection {
    pub layer: usize,
    /// Selected neurons, best first.
    pub neurons: Vec<NeuronId>,
    pub scores: Vec<f64>,
    /// How many of the requested N could not be filled.
    pub shortfall: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankedSet {
    pub metric: Metric,
    pub layers: LayerRange,
    pub top_n: usize,
    pub selections: Vec<LayerSelection>,
}

impl RankedSet {
    pub fn neurons(&self) -> impl Iterator<Item = NeuronId> + '_ {
        self.selections.iter().flat_map(|s| s.neurons.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.selections.iter().map(|s| s.neurons.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total_shortfall(&self) -> usize {
        self.selections.iter().map(|s| s.shortfall).sum()
    }

    /// Rank (1-based) of `neuron` within its layer, if selected.
    pub fn rank_of(&self, neuron: NeuronId) -> Option<usize> {
        self.selections
            .iter()
            .find(|s| s.layer == neuron.layer)?
            .neurons
            .iter()
            .position(|&n| n == neuron)
            .map(|p| p + 1)
    }
}

/// Top `cfg.top_n` neurons per layer by descending score, ties broken by
/// lower channel. Layers short of N non-degenerate neurons return what they
/// have and record the shortfall.
pub fn rank(scores: &[ImportanceScore], cfg: &PrecisionConfig) -> Result<RankedSet> {
    cfg.validate()?;
    let metric = match scores.first() {
        Some(s) => s.metric,
        None => return Err(Error::Empty("score list")),
    };
    if scores.iter().any(|s| s.metric != metric) {
        return Err(Error::invalid("rank() needs scores of a single metric"));
    }
    let mut selections = Vec::with_capacity(cfg.layers.len());
    for layer in cfg.layers.iter() {
        let mut valid: Vec<&ImportanceScore> = scores
            .iter()
            .filter(|s| s.neuron.layer == layer && !s.degenerate)
            .collect();
        valid.sort_by(|a, b| b.value.total_cmp(&a.value).then(a.neuron.channel.cmp(&b.neuron.channel)));
        if metric.keeps_degenerate() {
            let mut dead: Vec<&ImportanceScore> = scores
                .iter()
                .filter(|s| s.neuron.layer == layer && s.degenerate)
                .collect();
            dead.sort_by_key(|s| s.neuron.channel);
            valid.extend(dead);
        }
        let mut seen = BTreeSet::new();
        valid.retain(|s| seen.insert(s.neuron));
        valid.truncate(cfg.top_n);
        selections.push(LayerSelection {
            layer,
            neurons: valid.iter().map(|s| s.neuron).collect(),
            scores: valid.iter().map(|s| s.value).collect(),
            shortfall: cfg.top_n - valid.len(),
        });
    }
    Ok(RankedSet {
        metric,
        layers: cfg.layers,
        top_n: cfg.top_n,
        selections,
    })
}

/// `|A ∩ B| / |A ∪ B|` over the layer-tagged neurons selected in all layers.
/// Two empty sets are identical (1.0).
pub fn jaccard(a: &RankedSet, b: &RankedSet) -> Result<f64> {
    if a.layers != b.layers {
        return Err(Error::invalid("jaccard needs ranked sets over the same layer range"));
    }
    let sa: BTreeSet<NeuronId> = a.neurons().collect();
    let sb: BTreeSet<NeuronId> = b.neurons().collect();
    Ok(jaccard_sets(&sa, &sb))
}

pub fn jaccard_sets<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn sc(layer: usize, channel: usize, value: f64) -> ImportanceScore {
        ImportanceScore {
            neuron: NeuronId::new(layer, channel),
            metric: Metric::ActPrecision,
            value,
            degenerate: false,
        }
    }

    fn cfg(n: usize) -> PrecisionConfig {
        PrecisionConfig {
            lambda: 1e-3,
            top_n: n,
            layers: LayerRange::new(1, 1).unwrap(),
        }
    }

    #[test]
    fn rank_distinct_scores() {
        let r = rank(&[sc(1, 0, 0.1), sc(1, 1, 0.9), sc(1, 2, 0.5)], &cfg(2)).unwrap();
        assert_eq!(r.selections[0].neurons, vec![NeuronId::new(1, 1), NeuronId::new(1, 2)]);
        assert_eq!(r.rank_of(NeuronId::new(1, 2)), Some(2));
    }

    #[test]
    fn rank_ties_by_channel() {
        let r = rank(&[sc(1, 0, 1.0), sc(1, 1, 1.0), sc(1, 2, 1.0)], &cfg(2)).unwrap();
        assert_eq!(r.selections[0].neurons, vec![NeuronId::new(1, 0), NeuronId::new(1, 1)]);
    }

    #[test]
    fn rank_records_shortfall() {
        let mut dead = sc(1, 1, 0.0);
        dead.degenerate = true;
        let r = rank(&[sc(1, 0, 1.0), dead], &cfg(3)).unwrap();
        assert_eq!(r.selections[0].neurons, vec![NeuronId::new(1, 0)]);
        assert_eq!(r.selections[0].shortfall, 2);
    }

    #[test]
    fn correlation_dead_neurons_rank_last() {
        let mk = |c, v, d| ImportanceScore {
            neuron: NeuronId::new(1, c),
            metric: Metric::ActOutCorr,
            value: v,
            degenerate: d,
        };
        let r = rank(&[mk(0, 0.0, true), mk(1, 0.2, false), mk(2, 0.0, true)], &cfg(3)).unwrap();
        assert_eq!(
            r.selections[0].neurons,
            vec![NeuronId::new(1, 1), NeuronId::new(1, 0), NeuronId::new(1, 2)]
        );
    }

    #[test]
    fn rank_rejects_empty_and_mixed() {
        assert!(rank(&[], &cfg(1)).is_err());
        let mut other = sc(1, 1, 0.3);
        other.metric = Metric::ActSum;
        assert!(rank(&[sc(1, 0, 1.0), other], &cfg(1)).is_err());
        assert!(LayerRange::new(3, 2).is_err());
        assert!(LayerRange::new(0, 2).is_err());
    }

    fn set(items: &[(usize, usize)]) -> RankedSet {
        RankedSet {
            metric: Metric::ActSum,
            layers: LayerRange::new(1, 2).unwrap(),
            top_n: 5,
            selections: vec![LayerSelection {
                layer: 1,
                neurons: items.iter().map(|&(l, c)| NeuronId::new(l, c)).collect(),
                scores: vec![0.0; items.len()],
                shortfall: 0,
            }],
        }
    }

    #[test]
    fn jaccard_examples() {
        let a = set(&[(1, 1), (1, 2), (1, 3)]);
        let b = set(&[(1, 2), (1, 3), (1, 4)]);
        assert_eq!(jaccard(&a, &b).unwrap(), 0.5);
        assert_eq!(jaccard(&a, &a).unwrap(), 1.0);
        let c = set(&[(2, 0), (2, 1), (2, 2), (2, 3), (2, 4)]);
        let d = set(&[(1, 0), (1, 1), (1, 2), (1, 3), (1, 4)]);
        assert_eq!(jaccard(&c, &d).unwrap(), 0.0);
        assert_eq!(jaccard(&set(&[]), &set(&[])).unwrap(), 1.0);
        // same channel index in different layers is a different neuron
        assert_eq!(jaccard(&set(&[(1, 0)]), &set(&[(2, 0)])).unwrap(), 0.0);
    }

    #[test]
    fn precision_hand_example() {
        let a = [0.5f32];
        let b = [1.5f32];
        let s = precision_from_maps(NeuronId::new(1, 0), &[&a, &b], 1e-3).unwrap();
        assert!(!s.degenerate);
        assert_eq!(s.value, 4.0);
    }

    #[test]
    fn precision_below_lambda_is_degenerate() {
        let a = [1e-5f32, 0.0];
        let b = [0.0f32, 2e-5];
        let s = precision_from_maps(NeuronId::new(1, 0), &[&a, &b], 1e-3).unwrap();
        assert!(s.degenerate);
    }

    #[test]
    fn precision_caps_constant_cells() {
        let a = [1.0f32, 0.0];
        let b = [1.0f32, 1.0];
        let s = precision_from_maps(NeuronId::new(1, 0), &[&a, &b], 1e-3).unwrap();
        // cell 0: capped; cell 1: var 0.25 -> 4
        assert_eq!(s.value, (PRECISION_CAP + 4.0) / 2.0);
    }

    #[test]
    fn correlation_affine_and_dead() {
        let o = [0.1, 0.4, 0.3, 0.9];
        let s: Vec<f64> = o.iter().map(|v| 2.0 * v + 3.0).collect();
        let r = correlation_from_pairs(NeuronId::new(1, 0), &s, &o).unwrap();
        assert!((r.value - 1.0).abs() < 1e-12);
        let dead = correlation_from_pairs(NeuronId::new(1, 0), &[2.0; 4], &o).unwrap();
        assert!(dead.degenerate);
    }

    #[test]
    fn metric_names_round_trip() {
        for m in Metric::ALL {
            assert_eq!(m.name().parse::<Metric>().unwrap(), m);
        }
        assert!("bogus".parse::<Metric>().is_err());
        assert_eq!("2..6".parse::<LayerRange>().unwrap(), LayerRange::new(2, 6).unwrap());
        assert_eq!("4".parse::<LayerRange>().unwrap(), LayerRange::new(4, 4).unwrap());
    }
}
