//! Synthetic two-class dataset and the evaluation harness: patch
//! localization against object masks, a secondary classifier trained on
//! extracted patches, and metric convergence across training checkpoints.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use crate::deconvnet::{BBox, Patch};
use crate::error::{Error, Result};
use crate::explain::{explain_metrics, rank_metric, trace_batch, ExplainConfig};
use crate::importance::{jaccard, Metric, NeuronId};
use crate::network::{accuracy, conv_same, Checkpoint, LayerPlan, NetworkSpec, TrainConfig};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const IMAGE_SIZE: usize = 32;
pub const PATCH_SIZE: usize = 16;
pub const NEGATIVE: usize = 0;
pub const POSITIVE: usize = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    /// `[3, H, W]` in `[0, 1]`.
    pub image: Tensor,
    pub label: usize,
    /// Binary `[H, W]` object mask (1 = object pixel).
    pub mask: Option<Tensor>,
}

impl LabeledImage {
    pub fn new(image: Tensor, label: usize, mask: Option<Tensor>) -> Result<Self> {
        if image.shape().len() != 3 {
            return Err(Error::InvalidShape(image.shape().to_vec()));
        }
        if let Some(m) = &mask {
            if m.shape() != &image.shape()[1..] {
                return Err(Error::ShapeMismatch {
                    expected: image.shape()[1..].to_vec(),
                    found: m.shape().to_vec(),
                });
            }
            if label == POSITIVE && !m.data().iter().any(|&v| v > 0.0) {
                return Err(Error::invalid("positive image with an empty mask"));
            }
        }
        Ok(Self { image, label, mask })
    }

    /// Tight box around the mask pixels.
    pub fn mask_bbox(&self) -> Option<BBox> {
        let m = self.mask.as_ref()?;
        let (h, w) = (m.shape()[0], m.shape()[1]);
        let (mut top, mut left, mut bottom, mut right) = (h, w, 0, 0);
        let mut any = false;
        for y in 0..h {
            for x in 0..w {
                if m.data()[y * w + x] > 0.0 {
                    any = true;
                    top = top.min(y);
                    left = left.min(x);
                    bottom = bottom.max(y);
                    right = right.max(x);
                }
            }
        }
        any.then(|| BBox {
            top,
            left,
            height: bottom - top + 1,
            width: right - left + 1,
        })
    }
}

struct Canvas {
    px: Vec<f32>,
}

impl Canvas {
    const N: usize = IMAGE_SIZE;

    fn set(&mut self, y: usize, x: usize, color: [f32; 3]) {
        for (c, v) in color.iter().enumerate() {
            self.px[(c * Self::N + y) * Self::N + x] = *v;
        }
    }
}

fn random_color(rng: &mut Rng) -> [f32; 3] {
    [rng.uniform() as f32, rng.uniform() as f32, rng.uniform() as f32]
}

/// A random colour whose mean channel distance from `base` is at least 0.3.
fn contrasting_color(rng: &mut Rng, base: [f32; 3]) -> [f32; 3] {
    for _ in 0..64 {
        let c = random_color(rng);
        let d: f32 = c.iter().zip(&base).map(|(a, b)| (a - b).abs()).sum::<f32>() / 3.0;
        if d >= 0.3 {
            return c;
        }
    }
    base.map(|v| if v > 0.5 { 0.0 } else { 1.0 })
}

fn synth_image(rng: &mut Rng, positive: bool) -> Result<LabeledImage> {
    let n = IMAGE_SIZE;
    // dim background, so bright shapes dominate the activations
    let base = [
        rng.uniform_range(0.05, 0.25) as f32,
        rng.uniform_range(0.05, 0.25) as f32,
        rng.uniform_range(0.05, 0.25) as f32,
    ];
    // oriented sinusoidal stripes plus per-pixel jitter
    let amp = rng.uniform_range(0.01, 0.04);
    let freq = rng.uniform_range(0.2, 0.8);
    let theta = rng.uniform_range(0.0, core::f64::consts::PI);
    let phase = rng.uniform_range(0.0, 2.0 * core::f64::consts::PI);
    let (ct, st) = (libm::cos(theta), libm::sin(theta));
    let mut canvas = Canvas { px: vec![0.0; 3 * n * n] };
    for y in 0..n {
        for x in 0..n {
            let wave = amp * libm::sin(freq * (x as f64 * ct + y as f64 * st) + phase);
            for (c, b) in base.iter().enumerate() {
                let jitter = rng.uniform_range(-0.02, 0.02);
                canvas.px[(c * n + y) * n + x] = (*b as f64 + wave + jitter) as f32;
            }
        }
    }

    let distractors = if positive { rng.range_inclusive(0, 1) } else { rng.range_inclusive(1, 3) };
    for _ in 0..distractors {
        let h = rng.range_inclusive(3, 9);
        let w = rng.range_inclusive(3, 9);
        let top = rng.below(n - h + 1);
        let left = rng.below(n - w + 1);
        let color = contrasting_color(rng, base);
        for y in top..top + h {
            for x in left..left + w {
                canvas.set(y, x, color);
            }
        }
    }

    let mut mask = None;
    if positive {
        // filled ellipse with a vertical bar hanging below it
        let rx = rng.range_inclusive(3, 5);
        let ry = rng.range_inclusive(3, 6);
        let bar_w = rng.range_inclusive(2, 3);
        let bar_len = rng.range_inclusive(5, 9);
        let cx = rng.range_inclusive(rx + 1, n - 2 - rx);
        let cy = rng.range_inclusive(ry + 1, n - 2 - ry - bar_len);
        let color = contrasting_color(rng, base);
        let mut m = vec![0.0f32; n * n];
        for y in 0..n {
            for x in 0..n {
                let dx = (x as f64 - cx as f64) / rx as f64;
                let dy = (y as f64 - cy as f64) / ry as f64;
                let in_ellipse = dx * dx + dy * dy <= 1.0;
                let bar_left = cx - bar_w / 2;
                let in_bar = (bar_left..bar_left + bar_w).contains(&x) && (cy + ry..=cy + ry + bar_len).contains(&y);
                if in_ellipse || in_bar {
                    canvas.set(y, x, color);
                    m[y * n + x] = 1.0;
                }
            }
        }
        mask = Some(Tensor::new(vec![n, n], m)?);
    }
    for v in canvas.px.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    let label = if positive { POSITIVE } else { NEGATIVE };
    LabeledImage::new(Tensor::new(vec![3, n, n], canvas.px)?, label, mask)
}

/// Balanced synthetic set of `count` 32x32 images. Even indices are
/// positives (an ellipse-plus-bar figure with its exact mask) and odd indices
/// are negatives (dim striped background with distractor rectangles). Image `i`
/// is drawn from its own stream, so the set is a pure function of the seed.
pub fn generate_dataset(count: usize, rng: &mut Rng) -> Result<Vec<LabeledImage>> {
    if count < 2 {
        return Err(Error::invalid("dataset needs at least two images"));
    }
    let base = rng.next_u64();
    (0..count).map(|i| synth_image(&mut Rng::new(base, i as u64), i % 2 == 0)).collect()
}

/// Deterministic split: the first 80% (rounded down) trains, the rest
/// validates.
pub fn train_validation_split(data: &[LabeledImage]) -> (&[LabeledImage], &[LabeledImage]) {
    let cut = (data.len() * 4 / 5).max(1).min(data.len().saturating_sub(1));
    data.split_at(cut)
}

pub fn images_and_labels(data: &[LabeledImage]) -> (Vec<Tensor>, Vec<usize>) {
    (
        data.iter().map(|d| d.image.clone()).collect(),
        data.iter().map(|d| d.label).collect(),
    )
}

/// Number of mask pixels inside `bbox`.
pub fn mask_overlap(bbox: &BBox, mask: &Tensor) -> usize {
    let w = mask.shape()[1];
    (bbox.top..bbox.bottom().min(mask.shape()[0]))
        .map(|y| {
            (bbox.left..bbox.right().min(w))
                .filter(|&x| mask.data()[y * w + x] > 0.0)
                .count()
        })
        .sum()
}

/// Fraction of patches whose box covers at least `min_overlap` mask pixels.
pub fn patch_localization(patches: &[Patch], mask: &Tensor, min_overlap: usize) -> Result<f64> {
    bbox_localization(patches.iter().map(|p| &p.bbox), mask, min_overlap)
}

pub fn bbox_localization<'a>(
    boxes: impl IntoIterator<Item = &'a BBox>,
    mask: &Tensor,
    min_overlap: usize,
) -> Result<f64> {
    if mask.shape().len() != 2 {
        return Err(Error::InvalidShape(mask.shape().to_vec()));
    }
    let min_overlap = min_overlap.max(1);
    let (mut total, mut hits) = (0usize, 0usize);
    for b in boxes {
        total += 1;
        if mask_overlap(b, mask) >= min_overlap {
            hits += 1;
        }
    }
    if total == 0 {
        return Err(Error::Empty("patch list"));
    }
    Ok(hits as f64 / total as f64)
}

/// Bilinear resize of a `[C, H, W]` tensor with half-pixel sample centres.
pub fn resize_bilinear(t: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let [c, h, w] = match *t.shape() {
        [c, h, w] => [c, h, w],
        _ => return Err(Error::InvalidShape(t.shape().to_vec())),
    };
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidShape(vec![c, out_h, out_w]));
    }
    let coord = |o: usize, n_in: usize, n_out: usize| -> (usize, usize, f32) {
        let src = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = src as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, (src - i0 as f64) as f32)
    };
    let data = t.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &data[ch * h * w..(ch + 1) * h * w];
        for oy in 0..out_h {
            let (y0, y1, ty) = coord(oy, h, out_h);
            for ox in 0..out_w {
                let (x0, x1, tx) = coord(ox, w, out_w);
                let lerp = |a: f32, b: f32, t: f32| a + (b - a) * t;
                let top = lerp(plane[y0 * w + x0], plane[y0 * w + x1], tx);
                let bottom = lerp(plane[y1 * w + x0], plane[y1 * w + x1], tx);
                out.push(lerp(top, bottom, ty));
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchSample {
    /// Resized patch, `[3, PATCH_SIZE, PATCH_SIZE]`.
    pub image: Tensor,
    pub label: usize,
    /// Index of the source image.
    pub source: usize,
    pub neuron: NeuronId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchDataset {
    pub metric: Metric,
    pub samples: Vec<PatchSample>,
    /// Images whose pipeline failed, with the error.
    pub failures: Vec<(usize, Error)>,
    /// Selected neurons that yielded no patch (ranking or dead-path gaps).
    pub shortfall: usize,
}

impl PatchDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Same patches with labels permuted uniformly at random.
    pub fn with_shuffled_labels(&self, rng: &mut Rng) -> Self {
        let mut labels: Vec<usize> = self.samples.iter().map(|s| s.label).collect();
        rng.shuffle(&mut labels);
        let mut out = self.clone();
        for (s, l) in out.samples.iter_mut().zip(labels) {
            s.label = l;
        }
        out
    }
}

/// Runs the explanation pipeline on every image once and collects the
/// resized top-N patches for each metric, labelled with the source image's
/// label.
pub fn build_patch_datasets(
    net: &NetworkSpec,
    images: &[LabeledImage],
    metrics: &[Metric],
    cfg: &ExplainConfig,
) -> Result<Vec<PatchDataset>> {
    if metrics.is_empty() {
        return Err(Error::Empty("metric list"));
    }
    let mut sets: Vec<PatchDataset> = metrics
        .iter()
        .map(|&metric| PatchDataset {
            metric,
            samples: Vec::new(),
            failures: Vec::new(),
            shortfall: 0,
        })
        .collect();
    for (k, item) in images.iter().enumerate() {
        let results = trace_batch(net, &item.image, &cfg.perturbation)
            .and_then(|batch| explain_metrics(net, &item.image, &batch, metrics, cfg));
        let results = match results {
            Ok(r) => r,
            Err(e) => {
                for s in sets.iter_mut() {
                    s.failures.push((k, e.clone()));
                }
                continue;
            }
        };
        for (set, r) in sets.iter_mut().zip(results) {
            set.shortfall += r.ranked.total_shortfall() + r.patches.shortfalls.len();
            for p in &r.patches.patches {
                set.samples.push(PatchSample {
                    image: resize_bilinear(&p.pixels, PATCH_SIZE, PATCH_SIZE)?,
                    label: item.label,
                    source: k,
                    neuron: p.neuron,
                });
            }
        }
    }
    if sets.iter().all(|s| s.is_empty()) {
        return Err(Error::Empty("patch dataset: every image failed"));
    }
    Ok(sets)
}

pub fn build_patch_dataset(
    net: &NetworkSpec,
    images: &[LabeledImage],
    metric: Metric,
    cfg: &ExplainConfig,
) -> Result<PatchDataset> {
    Ok(build_patch_datasets(net, images, &[metric], cfg)?.remove(0))
}

/// conv(16)-pool-conv(16)-pool-dense(32)-softmax over 16x16 patches.
pub fn secondary_architecture() -> Vec<LayerPlan> {
    let pool = LayerPlan::MaxPool { window: 2, stride: 2 };
    vec![
        conv_same(16, 3),
        LayerPlan::Relu,
        pool,
        conv_same(16, 3),
        LayerPlan::Relu,
        pool,
        LayerPlan::Flatten,
        LayerPlan::Dense { out_features: 32 },
        LayerPlan::Relu,
        LayerPlan::Dense { out_features: 2 },
        LayerPlan::Output { classes: 2 },
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct SecondaryConfig {
    pub train: TrainConfig,
    /// Fraction of source images held out.
    pub holdout: f64,
}

impl Default for SecondaryConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig {
                epochs: 15,
                lr: 0.05,
                batch_size: 8,
            },
            holdout: 0.2,
        }
    }
}

/// Trains the secondary classifier on an 80/20 split and returns held-out
/// accuracy. The split is by source image, so patches of one image never
/// straddle train and test.
pub fn train_secondary(ds: &PatchDataset, cfg: &SecondaryConfig, rng: &mut Rng) -> Result<f64> {
    let classes: BTreeSet<usize> = ds.samples.iter().map(|s| s.label).collect();
    if classes.len() < 2 {
        return Err(Error::invalid("secondary classifier needs patches of both classes"));
    }
    let mut sources: Vec<usize> = ds.samples.iter().map(|s| s.source).collect::<BTreeSet<_>>().into_iter().collect();
    if sources.len() < 2 {
        return Err(Error::invalid("secondary classifier needs patches from at least two images"));
    }
    rng.shuffle(&mut sources);
    let n_test = ((sources.len() as f64 * cfg.holdout) as usize).clamp(1, sources.len() - 1);
    let test_sources: BTreeSet<usize> = sources[..n_test].iter().copied().collect();
    let (test, train): (Vec<&PatchSample>, Vec<&PatchSample>) =
        ds.samples.iter().partition(|s| test_sources.contains(&s.source));
    let input = match *ds.samples[0].image.shape() {
        [c, h, w] => [c, h, w],
        _ => return Err(Error::InvalidShape(ds.samples[0].image.shape().to_vec())),
    };
    let net = NetworkSpec::init(input, &secondary_architecture(), rng)?;
    let images: Vec<Tensor> = train.iter().map(|s| s.image.clone()).collect();
    let labels: Vec<usize> = train.iter().map(|s| s.label).collect();
    let trained = crate::network::train(&net, &images, &labels, &cfg.train, rng)?.network;
    let test_images: Vec<Tensor> = test.iter().map(|s| s.image.clone()).collect();
    let test_labels: Vec<usize> = test.iter().map(|s| s.label).collect();
    accuracy(&trained, &test_images, &test_labels)
}

/// Jaccard index between the correlation and precision top-N selections for
/// one probe image.
pub fn probe_jaccard(net: &NetworkSpec, probe: &Tensor, cfg: &ExplainConfig) -> Result<f64> {
    let batch = trace_batch(net, probe, &cfg.perturbation)?;
    let (_, corr) = rank_metric(net, &batch, Metric::ActOutCorr, &cfg.selection)?;
    let (_, prec) = rank_metric(net, &batch, Metric::ActPrecision, &cfg.selection)?;
    jaccard(&corr, &prec)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyConfig {
    pub explain: ExplainConfig,
    /// Metrics whose patches train a secondary classifier at every
    /// checkpoint. Empty skips the secondary classifier.
    pub secondary_metrics: Vec<Metric>,
    pub secondary: SecondaryConfig,
    pub seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            explain: ExplainConfig::default(),
            secondary_metrics: Vec::new(),
            secondary: SecondaryConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryPoint {
    pub epoch: usize,
    pub validation_accuracy: f64,
    /// Correlation-vs-precision Jaccard per probe image.
    pub jaccards: Vec<f64>,
    pub mean_jaccard: f64,
    pub secondary_accuracy: Vec<(Metric, f64)>,
}

/// Evaluates every checkpoint: validation accuracy of the main network,
/// probe-averaged Jaccard between the correlation and precision selections,
/// and (optionally) secondary-classifier accuracy per metric.
pub fn convergence_study(
    checkpoints: &[Checkpoint],
    probes: &[Tensor],
    validation: &[LabeledImage],
    patch_images: &[LabeledImage],
    cfg: &StudyConfig,
) -> Result<Vec<TrajectoryPoint>> {
    if checkpoints.len() < 2 {
        return Err(Error::invalid("convergence study needs at least two checkpoints"));
    }
    if probes.is_empty() {
        return Err(Error::Empty("probe images"));
    }
    let (val_images, val_labels) = images_and_labels(validation);
    let mut out = Vec::with_capacity(checkpoints.len());
    for cp in checkpoints {
        let net = &cp.network;
        let validation_accuracy = accuracy(net, &val_images, &val_labels)?;
        let jaccards = probes
            .iter()
            .map(|p| probe_jaccard(net, p, &cfg.explain))
            .collect::<Result<Vec<f64>>>()?;
        let mean_jaccard = jaccards.iter().sum::<f64>() / jaccards.len() as f64;
        let mut secondary_accuracy = Vec::new();
        if !cfg.secondary_metrics.is_empty() {
            let sets = build_patch_datasets(net, patch_images, &cfg.secondary_metrics, &cfg.explain)?;
            for (k, set) in sets.iter().enumerate() {
                let mut rng = Rng::new(cfg.seed, k as u64);
                secondary_accuracy.push((set.metric, train_secondary(set, &cfg.secondary, &mut rng)?));
            }
        }
        out.push(TrajectoryPoint {
            epoch: cp.epoch,
            validation_accuracy,
            jaccards,
            mean_jaccard,
            secondary_accuracy,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalizationSummary {
    pub metric: Metric,
    pub top_n: usize,
    /// Mean over images of the per-image localization ratio.
    pub mean_ratio: f64,
    pub per_image: Vec<f64>,
}

/// Localization ratio per metric and per top-N over masked images. Images
/// without a mask, or for which a metric produced no patches, are skipped for
/// that metric.
pub fn localization_study(
    net: &NetworkSpec,
    images: &[LabeledImage],
    metrics: &[Metric],
    top_ns: &[usize],
    cfg: &ExplainConfig,
    min_overlap: usize,
) -> Result<Vec<LocalizationSummary>> {
    let mut per: Vec<Vec<f64>> = vec![Vec::new(); metrics.len() * top_ns.len()];
    for item in images {
        let Some(mask) = &item.mask else { continue };
        let batch = trace_batch(net, &item.image, &cfg.perturbation)?;
        for (j, &n) in top_ns.iter().enumerate() {
            let mut c = cfg.clone();
            c.selection.top_n = n;
            let results = explain_metrics(net, &item.image, &batch, metrics, &c)?;
            for (i, r) in results.iter().enumerate() {
                if !r.patches.patches.is_empty() {
                    per[i * top_ns.len() + j].push(patch_localization(&r.patches.patches, mask, min_overlap)?);
                }
            }
        }
    }
    let mut out = Vec::new();
    for (i, &metric) in metrics.iter().enumerate() {
        for (j, &top_n) in top_ns.iter().enumerate() {
            let per_image = per[i * top_ns.len() + j].clone();
            if per_image.is_empty() {
                return Err(Error::Empty("localization: no masked image produced patches"));
            }
            let mean_ratio = per_image.iter().sum::<f64>() / per_image.len() as f64;
            out.push(LocalizationSummary {
                metric,
                top_n,
                mean_ratio,
                per_image,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricSummary {
    pub metric: Metric,
    /// `(top_n, mean localization ratio)`.
    pub localization: Vec<(usize, f64)>,
    pub secondary_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub trajectory: Vec<TrajectoryPoint>,
    pub metrics: Vec<MetricSummary>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_is_deterministic_and_balanced() {
        let a = generate_dataset(9, &mut Rng::new(7, 0)).unwrap();
        let b = generate_dataset(9, &mut Rng::new(7, 0)).unwrap();
        assert_eq!(a, b);
        let pos = a.iter().filter(|d| d.label == POSITIVE).count();
        assert!((pos as isize - (9 - pos) as isize).abs() <= 1);
        assert!(generate_dataset(1, &mut Rng::new(7, 0)).is_err());
    }

    #[test]
    fn positive_masks_are_substantial() {
        for d in generate_dataset(40, &mut Rng::new(3, 0)).unwrap() {
            assert!(d.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
            if d.label == POSITIVE {
                let m = d.mask.as_ref().unwrap();
                let count = m.data().iter().filter(|&&v| v > 0.0).count();
                assert!(count >= 30, "mask has {count} pixels");
                let b = d.mask_bbox().unwrap();
                assert!(b.bottom() <= IMAGE_SIZE && b.right() <= IMAGE_SIZE);
            } else {
                assert!(d.mask.is_none());
            }
        }
    }

    fn bbox(top: usize, left: usize, h: usize, w: usize) -> BBox {
        BBox {
            top,
            left,
            height: h,
            width: w,
        }
    }

    #[test]
    fn localization_ratios() {
        let mut m = vec![0.0f32; 64];
        for y in 2..5 {
            for x in 2..5 {
                m[y * 8 + x] = 1.0;
            }
        }
        let mask = Tensor::new(vec![8, 8], m).unwrap();
        let inside = [bbox(2, 2, 2, 2), bbox(3, 3, 1, 1)];
        assert_eq!(bbox_localization(&inside, &mask, 1).unwrap(), 1.0);
        let outside = [bbox(6, 6, 2, 2), bbox(0, 0, 2, 2)];
        assert_eq!(bbox_localization(&outside, &mask, 1).unwrap(), 0.0);
        let mut mixed: Vec<BBox> = vec![bbox(2, 2, 1, 1); 31];
        mixed.extend(vec![bbox(7, 7, 1, 1); 4]);
        assert!((bbox_localization(&mixed, &mask, 1).unwrap() - 31.0 / 35.0).abs() < 1e-12);
        assert!(bbox_localization(&[], &mask, 1).is_err());
        // stricter overlap requirement
        assert_eq!(bbox_localization(&[bbox(4, 4, 2, 2)], &mask, 2).unwrap(), 0.0);
    }

    #[test]
    fn resize_constant_is_constant() {
        let t = Tensor::full(vec![3, 5, 9], 0.37).unwrap();
        let r = resize_bilinear(&t, 16, 16).unwrap();
        assert_eq!(r.shape(), &[3, 16, 16]);
        assert!(r.data().iter().all(|&v| v == 0.37));
    }

    #[test]
    fn resize_identity_size() {
        let t = Tensor::new(vec![1, 2, 3], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(resize_bilinear(&t, 2, 3).unwrap(), t);
    }

    fn solid_dataset(n: usize) -> PatchDataset {
        let samples = (0..n)
            .map(|i| PatchSample {
                image: Tensor::full(vec![3, 16, 16], if i % 2 == 0 { 0.0 } else { 1.0 }).unwrap(),
                label: i % 2,
                source: i,
                neuron: NeuronId::new(1, 0),
            })
            .collect();
        PatchDataset {
            metric: Metric::ActPrecision,
            samples,
            failures: Vec::new(),
            shortfall: 0,
        }
    }

    #[test]
    fn secondary_separates_black_from_white() {
        let ds = solid_dataset(40);
        let acc = train_secondary(&ds, &SecondaryConfig::default(), &mut Rng::new(1, 0)).unwrap();
        assert_eq!(acc, 1.0);
        let again = train_secondary(&ds, &SecondaryConfig::default(), &mut Rng::new(1, 0)).unwrap();
        assert_eq!(acc, again);
    }

    #[test]
    fn secondary_needs_both_classes() {
        let mut ds = solid_dataset(10);
        for s in ds.samples.iter_mut() {
            s.label = 0;
        }
        assert!(train_secondary(&ds, &SecondaryConfig::default(), &mut Rng::new(1, 0)).is_err());
    }
}
