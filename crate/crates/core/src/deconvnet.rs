//! Deconvnet reverse pass and patch extraction.
//!
//! Starting from one channel of a conv layer's activation (every other
//! channel zeroed) the signal is walked back to pixel space: max-pool layers
//! are undone by unpooling through the recorded switches, relu layers by
//! rectification and conv layers by filtering with the transposed kernels
//! (no bias).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::importance::{Metric, NeuronId, RankedSet, TraceBatch};
use crate::network::{conv2d_adjoint, ActivationTrace, LayerSpec, NetworkSpec, PoolSwitches};
use crate::tensor::Tensor;

/// Rectangle in input pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl BBox {
    pub fn bottom(&self) -> usize {
        self.top + self.height
    }

    pub fn right(&self) -> usize {
        self.left + self.width
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.top..self.bottom()).contains(&y) && (self.left..self.right()).contains(&x)
    }

    /// True when `other` lies inside `self`.
    pub fn encloses(&self, other: &BBox) -> bool {
        other.top >= self.top && other.left >= self.left && other.bottom() <= self.bottom() && other.right() <= self.right()
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub neuron: NeuronId,
    pub metric: Metric,
    pub bbox: BBox,
    /// Crop of the original image, `[C, height, width]`.
    pub pixels: Tensor,
    /// Crop of the reconstruction over the same box.
    pub reconstruction: Tensor,
    /// Id of the trace that was deconvolved.
    pub sample_id: usize,
}

/// Places each pooled value at its recorded argmax; all other cells are 0.
pub fn unpool(pooled: &Tensor, switches: &PoolSwitches) -> Result<Tensor> {
    if pooled.shape() != switches.pooled_shape || pooled.len() != switches.indices.len() {
        return Err(Error::ShapeMismatch {
            expected: switches.pooled_shape.to_vec(),
            found: pooled.shape().to_vec(),
        });
    }
    let out = unpool_raw(pooled.data(), switches)?;
    Tensor::new(switches.pre_shape.to_vec(), out)
}

fn unpool_raw(pooled: &[f32], switches: &PoolSwitches) -> Result<Vec<f32>> {
    let len: usize = switches.pre_shape.iter().product();
    let mut out = vec![0.0f32; len];
    for (&idx, &v) in switches.indices.iter().zip(pooled) {
        let idx = idx as usize;
        if idx >= len {
            return Err(Error::SwitchOutOfBounds { index: idx, len });
        }
        out[idx] = v;
    }
    Ok(out)
}

/// Reverse pass of an arbitrary signal shaped like conv layer `layer`'s
/// activation, down to input space.
pub fn deconvolve_signal(net: &NetworkSpec, trace: &ActivationTrace, layer: usize, signal: &Tensor) -> Result<Tensor> {
    let start = net
        .conv_position(layer)
        .ok_or(Error::NeuronOutOfRange(NeuronId::new(layer, 0)))?;
    let expected = net.layer_output_shape(start);
    if signal.shape() != expected {
        return Err(Error::ShapeMismatch {
            expected: expected.to_vec(),
            found: signal.shape().to_vec(),
        });
    }
    let mut x = signal.data().to_vec();
    for pos in (0..=start).rev() {
        let in_shape = net.layer_input_shape(pos);
        match &net.layers()[pos] {
            LayerSpec::Conv(c) => {
                let g = c.geom([in_shape[0], in_shape[1], in_shape[2]]).expect("validated");
                x = conv2d_adjoint(&x, c.weights().data(), &g);
            }
            LayerSpec::Relu => x.iter_mut().for_each(|v| *v = v.max(0.0)),
            LayerSpec::MaxPool { .. } => {
                let ordinal = net.pool_ordinal(pos).expect("pool layer has an ordinal");
                let sw = trace.switches.get(ordinal).ok_or(Error::MissingTrace("max-pool switches"))?;
                if sw.layer != pos {
                    return Err(Error::MissingTrace("max-pool switches for this layer"));
                }
                x = unpool_raw(&x, sw)?;
            }
            // Only [C, H, W] layers can sit below a conv layer.
            LayerSpec::Flatten | LayerSpec::Dense(_) | LayerSpec::Output { .. } => {
                unreachable!("validated network has no flat layer below a conv layer")
            }
        }
    }
    Tensor::from_parts(net.input_shape().to_vec(), x, "reconstruction")
}

/// Projects one neuron's activation map back to input space.
pub fn deconvolve(net: &NetworkSpec, trace: &ActivationTrace, neuron: NeuronId) -> Result<Tensor> {
    let act = trace
        .conv_activation(neuron.layer)
        .ok_or(if trace.is_recorded() {
            Error::NeuronOutOfRange(neuron)
        } else {
            Error::MissingTrace("recorded activations")
        })?;
    if neuron.channel >= act.shape()[0] {
        return Err(Error::NeuronOutOfRange(neuron));
    }
    let plane = act.shape()[1] * act.shape()[2];
    let mut isolated = vec![0.0f32; act.len()];
    isolated[neuron.channel * plane..(neuron.channel + 1) * plane].copy_from_slice(act.channel(neuron.channel));
    let signal = Tensor::from_parts(act.shape().to_vec(), isolated, "isolated activation")?;
    deconvolve_signal(net, trace, neuron.layer, &signal)
}

/// Tight bounding box of the pixels whose channel-max magnitude reaches
/// `eps` times the global maximum.
pub fn threshold_bbox(reconstruction: &Tensor, eps: f32) -> Option<BBox> {
    let [c, h, w] = match *reconstruction.shape() {
        [c, h, w] => [c, h, w],
        _ => return None,
    };
    let data = reconstruction.data();
    let mag: Vec<f32> = (0..h * w)
        .map(|p| (0..c).map(|ch| data[ch * h * w + p].abs()).fold(0.0, f32::max))
        .collect();
    let peak = mag.iter().copied().fold(0.0, f32::max);
    if peak == 0.0 {
        return None;
    }
    let cut = eps * peak;
    let (mut top, mut left, mut bottom, mut right) = (h, w, 0, 0);
    for y in 0..h {
        for x in 0..w {
            if mag[y * w + x] >= cut {
                top = top.min(y);
                bottom = bottom.max(y);
                left = left.min(x);
                right = right.max(x);
            }
        }
    }
    Some(BBox {
        top,
        left,
        height: bottom - top + 1,
        width: right - left + 1,
    })
}

pub fn crop(t: &Tensor, bbox: &BBox) -> Result<Tensor> {
    let [c, h, w] = match *t.shape() {
        [c, h, w] => [c, h, w],
        _ => return Err(Error::InvalidShape(t.shape().to_vec())),
    };
    if bbox.height == 0 || bbox.width == 0 || bbox.bottom() > h || bbox.right() > w {
        return Err(Error::invalid("bounding box outside image"));
    }
    let mut out = Vec::with_capacity(c * bbox.area());
    for ch in 0..c {
        for y in bbox.top..bbox.bottom() {
            let row = ch * h * w + y * w;
            out.extend_from_slice(&t.data()[row + bbox.left..row + bbox.right()]);
        }
    }
    Tensor::new(vec![c, bbox.height, bbox.width], out)
}

pub fn extract_patch(
    image: &Tensor,
    reconstruction: &Tensor,
    neuron: NeuronId,
    metric: Metric,
    eps: f32,
) -> Result<Patch> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::invalid("eps must lie in (0, 1)"));
    }
    if image.shape() != reconstruction.shape() {
        return Err(Error::ShapeMismatch {
            expected: image.shape().to_vec(),
            found: reconstruction.shape().to_vec(),
        });
    }
    let bbox = threshold_bbox(reconstruction, eps).ok_or(Error::DeadPath(neuron))?;
    Ok(Patch {
        neuron,
        metric,
        bbox,
        pixels: crop(image, &bbox)?,
        reconstruction: crop(reconstruction, &bbox)?,
        sample_id: 0,
    })
}

/// Patches for one ranked set, plus the neurons that produced none.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet {
    pub patches: Vec<Patch>,
    pub shortfalls: Vec<(NeuronId, Error)>,
}

/// Deconvolves every selected neuron on the unperturbed image's trace and
/// extracts one patch each, ordered by (layer, rank). Dead paths are
/// recorded as shortfalls.
pub fn extract_top_patches(
    net: &NetworkSpec,
    batch: &TraceBatch,
    ranked: &RankedSet,
    image: &Tensor,
    eps: f32,
) -> Result<PatchSet> {
    if ranked.is_empty() {
        return Err(Error::Empty("ranked set"));
    }
    let neurons: Vec<NeuronId> = ranked.neurons().collect();
    let one = |&neuron: &NeuronId| -> Result<Patch> {
        let rec = deconvolve(net, &batch.original, neuron)?;
        let mut p = extract_patch(image, &rec, neuron, ranked.metric, eps)?;
        p.sample_id = batch.original.sample_id;
        Ok(p)
    };
    #[cfg(feature = "parallel")]
    let results: Vec<Result<Patch>> = {
        use rayon::prelude::*;
        neurons.par_iter().map(one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<Patch>> = neurons.iter().map(one).collect();

    let mut set = PatchSet {
        patches: Vec::new(),
        shortfalls: Vec::new(),
    };
    for (neuron, r) in neurons.into_iter().zip(results) {
        match r {
            Ok(p) => set.patches.push(p),
            Err(e @ Error::DeadPath(_)) => set.shortfalls.push((neuron, e)),
            Err(e) => return Err(e),
        }
    }
    Ok(set)
}
