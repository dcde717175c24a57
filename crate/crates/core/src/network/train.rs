//! Backpropagation and plain mini-batch SGD with softmax cross-entropy.

use alloc::vec;
use alloc::vec::Vec;

use super::conv::{conv2d, conv2d_adjoint, conv2d_param_grad};
use super::{dense_forward, maxpool, softmax, LayerSpec, NetworkSpec};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f32,
    /// Samples per SGD step; gradients are averaged over the step.
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 0.01,
            batch_size: 16,
        }
    }
}

/// Full weight snapshot taken after an epoch (`epoch == 0` is the initial
/// network).
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    pub network: NetworkSpec,
    /// Accuracy of the predictions made while training through the epoch.
    pub train_accuracy: Option<f64>,
    pub mean_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub network: NetworkSpec,
    pub checkpoints: Vec<Checkpoint>,
}

struct Cache {
    inputs: Vec<Vec<f32>>,
    switches: Vec<Option<Vec<u32>>>,
    probs: Vec<f32>,
    loss: f64,
}

fn forward_cached(net: &NetworkSpec, image: &Tensor, label: usize) -> Result<Cache> {
    if image.shape() != net.input_shape() {
        return Err(Error::ShapeMismatch {
            expected: net.input_shape().to_vec(),
            found: image.shape().to_vec(),
        });
    }
    let layers = net.layers();
    let mut inputs = Vec::with_capacity(layers.len());
    let mut switches = Vec::with_capacity(layers.len());
    let mut x = image.data().to_vec();
    for (pos, layer) in layers.iter().enumerate() {
        let in_shape = net.layer_input_shape(pos);
        let mut sw = None;
        let next = match layer {
            LayerSpec::Conv(c) => {
                let g = c.geom([in_shape[0], in_shape[1], in_shape[2]]).expect("validated");
                conv2d(&x, c.weights().data(), Some(c.bias().data()), &g)
            }
            LayerSpec::Relu => x.iter().map(|&v| v.max(0.0)).collect(),
            LayerSpec::MaxPool { window, stride } => {
                let (p, s, _) = maxpool(&x, [in_shape[0], in_shape[1], in_shape[2]], *window, *stride);
                sw = Some(s);
                p
            }
            LayerSpec::Flatten => x.clone(),
            LayerSpec::Dense(d) => dense_forward(d, &x),
            LayerSpec::Output { .. } => x.clone(),
        };
        inputs.push(core::mem::replace(&mut x, next));
        switches.push(sw);
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    if label >= x.len() {
        return Err(Error::invalid("label out of class range"));
    }
    // loss = logsumexp(logits) - logits[label]
    let m = x.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
    let lse = m + libm::log(x.iter().map(|&z| libm::exp(z as f64 - m)).sum::<f64>());
    let loss = lse - x[label] as f64;
    Ok(Cache {
        inputs,
        switches,
        probs: softmax(&x),
        loss,
    })
}

/// Accumulates parameter gradients of the cross-entropy loss into `grads`
/// (one buffer per parameter tensor, in [`NetworkSpec::params`] order).
fn backward(net: &NetworkSpec, cache: &Cache, label: usize, grads: &mut [Vec<f32>]) {
    let layers = net.layers();
    let mut g: Vec<f32> = cache.probs.clone();
    g[label] -= 1.0;
    let mut slot = grads.len();
    for pos in (0..layers.len()).rev() {
        let input = &cache.inputs[pos];
        let in_shape = net.layer_input_shape(pos);
        match &layers[pos] {
            LayerSpec::Output { .. } | LayerSpec::Flatten => {}
            LayerSpec::Dense(d) => {
                slot -= 2;
                let (dw, rest) = grads[slot..].split_at_mut(1);
                let (dw, db) = (&mut dw[0], &mut rest[0]);
                let n_in = d.in_features();
                for (o, &go) in g.iter().enumerate() {
                    db[o] += go;
                    if go != 0.0 {
                        for (w, &xv) in dw[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
                            *w += go * xv;
                        }
                    }
                }
                if pos > 0 {
                    let mut gi = vec![0.0f32; n_in];
                    for (row, &go) in d.weights().data().chunks_exact(n_in).zip(&g) {
                        if go != 0.0 {
                            for (acc, &w) in gi.iter_mut().zip(row) {
                                *acc += go * w;
                            }
                        }
                    }
                    g = gi;
                }
            }
            LayerSpec::Relu => {
                for (gv, &xv) in g.iter_mut().zip(input) {
                    if xv <= 0.0 {
                        *gv = 0.0;
                    }
                }
            }
            LayerSpec::MaxPool { .. } => {
                let sw = cache.switches[pos].as_ref().expect("recorded in forward_cached");
                let mut gi = vec![0.0f32; input.len()];
                for (&idx, &gv) in sw.iter().zip(&g) {
                    gi[idx as usize] += gv;
                }
                g = gi;
            }
            LayerSpec::Conv(c) => {
                slot -= 2;
                let geom = c.geom([in_shape[0], in_shape[1], in_shape[2]]).expect("validated");
                let (dw, rest) = grads[slot..].split_at_mut(1);
                conv2d_param_grad(input, &g, &geom, &mut dw[0], &mut rest[0]);
                if pos > 0 {
                    g = conv2d_adjoint(&g, c.weights().data(), &geom);
                }
            }
        }
    }
}

fn zero_grads(net: &NetworkSpec) -> Vec<Vec<f32>> {
    net.params().iter().map(|p| vec![0.0f32; p.len()]).collect()
}

/// Cross-entropy loss of one labelled image and its gradient with respect to
/// every parameter tensor, in [`NetworkSpec::params`] order.
pub fn loss_and_gradients(net: &NetworkSpec, image: &Tensor, label: usize) -> Result<(f64, Vec<Vec<f32>>)> {
    let cache = forward_cached(net, image, label)?;
    let mut grads = zero_grads(net);
    backward(net, &cache, label, &mut grads);
    Ok((cache.loss, grads))
}

/// Mini-batch SGD without momentum. The sample order is reshuffled from
/// `rng` at the start of every epoch; a checkpoint of the full network is
/// emitted before the first epoch and after each one.
pub fn train(
    net: &NetworkSpec,
    images: &[Tensor],
    labels: &[usize],
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<TrainOutcome> {
    if images.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if images.len() != labels.len() {
        return Err(Error::invalid("images and labels differ in length"));
    }
    if labels.iter().any(|&l| l >= net.classes()) {
        return Err(Error::invalid("label out of class range"));
    }
    if !(cfg.lr >= 0.0) || !cfg.lr.is_finite() {
        return Err(Error::invalid("learning rate must be finite and nonnegative"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be >= 1"));
    }
    let mut net = net.clone();
    let mut checkpoints = vec![Checkpoint {
        epoch: 0,
        network: net.clone(),
        train_accuracy: None,
        mean_loss: None,
    }];
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut grads = zero_grads(&net);
    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        let mut correct = 0usize;
        let mut loss_sum = 0.0f64;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            for g in grads.iter_mut() {
                g.fill(0.0);
            }
            for &i in batch {
                let cache = forward_cached(&net, &images[i], labels[i]).map_err(|e| match e {
                    Error::NonFinite(_) => Error::Diverged { epoch, step },
                    other => other.at_sample(i),
                })?;
                if !cache.loss.is_finite() {
                    return Err(Error::Diverged { epoch, step });
                }
                loss_sum += cache.loss;
                if super::argmax(&cache.probs) == labels[i] {
                    correct += 1;
                }
                backward(&net, &cache, labels[i], &mut grads);
            }
            let scale = cfg.lr / batch.len() as f32;
            for (p, g) in net.params_mut().into_iter().zip(&grads) {
                for (w, &gv) in p.data_mut().iter_mut().zip(g) {
                    *w -= scale * gv;
                }
                if !p.data().iter().all(|v| v.is_finite()) {
                    return Err(Error::Diverged { epoch, step });
                }
            }
        }
        checkpoints.push(Checkpoint {
            epoch,
            network: net.clone(),
            train_accuracy: Some(correct as f64 / images.len() as f64),
            mean_loss: Some(loss_sum / images.len() as f64),
        });
    }
    Ok(TrainOutcome {
        network: net,
        checkpoints,
    })
}

/// Fraction of `images` whose predicted class equals the label.
pub fn accuracy(net: &NetworkSpec, images: &[Tensor], labels: &[usize]) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut correct = 0;
    for (i, (img, &label)) in images.iter().zip(labels).enumerate() {
        let t = net.forward(img, false).map_err(|e| e.at_sample(i))?;
        if t.predicted_class() == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / images.len() as f64)
}
