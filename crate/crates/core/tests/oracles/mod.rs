//! Independent reference implementations and randomized checks.
//!
//! Shared by this crate's integration tests and the workspace acceptance
//! suite. Every oracle here is written from the definitions with plain
//! loops in f64, without calling the code under test.

#![allow(dead_code)]

use std::collections::BTreeSet;

use patchscope_core::deconvnet::{threshold_bbox, unpool};
use patchscope_core::importance::{jaccard_sets, rank, ImportanceScore, LayerRange, PrecisionConfig};
use patchscope_core::network::{conv2d, conv2d_adjoint, loss_and_gradients, maxpool, ConvGeom, LayerPlan, PoolSwitches};
use patchscope_core::{stats, Metric, NetworkSpec, NeuronId, Rng, Tensor};

pub fn random_vec(rng: &mut Rng, n: usize, lo: f64, hi: f64) -> Vec<f32> {
    (0..n).map(|_| rng.uniform_range(lo, hi) as f32).collect()
}

pub fn random_geom(rng: &mut Rng) -> ConvGeom {
    loop {
        let kh = rng.range_inclusive(1, 4);
        let kw = rng.range_inclusive(1, 4);
        let stride = rng.range_inclusive(1, 3);
        let pad = rng.range_inclusive(0, 2);
        let in_c = rng.range_inclusive(1, 4);
        let out_c = rng.range_inclusive(1, 5);
        let h = rng.range_inclusive(1, 9);
        let w = rng.range_inclusive(1, 9);
        if let Some(g) = ConvGeom::new([in_c, h, w], out_c, kh, kw, stride, pad) {
            return g;
        }
    }
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

/// Direct six-loop convolution.
pub fn naive_conv(x: &[f32], w: &[f32], b: &[f32], g: &ConvGeom) -> Vec<f64> {
    let mut out = vec![0.0f64; g.out_c * g.out_h * g.out_w];
    for o in 0..g.out_c {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let mut acc = b[o] as f64;
                for i in 0..g.in_c {
                    for ky in 0..g.kh {
                        for kx in 0..g.kw {
                            let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if iy < 0 || ix < 0 || iy >= g.in_h as isize || ix >= g.in_w as isize {
                                continue;
                            }
                            let xv = x[(i * g.in_h + iy as usize) * g.in_w + ix as usize] as f64;
                            let wv = w[((o * g.in_c + i) * g.kh + ky) * g.kw + kx] as f64;
                            acc += xv * wv;
                        }
                    }
                }
                out[(o * g.out_h + oy) * g.out_w + ox] = acc;
            }
        }
    }
    out
}

/// Largest relative violation of `<conv(x), y> = <x, conv_adjoint(y)>` over
/// `cases` random layer configurations.
pub fn adjoint_worst(cases: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed, 0);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let g = random_geom(&mut rng);
        let x = random_vec(&mut rng, g.in_len(), -1.0, 1.0);
        let y = random_vec(&mut rng, g.out_len(), -1.0, 1.0);
        let w = random_vec(&mut rng, g.out_c * g.patch_len(), -1.0, 1.0);
        let lhs = dot(&conv2d(&x, &w, None, &g), &y);
        let rhs = dot(&x, &conv2d_adjoint(&y, &w, &g));
        let scale = lhs.abs().max(rhs.abs()).max(1e-3);
        worst = worst.max((lhs - rhs).abs() / scale);
    }
    worst
}

pub fn oracle_var(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n
}

pub fn oracle_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum::<f64>().sqrt();
    let sy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum::<f64>().sqrt();
    (cov / (sx * sy)).abs()
}

/// Largest deviation of the library's variance (relative) and |Pearson|
/// (absolute) from the two-pass oracles over `cases` random inputs.
pub fn stats_worst(cases: usize, seed: u64) -> (f64, f64) {
    let mut rng = Rng::new(seed, 0);
    let (mut var_err, mut r_err) = (0.0f64, 0.0f64);
    for _ in 0..cases {
        let n = rng.range_inclusive(2, 200);
        let offset = rng.uniform_range(-100.0, 100.0);
        let x32 = random_vec(&mut rng, n, offset - 1.0, offset + 1.0);
        let x: Vec<f64> = x32.iter().map(|&v| v as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.3 * v + rng.uniform_range(-1.0, 1.0)).collect();
        let want = oracle_var(&x);
        var_err = var_err.max((stats::variance(&x32).unwrap() - want).abs() / want.max(1e-300));
        r_err = r_err.max((stats::pearson_abs(&x, &y).unwrap() - oracle_pearson(&x, &y)).abs());
    }
    (var_err, r_err)
}

/// Cross-entropy of a plain f64 forward pass, plus the relu/max-pool
/// decision pattern so finite differences that cross a kink can be skipped.
pub fn oracle_loss(input: [usize; 3], plans: &[LayerPlan], params: &[Vec<f64>], image: &[f64], label: usize) -> (f64, Vec<u32>) {
    let mut shape = input.to_vec();
    let mut x = image.to_vec();
    let mut pattern = Vec::new();
    let mut p = 0;
    for plan in plans {
        match *plan {
            LayerPlan::Conv {
                out_channels,
                kernel: (kh, kw),
                stride,
                pad,
            } => {
                let (w, b) = (&params[p], &params[p + 1]);
                p += 2;
                let [c, h, wd] = [shape[0], shape[1], shape[2]];
                let oh = (h + 2 * pad - kh) / stride + 1;
                let ow = (wd + 2 * pad - kw) / stride + 1;
                let mut out = vec![0.0; out_channels * oh * ow];
                for o in 0..out_channels {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = b[o];
                            for i in 0..c {
                                for ky in 0..kh {
                                    for kx in 0..kw {
                                        let iy = (oy * stride + ky) as isize - pad as isize;
                                        let ix = (ox * stride + kx) as isize - pad as isize;
                                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                            acc += x[(i * h + iy as usize) * wd + ix as usize] * w[((o * c + i) * kh + ky) * kw + kx];
                                        }
                                    }
                                }
                            }
                            out[(o * oh + oy) * ow + ox] = acc;
                        }
                    }
                }
                x = out;
                shape = vec![out_channels, oh, ow];
            }
            LayerPlan::Relu => {
                for v in &mut x {
                    pattern.push((*v > 0.0) as u32);
                    *v = v.max(0.0);
                }
            }
            LayerPlan::MaxPool { window, stride } => {
                let [c, h, wd] = [shape[0], shape[1], shape[2]];
                let oh = (h - window) / stride + 1;
                let ow = (wd - window) / stride + 1;
                let mut out = Vec::new();
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut best = (ch * h + oy * stride) * wd + ox * stride;
                            for dy in 0..window {
                                for dx in 0..window {
                                    let i = (ch * h + oy * stride + dy) * wd + ox * stride + dx;
                                    if x[i] > x[best] {
                                        best = i;
                                    }
                                }
                            }
                            pattern.push(best as u32);
                            out.push(x[best]);
                        }
                    }
                }
                x = out;
                shape = vec![c, oh, ow];
            }
            LayerPlan::Flatten => shape = vec![x.len()],
            LayerPlan::Dense { out_features } => {
                let (w, b) = (&params[p], &params[p + 1]);
                p += 2;
                let n_in = x.len();
                x = (0..out_features)
                    .map(|o| b[o] + (0..n_in).map(|i| w[o * n_in + i] * x[i]).sum::<f64>())
                    .collect();
                shape = vec![out_features];
            }
            LayerPlan::Output { .. } => {
                let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + x.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
                return (lse - x[label], pattern);
            }
        }
    }
    unreachable!("plans end with an output layer")
}

pub fn gradcheck_plans() -> Vec<LayerPlan> {
    vec![
        LayerPlan::Conv {
            out_channels: 3,
            kernel: (3, 3),
            stride: 1,
            pad: 1,
        },
        LayerPlan::Relu,
        LayerPlan::MaxPool { window: 2, stride: 2 },
        LayerPlan::Conv {
            out_channels: 4,
            kernel: (3, 3),
            stride: 2,
            pad: 1,
        },
        LayerPlan::Relu,
        LayerPlan::Flatten,
        LayerPlan::Dense { out_features: 5 },
        LayerPlan::Relu,
        LayerPlan::Dense { out_features: 2 },
        LayerPlan::Output { classes: 2 },
    ]
}

/// Max relative error between backprop gradients and central differences
/// of the f64 oracle, over `params_per_seed` random parameters of each of
/// `seeds` random networks. Returns `(worst, parameters compared)`.
pub fn gradient_worst(seeds: u64, params_per_seed: usize) -> (f64, usize) {
    let plans = gradcheck_plans();
    let input = [2, 8, 8];
    let h = 1e-4;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for seed in 0..seeds {
        let mut rng = Rng::new(seed, 0);
        let net = NetworkSpec::init(input, &plans, &mut rng).unwrap();
        let image = Tensor::new(input.to_vec(), random_vec(&mut rng, 128, 0.0, 1.0)).unwrap();
        let label = rng.below(2);
        let (_, grads) = loss_and_gradients(&net, &image, label).unwrap();
        let mut params: Vec<Vec<f64>> = net.params().iter().map(|t| t.data().iter().map(|&v| v as f64).collect()).collect();
        let img64: Vec<f64> = image.data().iter().map(|&v| v as f64).collect();
        let (_, base_pattern) = oracle_loss(input, &plans, &params, &img64, label);
        for _ in 0..params_per_seed {
            let t = rng.below(params.len());
            let i = rng.below(params[t].len());
            let orig = params[t][i];
            params[t][i] = orig + h;
            let (lp, pp) = oracle_loss(input, &plans, &params, &img64, label);
            params[t][i] = orig - h;
            let (lm, pm) = oracle_loss(input, &plans, &params, &img64, label);
            params[t][i] = orig;
            if pp != base_pattern || pm != base_pattern {
                continue;
            }
            let numeric = (lp - lm) / (2.0 * h);
            let analytic = grads[t][i] as f64;
            let denom = numeric.abs().max(analytic.abs());
            if denom < 1e-6 {
                continue;
            }
            worst = worst.max((numeric - analytic).abs() / denom);
            checked += 1;
        }
    }
    (worst, checked)
}

/// Random pooling input on a small integer grid, so ties are common.
fn pool_case(rng: &mut Rng) -> ([usize; 3], usize, usize, Vec<f32>) {
    let c = rng.range_inclusive(1, 3);
    let h = rng.range_inclusive(2, 9);
    let w = rng.range_inclusive(2, 9);
    let win = rng.range_inclusive(1, 3).min(h).min(w);
    let stride = rng.range_inclusive(1, 3);
    let data = (0..c * h * w).map(|_| rng.below(6) as f32).collect();
    ([c, h, w], win, stride, data)
}

/// Each switch lies in its window, holds the window max, and is the first
/// such cell in row-major order.
pub fn check_switches(cases: usize, seed: u64) -> Result<(), String> {
    let mut rng = Rng::new(seed, 0);
    for case in 0..cases {
        let ([c, h, w], win, stride, data) = pool_case(&mut rng);
        let (pooled, indices, [_, oh, ow]) = maxpool(&data, [c, h, w], win, stride);
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let cell = (ch * oh + oy) * ow + ox;
                    let mut first = usize::MAX;
                    let mut best = f32::NEG_INFINITY;
                    for dy in 0..win {
                        for dx in 0..win {
                            let i = (ch * h + oy * stride + dy) * w + ox * stride + dx;
                            if data[i] > best {
                                best = data[i];
                                first = i;
                            }
                        }
                    }
                    if indices[cell] as usize != first || pooled[cell] != best {
                        return Err(format!("case {case}: cell {cell} switch {} expected {first}", indices[cell]));
                    }
                }
            }
        }
    }
    Ok(())
}

/// Unpooled maps are nonzero only at switches, carry the pooled maxima, and
/// re-pool to the same values.
pub fn check_unpool(cases: usize, seed: u64) -> Result<(), String> {
    let mut rng = Rng::new(seed, 0);
    for case in 0..cases {
        let (shape, win, stride, data) = pool_case(&mut rng);
        let (pooled, indices, pooled_shape) = maxpool(&data, shape, win, stride);
        let sw = PoolSwitches {
            layer: 0,
            pre_shape: shape,
            pooled_shape,
            indices,
        };
        let up = unpool(&Tensor::new(pooled_shape.to_vec(), pooled.clone()).unwrap(), &sw).map_err(|e| e.to_string())?;
        let nonzero = up.data().iter().filter(|&&v| v != 0.0).count();
        if nonzero > pooled.len() {
            return Err(format!("case {case}: {nonzero} nonzeros from {} pooled cells", pooled.len()));
        }
        for (i, &v) in up.data().iter().enumerate() {
            if v != 0.0 && (!sw.indices.contains(&(i as u32)) || v != data[i]) {
                return Err(format!("case {case}: stray value at {i}"));
            }
        }
        if maxpool(up.data(), shape, win, stride).0 != pooled {
            return Err(format!("case {case}: pool(unpool(pool(x))) != pool(x)"));
        }
    }
    Ok(())
}

/// Raising eps never grows the bounding box.
pub fn check_eps_monotone(cases: usize, seed: u64) -> Result<(), String> {
    let mut rng = Rng::new(seed, 0);
    for case in 0..cases {
        let (c, h, w) = (rng.range_inclusive(1, 3), rng.range_inclusive(1, 12), rng.range_inclusive(1, 12));
        let t = Tensor::new(vec![c, h, w], random_vec(&mut rng, c * h * w, -1.0, 1.0)).unwrap();
        let mut eps: Vec<f32> = (0..4).map(|_| rng.uniform_range(0.01, 0.99) as f32).collect();
        eps.sort_by(f32::total_cmp);
        let boxes: Vec<_> = eps.iter().map(|&e| threshold_bbox(&t, e)).collect();
        for pair in boxes.windows(2) {
            match (&pair[0], &pair[1]) {
                (Some(a), Some(b)) if a.encloses(b) => {}
                (None, None) => {}
                other => return Err(format!("case {case}: {other:?}")),
            }
        }
    }
    Ok(())
}

/// `rank` agrees with sorting by (degenerate, -value, channel) and
/// truncating; degenerate neurons are dropped except for the correlation
/// metric, which lists them last.
pub fn check_rank(cases: usize, seed: u64) -> Result<(), String> {
    let mut rng = Rng::new(seed, 0);
    let layers = LayerRange::new(2, 4).unwrap();
    for case in 0..cases {
        let metric = Metric::ALL[rng.below(6)];
        let top = rng.range_inclusive(1, 6);
        let mut scores = Vec::new();
        for layer in 2..=4 {
            for channel in 0..rng.range_inclusive(1, 9) {
                let dead = rng.below(4) == 0;
                scores.push(ImportanceScore {
                    neuron: NeuronId::new(layer, channel),
                    metric,
                    value: if dead { 0.0 } else { rng.below(5) as f64 },
                    degenerate: dead,
                });
            }
        }
        let ranked = rank(&scores, &PrecisionConfig { lambda: 1e-3, top_n: top, layers }).map_err(|e| e.to_string())?;
        for layer in 2..=4 {
            let mut mine: Vec<&ImportanceScore> = scores
                .iter()
                .filter(|s| s.neuron.layer == layer && (metric == Metric::ActOutCorr || !s.degenerate))
                .collect();
            mine.sort_by(|a, b| {
                a.degenerate
                    .cmp(&b.degenerate)
                    .then(b.value.partial_cmp(&a.value).unwrap())
                    .then(a.neuron.channel.cmp(&b.neuron.channel))
            });
            let want: Vec<NeuronId> = mine.iter().take(top).map(|s| s.neuron).collect();
            let sel = ranked.selections.iter().find(|s| s.layer == layer).ok_or("missing layer")?;
            if sel.neurons != want || sel.shortfall != top - want.len() {
                return Err(format!("case {case} layer {layer}: {:?} vs {want:?}", sel.neurons));
            }
        }
    }
    Ok(())
}

/// Range, symmetry, identity, empty-set and disjointness axioms.
pub fn check_jaccard(cases: usize, seed: u64) -> Result<(), String> {
    let mut rng = Rng::new(seed, 0);
    for case in 0..cases {
        let set = |rng: &mut Rng| -> BTreeSet<usize> { (0..rng.below(10)).map(|_| rng.below(20)).collect() };
        let (a, b) = (set(&mut rng), set(&mut rng));
        let j = jaccard_sets(&a, &b);
        let inter = a.intersection(&b).count();
        let union = a.union(&b).count();
        let want = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
        let ok = (0.0..=1.0).contains(&j)
            && j == jaccard_sets(&b, &a)
            && jaccard_sets(&a, &a) == 1.0
            && (j - want).abs() < 1e-15
            && (union == 0 || (j == 0.0) == (inter == 0));
        if !ok {
            return Err(format!("case {case}: J({a:?}, {b:?}) = {j}"));
        }
    }
    Ok(())
}
