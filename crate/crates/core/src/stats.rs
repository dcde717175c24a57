//! Scalar statistics over `f32`/`f64` sequences, accumulated in `f64`.

use crate::error::{Error, Result};

pub fn sum(xs: &[f32]) -> f64 {
    xs.iter().map(|&v| v as f64).sum()
}

pub fn mean(xs: &[f32]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::Empty("mean of empty sequence"));
    }
    Ok(sum(xs) / xs.len() as f64)
}

/// Population variance, two passes (mean, then squared deviations).
pub fn variance(xs: &[f32]) -> Result<f64> {
    let m = mean(xs)?;
    let ss: f64 = xs
        .iter()
        .map(|&v| {
            let d = v as f64 - m;
            d * d
        })
        .sum();
    Ok(ss / xs.len() as f64)
}

pub fn variance_f64(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::Empty("variance of empty sequence"));
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    Ok(xs.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n)
}

/// Magnitude of the Pearson correlation coefficient.
///
/// Uses centred sums, which is algebraically the `n Σxy − Σx Σy` form but does
/// not cancel catastrophically. Either sequence having zero variance yields
/// [`Error::DegenerateCorrelation`].
pub fn pearson_abs(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch {
            expected: alloc::vec![x.len()],
            found: alloc::vec![y.len()],
        });
    }
    if x.len() < 2 {
        return Err(Error::invalid("correlation needs at least two points"));
    }
    if !x.iter().chain(y).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("correlation input"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateCorrelation);
    }
    let r = sxy / libm::sqrt(sxx * syy);
    Ok(r.abs().min(1.0))
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = rx.len() as f64;
    if rx.len() != ry.len() || rx.len() < 2 {
        return Err(Error::invalid("spearman needs two equal-length sequences of length >= 2"));
    }
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateCorrelation);
    }
    Ok(sxy / libm::sqrt(sxx * syy))
}

fn average_ranks(xs: &[f64]) -> alloc::vec::Vec<f64> {
    let mut order: alloc::vec::Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = alloc::vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}
