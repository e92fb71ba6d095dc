use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

pub(crate) const PROB_CLAMP: f64 = 1e-7;

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(row: ArrayView1<f64>) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax(row: ArrayView1<f64>) -> Array1<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = row.mapv(|v| (v - max).exp());
    let total = out.sum();
    out /= total;
    out
}

pub(crate) fn softmax_rows(m: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(m.raw_dim());
    for (mut dst, src) in out.outer_iter_mut().zip(m.outer_iter()) {
        dst.assign(&softmax(src));
    }
    out
}

/// Vector-Jacobian product of a row-wise softmax given its output.
pub(crate) fn softmax_rows_backward(probs: ArrayView2<f64>, grad: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(probs.raw_dim());
    for ((mut dst, p), g) in out
        .outer_iter_mut()
        .zip(probs.outer_iter())
        .zip(grad.outer_iter())
    {
        let inner = p.dot(&g);
        for ((d, &pj), &gj) in dst.iter_mut().zip(p.iter()).zip(g.iter()) {
            *d = pj * (gj - inner);
        }
    }
    out
}

/// Clamps a probability into `[PROB_CLAMP, 1 - PROB_CLAMP]`; the flag reports
/// whether the value was interior (derivative 1) or clamped (derivative 0).
pub(crate) fn clamp_prob(p: f64) -> (f64, bool) {
    if p < PROB_CLAMP {
        (PROB_CLAMP, false)
    } else if p > 1.0 - PROB_CLAMP {
        (1.0 - PROB_CLAMP, false)
    } else {
        (p, true)
    }
}

pub(crate) fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.dot(&b) / (na * nb)
}

pub(crate) fn mean_rows(m: ArrayView2<f64>) -> Array1<f64> {
    m.mean_axis(Axis(0)).expect("matrix has at least one row")
}

pub(crate) fn all_finite<'a>(values: impl IntoIterator<Item = &'a f64>) -> bool {
    values.into_iter().all(|v| v.is_finite())
}
