//! Training objectives.
//!
//! Enhancer side: the asymmetric interaction loss, the bag-similarity loss,
//! the threshold loss, and their weighted sum. Classifier side: the
//! distribution loss, logical binary cross-entropy, and their mix.
//!
//! Every loss has a `*_grad` twin returning the value together with the
//! gradient with respect to the quantity the trainable side produces.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::Bag;
use crate::error::{Error, Result};
use crate::util::{self, clamp_prob};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub rho: f64,
    pub gamma_pos: f64,
    pub gamma_neg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            beta1: 1.0 / 3.0,
            beta2: 1.0 / 3.0,
            beta3: 1.0 / 3.0,
            rho: 0.5,
            gamma_pos: 0.0,
            gamma_neg: 4.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let betas = [self.beta1, self.beta2, self.beta3];
        if betas.iter().any(|&b| b.is_nan() || b < 0.0) {
            return Err(Error::config("beta weights must be non-negative"));
        }
        let total: f64 = betas.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::config(format!("beta weights sum to {total}, not 1")));
        }
        check_rho(self.rho)?;
        if [self.gamma_pos, self.gamma_neg].iter().any(|g| g.is_nan() || *g < 0.0) {
            return Err(Error::config("focusing exponents must be non-negative"));
        }
        Ok(())
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::config(format!("rho must lie in [0, 1], got {rho}")));
    }
    Ok(())
}

fn check_same_shape(a: (usize, usize), b: (usize, usize), what: &str) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!("{what}: {a:?} vs {b:?}")));
    }
    Ok(())
}

/// Per-bag asymmetric interaction loss.
///
/// `p` are classifier probabilities (treated as weights), `p_star` the
/// enhancer confidences being scored. Positive labels are weighted by
/// `(1 - p)^gamma_pos`, negatives by `p^gamma_neg`; the sum is averaged over
/// the `k` labels.
pub fn asymmetric_interaction_loss(
    p: &[f64],
    p_star: &[f64],
    labels: &[f64],
    gamma_pos: f64,
    gamma_neg: f64,
) -> Result<f64> {
    interaction_row(p, p_star, labels, gamma_pos, gamma_neg, None)
}

fn interaction_row(
    p: &[f64],
    p_star: &[f64],
    labels: &[f64],
    gamma_pos: f64,
    gamma_neg: f64,
    mut grad: Option<&mut [f64]>,
) -> Result<f64> {
    if p.len() != p_star.len() || p.len() != labels.len() {
        return Err(Error::shape(format!(
            "interaction loss lengths {} / {} / {}",
            p.len(),
            p_star.len(),
            labels.len()
        )));
    }
    let k = p.len() as f64;
    let mut total = 0.0;
    for j in 0..p.len() {
        let (pj, _) = clamp_prob(p[j]);
        let (sj, interior) = clamp_prob(p_star[j]);
        let (term, dterm) = if labels[j] > 0.5 {
            let w = (1.0 - pj).powf(gamma_pos);
            (w * sj.ln(), w / sj)
        } else {
            let w = pj.powf(gamma_neg);
            (w * (1.0 - sj).ln(), -w / (1.0 - sj))
        };
        total += term;
        if let Some(g) = grad.as_deref_mut() {
            g[j] = if interior { -dterm / k } else { 0.0 };
        }
    }
    Ok(-total / k)
}

/// Mean over bags of the per-bag interaction loss, with the gradient with
/// respect to `p_star`.
pub fn interaction_loss_grad(
    p: ArrayView2<f64>,
    p_star: ArrayView2<f64>,
    labels: ArrayView2<f64>,
    gamma_pos: f64,
    gamma_neg: f64,
) -> Result<(f64, Array2<f64>)> {
    check_same_shape(p.dim(), p_star.dim(), "interaction loss")?;
    check_same_shape(p.dim(), labels.dim(), "interaction loss")?;
    let b = p.nrows();
    if b == 0 {
        return Err(Error::Degenerate("empty batch".into()));
    }
    let mut grad = Array2::zeros(p.raw_dim());
    let mut total = 0.0;
    for i in 0..b {
        let mut row = vec![0.0; p.ncols()];
        total += interaction_row(
            &p.row(i).to_vec(),
            &p_star.row(i).to_vec(),
            &labels.row(i).to_vec(),
            gamma_pos,
            gamma_neg,
            Some(&mut row),
        )?;
        for (g, r) in grad.row_mut(i).iter_mut().zip(row) {
            *g = r / b as f64;
        }
    }
    Ok((total / b as f64, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityMode {
    /// `(1/B^2) sum_ij (Z_ij - A_ij)^2`
    #[default]
    Mse,
    /// `(sum_ij (Z_ij - A_ij) / B)^2`; signed deviations can cancel.
    SignedSum,
}

impl std::str::FromStr for SimilarityMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(SimilarityMode::Mse),
            "signed-sum" => Ok(SimilarityMode::SignedSum),
            other => Err(Error::config(format!("unknown similarity mode {other:?}"))),
        }
    }
}

/// Cosine similarities between bags: `z` over mean-pooled raw features,
/// `a` over label distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityPair {
    pub z: Array2<f64>,
    pub a: Array2<f64>,
}

/// Pairwise cosine similarity of the rows; zero rows give 0.
pub fn cosine_matrix(rows: ArrayView2<f64>) -> Array2<f64> {
    let n = rows.nrows();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let c = util::cosine(rows.row(i), rows.row(j));
            out[[i, j]] = c;
            out[[j, i]] = c;
        }
    }
    out
}

/// Pulls a gradient on a cosine matrix back onto its rows.
pub fn cosine_matrix_backward(rows: ArrayView2<f64>, cos: ArrayView2<f64>, grad_cos: ArrayView2<f64>) -> Array2<f64> {
    let n = rows.nrows();
    let norms: Vec<f64> = rows.outer_iter().map(|r| r.dot(&r).sqrt()).collect();
    let mut out = Array2::zeros(rows.raw_dim());
    for i in 0..n {
        if norms[i] == 0.0 {
            continue;
        }
        for j in 0..n {
            if i == j || norms[j] == 0.0 {
                continue;
            }
            // d cos(r_i, r_j) / d r_i, counted for both (i, j) and (j, i)
            let g = grad_cos[[i, j]] + grad_cos[[j, i]];
            if g == 0.0 {
                continue;
            }
            let c = cos[[i, j]];
            for col in 0..rows.ncols() {
                let d = rows[[j, col]] / (norms[i] * norms[j]) - c * rows[[i, col]] / (norms[i] * norms[i]);
                out[[i, col]] += g * d;
            }
        }
    }
    out
}

pub fn pooled_features(bags: &[&Bag]) -> Array2<f64> {
    let d = bags.first().map_or(0, |b| b.feature_dim());
    let mut out = Array2::zeros((bags.len(), d));
    for (mut row, bag) in out.outer_iter_mut().zip(bags) {
        row.assign(&bag.mean_instance());
    }
    out
}

pub fn similarity_matrices(bags: &[&Bag], distributions: ArrayView2<f64>) -> Result<SimilarityPair> {
    if bags.len() < 2 {
        return Err(Error::Degenerate("similarity needs at least two bags".into()));
    }
    if distributions.nrows() != bags.len() {
        return Err(Error::shape(format!(
            "{} distribution rows for {} bags",
            distributions.nrows(),
            bags.len()
        )));
    }
    Ok(SimilarityPair {
        z: cosine_matrix(pooled_features(bags).view()),
        a: cosine_matrix(distributions),
    })
}

pub fn similarity_loss(sp: &SimilarityPair, mode: SimilarityMode) -> Result<f64> {
    similarity_loss_grad(sp, mode).map(|(v, _)| v)
}

/// Value and gradient with respect to `sp.a`.
pub fn similarity_loss_grad(sp: &SimilarityPair, mode: SimilarityMode) -> Result<(f64, Array2<f64>)> {
    check_same_shape(sp.z.dim(), sp.a.dim(), "similarity matrices")?;
    let b = sp.z.nrows() as f64;
    let diff = &sp.z - &sp.a;
    match mode {
        SimilarityMode::Mse => {
            let value = diff.iter().map(|d| d * d).sum::<f64>() / (b * b);
            let grad = diff.mapv(|d| -2.0 * d / (b * b));
            Ok((value, grad))
        }
        SimilarityMode::SignedSum => {
            let s = diff.sum() / b;
            let grad = Array2::from_elem(diff.raw_dim(), -2.0 * s / b);
            Ok((s * s, grad))
        }
    }
}

/// Threshold loss value and how many bags were skipped for lacking a
/// relevant or an irrelevant label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdLoss {
    pub value: f64,
    pub skipped: usize,
}

pub fn threshold_loss(distributions: ArrayView2<f64>, logical: ArrayView2<f64>) -> Result<ThresholdLoss> {
    threshold_loss_grad(distributions, logical).map(|(v, _)| v)
}

/// Mean over eligible bags of `max(max_neg d - min_pos d, 0)`, with its
/// (sub)gradient with respect to the distributions.
pub fn threshold_loss_grad(
    distributions: ArrayView2<f64>,
    logical: ArrayView2<f64>,
) -> Result<(ThresholdLoss, Array2<f64>)> {
    check_same_shape(distributions.dim(), logical.dim(), "threshold loss")?;
    let mut active = Vec::new();
    let mut total = 0.0;
    let mut eligible = 0usize;
    for (i, (d, l)) in distributions.outer_iter().zip(logical.outer_iter()).enumerate() {
        let mut max_neg: Option<(usize, f64)> = None;
        let mut min_pos: Option<(usize, f64)> = None;
        for (j, (&dv, &lv)) in d.iter().zip(l.iter()).enumerate() {
            if lv > 0.5 {
                if min_pos.is_none_or(|(_, m)| dv < m) {
                    min_pos = Some((j, dv));
                }
            } else if max_neg.is_none_or(|(_, m)| dv > m) {
                max_neg = Some((j, dv));
            }
        }
        let (Some((jn, neg)), Some((jp, pos))) = (max_neg, min_pos) else {
            continue;
        };
        eligible += 1;
        let margin = neg - pos;
        if margin > 0.0 {
            total += margin;
            active.push((i, jn, jp));
        }
    }
    let skipped = distributions.nrows() - eligible;
    if eligible == 0 {
        return Err(Error::Degenerate(
            "no bag has both a relevant and an irrelevant label".into(),
        ));
    }
    let m = eligible as f64;
    let mut grad = Array2::zeros(distributions.raw_dim());
    for (i, jn, jp) in active {
        grad[[i, jn]] += 1.0 / m;
        grad[[i, jp]] -= 1.0 / m;
    }
    Ok((
        ThresholdLoss {
            value: total / m,
            skipped,
        },
        grad,
    ))
}

pub fn enhancer_total_loss(weights: &LossWeights, l_cl: f64, l_sim: f64, l_thr: f64) -> Result<f64> {
    weights.validate()?;
    Ok(weights.beta1 * l_cl + weights.beta2 * l_sim + weights.beta3 * l_thr)
}

/// `(1/B) sum_i sum_j d_ij * log sum_u exp(s_iu - s_ij)`.
pub fn distribution_loss(d: ArrayView2<f64>, s: ArrayView2<f64>) -> Result<f64> {
    distribution_loss_grad(d, s).map(|(v, _)| v)
}

/// Value and gradient with respect to the logits `s`.
pub fn distribution_loss_grad(d: ArrayView2<f64>, s: ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
    check_same_shape(d.dim(), s.dim(), "distribution loss")?;
    let b = d.nrows() as f64;
    if d.nrows() == 0 {
        return Err(Error::Degenerate("empty batch".into()));
    }
    let mut total = 0.0;
    let mut grad = Array2::zeros(s.raw_dim());
    for i in 0..d.nrows() {
        let (di, si) = (d.row(i), s.row(i));
        let lse = util::log_sum_exp(si);
        total += di.iter().zip(si.iter()).map(|(&w, &v)| w * (lse - v)).sum::<f64>();
        let mass = di.sum();
        let soft = util::softmax(si);
        for j in 0..si.len() {
            grad[[i, j]] = (soft[j] * mass - di[j]) / b;
        }
    }
    let value = total / b;
    if !value.is_finite() {
        return Err(Error::Numeric(format!("distribution loss is {value}")));
    }
    Ok((value, grad))
}

/// Binary cross-entropy against logical labels, averaged over every cell.
pub fn logical_bce_loss(p: ArrayView2<f64>, logical: ArrayView2<f64>) -> Result<f64> {
    logical_bce_loss_grad(p, logical).map(|(v, _)| v)
}

/// Value and gradient with respect to the probabilities `p`.
pub fn logical_bce_loss_grad(p: ArrayView2<f64>, logical: ArrayView2<f64>) -> Result<(f64, Array2<f64>)> {
    check_same_shape(p.dim(), logical.dim(), "logical BCE")?;
    let cells = p.len() as f64;
    if p.is_empty() {
        return Err(Error::Degenerate("empty batch".into()));
    }
    let mut total = 0.0;
    let mut grad = Array2::zeros(p.raw_dim());
    for ((g, &pv), &l) in grad.iter_mut().zip(p.iter()).zip(logical.iter()) {
        let (q, interior) = clamp_prob(pv);
        total += l * q.ln() + (1.0 - l) * (1.0 - q).ln();
        if interior {
            *g = -(l / q - (1.0 - l) / (1.0 - q)) / cells;
        }
    }
    Ok((-total / cells, grad))
}

pub fn classifier_total_loss(rho: f64, l_lc: f64, l_dc: f64) -> Result<f64> {
    check_rho(rho)?;
    Ok(rho * l_lc + (1.0 - rho) * l_dc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn interaction_examples() {
        let hi = 1.0 - 1e-7;
        let v = asymmetric_interaction_loss(&[hi], &[hi], &[1.0], 0.0, 4.0).unwrap();
        assert!(v < 1e-6);

        let v = asymmetric_interaction_loss(&[0.5], &[0.5], &[1.0], 0.0, 4.0).unwrap();
        assert_abs_diff_eq!(v, std::f64::consts::LN_2, epsilon = 1e-12);

        // -(1/2) * [ (1-0.8)^1 ln 0.9 + 0.3^2 ln 0.8 ]
        let v = asymmetric_interaction_loss(&[0.8, 0.3], &[0.9, 0.2], &[1.0, 0.0], 1.0, 2.0).unwrap();
        assert_abs_diff_eq!(v, -0.5 * (0.2 * 0.9f64.ln() + 0.09 * 0.8f64.ln()), epsilon = 1e-15);
        assert_abs_diff_eq!(v, 0.02058, epsilon = 1e-5);

        assert!(matches!(
            asymmetric_interaction_loss(&[0.5], &[0.5, 0.5], &[1.0], 0.0, 0.0),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn similarity_mode_examples() {
        let sp = |dev: [[f64; 2]; 2]| SimilarityPair {
            z: array![[1.0, 1.0], [1.0, 1.0]],
            a: array![[1.0 - dev[0][0], 1.0 - dev[0][1]], [1.0 - dev[1][0], 1.0 - dev[1][1]]],
        };
        let same = sp([[0.0, 0.0], [0.0, 0.0]]);
        assert_eq!(similarity_loss(&same, SimilarityMode::Mse).unwrap(), 0.0);
        assert_eq!(similarity_loss(&same, SimilarityMode::SignedSum).unwrap(), 0.0);

        let plus = sp([[0.0, 0.4], [0.4, 0.0]]);
        assert_abs_diff_eq!(similarity_loss(&plus, SimilarityMode::SignedSum).unwrap(), 0.16, epsilon = 1e-12);
        assert_abs_diff_eq!(similarity_loss(&plus, SimilarityMode::Mse).unwrap(), 0.08, epsilon = 1e-12);

        let cancel = sp([[0.0, 0.3], [-0.3, 0.0]]);
        assert_abs_diff_eq!(similarity_loss(&cancel, SimilarityMode::SignedSum).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(similarity_loss(&cancel, SimilarityMode::Mse).unwrap(), 0.045, epsilon = 1e-12);

        assert!("eq9".parse::<SimilarityMode>().is_err());
    }

    #[test]
    fn similarity_matrix_examples() {
        let bag = |rows: Array2<f64>| Bag::new(rows, vec![1, 0]).unwrap();
        let b1 = bag(array![[1.0, 0.0], [3.0, 0.0]]);
        let b2 = bag(array![[0.0, 2.0]]);
        let d = array![[0.3, 0.7], [0.3, 0.7]];
        let sp = similarity_matrices(&[&b1, &b2], d.view()).unwrap();
        assert_eq!(sp.z[[0, 1]], 0.0);
        assert_abs_diff_eq!(sp.a[[0, 1]], 1.0, epsilon = 1e-15);
        let sp = similarity_matrices(&[&b1, &b1.clone()], d.view()).unwrap();
        assert_abs_diff_eq!(sp.z[[0, 1]], 1.0, epsilon = 1e-15);
        assert!(similarity_matrices(&[&b1], d.slice(ndarray::s![..1, ..])).is_err());
    }

    #[test]
    fn threshold_examples() {
        let v = threshold_loss(array![[0.7, 0.2, 0.4]].view(), array![[1.0, 0.0, 0.0]].view()).unwrap();
        assert_eq!(v.value, 0.0);
        let v = threshold_loss(array![[0.3, 0.5, 0.1]].view(), array![[1.0, 0.0, 0.0]].view()).unwrap();
        assert_abs_diff_eq!(v.value, 0.2, epsilon = 1e-15);
        let v = threshold_loss(
            array![[0.3, 0.5, 0.1], [0.7, 0.2, 0.4], [0.5, 0.5, 0.0]].view(),
            array![[1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 1.0]].view(),
        )
        .unwrap();
        assert_abs_diff_eq!(v.value, 0.1, epsilon = 1e-15);
        assert_eq!(v.skipped, 1);
        let all_pos = threshold_loss(array![[0.5, 0.5]].view(), array![[1.0, 1.0]].view());
        assert!(matches!(all_pos, Err(Error::Degenerate(_))));
    }

    #[test]
    fn weighted_sums() {
        let w = LossWeights {
            beta1: 1.0,
            beta2: 0.0,
            beta3: 0.0,
            ..LossWeights::default()
        };
        assert_eq!(enhancer_total_loss(&w, 0.42, 9.0, 9.0).unwrap(), 0.42);
        let w = LossWeights::default();
        assert_abs_diff_eq!(enhancer_total_loss(&w, 0.3, 0.6, 0.9).unwrap(), 0.6, epsilon = 1e-12);
        assert_eq!(enhancer_total_loss(&w, 0.0, 0.0, 0.0).unwrap(), 0.0);
        let bad = LossWeights {
            beta1: 0.5,
            ..LossWeights::default()
        };
        assert!(matches!(enhancer_total_loss(&bad, 0.0, 0.0, 0.0), Err(Error::Config(_))));

        assert_eq!(classifier_total_loss(1.0, 0.4, 0.8).unwrap(), 0.4);
        assert_eq!(classifier_total_loss(0.0, 0.4, 0.8).unwrap(), 0.8);
        assert_abs_diff_eq!(classifier_total_loss(0.5, 0.4, 0.8).unwrap(), 0.6, epsilon = 1e-15);
        assert!(matches!(classifier_total_loss(1.5, 0.4, 0.8), Err(Error::Config(_))));
    }

    #[test]
    fn distribution_examples() {
        assert_eq!(distribution_loss(array![[1.0]].view(), array![[3.7]].view()).unwrap(), 0.0);
        let ln2 = std::f64::consts::LN_2;
        assert_abs_diff_eq!(
            distribution_loss(array![[1.0, 0.0]].view(), array![[0.0, 0.0]].view()).unwrap(),
            ln2,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            distribution_loss(array![[0.5, 0.5]].view(), array![[0.0, 0.0]].view()).unwrap(),
            ln2,
            epsilon = 1e-15
        );
        // large logits stay finite
        let v = distribution_loss(array![[0.5, 0.5]].view(), array![[800.0, -800.0]].view()).unwrap();
        assert_abs_diff_eq!(v, 800.0, epsilon = 1e-9);
    }

    #[test]
    fn bce_examples() {
        let lo = 1e-7;
        let v = logical_bce_loss(array![[1.0 - lo, lo]].view(), array![[1.0, 0.0]].view()).unwrap();
        assert!(v < 1e-6);
        let v = logical_bce_loss(Array2::from_elem((3, 4), 0.5).view(), Array2::<f64>::eye(4).slice(ndarray::s![..3, ..])).unwrap();
        assert_abs_diff_eq!(v, std::f64::consts::LN_2, epsilon = 1e-15);
        let p = array![[0.8, 0.3, 0.6]];
        let base = logical_bce_loss(p.view(), array![[1.0, 0.0, 1.0]].view()).unwrap();
        let flipped = logical_bce_loss(p.view(), array![[0.0, 0.0, 1.0]].view()).unwrap();
        assert!(flipped > base);
        assert!(matches!(logical_bce_loss(p.view(), array![[1.0]].view()), Err(Error::Shape(_))));
    }

    fn literal_distribution_loss(d: ArrayView2<f64>, s: ArrayView2<f64>) -> f64 {
        let mut total = 0.0;
        for i in 0..d.nrows() {
            for j in 0..d.ncols() {
                let inner: f64 = (0..d.ncols()).map(|u| (s[[i, u]] - s[[i, j]]).exp()).sum();
                total += d[[i, j]] * inner.ln();
            }
        }
        total / d.nrows() as f64
    }

    proptest! {
        #[test]
        fn distribution_loss_matches_cross_entropy(
            raw in proptest::collection::vec(0.01f64..1.0, 12),
            logits in proptest::collection::vec(-4.0f64..4.0, 12),
        ) {
            let mut d = Array2::from_shape_vec((3, 4), raw).unwrap();
            for mut row in d.outer_iter_mut() {
                let s = row.sum();
                row /= s;
            }
            let s = Array2::from_shape_vec((3, 4), logits).unwrap();
            let got = distribution_loss(d.view(), s.view()).unwrap();
            prop_assert!((got - literal_distribution_loss(d.view(), s.view())).abs() < 1e-12);
            prop_assert!(got >= 0.0);
        }

        #[test]
        fn losses_are_non_negative(
            p in proptest::collection::vec(0.0f64..1.0, 8),
            q in proptest::collection::vec(0.0f64..1.0, 8),
            l in proptest::collection::vec(0u8..2, 8),
        ) {
            let lf: Vec<f64> = l.iter().map(|&v| f64::from(v)).collect();
            prop_assert!(asymmetric_interaction_loss(&p, &q, &lf, 1.0, 4.0).unwrap() >= 0.0);
            let pm = Array2::from_shape_vec((2, 4), p.clone()).unwrap();
            let lm = Array2::from_shape_vec((2, 4), lf.clone()).unwrap();
            prop_assert!(logical_bce_loss(pm.view(), lm.view()).unwrap() >= 0.0);
            if let Ok(t) = threshold_loss(pm.view(), lm.view()) {
                prop_assert!(t.value >= 0.0);
            }
        }

        #[test]
        fn mse_mode_is_zero_only_when_matrices_agree(
            z in proptest::collection::vec(-1.0f64..1.0, 9),
            bump in 1e-3f64..0.5,
            cell in 0usize..9,
        ) {
            let z = Array2::from_shape_vec((3, 3), z).unwrap();
            let mut a = z.clone();
            prop_assert_eq!(similarity_loss(&SimilarityPair { z: z.clone(), a: a.clone() }, SimilarityMode::Mse).unwrap(), 0.0);
            a[[cell / 3, cell % 3]] += bump;
            let moved = SimilarityPair { z, a };
            prop_assert!(similarity_loss(&moved, SimilarityMode::Mse).unwrap() > 0.0);
        }
    }
}
