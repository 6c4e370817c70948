//! Cross entropy and cross-modal contrastive losses with closed-form
//! gradients.

use ndarray::{Array2, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use super::config::CeReduction;
use super::data::PAD;
use crate::{Error, Result};

/// Pooled and projected text and video representations, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledProjection {
    pub text: Array2<f64>,
    pub video: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub ctr: f64,
    pub total: f64,
    /// Unsmoothed negative log-likelihood per target token.
    pub nll: f64,
    pub tokens: usize,
}

#[derive(Debug, Clone)]
pub struct CeOutput {
    pub loss: f64,
    /// Mean unsmoothed negative log-likelihood.
    pub nll: f64,
    pub tokens: usize,
    /// d loss / d logits.
    pub grad: Array2<f64>,
}

fn log_softmax_row(row: ndarray::ArrayView1<f64>) -> ndarray::Array1<f64> {
    let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    row.mapv(|v| v - lse)
}

/// Token-level cross entropy. `logits` has one row per non-pad target
/// token. With smoothing `eps` the target distribution is
/// `(1 - eps) * onehot + eps / V`.
pub fn ce_loss(logits: ArrayView2<f64>, targets: &[u32], eps: f64, reduction: CeReduction) -> Result<CeOutput> {
    if logits.nrows() != targets.len() {
        return Err(Error::Shape(format!(
            "{} logit rows for {} targets",
            logits.nrows(),
            targets.len()
        )));
    }
    let v = logits.ncols();
    if let Some(&t) = targets.iter().find(|&&t| t as usize >= v) {
        return Err(Error::Shape(format!("target id {t} outside vocabulary of {v}")));
    }
    if targets.is_empty() {
        return Err(Error::invalid("no target tokens"));
    }
    let n = targets.len();
    let norm = match reduction {
        CeReduction::Mean => 1.0 / n as f64,
        CeReduction::Sum => 1.0,
    };
    let mut grad = Array2::zeros(logits.dim());
    let (mut loss, mut nll) = (0.0, 0.0);
    for (r, &t) in targets.iter().enumerate() {
        let logp = log_softmax_row(logits.row(r));
        let tok_nll = -logp[t as usize];
        let smooth = -logp.mean().expect("non-empty vocabulary");
        loss += (1.0 - eps) * tok_nll + eps * smooth;
        nll += tok_nll;
        let mut g = grad.row_mut(r);
        g.assign(&logp.mapv(f64::exp));
        g -= eps / v as f64;
        g[t as usize] -= 1.0 - eps;
        g *= norm;
    }
    Ok(CeOutput {
        loss: loss * norm,
        nll: nll / n as f64,
        tokens: n,
        grad,
    })
}

/// [`ce_loss`] over `N x Ly x V` logits and `N x Ly` targets, skipping pads.
pub fn ce_loss_padded(logits: ArrayView3<f64>, tgt_ids: ArrayView2<u32>, eps: f64, reduction: CeReduction) -> Result<CeOutput> {
    let (n, ly, v) = logits.dim();
    if tgt_ids.dim() != (n, ly) {
        return Err(Error::Shape(format!(
            "logits {n}x{ly}x{v} do not match targets {:?}",
            tgt_ids.dim()
        )));
    }
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for i in 0..n {
        for j in 0..ly {
            let t = tgt_ids[[i, j]];
            if t != PAD {
                rows.push(logits.slice(ndarray::s![i, j, ..]).to_owned());
                targets.push(t);
            }
        }
    }
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    let flat = ndarray::stack(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
    ce_loss(flat.view(), &targets, eps, reduction)
}

#[derive(Debug, Clone)]
pub struct CtrOutput {
    pub loss: f64,
    pub grad_text: Array2<f64>,
    pub grad_video: Array2<f64>,
}

fn unit_rows(m: &Array2<f64>, what: &str) -> Result<(Array2<f64>, Vec<f64>)> {
    let norms: Vec<f64> = m.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    if let Some(i) = norms.iter().position(|&n| !(n > 0.0) || !n.is_finite()) {
        return Err(Error::invalid(format!("{what} row {i} has zero or non-finite norm")));
    }
    let mut u = m.clone();
    for (mut row, &n) in u.rows_mut().into_iter().zip(&norms) {
        row /= n;
    }
    Ok((u, norms))
}

/// In-batch contrastive loss: for each text `i`, the matching video `i`
/// against all videos, summed over `i`, with cosine similarity over `tau`.
pub fn ctr_loss(pooled: &PooledProjection, tau: f64) -> Result<CtrOutput> {
    let (x, v) = (&pooled.text, &pooled.video);
    if x.dim() != v.dim() || x.nrows() == 0 {
        return Err(Error::Shape(format!(
            "text {:?} and video {:?} projections must match and be non-empty",
            x.dim(),
            v.dim()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::Config("tau must be positive".into()));
    }
    let (u, xn) = unit_rows(x, "text")?;
    let (w, vn) = unit_rows(v, "video")?;
    let sim = u.dot(&w.t()) / tau;

    let n = sim.nrows();
    let mut loss = 0.0;
    let mut dsim = Array2::zeros((n, n));
    for i in 0..n {
        let row = sim.row(i);
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let shifted = row.mapv(|s| (s - m).exp());
        let z = shifted.sum();
        // log-sum-exp minus the positive logit, with the max folded in.
        loss += (m - sim[[i, i]]) + z.ln();
        let mut d = dsim.row_mut(i);
        d.assign(&(shifted / z));
        d[i] -= 1.0;
    }
    let du = dsim.dot(&w) / tau;
    let dw = dsim.t().dot(&u) / tau;
    let back = |du: Array2<f64>, u: &Array2<f64>, norms: &[f64]| {
        let mut dx = du;
        for ((mut g, ur), &n) in dx.rows_mut().into_iter().zip(u.rows()).zip(norms) {
            let proj = g.dot(&ur);
            g.scaled_add(-proj, &ur);
            g /= n;
        }
        dx
    };
    Ok(CtrOutput {
        loss,
        grad_text: back(du, &u, &xn),
        grad_video: back(dw, &w, &vn),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};
    use proptest::prelude::*;

    fn pooled(text: Array2<f64>, video: Array2<f64>) -> PooledProjection {
        PooledProjection { text, video }
    }

    #[test]
    fn uniform_logits() {
        let out = ce_loss(Array2::zeros((3, 8)).view(), &[0, 4, 7], 0.0, CeReduction::Mean).unwrap();
        assert!((out.loss - 8f64.ln()).abs() < 1e-12);
        assert!((out.loss - 2.0794).abs() < 1e-4);
    }

    #[test]
    fn margin_drives_loss_to_zero() {
        let mut prev = f64::INFINITY;
        for margin in [1.0, 5.0, 20.0, 50.0] {
            let logits = array![[margin, 0.0, 0.0]];
            let l = ce_loss(logits.view(), &[0], 0.0, CeReduction::Mean).unwrap().loss;
            assert!(l < prev);
            prev = l;
        }
        assert!(prev < 1e-20);
    }

    #[test]
    fn direct_recomputation() {
        let logits = array![[0.3, -1.2, 2.0, 0.5], [1.1, 0.0, -0.7, 0.2]];
        let targets = [2u32, 0];
        let mut expect = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let z: f64 = logits.row(r).iter().map(|v: &f64| v.exp()).sum();
            expect -= (logits[[r, t as usize]].exp() / z).ln();
        }
        let mean = ce_loss(logits.view(), &targets, 0.0, CeReduction::Mean).unwrap();
        let sum = ce_loss(logits.view(), &targets, 0.0, CeReduction::Sum).unwrap();
        assert!((mean.loss - expect / 2.0).abs() < 1e-12);
        assert!((sum.loss - expect).abs() < 1e-12);
        assert!((mean.loss * mean.tokens as f64 - sum.loss).abs() < 1e-12);
    }

    #[test]
    fn smoothing_floor() {
        // Even a perfect one-hot prediction pays for the smoothed mass.
        let logits = array![[60.0, 0.0, 0.0, 0.0]];
        let out = ce_loss(logits.view(), &[0], 0.1, CeReduction::Mean).unwrap();
        // Mean negative log-probability over the vocabulary is 45 here.
        assert!((out.loss - 0.1 * 45.0).abs() < 1e-9);
        assert!(out.nll < 1e-20);
    }

    #[test]
    fn ce_gradient_matches_finite_differences() {
        let logits = array![[0.3, -1.2, 2.0], [1.1, 0.0, -0.7]];
        let targets = [2u32, 1];
        let out = ce_loss(logits.view(), &targets, 0.1, CeReduction::Mean).unwrap();
        let h = 1e-6;
        for r in 0..2 {
            for c in 0..3 {
                let mut p = logits.clone();
                p[[r, c]] += h;
                let mut m = logits.clone();
                m[[r, c]] -= h;
                let fd = (ce_loss(p.view(), &targets, 0.1, CeReduction::Mean).unwrap().loss
                    - ce_loss(m.view(), &targets, 0.1, CeReduction::Mean).unwrap().loss)
                    / (2.0 * h);
                assert!((fd - out.grad[[r, c]]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn padded_variant_skips_pads() {
        let mut logits = Array3::zeros((2, 2, 5));
        logits[[0, 0, 3]] = 1.0;
        let tgt = array![[3u32, 2], [4, PAD]];
        let out = ce_loss_padded(logits.view(), tgt.view(), 0.0, CeReduction::Mean).unwrap();
        assert_eq!(out.tokens, 3);
        assert!(ce_loss_padded(logits.view(), array![[1u32]].view(), 0.0, CeReduction::Mean).is_err());
    }

    #[test]
    fn ctr_single_pair_is_zero() {
        let p = pooled(array![[0.3, -2.0, 1.0]], array![[5.0, 1.0, 0.0]]);
        assert_eq!(ctr_loss(&p, 0.002).unwrap().loss, 0.0);
    }

    #[test]
    fn ctr_orthonormal_pair() {
        let e = array![[1.0, 0.0], [0.0, 1.0]];
        let out = ctr_loss(&pooled(e.clone(), e), 1.0).unwrap();
        let expect = 2.0 * (1.0 + (-1.0f64).exp()).ln();
        assert!((out.loss - expect).abs() < 1e-12);
        assert!((out.loss - 0.62652).abs() < 1e-5);
    }

    #[test]
    fn ctr_small_tau_is_finite() {
        let p = pooled(array![[1.0, 0.0], [0.0, 1.0]], array![[0.0, 1.0], [1.0, 0.0]]);
        let out = ctr_loss(&p, 0.002).unwrap();
        assert!(out.loss.is_finite());
        assert!((out.loss - 2.0 * 500.0).abs() < 1e-9);
    }

    #[test]
    fn ctr_zero_row_rejected() {
        let p = pooled(array![[0.0, 0.0]], array![[1.0, 0.0]]);
        assert!(ctr_loss(&p, 1.0).is_err());
    }

    #[test]
    fn ctr_gradient_matches_finite_differences() {
        let x = array![[0.3, -1.0, 0.5], [1.0, 0.2, -0.3], [-0.4, 0.8, 0.9]];
        let v = array![[0.1, 0.7, -0.2], [0.6, -0.5, 0.4], [-1.0, 0.3, 0.2]];
        let tau = 0.5;
        let out = ctr_loss(&pooled(x.clone(), v.clone()), tau).unwrap();
        let h = 1e-6;
        for (which, base) in [(0, &x), (1, &v)] {
            for idx in 0..9 {
                let (r, c) = (idx / 3, idx % 3);
                let f = |delta: f64| {
                    let mut m = base.clone();
                    m[[r, c]] += delta;
                    let p = if which == 0 { pooled(m, v.clone()) } else { pooled(x.clone(), m) };
                    ctr_loss(&p, tau).unwrap().loss
                };
                let fd = (f(h) - f(-h)) / (2.0 * h);
                let a = if which == 0 { out.grad_text[[r, c]] } else { out.grad_video[[r, c]] };
                assert!((fd - a).abs() < 1e-7, "{which} [{r},{c}] {a} vs {fd}");
            }
        }
    }

    fn matrix(n: usize, d: usize) -> impl Strategy<Value = Array2<f64>> {
        proptest::collection::vec(-3.0f64..3.0, n * d)
            .prop_filter("rows need non-zero norm", move |v| v.chunks(d).all(|r| r.iter().any(|x| x.abs() > 1e-3)))
            .prop_map(move |v| Array2::from_shape_vec((n, d), v).unwrap())
    }

    proptest! {
        #[test]
        fn ctr_is_non_negative(
            (x, v) in (1usize..6, 2usize..5).prop_flat_map(|(n, d)| (matrix(n, d), matrix(n, d))),
            tau in 0.001f64..2.0,
        ) {
            let out = ctr_loss(&pooled(x, v), tau).unwrap();
            prop_assert!(out.loss >= -1e-12);
        }

        #[test]
        fn ctr_is_scale_invariant(
            (x, v) in (2usize..6, 2usize..5).prop_flat_map(|(n, d)| (matrix(n, d), matrix(n, d))),
            scale in 0.01f64..100.0,
            row in 0usize..6,
        ) {
            let base = ctr_loss(&pooled(x.clone(), v.clone()), 0.1).unwrap().loss;
            let mut xs = x;
            let r = row % xs.nrows();
            xs.row_mut(r).mapv_inplace(|a| a * scale);
            let scaled = ctr_loss(&pooled(xs, v), 0.1).unwrap().loss;
            prop_assert!((base - scaled).abs() <= 1e-9 * (1.0 + base.abs()));
        }
    }
}
