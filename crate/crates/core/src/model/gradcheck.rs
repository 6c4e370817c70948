//! Analytic gradients against central finite differences.

use serde::Serialize;

use super::data::Batch;
use super::network::VmtModel;
use crate::Result;

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub groups: Vec<GroupCheck>,
}

/// Compares the gradient of the total loss (dropout off) with central
/// differences of step `eps`. Each parameter tensor contributes its
/// `per_group` entries with the largest analytic gradient, so the check
/// covers every group without spending time on entries whose gradient is
/// below finite-difference resolution.
pub fn grad_check(model: &VmtModel, batch: &Batch, eps: f64, per_group: usize) -> Result<GradCheckReport> {
    let analytic = model.forward(batch, None, true)?.grads.expect("gradients requested");
    let mut probe = model.clone();
    let mut groups = Vec::with_capacity(analytic.len());
    for (p, grad) in analytic.iter().enumerate() {
        let mut order: Vec<usize> = (0..grad.len()).collect();
        let flat: Vec<f64> = grad.iter().copied().collect();
        order.sort_by(|&a, &b| flat[b].abs().total_cmp(&flat[a].abs()).then(a.cmp(&b)));
        order.truncate(per_group.max(1));

        let cols = grad.ncols();
        let mut worst: f64 = 0.0;
        for &idx in &order {
            let at = [idx / cols, idx % cols];
            let orig = probe.params.values()[p][at];
            probe.params.values_mut()[p][at] = orig + eps;
            let plus = probe.total_loss(batch)?.total;
            probe.params.values_mut()[p][at] = orig - eps;
            let minus = probe.total_loss(batch)?.total;
            probe.params.values_mut()[p][at] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(rel_error(flat[idx], numeric));
        }
        groups.push(GroupCheck {
            name: model.params.names()[p].clone(),
            checked: order.len(),
            max_rel_error: worst,
        });
    }
    Ok(GradCheckReport {
        max_rel_error: groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max),
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_formula() {
        assert_eq!(rel_error(1.0, 1.0), 0.0);
        assert_eq!(rel_error(2.0, 1.0), 0.5);
        assert_eq!(rel_error(0.0, 0.0), 0.0);
        assert_eq!(rel_error(1e-9, 0.0), 0.1);
    }
}
