//! Central finite-difference verification of [`TappedNetwork::backward`].

use super::network::{MixRecord, TappedNetwork};
use crate::error::Result;
use crate::mixops::MultiLabelBatch;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub num_parameters: usize,
    pub max_rel_error: f64,
    /// Flat index (store order) of the worst parameter.
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Relative error `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares analytic gradients of the mixed loss against central differences
/// with step `h`, holding the mixing operator in `record` fixed.
///
/// `floor` bounds the denominator of the relative error so that parameters
/// with vanishing gradient are judged on absolute error.
pub fn gradcheck(
    net: &TappedNetwork,
    batch: &MultiLabelBatch,
    record: &MixRecord,
    h: f64,
    floor: f64,
) -> Result<GradCheckReport> {
    let mut work = net.clone();
    work.params_mut().zero_grad();
    let logits = work.forward_mixed(batch.features(), &record.mixing, record.boundary)?;
    let g = record.loss_grad(&logits, batch.labels())?;
    work.backward(&g)?;
    let analytic = work.params().flat_grads();

    let mut numeric = Vec::with_capacity(analytic.len());
    for t in 0..work.params().len() {
        let len = work.params().get(t).len();
        for i in 0..len {
            let original = work.params().get(t).value.as_slice().expect("standard layout")[i];
            set(&mut work, t, i, original + h);
            let up = work.mixed_loss(batch, record)?;
            set(&mut work, t, i, original - h);
            let down = work.mixed_loss(batch, record)?;
            set(&mut work, t, i, original);
            numeric.push((up - down) / (2.0 * h));
        }
    }

    let (worst_index, max_rel_error) = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n, floor))
        .enumerate()
        .fold((0, 0.0), |acc, (i, e)| if e > acc.1 { (i, e) } else { acc });

    Ok(GradCheckReport {
        num_parameters: analytic.len(),
        max_rel_error,
        worst_index,
        analytic,
        numeric,
    })
}

fn set(net: &mut TappedNetwork, tensor: usize, i: usize, v: f64) {
    net.params_mut().get_mut(tensor).value.as_slice_mut().expect("standard layout")[i] = v;
}
