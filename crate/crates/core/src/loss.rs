//! Sparsity-regularized multi-scale L1 objective.
//!
//! Per scale j the objective takes three mean-L1 terms: reconstruction
//! |restored - target|, dark-prior sparsity |D(lambda_j)|, and bright-prior
//! anti-sparsity |1 - B(omega_j)|, where D and B are the windowed dark and
//! bright channel extractions. The total is
//!
//!   sum_j recon_j + lambda * dark_j + omega * bright_j
//!
//! accumulated in ascending scale order, recon first. A weight of exactly
//! zero (or a network without prior maps) skips the term in the graph
//! entirely, so a run with both weights zero is bit-identical to a plain
//! reconstruction objective.

use crate::error::{Error, Result};
use crate::network::ForwardPass;
use crate::tape::ValueId;
use crate::tensor::{Element, Tensor};

/// Per-scale term values (unweighted) plus the weighted total, recorded as
/// plain f64 for logging.
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub recon: Vec<f64>,
    pub dark: Vec<Option<f64>>,
    pub bright: Vec<Option<f64>>,
    pub total: f64,
}

/// Appends the objective to a recorded forward pass. `targets` is the sharp
/// pyramid, finest first, matching the restored outputs scale for scale.
/// Returns the scalar root node and the logged breakdown.
pub fn attach_loss<E: Element>(
    pass: &mut ForwardPass<E>,
    targets: &[Tensor<E>],
    windows: &[usize],
    lambda: E,
    omega: E,
) -> Result<(ValueId, LossBreakdown)> {
    let scales = pass.restored.len();
    if targets.len() != scales {
        return Err(Error::contract(format!(
            "expected {} target pyramid levels, got {}",
            scales,
            targets.len()
        )));
    }
    if windows.len() != scales {
        return Err(Error::contract(format!(
            "expected {} extraction windows, got {}",
            scales,
            windows.len()
        )));
    }

    let mut breakdown = LossBreakdown {
        recon: Vec::with_capacity(scales),
        dark: vec![None; scales],
        bright: vec![None; scales],
        total: 0.0,
    };
    let mut total: Option<ValueId> = None;
    let push = |pass: &mut ForwardPass<E>, term: ValueId, total: &mut Option<ValueId>| {
        *total = Some(match *total {
            None => term,
            Some(t) => pass.tape.add(t, term).expect("loss terms are scalars"),
        });
    };

    for j in 0..scales {
        let restored_shape = pass.tape.shape(pass.restored[j]);
        if targets[j].shape() != restored_shape {
            return Err(Error::contract(format!(
                "target level {j} has shape {}, expected {restored_shape}",
                targets[j].shape()
            )));
        }
        let target = pass.tape.leaf(targets[j].clone(), false);
        pass.tape.set_label(target, format!("scale {j} target"));
        let recon = pass.tape.l1_distance(pass.restored[j], target)?;
        breakdown.recon.push(pass.tape.value(recon).scalar_value().as_f64());
        push(pass, recon, &mut total);

        if lambda != E::zero() {
            if let Some(lam) = pass.lambda_maps[j] {
                let dark = pass.tape.dark_channel(lam, windows[j])?;
                let zeros = pass.tape.leaf(Tensor::zeros(pass.tape.shape(dark)), false);
                let term = pass.tape.l1_distance(dark, zeros)?;
                breakdown.dark[j] = Some(pass.tape.value(term).scalar_value().as_f64());
                let weighted = pass.tape.scale(term, lambda);
                push(pass, weighted, &mut total);
            }
        }
        if omega != E::zero() {
            if let Some(om) = pass.omega_maps[j] {
                let bright = pass.tape.bright_channel(om, windows[j])?;
                let ones = pass.tape.leaf(Tensor::ones(pass.tape.shape(bright)), false);
                let term = pass.tape.l1_distance(bright, ones)?;
                breakdown.bright[j] = Some(pass.tape.value(term).scalar_value().as_f64());
                let weighted = pass.tape.scale(term, omega);
                push(pass, weighted, &mut total);
            }
        }
    }

    let root = total.expect("at least one scale");
    pass.tape.set_label(root, "objective");
    breakdown.total = pass.tape.value(root).scalar_value().as_f64();
    Ok((root, breakdown))
}
