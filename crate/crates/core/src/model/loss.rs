//! Multi-binary classification loss.

use alloc::format;

use crate::gcn::sigmoid;
use crate::{Error, Matrix, Result};

fn check(logits: &Matrix, targets: &Matrix) -> Result<()> {
    if logits.shape() != targets.shape() {
        return Err(Error::shape(
            "bce_loss",
            format!("logits {:?} vs targets {:?}", logits.shape(), targets.shape()),
        ));
    }
    if let Some(&t) = targets.as_slice().iter().find(|&&t| t != 0.0 && t != 1.0) {
        return Err(Error::InvalidTarget(t));
    }
    Ok(())
}

/// Per-element sigmoid cross-entropy `max(z, 0) − z·t + ln(1 + e^{−|z|})`.
#[inline]
pub fn bce_element(z: f64, t: f64) -> f64 {
    z.max(0.0) - z * t + libm::log1p(libm::exp(-libm::fabs(z)))
}

/// Mean sigmoid binary cross-entropy over every (sample, label) pair.
pub fn bce_loss(logits: &Matrix, targets: &Matrix) -> Result<f64> {
    check(logits, targets)?;
    let count = logits.as_slice().len().max(1) as f64;
    let total: f64 = logits.as_slice().iter().zip(targets.as_slice()).map(|(&z, &t)| bce_element(z, t)).sum();
    Ok(total / count)
}

/// Gradient of [`bce_loss`] with respect to the logits.
pub fn bce_loss_grad(logits: &Matrix, targets: &Matrix) -> Result<Matrix> {
    check(logits, targets)?;
    let count = logits.as_slice().len().max(1) as f64;
    logits.zip_with(targets, "bce_loss_grad", |z, t| (sigmoid(z) - t) / count)
}
