use super::scalar::Scalar;
use crate::error::{Error, Result};

/// Logistic function without overflow for large `|z|`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check<T>(logits: &[T], labels: &[u8]) -> Result<()> {
    if logits.is_empty() {
        return Err(Error::Empty("loss over an empty batch".into()));
    }
    if logits.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} logits but {} labels",
            logits.len(),
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::InvalidArgument(format!("labels must be 0 or 1, got {bad}")));
    }
    Ok(())
}

/// Mean binary cross-entropy on logits, as
/// `max(z, 0) - z y + ln(1 + exp(-|z|))`.
pub fn bce_loss<T: Scalar>(logits: &[T], labels: &[u8]) -> Result<f64> {
    check(logits, labels)?;
    let total: f64 = logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| {
            let z = z.as_f64();
            z.max(0.0) - z * y as f64 + (-z.abs()).exp().ln_1p()
        })
        .sum();
    Ok(total / logits.len() as f64)
}

/// Derivative of [`bce_loss`] with respect to each logit: `(sigmoid(z) - y) / n`.
pub fn bce_grad<T: Scalar>(logits: &[T], labels: &[u8]) -> Result<Vec<T>> {
    check(logits, labels)?;
    let n = logits.len() as f64;
    Ok(logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| T::from_f64((sigmoid(z.as_f64()) - y as f64) / n))
        .collect())
}
