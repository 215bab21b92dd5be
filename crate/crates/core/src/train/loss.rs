use crate::error::{Error, Result};

/// Smallest probability the loss will take a log of.
pub const PROB_CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy over the slots where `valid` is set.
pub fn bce_loss(probabilities: &[f64], labels: &[f64], valid: &[bool]) -> Result<f64> {
    if probabilities.len() != labels.len() || labels.len() != valid.len() {
        return Err(Error::Shape("bce_loss inputs differ in length".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for ((&p, &y), &ok) in probabilities.iter().zip(labels).zip(valid) {
        if !ok {
            continue;
        }
        let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        count += 1;
    }
    if count == 0 {
        return Err(Error::Degenerate("no valid label slots".into()));
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_values() {
        assert!((bce_loss(&[0.5], &[1.0], &[true]).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!(bce_loss(&[1.0, 0.0], &[1.0, 0.0], &[true, true]).unwrap() < 1e-6);
        let v = bce_loss(&[0.9, 0.2], &[1.0, 0.0], &[true, true]).unwrap();
        assert!((v - 0.1643).abs() < 1e-4);
        assert!((v + (0.9f64.ln() + 0.8f64.ln()) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn masked_slots_ignored() {
        let v = bce_loss(&[0.5, 0.01], &[1.0, 1.0], &[true, false]).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-12);
        assert!(bce_loss(&[0.5], &[1.0], &[false]).is_err());
    }
}
