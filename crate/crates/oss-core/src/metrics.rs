//! Fidelity metrics: MSE, PSNR, and the clean-data reparameterization.

use crate::error::{OssError, Result};

/// Mean squared elementwise difference.
pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(OssError::invalid(format!(
            "mse requires equal non-empty lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.len() as f64)
}

/// Peak signal-to-noise ratio in dB: `10 log10(peak^2 / mse)`.
///
/// Identical inputs (mse = 0) return `f64::INFINITY`; serializers write it
/// as the string `"inf"`.
pub fn psnr(a: &[f64], b: &[f64], peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(OssError::invalid(format!(
            "psnr peak must be > 0, got {peak}"
        )));
    }
    let e = mse(a, b)?;
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / e).log10())
}

/// Clean-data estimate `x0 = x - t * v` under the interpolation
/// `x_t = (1-t) x0 + t eps` with velocity `v = eps - x0`.
pub fn reparam_x0(x: &[f64], v: &[f64], t: f64) -> Result<Vec<f64>> {
    if x.len() != v.len() {
        return Err(OssError::invalid(format!(
            "reparam_x0 dimension mismatch: {} vs {}",
            x.len(),
            v.len()
        )));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(OssError::domain(format!(
            "reparam_x0 time {t} outside [0, 1]"
        )));
    }
    Ok(x.iter().zip(v).map(|(xi, vi)| xi - t * vi).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_basics() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[0.0], &[2.0]).unwrap(), 4.0);
        assert_eq!(mse(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!(mse(&[0.0], &[1.0, 2.0]).is_err());
        assert!(mse(&[], &[]).is_err());
    }

    #[test]
    fn mse_concatenation_is_weighted_mean() {
        let (a, b) = ([1.0, 3.0, -2.0], [0.5, 2.0, 1.0]);
        let (c, d) = ([4.0f64], [0.0f64]);
        let joined_a: Vec<f64> = a.iter().chain(c.iter()).copied().collect();
        let joined_b: Vec<f64> = b.iter().chain(d.iter()).copied().collect();
        let whole = mse(&joined_a, &joined_b).unwrap();
        let parts = (mse(&a, &b).unwrap() * 3.0 + mse(&c, &d).unwrap()) / 4.0;
        assert!((whole - parts).abs() < 1e-15);
    }

    #[test]
    fn psnr_formula() {
        // mse = 0.01, peak = 1 -> 20 dB
        let a = [0.1, 0.1];
        let b = [0.0, 0.0];
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-12);
        // mse = 4, peak = 2 -> 0 dB
        assert!((psnr(&[2.0], &[0.0], 2.0).unwrap()).abs() < 1e-12);
        // identical inputs -> +inf sentinel
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        assert!(psnr(&a, &b, 0.0).is_err());
        assert!(psnr(&a, &b, -1.0).is_err());
    }

    #[test]
    fn psnr_peak_shift() {
        let a = [0.3, -0.7, 1.1];
        let b = [0.1, 0.2, -0.4];
        let p1 = psnr(&a, &b, 1.0).unwrap();
        let p2 = psnr(&a, &b, 2.0).unwrap();
        assert!((p2 - p1 - 20.0 * 2f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn psnr_decreases_as_error_grows() {
        let base = [0.0, 0.0, 0.0];
        let mut prev = f64::INFINITY;
        for scale in 1..6 {
            let off = [0.1 * scale as f64; 3];
            let p = psnr(&base, &off, 1.0).unwrap();
            assert!(p < prev);
            prev = p;
        }
    }

    #[test]
    fn reparam_recovers_clean_data() {
        // x = (1-t) x0 + t eps with v = eps - x0 gives back x0 exactly.
        let x0 = [0.4, -1.2, 2.0];
        let eps = [1.0, 0.5, -0.3];
        let t = 0.37;
        let x: Vec<f64> = x0
            .iter()
            .zip(&eps)
            .map(|(a, e)| (1.0 - t) * a + t * e)
            .collect();
        let v: Vec<f64> = eps.iter().zip(&x0).map(|(e, a)| e - a).collect();
        let rec = reparam_x0(&x, &v, t).unwrap();
        for (r, a) in rec.iter().zip(&x0) {
            assert!((r - a).abs() < 1e-15);
        }
        // t = 0 returns x unchanged
        assert_eq!(reparam_x0(&x, &v, 0.0).unwrap(), x);
        assert!(reparam_x0(&x, &v, 1.5).is_err());
    }
}
