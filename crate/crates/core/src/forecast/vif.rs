//! Variance inflation factors for multicollinearity checks.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// VIF per non-intercept covariate: `1 / (1 - R²_k)` from regressing column
/// k on all other columns. The design must carry the intercept in column 0;
/// the returned vector covers columns `1..d` in order. Exactly collinear
/// columns report `f64::INFINITY` rather than erroring.
pub fn vif_diagnostics(design: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = design.len();
    if n == 0 {
        return Err(Error::InvalidInput("empty design matrix".into()));
    }
    let d = design[0].len();
    if d < 3 {
        return Err(Error::InvalidInput(
            "need an intercept plus at least two covariates".into(),
        ));
    }
    if design.iter().any(|row| row.len() != d) {
        return Err(Error::InvalidInput("ragged design matrix".into()));
    }
    if n <= d {
        return Err(Error::InvalidInput(format!(
            "need more rows ({n}) than columns ({d})"
        )));
    }

    let mut vifs = Vec::with_capacity(d - 1);
    for k in 1..d {
        let target = DVector::from_iterator(n, design.iter().map(|row| row[k]));
        let mean = target.mean();
        let sst: f64 = target.iter().map(|v| (v - mean) * (v - mean)).sum();
        if sst <= 1e-300 {
            vifs.push(f64::INFINITY); // constant column
            continue;
        }
        let others = DMatrix::from_fn(n, d - 1, |r, c| {
            let col = if c < k { c } else { c + 1 };
            design[r][col]
        });
        let svd = others.svd(true, true);
        let coef = svd.solve(&target, 1e-12).map_err(|e| Error::Numerical(e.to_string()))?;
        let fitted = DMatrix::from_fn(n, d - 1, |r, c| {
            let col = if c < k { c } else { c + 1 };
            design[r][col]
        }) * coef;
        let ssr: f64 = target
            .iter()
            .zip(fitted.iter())
            .map(|(y, f)| (y - f) * (y - f))
            .sum();
        let r2 = 1.0 - ssr / sst;
        if r2 >= 1.0 - 1e-12 {
            vifs.push(f64::INFINITY);
        } else {
            vifs.push(1.0 / (1.0 - r2));
        }
    }
    Ok(vifs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthogonal_design_has_unit_vifs() {
        // Two centered, orthogonal covariates.
        let design = vec![
            vec![1.0, 1.0, 1.0],
            vec![1.0, 1.0, -1.0],
            vec![1.0, -1.0, 1.0],
            vec![1.0, -1.0, -1.0],
        ];
        let vifs = vif_diagnostics(&design).unwrap();
        for v in vifs {
            assert!((v - 1.0).abs() < 1e-9, "vif {v}");
        }
    }

    #[test]
    fn duplicated_column_is_infinite() {
        let design = vec![
            vec![1.0, 1.0, 1.0, 0.3],
            vec![1.0, 2.0, 2.0, -0.2],
            vec![1.0, -1.0, -1.0, 0.9],
            vec![1.0, 0.5, 0.5, 0.1],
            vec![1.0, 1.5, 1.5, -0.6],
        ];
        let vifs = vif_diagnostics(&design).unwrap();
        assert!(vifs[0].is_infinite());
        assert!(vifs[1].is_infinite());
        assert!(vifs[2].is_finite());
    }

    #[test]
    fn correlation_087_gives_vif_near_4_11() {
        // Construct columns with sample correlation exactly 0.87: x = e1,
        // y = rho*e1 + sqrt(1-rho^2)*e2 with e1 ⊥ e2, both centered.
        let rho: f64 = 0.87;
        let w = (1.0 - rho * rho).sqrt();
        let e1 = [1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
        let e2 = [1.0, 1.0, -1.0, -1.0, 1.0, 1.0, -1.0, -1.0];
        let design: Vec<Vec<f64>> = (0..8)
            .map(|i| vec![1.0, e1[i], rho * e1[i] + w * e2[i]])
            .collect();
        let vifs = vif_diagnostics(&design).unwrap();
        let expected = 1.0 / (1.0 - rho * rho);
        assert!((expected - 4.1135).abs() < 0.01);
        for v in vifs {
            assert!((v - expected).abs() < 1e-6, "vif {v} vs {expected}");
        }
    }
}
