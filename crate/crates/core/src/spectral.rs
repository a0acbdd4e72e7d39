//! Generalized eigenproblem `G e = λ M e` for the discrete operator.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::diagnostics::{PropertyVerdict, VerdictContext};
use crate::error::{Error, Result};
use crate::geometry::FeSpace;

/// Smallest generalized eigenpairs, ascending, `M`-orthonormal.
#[derive(Debug, Clone, Serialize)]
pub struct EigenResult {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    /// Backward error `‖G e - λ M e‖ / ((‖G‖ + λ ‖M‖) ‖e‖)` per pair, Frobenius norms.
    pub residuals: Vec<f64>,
}

/// Flips `v` so that its entry of largest magnitude is positive.
pub fn normalize_sign(v: &mut [f64]) {
    let mut best = 0.0f64;
    let mut sign = 1.0;
    for x in v.iter() {
        if x.abs() > best {
            best = x.abs();
            sign = x.signum();
        }
    }
    if sign < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// The `m` smallest eigenpairs through Cholesky reduction of the mass matrix
/// and a dense symmetric eigensolve.
pub fn eigenpairs(gram: &DMatrix<f64>, mass: &DMatrix<f64>, m: usize, tol: f64) -> Result<EigenResult> {
    let n = gram.nrows();
    if gram.ncols() != n || mass.nrows() != n || mass.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: mass.nrows(),
        });
    }
    if m == 0 || m > n {
        return Err(Error::InvalidParameter(format!(
            "requested {m} eigenpairs from a problem of dimension {n}"
        )));
    }
    let chol = mass
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("mass matrix".into()))?;
    let l = chol.l();
    // C = L⁻¹ G L⁻ᵀ
    let y = l
        .solve_lower_triangular(gram)
        .ok_or_else(|| Error::NotPositiveDefinite("mass matrix".into()))?;
    let c = l
        .solve_lower_triangular(&y.transpose())
        .ok_or_else(|| Error::NotPositiveDefinite("mass matrix".into()))?;
    let c = 0.5 * (&c + c.transpose());
    let eig = SymmetricEigen::try_new(c, f64::EPSILON, 10_000).ok_or_else(|| Error::Convergence {
        what: "symmetric eigensolver".into(),
        iterations: 10_000,
        residual: f64::NAN,
        last: None,
    })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    if eig.eigenvalues[order[0]] <= 0.0 {
        return Err(Error::NotPositiveDefinite(format!(
            "Gram matrix has eigenvalue {:.3e}",
            eig.eigenvalues[order[0]]
        )));
    }
    let lt = l.transpose();
    let (gn, mn) = (gram.norm(), mass.norm());
    let mut values = Vec::with_capacity(m);
    let mut vectors = Vec::with_capacity(m);
    let mut residuals = Vec::with_capacity(m);
    for &k in order.iter().take(m) {
        let lambda = eig.eigenvalues[k];
        let yk = eig.eigenvectors.column(k).into_owned();
        let ek = lt
            .solve_upper_triangular(&yk)
            .ok_or_else(|| Error::NotPositiveDefinite("mass matrix".into()))?;
        let mut e: Vec<f64> = ek.as_slice().to_vec();
        normalize_sign(&mut e);
        let ev = DVector::from_column_slice(&e);
        let me = mass * &ev;
        let r = (gram * &ev - lambda * &me).norm() / ((gn + lambda * mn) * ev.norm());
        values.push(lambda);
        vectors.push(e);
        residuals.push(r);
    }
    let worst = residuals.iter().cloned().fold(0.0, f64::max);
    if worst > tol {
        return Err(Error::Convergence {
            what: "generalized eigenpairs".into(),
            iterations: 1,
            residual: worst,
            last: Some(residuals),
        });
    }
    Ok(EigenResult {
        values,
        vectors,
        residuals,
    })
}

/// Verdicts on simplicity of `λ₁`, the sign of `e₁`, sign changes of higher
/// eigenfunctions and the boundary quotient of `e₁`.
pub fn spectral_report(res: &EigenResult, space: &FeSpace, s: f64, context: &VerdictContext) -> Result<Vec<PropertyVerdict>> {
    if res.values.len() < 3 {
        return Err(Error::InvalidParameter("spectral report needs at least three eigenpairs".into()));
    }
    let l1 = res.values[0];
    let gap_tol = 1e-8 * l1;
    let mut out = vec![PropertyVerdict::above(
        "first eigenvalue is simple (λ₂ - λ₁ > gap_tol)",
        res.values[1] - l1,
        gap_tol,
        context,
    )];
    let e1 = &res.vectors[0];
    let min1 = e1.iter().cloned().fold(f64::INFINITY, f64::min);
    out.push(PropertyVerdict::above(
        "first eigenfunction is positive at every interior node",
        min1,
        0.0,
        context,
    ));
    for (k, e) in res.vectors.iter().enumerate().skip(1) {
        let amax = e.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let lo = e.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let measured = lo.abs().min(hi.abs()) * if lo < 0.0 && hi > 0.0 { 1.0 } else { -1.0 };
        out.push(PropertyVerdict::above(
            &format!("eigenfunction {} changes sign", k + 1),
            measured,
            1e-12 * amax,
            context,
        ));
    }
    let hopf = crate::diagnostics::hopf_quotient_min(space, e1, s);
    out.push(PropertyVerdict::above(
        "first eigenfunction stays above c δ^s (min e₁/δ^s > 0)",
        hopf,
        0.0,
        context,
    ));
    Ok(out)
}
