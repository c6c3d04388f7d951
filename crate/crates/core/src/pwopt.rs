//! Quadratic minimization of the nonlinear radiation over post-weighting
//! coefficients, subject to preserving the first-order beam in the desired
//! direction, solved in closed form from the KKT system.

use std::collections::HashMap;

use nalgebra::{Cholesky, DMatrix, DVector, SVD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{hermitian_eigenvalues, lstsq, null_space_basis};
use crate::postweight::RadiationOperator;
use crate::{Error, Result, C64};

/// Condition number above which an unregularized solve is refused.
pub const COND_CAP: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintMode {
    /// One scalar constraint on the time-averaged row of `T` at phi0.
    #[default]
    TimeAveraged,
    /// Every time sample of `T` at phi0, compressed to its row space.
    Stacked,
}

/// `gamma^H H gamma + 2 Re(gamma^H b) + c0` subject to `t0 gamma = t0p`.
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    pub h: DMatrix<C64>,
    pub b: DVector<C64>,
    pub c0: f64,
    /// Constraint rows (one row when time-averaged).
    pub t0: DMatrix<C64>,
    pub t0p: DVector<C64>,
}

impl QuadraticProblem {
    pub fn n(&self) -> usize {
        self.h.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.h.ncols() != n || self.b.len() != n || self.t0.ncols() != n || self.t0.nrows() != self.t0p.len() {
            return Err(Error::Config("quadratic problem dimensions are inconsistent".into()));
        }
        Ok(())
    }

    /// Largest deviation from Hermitian symmetry relative to `||H||`.
    pub fn hermitian_defect(&self) -> f64 {
        let d = (&self.h - self.h.adjoint()).norm();
        let s = self.h.norm();
        if s == 0.0 {
            d
        } else {
            d / s
        }
    }
}

/// Sums the per-angle quadratic forms with expectation taken as the
/// sample mean. Operators sharing a basis reuse its Gram matrix, so the
/// cost is independent of the sample count once the Gram is formed.
pub fn assemble_problem(
    operators: &[RadiationOperator],
    op0: &RadiationOperator,
    mode: ConstraintMode,
) -> Result<QuadraticProblem> {
    let first = operators
        .first()
        .ok_or_else(|| Error::Config("assemble_problem needs at least one angle".into()))?;
    let n = first.n_gamma();
    let ns = first.n_samples();
    for op in operators.iter().chain(std::iter::once(op0)) {
        if op.n_gamma() != n || op.n_samples() != ns || op.z_res.len() != ns {
            return Err(Error::Config(format!(
                "operator at angle {} has shape {}x{}, expected {ns}x{n}",
                op.angle,
                op.n_samples(),
                op.n_gamma()
            )));
        }
    }
    let inv_n = 1.0 / ns as f64;
    let mut grams: HashMap<*const DMatrix<C64>, DMatrix<C64>> = HashMap::new();
    let mut h = DMatrix::<C64>::zeros(n, n);
    let mut b = DVector::<C64>::zeros(n);
    let mut c0 = 0.0;
    for op in operators {
        let key = std::sync::Arc::as_ptr(&op.basis);
        let g = grams
            .entry(key)
            .or_insert_with(|| op.basis.adjoint() * &*op.basis * C64::new(inv_n, 0.0));
        h += op.e.adjoint() * &*g * &op.e;
        let z = DVector::from_column_slice(&op.z_res);
        let bz = op.basis.adjoint() * z * C64::new(inv_n, 0.0);
        b += op.e.adjoint() * bz;
        c0 += op.z_res.iter().map(|v| v.norm_sqr()).sum::<f64>() * inv_n;
    }
    let h = (&h + h.adjoint()) * C64::new(0.5, 0.0);
    let (t0, t0p) = constraint_rows(op0, mode)?;
    Ok(QuadraticProblem { h, b, c0, t0, t0p })
}

fn constraint_rows(op0: &RadiationOperator, mode: ConstraintMode) -> Result<(DMatrix<C64>, DVector<C64>)> {
    let n = op0.n_gamma();
    let ones = DVector::from_element(n, C64::new(1.0, 0.0));
    let t0 = match mode {
        ConstraintMode::TimeAveraged => {
            let ns = op0.n_samples() as f64;
            let mean = DMatrix::from_fn(1, op0.basis.ncols(), |_, q| op0.basis.column(q).sum() / ns);
            mean * &op0.e
        }
        ConstraintMode::Stacked => {
            // T0 = Qb R E; T0 g = T0 1  <=>  (R E) g = (R E) 1, then keep the
            // numerically nonzero singular directions.
            let basis = (*op0.basis).clone();
            let r = if basis.nrows() > basis.ncols() {
                basis.qr().r()
            } else {
                basis
            };
            let m = r * &op0.e * C64::new(1.0 / (op0.n_samples() as f64).sqrt(), 0.0);
            let svd = SVD::new(m, false, true);
            let vt = svd.v_t.expect("v_t requested");
            let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
            let keep: Vec<usize> = (0..svd.singular_values.len())
                .filter(|&i| svd.singular_values[i] > 1e-10 * smax)
                .collect();
            DMatrix::from_fn(keep.len(), n, |i, j| vt[(keep[i], j)] * svd.singular_values[keep[i]])
        }
    };
    let t0p = &t0 * ones;
    Ok((t0, t0p))
}

pub fn evaluate_objective(p: &QuadraticProblem, g: &[C64]) -> f64 {
    let g = DVector::from_column_slice(g);
    let quad = (g.adjoint() * &p.h * &g)[(0, 0)].re;
    let lin = 2.0 * (g.adjoint() * &p.b)[(0, 0)].re;
    quad + lin + p.c0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktOptions {
    pub ridge: f64,
    /// Add `1e-10 trace(H)/n` when `H + ridge I` is numerically singular.
    pub auto_ridge: bool,
}

impl Default for KktOptions {
    fn default() -> Self {
        Self {
            ridge: 0.0,
            auto_ridge: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptResult {
    pub gamma_hat: Vec<C64>,
    /// Multiplier(s) in the convention `H gamma + b = t0^H eta`.
    pub eta_hat: Vec<C64>,
    pub objective_at_opt: f64,
    pub constraint_residual: f64,
    /// Relative residual of the stationarity condition.
    pub stationarity_residual: f64,
    pub ridge_used: f64,
    pub condition: f64,
}

fn condition_of(h: &DMatrix<C64>) -> f64 {
    let ev = hermitian_eigenvalues(h);
    let (lo, hi) = (ev[0], ev[ev.len() - 1]);
    if lo <= 0.0 || hi <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

fn solve_spd(h: &DMatrix<C64>, rhs: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    if let Some(ch) = Cholesky::new(h.clone()) {
        return Ok(ch.solve(rhs));
    }
    h.clone()
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::Singular("H + ridge I is singular".into()))
}

/// Closed-form KKT solution
/// `gamma = H'^-1 (t0^H eta - b)`, `eta = (t0 H'^-1 t0^H)^-1 (t0p + t0 H'^-1 b)`
/// with `H' = H + ridge I`.
pub fn solve_kkt(p: &QuadraticProblem, opts: &KktOptions) -> Result<OptResult> {
    p.validate()?;
    let n = p.n();
    if n == 0 {
        return Err(Error::Config("empty quadratic problem".into()));
    }
    if p.t0.norm() == 0.0 {
        return Err(Error::DegenerateConstraint);
    }
    let mut ridge = opts.ridge;
    let with_ridge = |r: f64| &p.h + DMatrix::<C64>::identity(n, n) * C64::new(r, 0.0);
    let mut hp = with_ridge(ridge);
    let mut cond = condition_of(&hp);
    if !(cond <= COND_CAP) {
        if opts.auto_ridge {
            let tr = p.h.trace().re / n as f64;
            ridge += 1e-10 * if tr > 0.0 { tr } else { 1.0 };
            log::warn!("H is numerically singular (condition {cond:.3e}); applying ridge {ridge:.3e}");
            hp = with_ridge(ridge);
            cond = condition_of(&hp);
        } else {
            return Err(Error::IllConditioned { cond });
        }
    }
    let m = p.t0.nrows();
    let mut rhs = DMatrix::<C64>::zeros(n, m + 1);
    rhs.columns_mut(0, m).copy_from(&p.t0.adjoint());
    rhs.column_mut(m).copy_from(&p.b);
    let x = solve_spd(&hp, &rhs)?;
    let xt = x.columns(0, m).into_owned();
    let xb = x.column(m).into_owned();
    let schur = &p.t0 * &xt;
    let scale = p.t0.norm().powi(2) / hp.norm();
    if !(schur.norm() > 1e-14 * scale) {
        return Err(Error::DegenerateConstraint);
    }
    let eta = schur
        .lu()
        .solve(&(&p.t0p + &p.t0 * &xb))
        .ok_or(Error::DegenerateConstraint)?;
    let gamma = &xt * &eta - &xb;

    let station = &hp * &gamma + &p.b - p.t0.adjoint() * &eta;
    let denom = hp.norm() * gamma.norm() + p.b.norm() + p.t0.norm() * eta.norm();
    let stationarity_residual = if denom > 0.0 { station.norm() / denom } else { station.norm() };
    let g: Vec<C64> = gamma.iter().cloned().collect();
    let constraint_residual = (&p.t0 * &gamma - &p.t0p).norm();
    Ok(OptResult {
        objective_at_opt: evaluate_objective(p, &g),
        gamma_hat: g,
        eta_hat: eta.iter().cloned().collect(),
        constraint_residual,
        stationarity_residual,
        ridge_used: ridge,
        condition: cond,
    })
}

/// Independent solve by constraint elimination: `gamma = gamma_p + Z u`
/// with `gamma_p` the minimum-norm feasible point and `Z` an orthonormal
/// null-space basis of `t0`, then a dense least-squares solve for `u`.
pub fn oracle_solve(p: &QuadraticProblem, ridge: f64) -> Result<Vec<C64>> {
    p.validate()?;
    let n = p.n();
    let hp = &p.h + DMatrix::<C64>::identity(n, n) * C64::new(ridge, 0.0);
    let gram = &p.t0 * p.t0.adjoint();
    let y = gram
        .lu()
        .solve(&p.t0p)
        .ok_or(Error::DegenerateConstraint)?;
    let gp = p.t0.adjoint() * y;
    let z = null_space_basis(&p.t0);
    if z.ncols() == 0 {
        return Ok(gp.iter().cloned().collect());
    }
    let a = z.adjoint() * &hp * &z;
    let rhs = -(z.adjoint() * (&hp * &gp + &p.b));
    let u = lstsq(&a, &DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice()), 1e-14)?.x;
    let g = gp + z * u.column(0);
    Ok(g.iter().cloned().collect())
}

/// Magnitude of the terms entering the objective at `g`; used to scale
/// round-off tolerances.
pub fn objective_scale(p: &QuadraticProblem, g: &[C64]) -> f64 {
    let gn = g.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt() + 1.0;
    p.h.norm() * gn * gn + 2.0 * p.b.norm() * gn + p.c0.abs()
}

/// Objective change along `samples` random feasible directions
/// `g + Z delta`, `||delta|| <= 1`.
pub fn feasible_perturbation_gaps(p: &QuadraticProblem, g: &[C64], samples: usize, seed: u64) -> Vec<f64> {
    let z = null_space_basis(&p.t0);
    let base = evaluate_objective(p, g);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = z.ncols();
    (0..samples)
        .map(|_| {
            if d == 0 {
                return 0.0;
            }
            let mut delta = DVector::from_fn(d, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            let norm = delta.norm();
            if norm > 0.0 {
                delta *= C64::new(rng.random_range(0.0..1.0) / norm, 0.0);
            }
            let step = &z * delta;
            let moved: Vec<C64> = g.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            evaluate_objective(p, &moved) - base
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn identity_problem(t0: &[C64], t0p: C64) -> QuadraticProblem {
        let n = t0.len();
        QuadraticProblem {
            h: DMatrix::identity(n, n),
            b: DVector::zeros(n),
            c0: 0.0,
            t0: DMatrix::from_row_slice(1, n, t0),
            t0p: DVector::from_element(1, t0p),
        }
    }

    #[test]
    fn minimum_norm_point_on_constraint() {
        let r = solve_kkt(&identity_problem(&[c(1.0), c(0.0)], c(1.0)), &KktOptions::default()).unwrap();
        assert!((r.gamma_hat[0] - c(1.0)).norm() < 1e-14 && r.gamma_hat[1].norm() < 1e-14);
        let r = solve_kkt(&identity_problem(&[c(1.0), c(1.0)], c(2.0)), &KktOptions::default()).unwrap();
        assert!(r.gamma_hat.iter().all(|g| (g - c(1.0)).norm() < 1e-14));
    }

    #[test]
    fn fully_determined_scalar() {
        let p = identity_problem(&[c(1.0)], c(5.0));
        let r = solve_kkt(&p, &KktOptions::default()).unwrap();
        assert!((r.gamma_hat[0] - c(5.0)).norm() < 1e-14);
        let o = oracle_solve(&p, 0.0).unwrap();
        assert!((o[0] - c(5.0)).norm() < 1e-14);
    }

    #[test]
    fn objective_examples() {
        let p = identity_problem(&[c(1.0), c(0.0)], c(1.0));
        assert_eq!(evaluate_objective(&p, &[c(0.0), c(0.0)]), 0.0);
        assert!((evaluate_objective(&p, &[c(3.0), c(4.0)]) - 25.0).abs() < 1e-12);
    }

    #[test]
    fn singular_h_needs_ridge() {
        let mut p = identity_problem(&[c(1.0), c(1.0)], c(1.0));
        p.h[(1, 1)] = c(0.0);
        assert!(matches!(solve_kkt(&p, &KktOptions::default()), Err(Error::IllConditioned { .. })));
        let r = solve_kkt(&p, &KktOptions { ridge: 0.0, auto_ridge: true }).unwrap();
        assert!(r.ridge_used > 0.0);
        assert!(r.constraint_residual < 1e-9);
        let r = solve_kkt(&p, &KktOptions { ridge: 1e-3, auto_ridge: false }).unwrap();
        assert_eq!(r.ridge_used, 1e-3);
    }

    #[test]
    fn zero_constraint_is_degenerate() {
        let p = identity_problem(&[c(0.0), c(0.0)], c(1.0));
        assert!(matches!(solve_kkt(&p, &KktOptions::default()), Err(Error::DegenerateConstraint)));
    }
}
