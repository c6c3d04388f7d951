//! Crosstalk-coefficient estimation and iterative BO-DPD identification by
//! indirect learning.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::array::{beam_output, simulate_subarrays, steering_vector, ArrayModel, BeamWeights, SimMode};
use crate::linalg::lstsq;
use crate::poly::{build_regressor, eval_basis, eval_poly, ls_identify_with, BasisSpec, LsOptions};
use crate::signal::nmse_db;
use crate::{Error, Result, C64};

/// Dominant-operation counters of a training run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCount {
    pub ls_calls: u64,
    /// `N (Q+1)^2` per LS fit: the size of the regressor Gram product.
    pub ls_madds: u64,
    /// Complex multiply-adds spent forming `c_k`.
    pub xtalk_madds: u64,
}

/// `((Q+1)^2, K^2 S)`: per-iteration, per-sample cost model of the training
/// loop (LS fit plus crosstalk refresh for all K subarrays).
pub fn training_cost(q: usize, k: usize, s: usize) -> (usize, usize) {
    ((q + 1) * (q + 1), k * k * s)
}

fn subarray_size<X>(x_all: &[X], weights: &BeamWeights) -> Result<usize> {
    let k = x_all.len();
    let n = weights.as_slice().len();
    if k == 0 || n % k != 0 {
        return Err(Error::Length {
            what: "beam weights per subarray",
            expected: k,
            got: n,
        });
    }
    Ok(n / k)
}

/// `c_k[n] = sum_i lambda_k[i] sum_l w_il x_i[n]`.
pub fn compute_c_k<X: AsRef<[C64]>>(x_all: &[X], weights: &BeamWeights, lambda_k: &[C64]) -> Result<Vec<C64>> {
    let mut ops = OpCount::default();
    compute_c_k_counted(x_all, weights, lambda_k, &mut ops)
}

pub fn compute_c_k_counted<X: AsRef<[C64]>>(
    x_all: &[X],
    weights: &BeamWeights,
    lambda_k: &[C64],
    ops: &mut OpCount,
) -> Result<Vec<C64>> {
    let s = subarray_size(x_all, weights)?;
    if lambda_k.len() != x_all.len() {
        return Err(Error::Length {
            what: "lambda_k",
            expected: x_all.len(),
            got: lambda_k.len(),
        });
    }
    let n = x_all[0].as_ref().len();
    let mut c = vec![C64::default(); n];
    for (i, xi) in x_all.iter().enumerate() {
        let xi = xi.as_ref();
        if xi.len() != n {
            return Err(Error::Length {
                what: "subarray signal length",
                expected: n,
                got: xi.len(),
            });
        }
        let wsum: C64 = weights.as_slice()[i * s..(i + 1) * s].iter().sum();
        let g = lambda_k[i] * wsum;
        for (cn, xn) in c.iter_mut().zip(xi) {
            *cn += g * xn;
        }
        ops.xtalk_madds += (n * (s + 1)) as u64;
    }
    Ok(c)
}

/// Regression terms of the beam output of subarray `k`:
/// `z ~ g0 + G1 lambda_k + G2 conj(lambda_k)`.
#[derive(Debug, Clone)]
pub struct GTerms {
    pub g0: Vec<C64>,
    pub g1: DMatrix<C64>,
    pub g2: DMatrix<C64>,
}

/// Builds `g0`, `G1`, `G2` from the PA coefficients held by `model` (the
/// estimated bank) and its rank-one crosstalk factor `alpha`.
pub fn assemble_g_terms<X: AsRef<[C64]>>(model: &ArrayModel, k: usize, angle: f64, x_all: &[X]) -> Result<GTerms> {
    let geom = &model.geometry;
    if k >= geom.k {
        return Err(Error::Config(format!("subarray {k} out of range (K={})", geom.k)));
    }
    if x_all.len() != geom.k {
        return Err(Error::Length {
            what: "subarray signals",
            expected: geom.k,
            got: x_all.len(),
        });
    }
    let h = steering_vector(geom, k, angle);
    let w = model.weights.as_slice();
    let alpha = &model.xtalk.alpha;
    let xk = x_all[k].as_ref();
    let n = xk.len();
    let one = C64::new(1.0, 0.0);
    let mut g0 = vec![C64::default(); n];
    let mut a1 = vec![C64::default(); n];
    let mut a2 = vec![C64::default(); n];
    for l in 0..geom.s {
        let j = geom.global(k, l);
        let pa = &model.pas[j];
        for (&t, &coef) in pa.spec.terms().iter().zip(&pa.coeffs) {
            let (acc, f) = match t.v {
                0 => (&mut g0, h[l] * coef),
                1 => (&mut a1, h[l] * alpha[l] * coef),
                _ => (&mut a2, h[l] * alpha[l].conj() * coef),
            };
            for (an, &xn) in acc.iter_mut().zip(xk) {
                *an += f * eval_basis(t, w[j] * xn, one);
            }
        }
    }
    // R[n]_i = sum_r w_ir x_i[n]
    let mut r = DMatrix::<C64>::zeros(n, geom.k);
    for (i, xi) in x_all.iter().enumerate() {
        let xi = xi.as_ref();
        if xi.len() != n {
            return Err(Error::Length {
                what: "subarray signal length",
                expected: n,
                got: xi.len(),
            });
        }
        let wsum: C64 = w[i * geom.s..(i + 1) * geom.s].iter().sum();
        for (rn, xn) in r.column_mut(i).iter_mut().zip(xi) {
            *rn = wsum * xn;
        }
    }
    let g1 = DMatrix::from_fn(n, geom.k, |m, i| a1[m] * r[(m, i)]);
    let g2 = DMatrix::from_fn(n, geom.k, |m, i| a2[m] * r[(m, i)].conj());
    Ok(GTerms { g0, g1, g2 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaEstimate {
    pub lambda_k: Vec<C64>,
    /// Residual norm of the stacked real system.
    pub residual: f64,
    pub cond: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateOptions {
    pub cond_cap: f64,
    pub strict: bool,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            cond_cap: 1e10,
            strict: false,
        }
    }
}

/// Solves the stacked 2N x 2K real system
/// `[Re(G1+G2) Im(G2-G1); Im(G1+G2) Re(G1-G2)] [Re l; Im l] = [Re(z-g0); Im(z-g0)]`.
pub fn estimate_lambda_from(g: &GTerms, z: &[C64], opts: &EstimateOptions) -> Result<LambdaEstimate> {
    let (n, k) = g.g1.shape();
    if z.len() != n {
        return Err(Error::Length {
            what: "measured beam output",
            expected: n,
            got: z.len(),
        });
    }
    let plus = &g.g1 + &g.g2;
    let minus = &g.g1 - &g.g2;
    let a = DMatrix::<f64>::from_fn(2 * n, 2 * k, |i, j| {
        let (m, top) = if i < n { (i, true) } else { (i - n, false) };
        match (top, j < k) {
            (true, true) => plus[(m, j)].re,
            (true, false) => -minus[(m, j - k)].im,
            (false, true) => plus[(m, j)].im,
            (false, false) => minus[(m, j - k)].re,
        }
    });
    let rhs = DMatrix::<f64>::from_fn(2 * n, 1, |i, _| {
        if i < n {
            (z[i] - g.g0[i]).re
        } else {
            (z[i - n] - g.g0[i - n]).im
        }
    });
    let sol = lstsq(&a, &rhs, 1.0 / opts.cond_cap)?;
    if opts.strict && !(sol.cond <= opts.cond_cap) {
        return Err(Error::RankDeficient { cond: sol.cond });
    }
    let residual = (&a * &sol.x - &rhs).norm();
    let lambda_k = (0..k).map(|i| C64::new(sol.x[(i, 0)], sol.x[(k + i, 0)])).collect();
    Ok(LambdaEstimate {
        lambda_k,
        residual,
        cond: sol.cond,
    })
}

/// Estimates `lambda_k` with every subarray transmitting `s_all`, measuring
/// the beam output of `truth` in `mode` and regressing with the coefficients
/// held by `est`.
pub fn estimate_lambda<X: AsRef<[C64]>>(
    truth: &ArrayModel,
    est: &ArrayModel,
    k: usize,
    angle: f64,
    s_all: &[X],
    mode: SimMode,
    opts: &EstimateOptions,
) -> Result<LambdaEstimate> {
    let sim = simulate_subarrays(truth, s_all, mode)?;
    let z = beam_output(&sim.y, &truth.geometry, k, angle);
    let g = assemble_g_terms(est, k, angle, s_all)?;
    estimate_lambda_from(&g, &z, opts)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Standard deviation of complex Gaussian noise added to the observed
    /// beam output; zero disables the observation-noise hook.
    pub noise_rms: f64,
    pub noise_seed: u64,
    pub ls: LsOptions,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 50,
            noise_rms: 0.0,
            noise_seed: 0,
            ls: LsOptions {
                cond_cap: 1e10,
                strict: false,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingResult {
    pub subarray: usize,
    pub spec: BasisSpec,
    pub phi_k: Vec<C64>,
    pub lambda_k: Vec<C64>,
    /// Crosstalk compensation signal matching the final `phi_k`.
    #[serde(skip)]
    pub c_k: Vec<C64>,
    /// Aggregate linear beam gain used to normalize the observation.
    pub g0: C64,
    pub iterations: usize,
    pub phi_trace: Vec<f64>,
    pub converged: bool,
    pub ops: OpCount,
}

impl TrainingResult {
    /// Predistorted signal `Psi(s, c_k) Phi_k`.
    pub fn predistort(&self, s: &[C64]) -> Result<Vec<C64>> {
        eval_poly(&self.spec, &self.phi_k, s, &self.c_k)
    }
}

fn rel_change(new: &[C64], old: &[C64]) -> f64 {
    let num: f64 = new.iter().zip(old).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
    let den: f64 = old.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    num / den
}

/// Indirect-learning BO-DPD identification of subarray `k` towards `phi0`.
///
/// Each iteration measures the beam output of `truth` (other subarrays
/// transmit `s_all[i]` unchanged), fits `Phi` so that
/// `Psi(z / G0, c_k) Phi ~ x_k`, regenerates `x_k = Psi(s_k, c_k) Phi` and
/// refreshes `c_k`. Stops when `||Phi_new - Phi|| / ||Phi|| < tol`.
pub fn train_bo_dpd<X: AsRef<[C64]>>(
    truth: &ArrayModel,
    est: &ArrayModel,
    k: usize,
    phi0: f64,
    s_all: &[X],
    lambda_k: &[C64],
    spec: &BasisSpec,
    opts: &TrainOptions,
) -> Result<TrainingResult> {
    let geom = &truth.geometry;
    if k >= geom.k {
        return Err(Error::Config(format!("subarray {k} out of range (K={})", geom.k)));
    }
    let g0 = est.linear_beam_gain(k, phi0);
    if g0.norm() == 0.0 {
        return Err(Error::Config("linear beam gain towards phi0 is zero".into()));
    }
    let noise = if opts.noise_rms > 0.0 {
        Some((
            Normal::new(0.0, opts.noise_rms / 2f64.sqrt()).map_err(|e| Error::Config(e.to_string()))?,
            ChaCha8Rng::seed_from_u64(opts.noise_seed),
        ))
    } else {
        None
    };
    let mut noise = noise;
    let sk: Vec<C64> = s_all[k].as_ref().to_vec();
    let mut x_all: Vec<Vec<C64>> = s_all.iter().map(|x| x.as_ref().to_vec()).collect();
    let mut ops = OpCount::default();
    let mut c_k = compute_c_k_counted(&x_all, &truth.weights, lambda_k, &mut ops)?;
    let mut phi = vec![C64::default(); spec.len()];
    phi[0] = C64::new(1.0, 0.0);
    let mut trace = Vec::new();
    let mut rising = 0;
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let sim = simulate_subarrays(truth, &x_all, SimMode::FixedPointExact)?;
        let mut z = beam_output(&sim.y, geom, k, phi0);
        if let Some((dist, rng)) = noise.as_mut() {
            for zn in z.iter_mut() {
                *zn += C64::new(dist.sample(rng), dist.sample(rng));
            }
        }
        let zn: Vec<C64> = z.iter().map(|v| v / g0).collect();
        let fit = ls_identify_with(spec, &zn, &c_k, &x_all[k], &opts.ls)?;
        ops.ls_calls += 1;
        ops.ls_madds += (sk.len() * spec.len() * spec.len()) as u64;
        let change = rel_change(&fit.coeffs, &phi);
        if !change.is_finite() {
            trace.push(change);
            return Err(Error::Diverged { trace });
        }
        if let Some(&prev) = trace.last() {
            rising = if change > prev { rising + 1 } else { 0 };
        }
        trace.push(change);
        phi = fit.coeffs;
        x_all[k] = eval_poly(spec, &phi, &sk, &c_k)?;
        c_k = compute_c_k_counted(&x_all, &truth.weights, lambda_k, &mut ops)?;
        if change < opts.tol {
            converged = true;
            break;
        }
        if rising >= 5 {
            return Err(Error::Diverged { trace });
        }
    }
    Ok(TrainingResult {
        subarray: k,
        spec: spec.clone(),
        phi_k: phi,
        lambda_k: lambda_k.to_vec(),
        c_k,
        g0,
        iterations: trace.len(),
        phi_trace: trace,
        converged,
        ops,
    })
}

/// Desired linear beam signal `G0 s_k` versus the measured beam output.
pub fn beam_nmse_db(z: &[C64], g0: C64, sk: &[C64]) -> Result<f64> {
    let reference: Vec<C64> = sk.iter().map(|v| g0 * v).collect();
    nmse_db(&reference, z)
}

/// Best complex scalar `g` minimizing `||z - g s||`.
pub fn best_scalar_gain(z: &[C64], s: &[C64]) -> C64 {
    let num: C64 = s.iter().zip(z).map(|(a, b)| a.conj() * b).sum();
    let den: f64 = s.iter().map(|a| a.norm_sqr()).sum();
    num / den
}

/// Regressor helper used by the post-inverse fixed-point check.
pub fn refit_phi(spec: &BasisSpec, z: &[C64], g0: C64, c_k: &[C64], x_k: &[C64]) -> Result<Vec<C64>> {
    let zn: Vec<C64> = z.iter().map(|v| v / g0).collect();
    let a = build_regressor(spec, &zn, c_k)?;
    let b = DMatrix::from_column_slice(x_k.len(), 1, x_k);
    Ok(lstsq(&a, &b, 1e-10)?.x.column(0).iter().cloned().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::{ArrayGeometry, BeamWeights};
    use crate::poly::PaModel;

    #[test]
    fn cost_model_examples() {
        assert_eq!(training_cost(6, 2, 16), (49, 64));
        assert_eq!(training_cost(0, 3, 5), (1, 45));
    }

    #[test]
    fn c_k_trivial_cases() {
        let g = ArrayGeometry::new(1, 1, 0.5).unwrap();
        let w = BeamWeights::steered(&g, 0.0);
        let x = vec![C64::new(0.3, -0.2), C64::new(1.0, 0.5)];
        assert_eq!(compute_c_k(&[x.clone()], &w, &[C64::new(1.0, 0.0)]).unwrap(), x);
        let z = compute_c_k(&[x.clone()], &w, &[C64::default()]).unwrap();
        assert!(z.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn linear_pas_give_closed_form_g0() {
        let g = ArrayGeometry::new(1, 3, 0.5).unwrap();
        let gains = [C64::new(1.0, 0.1), C64::new(0.9, 0.0), C64::new(1.1, -0.2)];
        let pas = gains.iter().map(|&a| PaModel::linear(a)).collect();
        let m = ArrayModel::new(g, BeamWeights::steered(&g, 0.2), pas, DMatrix::zeros(3, 3)).unwrap();
        let x = vec![C64::new(0.5, 0.5), C64::new(-0.1, 0.3)];
        let t = assemble_g_terms(&m, 0, 0.6, &[x.clone()]).unwrap();
        let h = steering_vector(&g, 0, 0.6);
        let w = m.weights.as_slice();
        let lin: C64 = (0..3).map(|l| h[l] * w[l] * gains[l]).sum();
        for n in 0..2 {
            assert!((t.g0[n] - lin * x[n]).norm() < 1e-14);
        }
        assert_eq!(t.g1.norm(), 0.0);
        assert_eq!(t.g2.norm(), 0.0);
    }
}
