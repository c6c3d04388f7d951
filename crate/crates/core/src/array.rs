//! Subarray geometry, the PA bank, the crosstalk network and the ground-truth
//! forward simulation of K subarrays of S PAs on a uniform linear array.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SVD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::spectral_radius;
use crate::poly::{BasisSpec, BasisTerm, PaModel};
use crate::{Error, Result, C64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub k: usize,
    pub s: usize,
    /// Element spacing in wavelengths.
    pub spacing: f64,
}

impl ArrayGeometry {
    pub fn new(k: usize, s: usize, spacing: f64) -> Result<Self> {
        if k == 0 || s == 0 {
            return Err(Error::Config(format!("array needs K >= 1 and S >= 1, got K={k}, S={s}")));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::Config(format!("element spacing must be positive, got {spacing}")));
        }
        Ok(Self { k, s, spacing })
    }

    pub fn n_elements(&self) -> usize {
        self.k * self.s
    }

    /// Position of PA `l` of subarray `k` along the full line (subarrays are
    /// contiguous).
    pub fn global(&self, k: usize, l: usize) -> usize {
        k * self.s + l
    }
}

/// Steering vector of subarray `k`: `exp(i 2 pi d g sin(angle))` with `g` the
/// global element index.
pub fn steering_vector(geom: &ArrayGeometry, k: usize, angle: f64) -> Vec<C64> {
    let step = 2.0 * PI * geom.spacing * angle.sin();
    (0..geom.s)
        .map(|l| C64::from_polar(1.0, step * geom.global(k, l) as f64))
        .collect()
}

/// Steering vector over all K*S elements.
pub fn steering_full(geom: &ArrayGeometry, angle: f64) -> Vec<C64> {
    (0..geom.k).flat_map(|k| steering_vector(geom, k, angle)).collect()
}

/// Unit-modulus analog beamforming weights, grouped per subarray.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamWeights {
    w: Vec<C64>,
}

impl BeamWeights {
    pub fn new(w: Vec<C64>) -> Result<Self> {
        if let Some(i) = w.iter().position(|z| (z.norm() - 1.0).abs() > 1e-12) {
            return Err(Error::Config(format!("beam weight {i} is not unit modulus")));
        }
        Ok(Self { w })
    }

    /// Conjugate steering towards `phi0`, so the beam adds coherently there.
    pub fn steered(geom: &ArrayGeometry, phi0: f64) -> Self {
        Self {
            w: steering_full(geom, phi0).into_iter().map(|z| z.conj()).collect(),
        }
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.w
    }

    pub fn subarray(&self, geom: &ArrayGeometry, k: usize) -> &[C64] {
        &self.w[k * geom.s..(k + 1) * geom.s]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decay {
    InverseSquare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseRule {
    /// `exp(-i pi d)` for elements `d` apart.
    Alternating,
    /// Real positive coupling.
    Real,
    /// Uniform random phase per element pair, symmetric in the pair.
    Random { seed: u64 },
}

/// Coupling matrix between all K*S elements: magnitude
/// `10^(adjacent_db/20) / d^2`, zero diagonal. `None` disables coupling.
pub fn build_crosstalk(
    geom: &ArrayGeometry,
    adjacent_db: Option<f64>,
    decay: Decay,
    phase_rule: PhaseRule,
) -> Result<DMatrix<C64>> {
    let n = geom.n_elements();
    let Some(db) = adjacent_db else {
        return Ok(DMatrix::zeros(n, n));
    };
    if !(db.is_finite() && db < 0.0) {
        return Err(Error::Config(format!("adjacent coupling must be a negative dB value, got {db}")));
    }
    let amp = 10f64.powf(db / 20.0);
    let mut rng = match phase_rule {
        PhaseRule::Random { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        _ => None,
    };
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let d = (j - i) as f64;
            let mag = match decay {
                Decay::InverseSquare => amp / (d * d),
            };
            let phase = match phase_rule {
                PhaseRule::Alternating => -PI * d,
                PhaseRule::Real => 0.0,
                PhaseRule::Random { .. } => rng.as_mut().expect("seeded").random_range(-PI..PI),
            };
            let z = C64::from_polar(mag, phase);
            m[(i, j)] = z;
            m[(j, i)] = z;
        }
    }
    Ok(m)
}

/// Best rank-one fit `Lambda[(k,l),(i,r)] ~ alpha_l * lambda[k,i]` of a K*S
/// square coupling matrix. The fit is independent of `r`, so it reduces to
/// the dominant singular pair of the S x K^2 matrix of row means over `r`.
/// `alpha` is scaled so its largest-modulus entry is exactly one.
pub fn rank_one_factorization(m: &DMatrix<C64>, k: usize, s: usize) -> (Vec<C64>, DMatrix<C64>) {
    let mut avg = DMatrix::<C64>::zeros(s, k * k);
    for kk in 0..k {
        for l in 0..s {
            for i in 0..k {
                let mut acc = C64::default();
                for r in 0..s {
                    acc += m[(kk * s + l, i * s + r)];
                }
                avg[(l, kk * k + i)] = acc / s as f64;
            }
        }
    }
    if avg.norm() == 0.0 {
        return (vec![C64::default(); s], DMatrix::zeros(k, k));
    }
    let svd = SVD::new(avg.clone(), true, false);
    let j = svd
        .singular_values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(j, _)| j)
        .expect("nonempty");
    let u = svd.u.expect("u requested").column(j).into_owned();
    let pivot = u
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
        .map(|(i, _)| i)
        .expect("nonempty");
    let p = u[pivot];
    let mut alpha: Vec<C64> = u.iter().map(|z| z / p).collect();
    alpha[pivot] = C64::new(1.0, 0.0);
    let aa: f64 = alpha.iter().map(|z| z.norm_sqr()).sum();
    let lam = DMatrix::from_fn(k, k, |kk, i| {
        let mut acc = C64::default();
        for (l, a) in alpha.iter().enumerate() {
            acc += a.conj() * avg[(l, kk * k + i)];
        }
        acc / aa
    });
    (alpha, lam)
}

/// Coupling network with its linearized feedback form
/// `c = A0 u + A1 c`, `Lambda = (I - A1)^-1 A0`.
#[derive(Debug, Clone)]
pub struct CrosstalkModel {
    pub lambda_prime: DMatrix<C64>,
    pub a0: DMatrix<C64>,
    pub a1: DMatrix<C64>,
    pub lambda_eff: DMatrix<C64>,
    pub alpha: Vec<C64>,
    pub lambda_sub: DMatrix<C64>,
    pub rho_a1: f64,
}

impl CrosstalkModel {
    pub fn derive(geom: &ArrayGeometry, lambda_prime: DMatrix<C64>, pas: &[PaModel]) -> Result<Self> {
        let n = geom.n_elements();
        if lambda_prime.shape() != (n, n) {
            return Err(Error::Config(format!(
                "coupling matrix must be {n}x{n}, got {}x{}",
                lambda_prime.nrows(),
                lambda_prime.ncols()
            )));
        }
        if pas.len() != n {
            return Err(Error::Length {
                what: "PA bank",
                expected: n,
                got: pas.len(),
            });
        }
        if let Some(i) = (0..n).find(|&i| lambda_prime[(i, i)] != C64::default()) {
            return Err(Error::Config(format!("coupling matrix has self-coupling at element {i}")));
        }
        let lead0: Vec<C64> = pas.iter().map(|p| p.coeff(BasisTerm::LINEAR)).collect();
        let lead1: Vec<C64> = pas.iter().map(|p| p.coeff(BasisTerm { p: 0, v: 1 })).collect();
        let a0 = DMatrix::from_fn(n, n, |i, j| lambda_prime[(i, j)] * lead0[j]);
        let a1 = DMatrix::from_fn(n, n, |i, j| lambda_prime[(i, j)] * lead1[j]);
        let rho_a1 = spectral_radius(&a1);
        if rho_a1 >= 1.0 {
            return Err(Error::UnstableCrosstalk(rho_a1));
        }
        let lambda_eff = (DMatrix::identity(n, n) - &a1)
            .lu()
            .solve(&a0)
            .ok_or_else(|| Error::Singular("I - A1 is singular".into()))?;
        let (alpha, lambda_sub) = rank_one_factorization(&lambda_eff, geom.k, geom.s);
        Ok(Self {
            lambda_prime,
            a0,
            a1,
            lambda_eff,
            alpha,
            lambda_sub,
            rho_a1,
        })
    }
}

/// Nominal coefficients of the synthetic PA bank, aligned with
/// [`BasisSpec::default_dpd`]. The `(1,2)` coefficient has no nominal value
/// and is left at zero.
pub fn nominal_pa_coeffs() -> Vec<C64> {
    vec![
        C64::new(1.0, 0.0),
        C64::new(-0.08, 0.02),
        C64::new(-0.015, 0.0),
        C64::new(0.0, 0.002),
        C64::new(0.05, 0.0),
        C64::new(0.01, 0.0),
        C64::new(0.0, 0.0),
    ]
}

/// `n` PAs whose coefficients are the nominal set with real and imaginary
/// parts independently scaled by `1 + delta`, `delta ~ U(-spread, spread)`.
pub fn synthetic_pa_bank(n: usize, spread: f64, seed: u64) -> Result<Vec<PaModel>> {
    let spec = BasisSpec::default_dpd();
    let nominal = nominal_pa_coeffs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let coeffs = nominal
                .iter()
                .map(|z| {
                    let (d1, d2) = if spread > 0.0 {
                        (rng.random_range(-spread..spread), rng.random_range(-spread..spread))
                    } else {
                        (0.0, 0.0)
                    };
                    C64::new(z.re * (1.0 + d1), z.im * (1.0 + d2))
                })
                .collect();
            PaModel::new(spec.clone(), coeffs)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ArrayModel {
    pub geometry: ArrayGeometry,
    pub weights: BeamWeights,
    pub pas: Vec<PaModel>,
    pub xtalk: CrosstalkModel,
}

impl ArrayModel {
    pub fn new(
        geometry: ArrayGeometry,
        weights: BeamWeights,
        pas: Vec<PaModel>,
        lambda_prime: DMatrix<C64>,
    ) -> Result<Self> {
        if weights.as_slice().len() != geometry.n_elements() {
            return Err(Error::Length {
                what: "beam weights",
                expected: geometry.n_elements(),
                got: weights.as_slice().len(),
            });
        }
        let xtalk = CrosstalkModel::derive(&geometry, lambda_prime, &pas)?;
        Ok(Self {
            geometry,
            weights,
            pas,
            xtalk,
        })
    }

    /// Same array with a different PA bank (e.g. identified estimates).
    pub fn with_pas(&self, pas: Vec<PaModel>) -> Result<Self> {
        Self::new(
            self.geometry,
            self.weights.clone(),
            pas,
            self.xtalk.lambda_prime.clone(),
        )
    }

    /// Aggregate linear gain of subarray `k` towards `angle`:
    /// `sum_l h_kl w_kl phi_kl0`.
    pub fn linear_beam_gain(&self, k: usize, angle: f64) -> C64 {
        let h = steering_vector(&self.geometry, k, angle);
        let w = self.weights.subarray(&self.geometry, k);
        (0..self.geometry.s)
            .map(|l| h[l] * w[l] * self.pas[self.geometry.global(k, l)].coeffs[0])
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    /// Crosstalk from the linearized network only.
    Linearized,
    /// Crosstalk iterated to the fixed point `c = Lambda' Y(c)`.
    FixedPointExact,
}

pub const FIXED_POINT_TOL: f64 = 1e-10;
pub const FIXED_POINT_MAX_ITER: usize = 100;

/// PA outputs and crosstalk, one column per PA (N x K*S).
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub y: DMatrix<C64>,
    pub c: DMatrix<C64>,
    /// Fixed-point updates performed (0 in linearized mode).
    pub iterations: usize,
    /// Last `max |c_new - c|`.
    pub residual: f64,
}

/// Per-PA drive matrix (before beam weighting) with every PA of subarray
/// `k` fed `x[k]`.
pub fn subarray_drives<X: AsRef<[C64]>>(geom: &ArrayGeometry, x: &[X]) -> Result<DMatrix<C64>> {
    if x.len() != geom.k {
        return Err(Error::Length {
            what: "subarray signals",
            expected: geom.k,
            got: x.len(),
        });
    }
    let n = x[0].as_ref().len();
    if let Some(bad) = x.iter().find(|b| b.as_ref().len() != n) {
        return Err(Error::Length {
            what: "subarray signal length",
            expected: n,
            got: bad.as_ref().len(),
        });
    }
    let mut d = DMatrix::zeros(n, geom.n_elements());
    for (k, xk) in x.iter().enumerate() {
        for l in 0..geom.s {
            d.column_mut(geom.global(k, l)).copy_from_slice(xk.as_ref());
        }
    }
    Ok(d)
}

fn weighted(model: &ArrayModel, drives: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    let n = model.geometry.n_elements();
    if drives.ncols() != n {
        return Err(Error::Length {
            what: "per-PA drives",
            expected: n,
            got: drives.ncols(),
        });
    }
    let mut u = drives.clone();
    for (j, w) in model.weights.as_slice().iter().enumerate() {
        u.column_mut(j).iter_mut().for_each(|z| *z *= *w);
    }
    Ok(u)
}

fn pa_outputs(model: &ArrayModel, u: &DMatrix<C64>, c: &DMatrix<C64>) -> DMatrix<C64> {
    let mut y = DMatrix::zeros(u.nrows(), u.ncols());
    for (j, pa) in model.pas.iter().enumerate() {
        let (uj, cj) = (u.column(j), c.column(j));
        for (yn, (un, cn)) in y.column_mut(j).iter_mut().zip(uj.iter().zip(cj.iter())) {
            *yn = pa.output(*un, *cn);
        }
    }
    y
}

/// `c = Lambda W_D x` for per-PA drives (columns, before weighting).
pub fn linearized_crosstalk(model: &ArrayModel, drives: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    let u = weighted(model, drives)?;
    Ok(u * model.xtalk.lambda_eff.transpose())
}

/// Linearized crosstalk for subarray inputs `x` (one block per subarray).
pub fn solve_crosstalk_linearized<X: AsRef<[C64]>>(model: &ArrayModel, x: &[X]) -> Result<DMatrix<C64>> {
    linearized_crosstalk(model, &subarray_drives(&model.geometry, x)?)
}

/// `max |c - (A0 u + A1 c)| / max |c|` for weighted drives `u`.
pub fn linearization_residual(model: &ArrayModel, drives: &DMatrix<C64>, c: &DMatrix<C64>) -> Result<f64> {
    let u = weighted(model, drives)?;
    let rhs = u * model.xtalk.a0.transpose() + c * model.xtalk.a1.transpose();
    let num = (c - rhs).iter().map(|z| z.norm()).fold(0.0, f64::max);
    let den = c.iter().map(|z| z.norm()).fold(0.0, f64::max);
    Ok(if den == 0.0 { num } else { num / den })
}

/// Forward simulation for arbitrary per-PA drives (N x K*S, before beam
/// weighting).
pub fn simulate_drives(model: &ArrayModel, drives: &DMatrix<C64>, mode: SimMode) -> Result<SimOutput> {
    let u = weighted(model, drives)?;
    let mut c = &u * model.xtalk.lambda_eff.transpose();
    if mode == SimMode::Linearized {
        let y = pa_outputs(model, &u, &c);
        return Ok(SimOutput {
            y,
            c,
            iterations: 0,
            residual: 0.0,
        });
    }
    let lt = model.xtalk.lambda_prime.transpose();
    let mut residual = f64::INFINITY;
    for it in 1..=FIXED_POINT_MAX_ITER {
        let y = pa_outputs(model, &u, &c);
        let next = y * &lt;
        residual = (&next - &c).iter().map(|z| z.norm()).fold(0.0, f64::max);
        c = next;
        if !residual.is_finite() {
            break;
        }
        if residual < FIXED_POINT_TOL {
            let y = pa_outputs(model, &u, &c);
            return Ok(SimOutput {
                y,
                c,
                iterations: it,
                residual,
            });
        }
    }
    Err(Error::FixedPoint {
        iterations: FIXED_POINT_MAX_ITER,
        residual,
    })
}

/// Forward simulation with every PA of subarray `k` driven by `x[k]`.
pub fn simulate_subarrays<X: AsRef<[C64]>>(model: &ArrayModel, x: &[X], mode: SimMode) -> Result<SimOutput> {
    simulate_drives(model, &subarray_drives(&model.geometry, x)?, mode)
}

/// Beam-combined output `z = sum_l h_kl y_kl` of subarray `k`.
pub fn beam_output(y: &DMatrix<C64>, geom: &ArrayGeometry, k: usize, angle: f64) -> Vec<C64> {
    let h = steering_vector(geom, k, angle);
    let mut z = vec![C64::default(); y.nrows()];
    for (l, hl) in h.iter().enumerate() {
        for (zn, yn) in z.iter_mut().zip(y.column(geom.global(k, l)).iter()) {
            *zn += hl * yn;
        }
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn steering_examples() {
        let g = ArrayGeometry::new(2, 2, 0.5).unwrap();
        assert!(steering_vector(&g, 1, 0.0).iter().all(|z| (z - c(1.0, 0.0)).norm() < 1e-15));
        let h = steering_vector(&g, 0, PI / 2.0);
        assert!((h[0] - c(1.0, 0.0)).norm() < 1e-12);
        assert!((h[1] - c(-1.0, 0.0)).norm() < 1e-12);
        for z in steering_vector(&g, 1, 0.7) {
            assert!((z.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn geometry_rejects_empty() {
        assert!(ArrayGeometry::new(0, 4, 0.5).is_err());
        assert!(ArrayGeometry::new(1, 4, 0.0).is_err());
    }

    #[test]
    fn coupling_magnitudes() {
        let g = ArrayGeometry::new(1, 4, 0.5).unwrap();
        let m = build_crosstalk(&g, Some(-10.0), Decay::InverseSquare, PhaseRule::Alternating).unwrap();
        assert!((m[(0, 1)].norm() - 0.316227766).abs() < 1e-8);
        assert!((m[(0, 2)].norm() - 0.316227766 / 4.0).abs() < 1e-8);
        assert!((m[(0, 1)] - c(-0.31622776601683794, 0.0)).norm() < 1e-12);
        assert_eq!(m[(2, 2)], C64::default());
        let z = build_crosstalk(&g, None, Decay::InverseSquare, PhaseRule::Real).unwrap();
        assert_eq!(z.norm(), 0.0);
        assert!(build_crosstalk(&g, Some(3.0), Decay::InverseSquare, PhaseRule::Real).is_err());
    }

    #[test]
    fn random_phase_is_symmetric_and_seeded() {
        let g = ArrayGeometry::new(1, 5, 0.5).unwrap();
        let a = build_crosstalk(&g, Some(-12.0), Decay::InverseSquare, PhaseRule::Random { seed: 4 }).unwrap();
        let b = build_crosstalk(&g, Some(-12.0), Decay::InverseSquare, PhaseRule::Random { seed: 4 }).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, a.transpose());
    }

    #[test]
    fn unstable_feedback_rejected() {
        let g = ArrayGeometry::new(1, 2, 0.5).unwrap();
        let spec = BasisSpec::new(vec![BasisTerm::LINEAR, BasisTerm { p: 0, v: 1 }], 1).unwrap();
        let pa = PaModel::new(spec, vec![c(1.0, 0.0), c(2.0, 0.0)]).unwrap();
        let mut m = DMatrix::zeros(2, 2);
        m[(0, 1)] = c(0.9, 0.0);
        m[(1, 0)] = c(0.9, 0.0);
        let err = ArrayModel::new(g, BeamWeights::steered(&g, 0.0), vec![pa.clone(), pa], m).unwrap_err();
        assert!(matches!(err, Error::UnstableCrosstalk(r) if (r - 1.8).abs() < 1e-9));
    }

    #[test]
    fn zero_coupling_gives_zero_factors() {
        let g = ArrayGeometry::new(2, 3, 0.5).unwrap();
        let pas = synthetic_pa_bank(6, 0.05, 1).unwrap();
        let m = ArrayModel::new(g, BeamWeights::steered(&g, 0.0), pas, DMatrix::zeros(6, 6)).unwrap();
        assert!(m.xtalk.alpha.iter().all(|z| z.norm() == 0.0));
        assert_eq!(m.xtalk.lambda_sub.norm(), 0.0);
    }

    #[test]
    fn synthetic_bank_stays_within_spread() {
        let bank = synthetic_pa_bank(8, 0.05, 3).unwrap();
        let nom = nominal_pa_coeffs();
        for pa in &bank {
            for (a, b) in pa.coeffs.iter().zip(&nom) {
                assert!((a.re - b.re).abs() <= 0.05 * b.re.abs() + 1e-15);
                assert!((a.im - b.im).abs() <= 0.05 * b.im.abs() + 1e-15);
            }
        }
        assert_ne!(bank[0], bank[1]);
    }

    #[test]
    fn linear_pas_without_coupling_pass_weighted_input() {
        let g = ArrayGeometry::new(1, 3, 0.5).unwrap();
        let pas = vec![PaModel::linear(c(1.0, 0.0)); 3];
        let w = BeamWeights::steered(&g, 0.4);
        let m = ArrayModel::new(g, w.clone(), pas, DMatrix::zeros(3, 3)).unwrap();
        let x: Vec<C64> = (0..16).map(|n| c((n as f64 * 0.3).sin(), 0.1)).collect();
        let out = simulate_subarrays(&m, &[x.clone()], SimMode::FixedPointExact).unwrap();
        for l in 0..3 {
            for n in 0..16 {
                assert_eq!(out.y[(n, l)], w.as_slice()[l] * x[n]);
            }
        }
    }

    #[test]
    fn beam_output_examples() {
        let g = ArrayGeometry::new(1, 1, 0.5).unwrap();
        let y = DMatrix::from_column_slice(3, 1, &[c(1.0, 2.0), c(0.0, 1.0), c(-1.0, 0.0)]);
        assert_eq!(beam_output(&y, &g, 0, 0.9), y.column(0).iter().cloned().collect::<Vec<_>>());
        let g = ArrayGeometry::new(1, 4, 0.5).unwrap();
        let y = DMatrix::from_fn(3, 4, |n, _| c(n as f64, 1.0));
        let z = beam_output(&y, &g, 0, 0.0);
        for n in 0..3 {
            assert!((z[n] - c(4.0 * n as f64, 4.0)).norm() < 1e-15);
        }
    }
}
