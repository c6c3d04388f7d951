//! Post-weighting layouts (fully-featured and low-complexity), their
//! complexity counts, and the per-angle radiation operators `T` and residual
//! `z_res` with `z_NL = T gamma + z_res` to first order.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::array::{beam_output, simulate_drives, steering_vector, subarray_drives, ArrayGeometry, ArrayModel, SimMode};
use crate::poly::eval_basis;
use crate::train::TrainingResult;
use crate::{Error, Result, C64};

/// Positive rational number, serialized as `"num/den"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub const ONE: Ratio = Ratio { num: 1, den: 1 };

    pub fn new(num: u64, den: u64) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::Config(format!("ratio {num}/{den} must be positive")));
        }
        let g = gcd(num, den);
        Ok(Self {
            num: num / g,
            den: den / g,
        })
    }

    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn is_one(self) -> bool {
        self.num == self.den
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for Ratio {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("ratio '{s}' is not of the form n/d"));
        match s.split_once('/') {
            Some((n, d)) => Ratio::new(n.trim().parse().map_err(|_| bad())?, d.trim().parse().map_err(|_| bad())?),
            None => Ratio::new(s.trim().parse().map_err(|_| bad())?, 1),
        }
    }
}

impl Serialize for Ratio {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Ratio {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Ff,
    Lc,
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ff" => Ok(Scheme::Ff),
            "lc" => Ok(Scheme::Lc),
            _ => Err(Error::Parse(format!("unknown post-weighting scheme '{s}'"))),
        }
    }
}

/// `S r^e` as an exact fraction `(num, den)`, or `None` on overflow.
fn scaled_power(s: usize, r: Ratio, e: u32) -> Option<(u128, u128)> {
    let num = (r.num as u128).checked_pow(e)?.checked_mul(s as u128)?;
    let den = (r.den as u128).checked_pow(e)?;
    Some((num, den))
}

/// `floor(S r^e)` if `S r^e >= 1`, else `1`.
fn count_at(s: usize, r: Ratio, e: u32) -> usize {
    match scaled_power(s, r, e) {
        Some((n, d)) if n >= d => (n / d) as usize,
        Some(_) => 1,
        None => {
            let v = s as f64 * r.value().powi(e as i32);
            if v >= 1.0 {
                v.floor() as usize
            } else {
                1
            }
        }
    }
}

/// `ceil(S r^e)`.
fn ceil_at(s: usize, r: Ratio, e: u32) -> usize {
    match scaled_power(s, r, e) {
        Some((n, d)) => n.div_ceil(d) as usize,
        None => (s as f64 * r.value().powi(e as i32)).ceil() as usize,
    }
}

fn at_least_one(s: usize, r: Ratio, e: u32) -> bool {
    match scaled_power(s, r, e) {
        Some((n, d)) => n >= d,
        None => s as f64 * r.value().powi(e as i32) >= 1.0,
    }
}

/// Assignment of post-weighting coefficients to (nonlinear output, PA)
/// pairs. `assignment[q * S + l]` is the compact coefficient index used by
/// PA `l` on nonlinear output `q`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PwLayout {
    pub scheme: Scheme,
    #[serde(rename = "S")]
    pub s: usize,
    #[serde(rename = "Q")]
    pub q: usize,
    pub r: Ratio,
    pub nu: u32,
    pub counts: Vec<usize>,
    pub assignment: Vec<usize>,
    pub n_gamma: usize,
    pub n_adders: usize,
    pub n_rf: usize,
    /// Number of leading outputs whose geometric count is at least one.
    pub m_split: usize,
}

/// Builds the layout. FF is the LC construction with `r = 1`, `nu = 0`.
pub fn build_layout(scheme: Scheme, s: usize, q: usize, r: Ratio, nu: u32) -> Result<PwLayout> {
    if s == 0 || q == 0 {
        return Err(Error::Config(format!("layout needs S >= 1 and Q >= 1, got S={s}, Q={q}")));
    }
    let (r, nu) = match scheme {
        Scheme::Ff => (Ratio::ONE, 0),
        Scheme::Lc => {
            if r.num == 0 || r.num > r.den {
                return Err(Error::Config(format!("LC common ratio must lie in (0, 1], got {r}")));
            }
            (r, nu)
        }
    };
    let counts: Vec<usize> = (0..q as u32).map(|i| count_at(s, r, nu + i)).collect();
    let mut assignment = vec![0; s * q];
    let mut offset = 0;
    for (qi, &cnt) in counts.iter().enumerate() {
        for l in 0..s {
            assignment[qi * s + l] = offset + l * cnt / s;
        }
        offset += cnt;
    }
    let n_gamma = offset;
    let n_adders = n_gamma + counts[0] - ceil_at(s, r, nu + q as u32 - 1);
    let m_split = (0..q as u32).take_while(|&i| at_least_one(s, r, nu + i)).count();
    Ok(PwLayout {
        scheme,
        s,
        q,
        r,
        nu,
        n_rf: counts[0],
        counts,
        assignment,
        n_gamma,
        n_adders,
        m_split,
    })
}

/// Total coefficient count from the closed form (geometric sum with the
/// tail of outputs pinned to one coefficient each).
pub fn closed_form_n_gamma(s: usize, q: usize, r: Ratio, nu: u32) -> f64 {
    let sf = s as f64;
    let rv = r.value();
    let geo = |m: usize| {
        if r.is_one() {
            sf * m as f64
        } else {
            sf * rv.powi(nu as i32) * (1.0 - rv.powi(m as i32)) / (1.0 - rv)
        }
    };
    if sf * rv.powi((q as u32 + nu) as i32 - 1) >= 1.0 {
        return geo(q);
    }
    let m = (0..q).find(|&m| sf * rv.powi((m as u32 + nu) as i32) < 1.0).unwrap_or(q);
    geo(m) + (q - m) as f64
}

/// Adder count from the closed form, with `S r^nu` rounded up to one when
/// fractional.
pub fn closed_form_n_adders(s: usize, q: usize, r: Ratio, nu: u32) -> f64 {
    let sf = s as f64;
    let rv = r.value();
    let first = (sf * rv.powi(nu as i32)).max(1.0);
    closed_form_n_gamma(s, q, r, nu) + first - (sf * rv.powi((nu + q as u32) as i32 - 1)).ceil()
}

impl PwLayout {
    pub fn ff(s: usize, q: usize) -> Result<Self> {
        build_layout(Scheme::Ff, s, q, Ratio::ONE, 0)
    }

    /// Compact index of output `q`, PA `l`.
    pub fn index(&self, q: usize, l: usize) -> usize {
        self.assignment[q * self.s + l]
    }

    /// Output owning compact index `j`.
    pub fn output_of(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n_gamma);
        for (q, &c) in self.counts.iter().enumerate() {
            out.extend(std::iter::repeat_n(q, c));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Full per-(output, PA) vector, position `q * S + l`.
pub fn expand_gamma(layout: &PwLayout, g: &[C64]) -> Result<Vec<C64>> {
    if g.len() != layout.n_gamma {
        return Err(Error::Length {
            what: "gamma",
            expected: layout.n_gamma,
            got: g.len(),
        });
    }
    Ok(layout.assignment.iter().map(|&j| g[j]).collect())
}

/// 0/1 matrix `D` (S*Q x n_gamma) with `expand_gamma(g) = D g`.
pub fn duplication_matrix(layout: &PwLayout) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(layout.s * layout.q, layout.n_gamma);
    for (row, &j) in layout.assignment.iter().enumerate() {
        d[(row, j)] = 1.0;
    }
    d
}

/// Row operator `T = B E` for one angle: `B` (N x Q) is the shared
/// nonlinear-output basis `Psi'_q(s, c) Phi'_q`, and `E` (Q x n_gamma)
/// carries the steering, beam weight and PA linear gain of the PAs sharing
/// each coefficient. A dense `T` is the special case `B = T`, `E = I`.
#[derive(Debug, Clone)]
pub struct RadiationOperator {
    pub angle: f64,
    pub basis: Arc<DMatrix<C64>>,
    pub e: DMatrix<C64>,
    pub z_res: Vec<C64>,
}

impl RadiationOperator {
    pub fn from_dense(angle: f64, t: DMatrix<C64>, z_res: Vec<C64>) -> Result<Self> {
        if t.nrows() != z_res.len() {
            return Err(Error::Length {
                what: "operator residual",
                expected: t.nrows(),
                got: z_res.len(),
            });
        }
        let n = t.ncols();
        Ok(Self {
            angle,
            basis: Arc::new(t),
            e: DMatrix::identity(n, n),
            z_res,
        })
    }

    pub fn n_gamma(&self) -> usize {
        self.e.ncols()
    }

    pub fn n_samples(&self) -> usize {
        self.basis.nrows()
    }

    pub fn dense(&self) -> DMatrix<C64> {
        &*self.basis * &self.e
    }

    /// `T g`.
    pub fn apply(&self, g: &[C64]) -> Vec<C64> {
        let eg = &self.e * DMatrix::from_column_slice(g.len(), 1, g);
        (&*self.basis * eg).column(0).iter().cloned().collect()
    }

    /// `T g + z_res`.
    pub fn radiation(&self, g: &[C64]) -> Vec<C64> {
        self.apply(g).iter().zip(&self.z_res).map(|(a, b)| a + b).collect()
    }
}

/// Everything needed to build radiation operators of subarray `k` for any
/// layout and angle: the trained DPD, its nonlinear-output basis and the
/// simulated DPD-only PA outputs.
#[derive(Debug, Clone)]
pub struct RadiationContext {
    pub k: usize,
    pub geometry: ArrayGeometry,
    /// `w_kl phi_kl0` for the PAs of subarray `k`.
    pub lead: Vec<C64>,
    pub phi_lin: C64,
    pub basis: Arc<DMatrix<C64>>,
    pub s_all: Vec<Vec<C64>>,
    pub dpd_out: Vec<C64>,
    pub y_dpd: DMatrix<C64>,
}

impl RadiationContext {
    /// `est` supplies the PA coefficients used by the operator algebra;
    /// `truth` is simulated to obtain the DPD-only nonlinear radiation.
    pub fn new<X: AsRef<[C64]>>(
        truth: &ArrayModel,
        est: &ArrayModel,
        dpd: &TrainingResult,
        s_all: &[X],
    ) -> Result<Self> {
        let k = dpd.subarray;
        let geom = truth.geometry;
        if dpd.c_k.is_empty() || dpd.phi_k.len() != dpd.spec.len() {
            return Err(Error::Config("post-weighting needs a trained DPD with its c_k".into()));
        }
        let s_all: Vec<Vec<C64>> = s_all.iter().map(|x| x.as_ref().to_vec()).collect();
        let sk = &s_all[k];
        if sk.len() != dpd.c_k.len() {
            return Err(Error::Length {
                what: "c_k",
                expected: sk.len(),
                got: dpd.c_k.len(),
            });
        }
        let order = dpd.spec.nonlinear_order();
        let terms = dpd.spec.terms();
        let basis = DMatrix::from_fn(sk.len(), order.len(), |n, q| {
            let i = order[q];
            eval_basis(terms[i], sk[n], dpd.c_k[n]) * dpd.phi_k[i]
        });
        let w = est.weights.subarray(&geom, k);
        let lead = (0..geom.s)
            .map(|l| w[l] * est.pas[geom.global(k, l)].coeffs[0])
            .collect();
        let dpd_out = dpd.predistort(sk)?;
        let mut x_all = s_all.clone();
        x_all[k] = dpd_out.clone();
        let y_dpd = simulate_drives(truth, &subarray_drives(&geom, &x_all)?, SimMode::FixedPointExact)?.y;
        Ok(Self {
            k,
            geometry: geom,
            lead,
            phi_lin: dpd.phi_k[0],
            basis: Arc::new(basis),
            s_all,
            dpd_out,
            y_dpd,
        })
    }

    pub fn q(&self) -> usize {
        self.basis.ncols()
    }

    /// `a_l(angle) = h_kl w_kl phi_kl0`.
    pub fn element_gains(&self, angle: f64) -> Vec<C64> {
        let h = steering_vector(&self.geometry, self.k, angle);
        h.iter().zip(&self.lead).map(|(a, b)| a * b).collect()
    }

    /// Desired linear part of the beam: `G(angle) phi_k0 s_k`.
    pub fn desired(&self, angle: f64) -> Vec<C64> {
        let g: C64 = self.element_gains(angle).iter().sum::<C64>() * self.phi_lin;
        self.s_all[self.k].iter().map(|v| g * v).collect()
    }

    /// DPD-only nonlinear radiation `z_NL` at `angle`.
    pub fn z_nl(&self, angle: f64) -> Vec<C64> {
        let z = beam_output(&self.y_dpd, &self.geometry, self.k, angle);
        z.iter().zip(self.desired(angle)).map(|(a, b)| a - b).collect()
    }

    /// FF-ordered coefficient map `E_FF[q, q*S + l] = a_l`, compressed to the
    /// layout: `E[q(j), j] = sum of a_l over PAs sharing j`.
    pub fn coefficient_map(&self, layout: &PwLayout, angle: f64) -> Result<DMatrix<C64>> {
        if layout.s != self.geometry.s || layout.q != self.q() {
            return Err(Error::Config(format!(
                "layout is for S={}, Q={} but the subarray has S={}, Q={}",
                layout.s,
                layout.q,
                self.geometry.s,
                self.q()
            )));
        }
        let a = self.element_gains(angle);
        let mut e = DMatrix::zeros(layout.q, layout.n_gamma);
        for q in 0..layout.q {
            for (l, al) in a.iter().enumerate() {
                e[(q, layout.index(q, l))] += al;
            }
        }
        Ok(e)
    }

    pub fn operator(&self, layout: &PwLayout, angle: f64) -> Result<RadiationOperator> {
        let e = self.coefficient_map(layout, angle)?;
        let ones = DMatrix::from_element(layout.n_gamma, 1, C64::new(1.0, 0.0));
        let t1 = &*self.basis * (&e * ones);
        let z_res = self
            .z_nl(angle)
            .iter()
            .zip(t1.iter())
            .map(|(a, b)| a - b)
            .collect();
        Ok(RadiationOperator {
            angle,
            basis: Arc::clone(&self.basis),
            e,
            z_res,
        })
    }

    /// Per-PA drives with post-weighting: PA `l` of subarray `k` receives
    /// `phi_k0 s_k + sum_q gamma[q, l] B[:, q]`; other subarrays transmit
    /// their own signal.
    pub fn pw_drives(&self, layout: &PwLayout, gamma: &[C64]) -> Result<DMatrix<C64>> {
        let full = expand_gamma(layout, gamma)?;
        let mut d = subarray_drives(&self.geometry, &self.s_all)?;
        let sk = &self.s_all[self.k];
        for l in 0..self.geometry.s {
            let mut col: Vec<C64> = sk.iter().map(|v| self.phi_lin * v).collect();
            for q in 0..layout.q {
                let gq = full[q * layout.s + l];
                for (cn, bn) in col.iter_mut().zip(self.basis.column(q).iter()) {
                    *cn += gq * bn;
                }
            }
            d.column_mut(self.geometry.global(self.k, l)).copy_from_slice(&col);
        }
        Ok(d)
    }

    /// Drives of the DPD-only chain (every PA of subarray `k` gets the
    /// predistorter output).
    pub fn dpd_drives(&self) -> Result<DMatrix<C64>> {
        let mut x_all = self.s_all.clone();
        x_all[self.k] = self.dpd_out.clone();
        subarray_drives(&self.geometry, &x_all)
    }
}

/// Single-angle convenience wrapper around [`RadiationContext`].
pub fn assemble_radiation_operator<X: AsRef<[C64]>>(
    truth: &ArrayModel,
    est: &ArrayModel,
    layout: &PwLayout,
    dpd: &TrainingResult,
    s_all: &[X],
    angle: f64,
) -> Result<RadiationOperator> {
    RadiationContext::new(truth, est, dpd, s_all)?.operator(layout, angle)
}

/// One row of the complexity comparison between FF and LC layouts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRow {
    #[serde(rename = "S")]
    pub s: usize,
    #[serde(rename = "Q")]
    pub q: usize,
    pub r: Ratio,
    pub nu: u32,
    pub counts: Vec<usize>,
    pub ff_gamma: usize,
    pub ff_adders: usize,
    pub ff_rf: usize,
    pub lc_gamma: usize,
    pub lc_adders: usize,
    pub lc_rf: usize,
    pub gamma_factor: f64,
    pub adder_factor: f64,
    pub rf_factor: f64,
}

pub fn count_row(s: usize, q: usize, r: Ratio, nu: u32) -> Result<CountRow> {
    let ff = PwLayout::ff(s, q)?;
    let lc = build_layout(Scheme::Lc, s, q, r, nu)?;
    Ok(CountRow {
        s,
        q,
        r,
        nu,
        counts: lc.counts.clone(),
        ff_gamma: ff.n_gamma,
        ff_adders: ff.n_adders,
        ff_rf: ff.n_rf,
        lc_gamma: lc.n_gamma,
        lc_adders: lc.n_adders,
        lc_rf: lc.n_rf,
        gamma_factor: ff.n_gamma as f64 / lc.n_gamma as f64,
        adder_factor: ff.n_adders as f64 / lc.n_adders as f64,
        rf_factor: ff.n_rf as f64 / lc.n_rf as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half() -> Ratio {
        Ratio::new(1, 2).unwrap()
    }

    #[test]
    fn figure_example_counts() {
        let lc = build_layout(Scheme::Lc, 4, 3, half(), 1).unwrap();
        assert_eq!(lc.counts, vec![2, 1, 1]);
        assert_eq!((lc.n_gamma, lc.n_adders, lc.n_rf), (4, 5, 2));
        assert_eq!(lc.m_split, 2);
        let ff = PwLayout::ff(4, 3).unwrap();
        assert_eq!(ff.counts, vec![4, 4, 4]);
        assert_eq!((ff.n_gamma, ff.n_adders, ff.n_rf), (12, 12, 4));
    }

    #[test]
    fn first_case_example() {
        let lc = build_layout(Scheme::Lc, 8, 2, half(), 1).unwrap();
        assert_eq!(lc.counts, vec![4, 2]);
        assert_eq!((lc.n_gamma, lc.n_adders, lc.n_rf), (6, 8, 4));
        assert_eq!(closed_form_n_gamma(8, 2, half(), 1), 6.0);
    }

    #[test]
    fn lc_with_unit_ratio_is_ff() {
        let lc = build_layout(Scheme::Lc, 16, 6, Ratio::ONE, 0).unwrap();
        let ff = PwLayout::ff(16, 6).unwrap();
        assert_eq!(lc.counts, ff.counts);
        assert_eq!(lc.assignment, ff.assignment);
        assert_eq!((lc.n_gamma, lc.n_adders, lc.n_rf), (ff.n_gamma, ff.n_adders, ff.n_rf));
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(build_layout(Scheme::Lc, 4, 3, Ratio { num: 3, den: 2 }, 1).is_err());
        assert!(build_layout(Scheme::Lc, 0, 3, half(), 1).is_err());
        assert!(build_layout(Scheme::Ff, 4, 0, half(), 1).is_err());
        assert!("0/3".parse::<Ratio>().is_err());
        assert!("x".parse::<Ratio>().is_err());
    }

    #[test]
    fn expansion_examples() {
        let lc = build_layout(Scheme::Lc, 4, 3, half(), 1).unwrap();
        let g: Vec<C64> = (1..=4).map(|i| C64::new(i as f64, 0.0)).collect();
        let e: Vec<f64> = expand_gamma(&lc, &g).unwrap().iter().map(|z| z.re).collect();
        assert_eq!(e, vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 3.0, 3.0, 4.0, 4.0, 4.0, 4.0]);
        let d = duplication_matrix(&lc);
        let col_sums: Vec<f64> = (0..4).map(|j| d.column(j).sum()).collect();
        assert_eq!(col_sums, vec![2.0, 2.0, 4.0, 4.0]);
        assert!(d.row_iter().all(|r| r.sum() == 1.0));
        let ff = PwLayout::ff(4, 3).unwrap();
        assert_eq!(duplication_matrix(&ff), DMatrix::identity(12, 12));
        assert!(expand_gamma(&lc, &g[..3]).is_err());
    }

    #[test]
    fn ratio_roundtrip() {
        let r: Ratio = "2/4".parse().unwrap();
        assert_eq!(r, half());
        assert_eq!(serde_json::to_string(&r).unwrap(), "\"1/2\"");
    }

    #[test]
    fn layout_json_has_fraction_and_table() {
        let lc = build_layout(Scheme::Lc, 4, 3, half(), 1).unwrap();
        let text = lc.to_json().unwrap();
        assert!(text.contains("\"r\": \"1/2\""));
        let back: PwLayout = serde_json::from_str(&text).unwrap();
        assert_eq!(back, lc);
    }
}
