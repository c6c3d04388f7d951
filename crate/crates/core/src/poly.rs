//! Dual-input memoryless polynomial models.
//!
//! A basis term `(p, v)` evaluates to
//!
//! - `v = 0`: `s |s|^{2p}`
//! - `v = 1`: `|s|^{2p} c`
//! - `v = 2`: `s^2 |s|^{2(p-1)} conj(c)`, defined for `p >= 1`
//!
//! where `s` is the drive signal and `c` the crosstalk signal at the device.

use std::collections::HashSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::linalg::lstsq;
use crate::{Error, Result, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BasisTerm {
    pub p: u32,
    pub v: u8,
}

impl BasisTerm {
    pub const LINEAR: BasisTerm = BasisTerm { p: 0, v: 0 };

    pub fn new(p: u32, v: u8) -> Result<Self> {
        let t = BasisTerm { p, v };
        t.validate()?;
        Ok(t)
    }

    fn validate(self) -> Result<()> {
        if self.v > 2 {
            return Err(Error::Config(format!("basis class v={} not in {{0,1,2}}", self.v)));
        }
        if self.v == 2 && self.p == 0 {
            return Err(Error::Config("basis term (p=0, v=2) is undefined; v=2 needs p >= 1".into()));
        }
        Ok(())
    }

    /// Total polynomial degree of the term in `s` (excluding `c`).
    pub fn degree(self) -> u32 {
        match self.v {
            0 => 2 * self.p + 1,
            _ => 2 * self.p,
        }
    }
}

#[inline]
pub fn eval_basis(term: BasisTerm, s: C64, c: C64) -> C64 {
    let a2 = s.norm_sqr();
    match term.v {
        0 => s * a2.powi(term.p as i32),
        1 => c * a2.powi(term.p as i32),
        _ => s * s * a2.powi(term.p as i32 - 1) * c.conj(),
    }
}

/// Ordered basis-term list; `terms[0]` is always the linear term.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BasisSpecRepr", into = "BasisSpecRepr")]
pub struct BasisSpec {
    terms: Vec<BasisTerm>,
    order_p: u32,
}

#[derive(Serialize, Deserialize)]
struct BasisSpecRepr {
    #[serde(rename = "order_P")]
    order_p: u32,
    terms: Vec<(u32, u8)>,
}

impl TryFrom<BasisSpecRepr> for BasisSpec {
    type Error = Error;
    fn try_from(r: BasisSpecRepr) -> Result<Self> {
        BasisSpec::new(r.terms.into_iter().map(|(p, v)| BasisTerm { p, v }).collect(), r.order_p)
    }
}

impl From<BasisSpec> for BasisSpecRepr {
    fn from(b: BasisSpec) -> Self {
        BasisSpecRepr {
            order_p: b.order_p,
            terms: b.terms.iter().map(|t| (t.p, t.v)).collect(),
        }
    }
}

impl BasisSpec {
    pub fn new(terms: Vec<BasisTerm>, order_p: u32) -> Result<Self> {
        if order_p % 2 == 0 {
            return Err(Error::Config(format!("order_P must be odd and positive, got {order_p}")));
        }
        if terms.first() != Some(&BasisTerm::LINEAR) {
            return Err(Error::Config("the first basis term must be the linear term (0,0)".into()));
        }
        let mut seen = HashSet::new();
        for &t in &terms {
            t.validate()?;
            if t.p > (order_p - 1) / 2 {
                return Err(Error::Config(format!(
                    "term (p={}, v={}) exceeds order_P={order_p}",
                    t.p, t.v
                )));
            }
            if !seen.insert(t) {
                return Err(Error::Config(format!("duplicate basis term (p={}, v={})", t.p, t.v)));
            }
        }
        Ok(Self { terms, order_p })
    }

    /// `{(0,0),(1,0),(2,0),(3,0),(0,1),(1,1),(1,2)}` with P = 7.
    pub fn default_dpd() -> Self {
        let t = |p, v| BasisTerm { p, v };
        Self::new(vec![t(0, 0), t(1, 0), t(2, 0), t(3, 0), t(0, 1), t(1, 1), t(1, 2)], 7)
            .expect("default spec is valid")
    }

    pub fn linear_only() -> Self {
        Self::new(vec![BasisTerm::LINEAR], 1).expect("linear spec is valid")
    }

    pub fn terms(&self) -> &[BasisTerm] {
        &self.terms
    }

    pub fn order_p(&self) -> u32 {
        self.order_p
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Number of nonlinear terms.
    pub fn q(&self) -> usize {
        self.terms.len() - 1
    }

    pub fn index_of(&self, t: BasisTerm) -> Option<usize> {
        self.terms.iter().position(|&x| x == t)
    }

    /// Indices of the nonlinear terms in ascending `(p, v)` order, i.e. the
    /// order of decreasing dominance.
    pub fn nonlinear_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (1..self.terms.len()).collect();
        idx.sort_by_key(|&i| self.terms[i]);
        idx
    }
}

pub type CoeffVector = Vec<C64>;

fn check_aligned(spec: &BasisSpec, coeffs: &[C64]) -> Result<()> {
    if coeffs.len() != spec.len() {
        return Err(Error::Length {
            what: "coefficient vector",
            expected: spec.len(),
            got: coeffs.len(),
        });
    }
    Ok(())
}

fn check_same_len(what: &'static str, a: &[C64], b: &[C64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Length {
            what,
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

#[inline]
pub fn eval_poly_sample(spec: &BasisSpec, coeffs: &[C64], s: C64, c: C64) -> C64 {
    spec.terms
        .iter()
        .zip(coeffs)
        .map(|(&t, &a)| a * eval_basis(t, s, c))
        .sum()
}

/// Per-sample `Psi(s, c) Phi`.
pub fn eval_poly(spec: &BasisSpec, coeffs: &[C64], s: &[C64], c: &[C64]) -> Result<Vec<C64>> {
    check_aligned(spec, coeffs)?;
    check_same_len("eval_poly inputs", s, c)?;
    Ok(s.iter()
        .zip(c)
        .map(|(&sn, &cn)| eval_poly_sample(spec, coeffs, sn, cn))
        .collect())
}

/// N x (Q+1) matrix whose row n is `Psi(s[n], c[n])`.
pub fn build_regressor(spec: &BasisSpec, s: &[C64], c: &[C64]) -> Result<DMatrix<C64>> {
    check_same_len("regressor inputs", s, c)?;
    Ok(DMatrix::from_fn(s.len(), spec.len(), |n, i| eval_basis(spec.terms[i], s[n], c[n])))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsOptions {
    /// Largest acceptable condition number of the column-equilibrated
    /// regressor.
    pub cond_cap: f64,
    /// Fail instead of returning a truncated pseudo-inverse solution when the
    /// cap is exceeded.
    pub strict: bool,
}

impl Default for LsOptions {
    fn default() -> Self {
        Self {
            cond_cap: 1e10,
            strict: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LsFit {
    pub coeffs: CoeffVector,
    pub cond: f64,
    pub rank: usize,
}

/// Least-squares fit of `y ~ Psi(s, c) Phi` with default options.
pub fn ls_identify(spec: &BasisSpec, s: &[C64], c: &[C64], y: &[C64]) -> Result<CoeffVector> {
    Ok(ls_identify_with(spec, s, c, y, &LsOptions::default())?.coeffs)
}

pub fn ls_identify_with(
    spec: &BasisSpec,
    s: &[C64],
    c: &[C64],
    y: &[C64],
    opts: &LsOptions,
) -> Result<LsFit> {
    check_same_len("identification target", s, y)?;
    if s.len() < spec.len() {
        return Err(Error::Config(format!(
            "need at least {} samples to identify {} coefficients, got {}",
            spec.len(),
            spec.len(),
            s.len()
        )));
    }
    let a = build_regressor(spec, s, c)?;
    let b = DMatrix::from_column_slice(y.len(), 1, y);
    let sol = lstsq(&a, &b, 1.0 / opts.cond_cap)?;
    if opts.strict && !(sol.cond <= opts.cond_cap) {
        return Err(Error::RankDeficient { cond: sol.cond });
    }
    Ok(LsFit {
        coeffs: sol.x.column(0).iter().cloned().collect(),
        cond: sol.cond,
        rank: sol.rank,
    })
}

/// A PA behavioral model: a basis and its coefficients, with nonzero linear
/// gain.
#[derive(Debug, Clone, PartialEq)]
pub struct PaModel {
    pub spec: BasisSpec,
    pub coeffs: CoeffVector,
}

pub const PA_MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct PaModelDoc {
    version: u32,
    #[serde(rename = "order_P")]
    order_p: u32,
    terms: Vec<(u32, u8)>,
    coeffs: Vec<(f64, f64)>,
}

impl PaModel {
    pub fn new(spec: BasisSpec, coeffs: CoeffVector) -> Result<Self> {
        check_aligned(&spec, &coeffs)?;
        if coeffs.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Config("PA coefficients must be finite".into()));
        }
        if coeffs[0].norm() == 0.0 {
            return Err(Error::Config("PA linear gain must be nonzero".into()));
        }
        Ok(Self { spec, coeffs })
    }

    pub fn linear(gain: C64) -> Self {
        Self::new(BasisSpec::linear_only(), vec![gain]).expect("nonzero gain")
    }

    /// Coefficient of basis term `t`, zero when the term is absent.
    pub fn coeff(&self, t: BasisTerm) -> C64 {
        self.spec
            .index_of(t)
            .map(|i| self.coeffs[i])
            .unwrap_or_default()
    }

    #[inline]
    pub fn output(&self, u: C64, c: C64) -> C64 {
        eval_poly_sample(&self.spec, &self.coeffs, u, c)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = PaModelDoc {
            version: PA_MODEL_VERSION,
            order_p: self.spec.order_p,
            terms: self.spec.terms.iter().map(|t| (t.p, t.v)).collect(),
            coeffs: self.coeffs.iter().map(|z| (z.re, z.im)).collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: PaModelDoc = serde_json::from_str(text)?;
        if doc.version != PA_MODEL_VERSION {
            return Err(Error::Parse(format!("unsupported PA model version {}", doc.version)));
        }
        let spec = BasisSpec::new(
            doc.terms.into_iter().map(|(p, v)| BasisTerm { p, v }).collect(),
            doc.order_p,
        )?;
        Self::new(spec, doc.coeffs.into_iter().map(|(re, im)| C64::new(re, im)).collect())
    }
}
