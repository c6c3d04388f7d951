//! Linearization quality: angular nonlinear-radiation sweeps and ACPR.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::array::{beam_output, simulate_drives, ArrayModel, SimMode};
use crate::postweight::{PwLayout, RadiationContext};
use crate::signal::mean_power;
use crate::{Error, Result, C64, FLOOR_DB};

/// Relative powers below this are reported as [`FLOOR_DB`].
pub const RELATIVE_FLOOR: f64 = 1e-25;
/// ACPR reported when an adjacent band carries no measurable power.
pub const ACPR_CEILING_DB: f64 = -FLOOR_DB;
pub const WELCH_SEGMENT: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub angles: Vec<f64>,
    pub labels: Vec<String>,
    /// One curve per label, each aligned with `angles`.
    pub power_db: Vec<Vec<f64>>,
}

impl SweepResult {
    pub fn new(angles: Vec<f64>) -> Self {
        Self {
            angles,
            labels: Vec::new(),
            power_db: Vec::new(),
        }
    }

    pub fn push(&mut self, label: &str, curve: Vec<f64>) -> Result<()> {
        if curve.len() != self.angles.len() {
            return Err(Error::Length {
                what: "sweep curve",
                expected: self.angles.len(),
                got: curve.len(),
            });
        }
        self.labels.push(label.to_string());
        self.power_db.push(curve);
        Ok(())
    }

    pub fn curve(&self, label: &str) -> Option<&[f64]> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| self.power_db[i].as_slice())
    }

    /// Mean of a curve over the angles inside `range` (inclusive).
    pub fn mean_db(&self, label: &str, range: (f64, f64)) -> Result<f64> {
        let c = self
            .curve(label)
            .ok_or_else(|| Error::Config(format!("sweep has no '{label}' curve")))?;
        let idx = range_indices(&self.angles, range)?;
        Ok(idx.iter().map(|&i| c[i]).sum::<f64>() / idx.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("angle_rad");
        for l in &self.labels {
            write!(out, ",{l}_db").unwrap();
        }
        out.push('\n');
        for (i, a) in self.angles.iter().enumerate() {
            write!(out, "{a}").unwrap();
            for c in &self.power_db {
                write!(out, ",{}", c[i]).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

fn range_indices(angles: &[f64], range: (f64, f64)) -> Result<Vec<usize>> {
    let (lo, hi) = range;
    let tol = 1e-12;
    let idx: Vec<usize> = (0..angles.len())
        .filter(|&i| angles[i] >= lo - tol && angles[i] <= hi + tol)
        .collect();
    let (gmin, gmax) = angles
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if idx.is_empty() || lo < gmin - tol || hi > gmax + tol || lo > hi {
        return Err(Error::Config(format!(
            "range [{lo}, {hi}] is not covered by the sweep grid [{gmin}, {gmax}]"
        )));
    }
    Ok(idx)
}

/// `linspace(lo, hi, n)` with exact endpoints.
pub fn angle_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    hi
                } else {
                    lo + (hi - lo) * (i as f64 / (n - 1) as f64)
                }
            })
            .collect(),
    }
}

fn relative_db(p: f64, reference: f64) -> f64 {
    let r = p / reference;
    if !(r > RELATIVE_FLOOR) {
        FLOOR_DB
    } else {
        10.0 * r.log10()
    }
}

/// Simulates `drives` once through the true array and reports, per angle,
/// the power of the beam minus `desired(angle)`, relative to the mean
/// power of subarray `k`'s message signal.
pub fn sweep_drives<F>(
    truth: &ArrayModel,
    k: usize,
    drives: &DMatrix<C64>,
    s_k: &[C64],
    angles: &[f64],
    desired: F,
) -> Result<Vec<f64>>
where
    F: Fn(f64) -> Vec<C64>,
{
    let reference = mean_power(s_k);
    if reference == 0.0 {
        return Err(Error::Config("message signal has zero power".into()));
    }
    let y = simulate_drives(truth, drives, SimMode::FixedPointExact)?.y;
    Ok(angles
        .iter()
        .map(|&a| {
            let z = beam_output(&y, &truth.geometry, k, a);
            let d = desired(a);
            let p = z.iter().zip(&d).map(|(u, v)| (u - v).norm_sqr()).sum::<f64>() / z.len() as f64;
            relative_db(p, reference)
        })
        .collect())
}

/// Nonlinear radiation of the post-weighted chain. `gamma = None` is the
/// DPD-only chain; `Some(all ones)` reproduces it through the PW path.
pub fn radiation_sweep(
    truth: &ArrayModel,
    ctx: &RadiationContext,
    layout: Option<&PwLayout>,
    gamma: Option<&[C64]>,
    angles: &[f64],
) -> Result<Vec<f64>> {
    let drives = match (layout, gamma) {
        (_, None) => ctx.dpd_drives()?,
        (Some(l), Some(g)) => ctx.pw_drives(l, g)?,
        (None, Some(_)) => return Err(Error::Config("gamma given without a layout".into())),
    };
    sweep_drives(truth, ctx.k, &drives, &ctx.s_all[ctx.k], angles, |a| ctx.desired(a))
}

/// Direct transmission without predistortion. The desired term uses the
/// PAs' linear gains.
pub fn dnr_sweep(truth: &ArrayModel, ctx: &RadiationContext, angles: &[f64]) -> Result<Vec<f64>> {
    let drives = crate::array::subarray_drives(&truth.geometry, &ctx.s_all)?;
    let sk = &ctx.s_all[ctx.k];
    sweep_drives(truth, ctx.k, &drives, sk, angles, |a| {
        let g: C64 = ctx.element_gains(a).iter().sum();
        sk.iter().map(|v| g * v).collect()
    })
}

/// Beam-combined output of subarray `k` for a drive set, one block per angle.
pub fn beam_blocks(truth: &ArrayModel, k: usize, drives: &DMatrix<C64>, angles: &[f64]) -> Result<Vec<Vec<C64>>> {
    let y = simulate_drives(truth, drives, SimMode::FixedPointExact)?.y;
    Ok(angles.iter().map(|&a| beam_output(&y, &truth.geometry, k, a)).collect())
}

/// Mean of `a - b` over the angles in `range`: the improvement of curve
/// `b` relative to `a`.
pub fn average_improvement_db(a: &SweepResult, la: &str, b: &SweepResult, lb: &str, range: (f64, f64)) -> Result<f64> {
    if a.angles != b.angles {
        return Err(Error::Config("sweeps use different angle grids".into()));
    }
    let ca = a.curve(la).ok_or_else(|| Error::Config(format!("no '{la}' curve")))?;
    let cb = b.curve(lb).ok_or_else(|| Error::Config(format!("no '{lb}' curve")))?;
    let idx = range_indices(&a.angles, range)?;
    Ok(idx.iter().map(|&i| ca[i] - cb[i]).sum::<f64>() / idx.len() as f64)
}

/// Centred power spectrum estimate: periodic Hann window, `WELCH_SEGMENT`
/// samples, 50% overlap. Bin `i` sits at normalized frequency
/// `(i - L/2)/L`.
pub fn welch_psd(z: &[C64]) -> Result<Vec<f64>> {
    let l = WELCH_SEGMENT;
    if z.len() < l {
        return Err(Error::Length {
            what: "ACPR block (minimum one segment)",
            expected: l,
            got: z.len(),
        });
    }
    let win: Vec<f64> = (0..l)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / l as f64).cos())
        .collect();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(l);
    let mut acc = vec![0.0; l];
    let mut buf = vec![C64::new(0.0, 0.0); l];
    let step = l / 2;
    let mut count = 0usize;
    let mut start = 0;
    while start + l <= z.len() {
        for (i, b) in buf.iter_mut().enumerate() {
            *b = z[start + i] * win[i];
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
        count += 1;
        start += step;
    }
    let mut psd: Vec<f64> = acc.iter().map(|a| a / count as f64).collect();
    psd.rotate_right(l / 2);
    Ok(psd)
}

/// Element-wise mean of equally sized spectra.
pub fn average_psd(psds: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = psds
        .first()
        .ok_or_else(|| Error::Config("no spectra to average".into()))?;
    let mut out = vec![0.0; first.len()];
    for p in psds {
        if p.len() != out.len() {
            return Err(Error::Length {
                what: "spectrum",
                expected: out.len(),
                got: p.len(),
            });
        }
        out.iter_mut().zip(p).for_each(|(o, v)| *o += v);
    }
    out.iter_mut().for_each(|o| *o /= psds.len() as f64);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcprResult {
    pub lower_db: f64,
    pub upper_db: f64,
    pub average_db: f64,
    pub channel_bw: f64,
    pub guard: f64,
}

impl AcprResult {
    pub fn to_csv(&self) -> String {
        format!("lower_db,upper_db,average_db\n{},{},{}\n", self.lower_db, self.upper_db, self.average_db)
    }
}

fn band_power(psd: &[f64], lo: f64, hi: f64) -> (f64, usize) {
    let l = psd.len() as f64;
    let mut p = 0.0;
    let mut n = 0;
    for (i, v) in psd.iter().enumerate() {
        let f = (i as f64 - l / 2.0) / l;
        if f >= lo && f < hi {
            p += v;
            n += 1;
        }
    }
    (p, n)
}

fn side_db(main: f64, adj: f64) -> f64 {
    if adj <= 1e-30 * main {
        ACPR_CEILING_DB
    } else {
        10.0 * (main / adj).log10()
    }
}

/// Main channel `[-bw/2, bw/2)`, adjacent channels of equal width offset
/// by `bw + guard` on either side.
pub fn acpr_from_psd(psd: &[f64], channel_bw: f64, guard: f64) -> Result<AcprResult> {
    if !(channel_bw > 0.0) || !(guard >= 0.0) {
        return Err(Error::Config(format!(
            "channel_bw must be positive and guard non-negative, got {channel_bw}, {guard}"
        )));
    }
    if 1.5 * channel_bw + guard > 0.5 {
        return Err(Error::Headroom(format!(
            "main plus adjacent channels span +/-{} but the sampled band ends at 0.5; raise oversampling or narrow channel_bw",
            1.5 * channel_bw + guard
        )));
    }
    let half = channel_bw / 2.0;
    let (main, nm) = band_power(psd, -half, half);
    let (up, nu) = band_power(psd, half + guard, half + guard + channel_bw);
    let (low, nl) = band_power(psd, -half - guard - channel_bw, -half - guard);
    if nm == 0 || nu == 0 || nl == 0 {
        return Err(Error::Headroom(format!(
            "channel_bw {channel_bw} is narrower than one spectral bin"
        )));
    }
    if main == 0.0 {
        return Err(Error::Config("main channel carries no power".into()));
    }
    let lower_db = side_db(main, low);
    let upper_db = side_db(main, up);
    Ok(AcprResult {
        lower_db,
        upper_db,
        average_db: 0.5 * (lower_db + upper_db),
        channel_bw,
        guard,
    })
}

pub fn acpr(z: &[C64], channel_bw: f64, guard: f64) -> Result<AcprResult> {
    acpr_from_psd(&welch_psd(z)?, channel_bw, guard)
}
