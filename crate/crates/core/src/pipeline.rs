//! End-to-end orchestration of a scenario: build the true and estimated
//! arrays, train the predistorters, optimize the post-weighting layouts and
//! evaluate them.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::array::{build_crosstalk, synthetic_pa_bank, ArrayGeometry, ArrayModel, BeamWeights, SimMode};
use crate::metrics::{self, AcprResult, SweepResult};
use crate::poly::{ls_identify, PaModel};
use crate::postweight::{build_layout, PwLayout, RadiationContext};
use crate::pwopt::{assemble_problem, oracle_solve, solve_kkt, ConstraintMode, KktOptions, OptResult, QuadraticProblem};
use crate::scenario::{LayoutSpec, Scenario};
use crate::signal::generate_multicarrier;
use crate::train::{estimate_lambda, train_bo_dpd, EstimateOptions, LambdaEstimate, TrainOptions, TrainingResult};
use crate::{Error, Result, C64};

/// Samples used to identify each PA model.
pub const IDENT_SAMPLES: usize = 4096;

pub struct Pipeline {
    pub scenario: Scenario,
    /// Simulated hardware.
    pub truth: ArrayModel,
    /// What the transmitter believes about the hardware.
    pub est: ArrayModel,
    /// Message signal of every subarray.
    pub signals: Vec<Vec<C64>>,
    pub angles: Vec<f64>,
}

/// Fits one PA from random excitation of both of its inputs.
pub fn identify_pa(pa: &PaModel, drive_rms: f64, rng: &mut ChaCha8Rng) -> Result<PaModel> {
    let dist = Normal::new(0.0, drive_rms / 2f64.sqrt()).map_err(|e| Error::Config(e.to_string()))?;
    let mut draw = |n: usize| -> Vec<C64> { (0..n).map(|_| C64::new(dist.sample(rng), dist.sample(rng))).collect() };
    let x = draw(IDENT_SAMPLES);
    let c = draw(IDENT_SAMPLES);
    let y: Vec<C64> = x.iter().zip(&c).map(|(u, v)| pa.output(*u, *v)).collect();
    PaModel::new(pa.spec.clone(), ls_identify(&pa.spec, &x, &c, &y)?)
}

impl Pipeline {
    pub fn prepare(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let sc = scenario.clone();
        let a = &sc.array;
        let geom = ArrayGeometry::new(a.k, a.s, a.spacing)?;
        let weights = BeamWeights::steered(&geom, sc.phi0);
        let pas = synthetic_pa_bank(geom.n_elements(), a.pa_spread, sc.seeds.pa_bank)?;
        let lambda_prime = build_crosstalk(&geom, a.adjacent_db, a.decay, a.phase)?;
        let truth = ArrayModel::new(geom, weights, pas, lambda_prime)?;
        let est = if a.identify_pas {
            let mut rng = ChaCha8Rng::seed_from_u64(sc.seeds.identification);
            let fitted = truth
                .pas
                .iter()
                .map(|pa| identify_pa(pa, sc.signal.drive_rms, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            truth.with_pas(fitted)?
        } else {
            truth.clone()
        };
        let signals = (0..a.k)
            .map(|i| {
                let block = generate_multicarrier(&sc.signal.config(sc.seeds.signal.wrapping_add(i as u64)))?;
                Ok(block.scaled(sc.signal.drive_rms).samples)
            })
            .collect::<Result<Vec<_>>>()?;
        let angles = metrics::angle_grid(sc.sweep_range.0, sc.sweep_range.1, sc.sweep_points);
        Ok(Self {
            scenario: sc,
            truth,
            est,
            signals,
            angles,
        })
    }

    pub fn train_options(&self) -> TrainOptions {
        let d = &self.scenario.dpd;
        TrainOptions {
            tol: d.tol,
            max_iter: d.max_iter,
            noise_rms: d.noise_rms,
            noise_seed: self.scenario.seeds.noise,
            ..TrainOptions::default()
        }
    }

    pub fn estimate_lambda(&self, k: usize) -> Result<LambdaEstimate> {
        estimate_lambda(
            &self.truth,
            &self.est,
            k,
            self.scenario.phi0,
            &self.signals,
            SimMode::FixedPointExact,
            &EstimateOptions::default(),
        )
    }

    /// Crosstalk estimation followed by DPD identification of subarray `k`;
    /// the other subarrays transmit their message signals.
    pub fn train(&self, k: usize) -> Result<(LambdaEstimate, TrainingResult)> {
        let lam = self.estimate_lambda(k)?;
        let res = train_bo_dpd(
            &self.truth,
            &self.est,
            k,
            self.scenario.phi0,
            &self.signals,
            &lam.lambda_k,
            &self.scenario.dpd.spec,
            &self.train_options(),
        )?;
        if !res.converged {
            log::warn!("subarray {k}: DPD training stopped after {} iterations without converging", res.iterations);
        }
        Ok((lam, res))
    }

    pub fn context(&self, dpd: &TrainingResult) -> Result<RadiationContext> {
        RadiationContext::new(&self.truth, &self.est, dpd, &self.signals)
    }

    pub fn build_layout(&self, spec: &LayoutSpec) -> Result<PwLayout> {
        build_layout(spec.scheme, self.scenario.array.s, self.scenario.dpd.spec.q(), spec.r, spec.nu)
    }

    pub fn optimize_angles(&self) -> Vec<f64> {
        let (lo, hi) = self.scenario.optimize_range();
        self.angles
            .iter()
            .copied()
            .filter(|a| *a >= lo - 1e-12 && *a <= hi + 1e-12)
            .collect()
    }

    pub fn problem(&self, ctx: &RadiationContext, layout: &PwLayout) -> Result<QuadraticProblem> {
        let ops = self
            .optimize_angles()
            .iter()
            .map(|&a| ctx.operator(layout, a))
            .collect::<Result<Vec<_>>>()?;
        let op0 = ctx.operator(layout, self.scenario.phi0)?;
        assemble_problem(&ops, &op0, self.scenario.optimize.constraint)
    }

    pub fn optimize(&self, ctx: &RadiationContext, spec: &LayoutSpec) -> Result<Solution> {
        let layout = self.build_layout(spec)?;
        let problem = self.problem(ctx, &layout)?;
        let o = &self.scenario.optimize;
        let result = solve_kkt(
            &problem,
            &KktOptions {
                ridge: o.ridge,
                auto_ridge: o.auto_ridge,
            },
        )?;
        Ok(Solution {
            name: spec.name.clone(),
            layout,
            problem,
            result,
        })
    }

    /// Drives of a named scheme: `dnr`, `dpd` or one of `solutions`.
    pub fn scheme_drives(&self, ctx: &RadiationContext, scheme: &str, solutions: &[Solution]) -> Result<DMatrix<C64>> {
        match scheme {
            "dnr" => crate::array::subarray_drives(&self.truth.geometry, &self.signals),
            "dpd" => ctx.dpd_drives(),
            name => {
                let sol = find(solutions, name)?;
                ctx.pw_drives(&sol.layout, &sol.result.gamma_hat)
            }
        }
    }

    pub fn sweep(&self, ctx: &RadiationContext, schemes: &[String], solutions: &[Solution]) -> Result<SweepResult> {
        let mut out = SweepResult::new(self.angles.clone());
        for s in schemes {
            let curve = match s.as_str() {
                "dnr" => metrics::dnr_sweep(&self.truth, ctx, &self.angles)?,
                "dpd" => metrics::radiation_sweep(&self.truth, ctx, None, None, &self.angles)?,
                name => {
                    let sol = find(solutions, name)?;
                    metrics::radiation_sweep(&self.truth, ctx, Some(&sol.layout), Some(&sol.result.gamma_hat), &self.angles)?
                }
            };
            out.push(s, curve)?;
        }
        Ok(out)
    }

    /// ACPR of the beam received in the steering direction.
    pub fn acpr(&self, ctx: &RadiationContext, scheme: &str, solutions: &[Solution]) -> Result<AcprResult> {
        let drives = self.scheme_drives(ctx, scheme, solutions)?;
        let z = metrics::beam_blocks(&self.truth, ctx.k, &drives, &[self.scenario.phi0])?;
        metrics::acpr(&z[0], self.scenario.acpr.channel_bw, self.scenario.acpr.guard)
    }

    /// ACPR of the spectrum averaged over every angle of the sweep grid.
    pub fn acpr_angle_averaged(&self, ctx: &RadiationContext, scheme: &str, solutions: &[Solution]) -> Result<AcprResult> {
        let drives = self.scheme_drives(ctx, scheme, solutions)?;
        let blocks = metrics::beam_blocks(&self.truth, ctx.k, &drives, &self.angles)?;
        let psds = blocks.iter().map(|b| metrics::welch_psd(b)).collect::<Result<Vec<_>>>()?;
        metrics::acpr_from_psd(&metrics::average_psd(&psds)?, self.scenario.acpr.channel_bw, self.scenario.acpr.guard)
    }
}

fn find<'a>(solutions: &'a [Solution], name: &str) -> Result<&'a Solution> {
    solutions
        .iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::Config(format!("unknown scheme '{name}' (expected dnr, dpd or a layout name)")))
}

pub struct Solution {
    pub name: String,
    pub layout: PwLayout,
    pub problem: QuadraticProblem,
    pub result: OptResult,
}

/// Relative disagreement between the closed-form and the null-space
/// solutions, in the solution and in the objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub gamma_rel_diff: f64,
    pub objective_rel_diff: f64,
}

impl Verification {
    pub fn worst(&self) -> f64 {
        self.gamma_rel_diff.max(self.objective_rel_diff)
    }
}

pub fn verify(sol: &Solution) -> Result<Verification> {
    let oracle = oracle_solve(&sol.problem, sol.result.ridge_used)?;
    let g = &sol.result.gamma_hat;
    let diff: f64 = g.iter().zip(&oracle).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
    let norm: f64 = oracle.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let f_kkt = sol.result.objective_at_opt;
    let f_or = crate::pwopt::evaluate_objective(&sol.problem, &oracle);
    Ok(Verification {
        gamma_rel_diff: diff / norm.max(f64::MIN_POSITIVE),
        objective_rel_diff: (f_kkt - f_or).abs() / f_or.abs().max(f64::MIN_POSITIVE),
    })
}

/// Optimization result document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptReport {
    pub name: String,
    pub layout: PwLayout,
    pub constraint: ConstraintMode,
    pub optimize_range: (f64, f64),
    pub n_angles: usize,
    pub result: OptResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verification: Option<Verification>,
}

/// Training result document for one subarray.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub lambda: LambdaEstimate,
    pub training: TrainingResult,
    /// Beam-direction NMSE of the untrained and trained chains (dB).
    pub nmse_before_db: f64,
    pub nmse_after_db: f64,
}

impl Pipeline {
    /// NMSE of the beam towards `phi0` against `G0 s_k` without and with
    /// the trained predistorter of subarray `k`.
    pub fn beam_nmse(&self, dpd: &TrainingResult) -> Result<(f64, f64)> {
        let k = dpd.subarray;
        let phi0 = self.scenario.phi0;
        let before = metrics::beam_blocks(
            &self.truth,
            k,
            &crate::array::subarray_drives(&self.truth.geometry, &self.signals)?,
            &[phi0],
        )?;
        let ctx = self.context(dpd)?;
        let after = metrics::beam_blocks(&self.truth, k, &ctx.dpd_drives()?, &[phi0])?;
        let sk = &self.signals[k];
        Ok((
            crate::train::beam_nmse_db(&before[0], dpd.g0, sk)?,
            crate::train::beam_nmse_db(&after[0], dpd.g0, sk)?,
        ))
    }

    pub fn train_report(&self, k: usize) -> Result<TrainReport> {
        let (lambda, training) = self.train(k)?;
        let (nmse_before_db, nmse_after_db) = self.beam_nmse(&training)?;
        Ok(TrainReport {
            lambda,
            training,
            nmse_before_db,
            nmse_after_db,
        })
    }

    pub fn opt_report(&self, sol: &Solution, verification: Option<Verification>) -> OptReport {
        OptReport {
            name: sol.name.clone(),
            layout: sol.layout.clone(),
            constraint: self.scenario.optimize.constraint,
            optimize_range: self.scenario.optimize_range(),
            n_angles: self.optimize_angles().len(),
            result: sol.result.clone(),
            verification,
        }
    }
}
