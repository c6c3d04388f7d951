use nalgebra::DMatrix;
use proptest::prelude::*;
use pwdpd::array::*;
use pwdpd::pipeline::Pipeline;
use pwdpd::poly::BasisSpec;
use pwdpd::scenario::Scenario;
use pwdpd::signal::{generate_multicarrier, nmse_db, SignalConfig};
use pwdpd::train::*;
use pwdpd::C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CANONICAL: &str = include_str!("../../cli/scenarios/canonical.json");

// Regression fixtures from the first verified canonical run.
const PINNED_ITERATIONS: usize = 6;
const PINNED_NMSE_BEFORE_DB: f64 = -27.7789;
const PINNED_NMSE_AFTER_DB: f64 = -88.2951;

fn canonical() -> Pipeline {
    Pipeline::prepare(&Scenario::from_json(CANONICAL).unwrap()).unwrap()
}

#[test]
fn canonical_training_converges_and_linearizes() {
    let p = canonical();
    let r = p.train_report(0).unwrap();
    let t = &r.training;
    assert!(t.converged);
    assert!(t.iterations <= 50);
    assert!(*t.phi_trace.last().unwrap() < 1e-6);
    assert!(r.nmse_before_db - r.nmse_after_db >= 20.0);
    assert_eq!(t.iterations, PINNED_ITERATIONS);
    assert!((r.nmse_before_db - PINNED_NMSE_BEFORE_DB).abs() < 0.01, "{}", r.nmse_before_db);
    assert!((r.nmse_after_db - PINNED_NMSE_AFTER_DB).abs() < 0.5, "{}", r.nmse_after_db);
}

#[test]
fn converged_dpd_is_a_post_inverse_fixed_point() {
    let p = canonical();
    let (_, t) = p.train(0).unwrap();
    let ctx = p.context(&t).unwrap();
    let y = simulate_drives(&p.truth, &ctx.dpd_drives().unwrap(), SimMode::FixedPointExact).unwrap().y;
    let z = beam_output(&y, &p.truth.geometry, 0, p.scenario.phi0);
    let refit = refit_phi(&t.spec, &z, t.g0, &t.c_k, &ctx.dpd_out).unwrap();
    let num: f64 = refit.iter().zip(&t.phi_k).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
    let den: f64 = t.phi_k.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    assert!(num / den < 1e-6, "{:e}", num / den);

    let g = best_scalar_gain(&z, &p.signals[0]);
    assert!((g - t.g0).norm() / t.g0.norm() < 0.05);
}

#[test]
fn op_counts_follow_the_cost_model() {
    let p = canonical();
    let (_, t) = p.train(0).unwrap();
    let n = p.signals[0].len() as u64;
    let (ls, xt) = training_cost(6, 2, 16);
    assert_eq!((ls, xt), (49, 64));
    assert_eq!(t.ops.ls_calls as usize, t.iterations);
    assert_eq!(t.ops.ls_madds, t.iterations as u64 * n * ls as u64);
    // One c_k refresh per iteration plus the initial one, each touching
    // every subarray; training all K subarrays multiplies by K.
    let per_iter_all = t.ops.xtalk_madds as f64 / (t.iterations + 1) as f64 / n as f64 * 2.0;
    let ratio = per_iter_all / xt as f64;
    assert!((0.5..2.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn ideal_linear_array_needs_no_predistortion() {
    let geom = ArrayGeometry::new(2, 4, 0.5).unwrap();
    let g = C64::new(0.9, 0.2);
    let m = ArrayModel::new(
        geom,
        BeamWeights::steered(&geom, 0.1),
        vec![pwdpd::poly::PaModel::linear(g); 8],
        build_crosstalk(&geom, None, Decay::InverseSquare, PhaseRule::Alternating).unwrap(),
    )
    .unwrap();
    let s_all: Vec<Vec<C64>> = (0..2)
        .map(|i| generate_multicarrier(&SignalConfig::dense(64, 4, 1, i)).unwrap().scaled(0.3).samples)
        .collect();
    let t = train_bo_dpd(&m, &m, 0, 0.1, &s_all, &[C64::default(); 2], &BasisSpec::default_dpd(), &TrainOptions::default()).unwrap();
    assert!(t.converged && t.iterations <= 2, "{} iterations", t.iterations);
    assert!((t.phi_k[0] - C64::new(1.0, 0.0)).norm() < 1e-9);
    assert!(t.phi_k[1..].iter().all(|v| v.norm() < 1e-9));
}

#[test]
fn zero_iterations_is_not_converged() {
    let p = canonical();
    let lam = p.estimate_lambda(0).unwrap();
    let opts = TrainOptions {
        max_iter: 0,
        ..p.train_options()
    };
    let t = train_bo_dpd(&p.truth, &p.est, 0, 0.0, &p.signals, &lam.lambda_k, &p.scenario.dpd.spec, &opts).unwrap();
    assert!(!t.converged);
    assert_eq!(t.iterations, 0);
}

#[test]
fn g_terms_reproduce_the_measured_beam() {
    let p = canonical();
    let lam = p.estimate_lambda(0).unwrap();
    let g = assemble_g_terms(&p.est, 0, p.scenario.phi0, &p.signals).unwrap();
    let l = nalgebra::DVector::from_column_slice(&lam.lambda_k);
    let model: Vec<C64> = (0..g.g0.len())
        .map(|n| g.g0[n] + (g.g1.row(n) * &l)[0] + (g.g2.row(n) * l.conjugate())[0])
        .collect();
    let y = simulate_subarrays(&p.truth, &p.signals, SimMode::FixedPointExact).unwrap().y;
    let z = beam_output(&y, &p.truth.geometry, 0, p.scenario.phi0);
    let nmse = nmse_db(&z, &model).unwrap();
    assert!(nmse < -40.0, "{nmse} dB");
}

#[test]
fn crosstalk_insensitive_pas_have_empty_g_terms() {
    let geom = ArrayGeometry::new(2, 3, 0.5).unwrap();
    let pas = vec![pwdpd::poly::PaModel::linear(C64::new(1.0, 0.0)); 6];
    let m = ArrayModel::new(geom, BeamWeights::steered(&geom, 0.0), pas, build_crosstalk(&geom, Some(-10.0), Decay::InverseSquare, PhaseRule::Alternating).unwrap()).unwrap();
    let s_all = vec![vec![C64::new(0.1, 0.2); 16]; 2];
    let g = assemble_g_terms(&m, 1, 0.4, &s_all).unwrap();
    assert_eq!(g.g1.norm(), 0.0);
    assert_eq!(g.g2.norm(), 0.0);
}

/// `x^T W_D^T D_1^T lambda` built literally.
fn c_k_literal(x_all: &[Vec<C64>], w: &[C64], lambda: &[C64], s: usize) -> Vec<C64> {
    let k = x_all.len();
    let n = x_all[0].len();
    let ks = k * s;
    let x = DMatrix::from_fn(ks, n, |j, t| x_all[j / s][t]);
    let wd = DMatrix::from_fn(ks, ks, |a, b| if a == b { w[a] } else { C64::default() });
    let d1 = DMatrix::from_fn(k, ks, |i, j| if j / s == i { C64::new(1.0, 0.0) } else { C64::default() });
    let lam = DMatrix::from_column_slice(k, 1, lambda);
    let c = x.transpose() * wd.transpose() * d1.transpose() * lam;
    c.iter().cloned().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn c_k_matches_literal_matrices(k in 1usize..4, s in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut z = || C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let x_all: Vec<Vec<C64>> = (0..k).map(|_| (0..20).map(|_| z()).collect()).collect();
        let lambda: Vec<C64> = (0..k).map(|_| z()).collect();
        let w: Vec<C64> = (0..k * s).map(|_| { let v = z(); v / v.norm() }).collect();
        let weights = BeamWeights::new(w.clone()).unwrap();
        let got = compute_c_k(&x_all, &weights, &lambda).unwrap();
        let want = c_k_literal(&x_all, &w, &lambda, s);
        for (a, b) in got.iter().zip(&want) {
            prop_assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn training_cost_formula(q in 0usize..10, k in 1usize..6, s in 1usize..40) {
        prop_assert_eq!(training_cost(q, k, s), ((q + 1) * (q + 1), k * k * s));
    }
}
