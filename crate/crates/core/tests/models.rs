use proptest::prelude::*;
use pwdpd::array::{nominal_pa_coeffs, synthetic_pa_bank};
use pwdpd::poly::*;
use pwdpd::signal::*;
use pwdpd::{Error, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_block(n: usize, rms: f64, rng: &mut ChaCha8Rng) -> Vec<C64> {
    (0..n)
        .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * rms)
        .collect()
}

fn rel_err(a: &[C64], b: &[C64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum::<f64>().sqrt();
    num / den
}

#[test]
fn ls_round_trip_recovers_every_synthetic_pa() {
    // The (1,2) term has no nominal value; give it one so every coefficient
    // is exercised.
    let spec = BasisSpec::default_dpd();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for pa in synthetic_pa_bank(8, 0.05, 17).unwrap() {
        let mut coeffs = pa.coeffs.clone();
        *coeffs.last_mut().unwrap() = C64::new(0.003, -0.001);
        let x = random_block(2048, 0.6, &mut rng);
        let c = random_block(2048, 0.3, &mut rng);
        let y = eval_poly(&spec, &coeffs, &x, &c).unwrap();
        let fit = ls_identify(&spec, &x, &c, &y).unwrap();
        assert!(rel_err(&fit, &coeffs) < 1e-8, "{:e}", rel_err(&fit, &coeffs));
    }
}

#[test]
fn default_spec_shape() {
    let spec = BasisSpec::default_dpd();
    assert_eq!(spec.len(), 7);
    assert_eq!(spec.q(), 6);
    assert_eq!(spec.order_p(), 7);
    assert_eq!(nominal_pa_coeffs().len(), spec.len());
}

#[test]
fn strict_fit_rejects_degenerate_excitation() {
    let spec = BasisSpec::default_dpd();
    let x = vec![C64::new(0.3, 0.0); 64];
    let c = vec![C64::new(0.1, 0.0); 64];
    let err = ls_identify(&spec, &x, &c, &x).unwrap_err();
    assert!(matches!(err, Error::RankDeficient { .. }));
    let loose = ls_identify_with(&spec, &x, &c, &x, &LsOptions { cond_cap: 1e10, strict: false }).unwrap();
    assert!(loose.cond > 1e10);
}

#[test]
fn too_few_samples_is_an_error() {
    let spec = BasisSpec::default_dpd();
    let x = vec![C64::new(0.3, 0.1); 3];
    assert!(ls_identify(&spec, &x, &x, &x).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn model_json_round_trip_is_bit_exact(seed in any::<u64>(), spread in 0.0f64..0.2) {
        let pa = synthetic_pa_bank(1, spread, seed).unwrap().remove(0);
        let back = PaModel::from_json(&pa.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, pa);
    }

    #[test]
    fn linear_only_spec_reduces_to_gain(re in -2.0f64..2.0, im in -2.0f64..2.0, sr in -1.0f64..1.0, si in -1.0f64..1.0) {
        prop_assume!(re.abs() + im.abs() > 1e-3);
        let g = C64::new(re, im);
        let pa = PaModel::linear(g);
        let s = C64::new(sr, si);
        prop_assert!((pa.output(s, C64::new(5.0, -3.0)) - g * s).norm() < 1e-15);
    }

    #[test]
    fn evaluation_is_linear_in_coefficients(seed in any::<u64>(), a in -2.0f64..2.0) {
        let spec = BasisSpec::default_dpd();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_block(32, 0.5, &mut rng);
        let c = random_block(32, 0.2, &mut rng);
        let p1 = random_block(spec.len(), 1.0, &mut rng);
        let p2 = random_block(spec.len(), 1.0, &mut rng);
        let mix: Vec<C64> = p1.iter().zip(&p2).map(|(u, v)| u * a + v).collect();
        let y = eval_poly(&spec, &mix, &x, &c).unwrap();
        let y1 = eval_poly(&spec, &p1, &x, &c).unwrap();
        let y2 = eval_poly(&spec, &p2, &x, &c).unwrap();
        for n in 0..32 {
            prop_assert!((y[n] - (y1[n] * a + y2[n])).norm() < 1e-12);
        }
    }

    #[test]
    fn nmse_is_scale_invariant(seed in any::<u64>(), g in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_block(64, 1.0, &mut rng);
        let b = random_block(64, 1.0, &mut rng);
        let sa: Vec<C64> = a.iter().map(|v| v * g).collect();
        let sb: Vec<C64> = b.iter().map(|v| v * g).collect();
        prop_assert!((nmse_db(&a, &b).unwrap() - nmse_db(&sa, &sb).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn generated_signal_is_seeded(seed in any::<u64>()) {
        let cfg = SignalConfig::dense(32, 4, 2, seed);
        let a = generate_multicarrier(&cfg).unwrap();
        let b = generate_multicarrier(&cfg).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!((a.mean_power() - 1.0).abs() < 1e-9);
    }
}
