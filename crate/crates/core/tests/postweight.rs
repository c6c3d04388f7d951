use nalgebra::DMatrix;
use proptest::prelude::*;
use pwdpd::pipeline::Pipeline;
use pwdpd::postweight::*;
use pwdpd::scenario::Scenario;
use pwdpd::C64;

const CANONICAL: &str = include_str!("../../cli/scenarios/canonical.json");

fn ratio() -> impl Strategy<Value = Ratio> {
    (1u64..5, 1u64..5).prop_filter_map("r in (0, 1]", |(a, b)| if a <= b { Ratio::new(a, b).ok() } else { None })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn layout_invariants(s in 1usize..40, q in 1usize..7, r in ratio(), nu in 0u32..4) {
        let lc = build_layout(Scheme::Lc, s, q, r, nu).unwrap();
        prop_assert_eq!(lc.counts.len(), q);
        prop_assert_eq!(lc.n_gamma, lc.counts.iter().sum::<usize>());
        prop_assert_eq!(lc.n_rf, lc.counts[0]);
        let mut hit = vec![false; lc.n_gamma];
        let mut offset = 0;
        for (qi, &cnt) in lc.counts.iter().enumerate() {
            let exact = s as f64 * r.value().powi((nu + qi as u32) as i32);
            prop_assert_eq!(cnt, if exact >= 1.0 { exact.floor() as usize } else { 1 });
            prop_assert!(cnt >= 1 && cnt <= s);
            for l in 0..s {
                let j = lc.index(qi, l);
                prop_assert!(j >= offset && j < offset + cnt);
                if l > 0 {
                    let prev = lc.index(qi, l - 1);
                    prop_assert!(j == prev || j == prev + 1, "groups are contiguous");
                }
                hit[j] = true;
            }
            offset += cnt;
        }
        prop_assert!(hit.iter().all(|h| *h), "assignment is surjective");
        let ones = expand_gamma(&lc, &vec![C64::new(1.0, 0.0); lc.n_gamma]).unwrap();
        prop_assert!(ones.iter().all(|v| *v == C64::new(1.0, 0.0)));
        let d = duplication_matrix(&lc);
        for j in 0..lc.n_gamma {
            prop_assert!(d.column(j).sum() >= 1.0);
        }
    }

    #[test]
    fn ff_is_lc_with_unit_ratio(s in 1usize..40, q in 1usize..7) {
        let ff = PwLayout::ff(s, q).unwrap();
        let lc = build_layout(Scheme::Lc, s, q, Ratio::ONE, 0).unwrap();
        prop_assert_eq!(&ff.counts, &lc.counts);
        prop_assert_eq!(&ff.assignment, &lc.assignment);
        prop_assert_eq!((ff.n_gamma, ff.n_adders, ff.n_rf), (lc.n_gamma, lc.n_adders, lc.n_rf));
        prop_assert_eq!(ff.n_gamma, s * q);
        prop_assert_eq!(ff.n_adders, s * q);
        prop_assert_eq!(ff.n_rf, s);
        let g: Vec<C64> = (0..ff.n_gamma).map(|i| C64::new(i as f64, -(i as f64))).collect();
        prop_assert_eq!(expand_gamma(&ff, &g).unwrap(), g);
    }

    #[test]
    fn closed_forms_match_enumeration(exp in 0u32..7, q in 1usize..7, nu in 0u32..4, den in 2u64..5) {
        let s = (den as usize).pow(exp.min(4));
        let r = Ratio::new(1, den).unwrap();
        let lc = build_layout(Scheme::Lc, s, q, r, nu).unwrap();
        prop_assert!((closed_form_n_gamma(s, q, r, nu) - lc.n_gamma as f64).abs() < 1e-9);
        prop_assert!((closed_form_n_adders(s, q, r, nu) - lc.n_adders as f64).abs() < 1e-9);
    }

    #[test]
    fn duplication_matrix_expands(s in 1usize..12, q in 1usize..5, r in ratio(), nu in 0u32..3) {
        let lc = build_layout(Scheme::Lc, s, q, r, nu).unwrap();
        let g: Vec<C64> = (0..lc.n_gamma).map(|i| C64::new(1.0 + i as f64, 0.5 * i as f64)).collect();
        let d = duplication_matrix(&lc).map(|v| C64::new(v, 0.0));
        let dg = d * DMatrix::from_column_slice(g.len(), 1, &g);
        let e = expand_gamma(&lc, &g).unwrap();
        for (a, b) in dg.iter().zip(&e) {
            prop_assert_eq!(a, b);
        }
    }
}

#[test]
fn invalid_layouts_rejected() {
    assert!(build_layout(Scheme::Lc, 0, 3, Ratio::ONE, 0).is_err());
    assert!(build_layout(Scheme::Lc, 4, 0, Ratio::ONE, 0).is_err());
    assert!(Ratio::new(0, 2).is_err());
    assert!(Ratio::new(3, 2).is_ok_and(|r| build_layout(Scheme::Lc, 4, 3, r, 1).is_err()));
    assert!(Ratio::new(1, 0).is_err());
    assert!(expand_gamma(&PwLayout::ff(2, 2).unwrap(), &[C64::default(); 3]).is_err());
}

#[test]
fn canonical_operators() {
    let p = Pipeline::prepare(&Scenario::from_json(CANONICAL).unwrap()).unwrap();
    let (_, dpd) = p.train(0).unwrap();
    let ctx = p.context(&dpd).unwrap();
    let ff = PwLayout::ff(16, 6).unwrap();
    let lc = build_layout(Scheme::Lc, 16, 6, Ratio::new(1, 2).unwrap(), 1).unwrap();
    let lc1 = build_layout(Scheme::Lc, 16, 6, Ratio::ONE, 0).unwrap();
    for angle in [-1.2, 0.0, 0.4] {
        let op = ctx.operator(&ff, angle).unwrap();
        assert_eq!((op.n_samples(), op.n_gamma()), (p.signals[0].len(), 96));
        // T 1 + z_res is the DPD-only nonlinear radiation by construction.
        let ones = vec![C64::new(1.0, 0.0); 96];
        let znl = ctx.z_nl(angle);
        let rad = op.radiation(&ones);
        let err = rad.iter().zip(&znl).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err:e}");
        // LC with r = 1 is structurally FF.
        let op1 = ctx.operator(&lc1, angle).unwrap();
        assert_eq!(op1.dense(), op.dense());
        // LC operator is the FF operator times the duplication matrix.
        let opl = ctx.operator(&lc, angle).unwrap();
        let d = duplication_matrix(&lc).map(|v| C64::new(v, 0.0));
        // FF compact order is q*S + l, matching the duplication rows.
        let want = op.dense() * d;
        assert!((opl.dense() - &want).norm() < 1e-12 * want.norm());
    }
    // The all-ones PW chain feeds exactly the predistorter output.
    let pw = ctx.pw_drives(&ff, &vec![C64::new(1.0, 0.0); 96]).unwrap();
    let dd = ctx.dpd_drives().unwrap();
    assert!((pw - &dd).norm() < 1e-13 * dd.norm());
}
