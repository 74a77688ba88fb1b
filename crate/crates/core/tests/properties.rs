use convtail::*;
use proptest::prelude::*;

fn family() -> impl Strategy<Value = Distribution> {
    prop_oneof![
        (0.5..4.0f64).prop_map(|b| make_parametric("pareto", &[b]).unwrap()),
        (0.2..3.0f64).prop_map(|a| make_parametric("exponential", &[a]).unwrap()),
        (0.1..1.0f64, 0.1..2.0f64).prop_map(|(c1, c2)| make_parametric("weibull_sq", &[c1, c2]).unwrap()),
        (0.2..2.0f64, 1.1..3.0f64).prop_map(|(a, r)| make_parametric("slowvary_exp", &[a, r]).unwrap()),
        (0.5..2.0f64, 0.2..0.9f64).prop_map(|(c, b)| make_parametric("weibull", &[c, b]).unwrap()),
    ]
}

/// Random atomic law on quarter-integers in `[0, 60]`.
fn atomic(max_atoms: usize) -> impl Strategy<Value = Distribution> {
    prop::collection::btree_map(1u32..240, 0.01..1.0f64, 2..max_atoms).prop_map(|m| {
        let pts: Vec<f64> = m.keys().map(|k| *k as f64 / 4.0).collect();
        let s: f64 = m.values().sum();
        let lm: Vec<f64> = m.values().map(|w| (w / s).ln()).collect();
        make_atomic(&pts, &lm).unwrap()
    })
}

fn grid() -> impl Strategy<Value = Distribution> {
    (0.05..0.5f64, prop::collection::vec(0.0..0.5f64, 4..40)).prop_map(|(dx, steps)| {
        let mut lt = vec![0.0];
        for s in steps {
            lt.push(lt.last().unwrap() - s - 1e-3);
        }
        make_grid(dx, &lt).unwrap()
    })
}

fn brute_tail(f: &Distribution, g: &Distribution, x: f64) -> f64 {
    let (a, b) = (f.as_atomic().unwrap(), g.as_atomic().unwrap());
    let mut s = 0.0;
    for (p, lp) in a.points().iter().zip(a.log_masses()) {
        for (q, lq) in b.points().iter().zip(b.log_masses()) {
            if p + q > x {
                s += (lp + lq).exp();
            }
        }
    }
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tails_are_non_increasing(f in prop_oneof![family(), atomic(20), grid()], a in 0.0..30.0f64, d in 0.0..30.0f64) {
        let b = (a + d).min(f.max_x());
        let a = a.min(b);
        prop_assert!(f.log_tail(a).unwrap() >= f.log_tail(b).unwrap());
    }

    #[test]
    fn atoms_are_tail_jumps(f in atomic(30)) {
        let a = f.as_atomic().unwrap();
        for (p, lm) in a.points().iter().zip(a.log_masses()) {
            let below = f.tail(p - 1e-9).unwrap();
            let at = f.tail(*p).unwrap();
            prop_assert!((below - at - lm.exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn counterexample_masses_sum_to_one(v in 1u8..=3, g in 1e-4..1.0f64, n in 3usize..20) {
        let f = counterexample(v, g, n).unwrap();
        let s: f64 = f.as_atomic().unwrap().log_masses().iter().map(|m| m.exp()).sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shift_mixture_sits_between(f in family(), x in 0.0..40.0f64) {
        prop_assume!(f.mean().is_finite());
        let m = shift_mixture(&f).unwrap();
        let (lo, hi) = (f.tail(x).unwrap(), f.tail(x - 1.0).unwrap());
        let t = m.tail(x).unwrap();
        prop_assert!(t >= lo * (1.0 - 1e-12) && t <= hi * (1.0 + 1e-12));
    }

    #[test]
    fn laplace_is_monotone_with_unit_origin(f in family(), g1 in 0.0..1.0f64, dg in 0.0..1.0f64) {
        prop_assert_eq!(laplace(&f, 0.0), ExtendedReal::ONE);
        let (a, b) = (laplace(&f, g1).to_f64(), laplace(&f, g1 + dg).to_f64());
        prop_assert!(b >= a * (1.0 - 1e-10), "{a} {b}");
    }

    #[test]
    fn atomic_tilt_round_trips(f in atomic(20), g in -1.0..1.0f64) {
        let back = exp_tilt(&exp_tilt(&f, g).unwrap(), -g).unwrap();
        for p in f.as_atomic().unwrap().points() {
            let (a, b) = (f.tail(*p - 1e-9).unwrap(), back.tail(*p - 1e-9).unwrap());
            prop_assert!((a - b).abs() <= 1e-8 * a);
        }
    }

    #[test]
    fn atomic_tilt_composes(f in atomic(20), g in -0.5..0.5f64, s in -0.5..0.5f64) {
        let t = exp_tilt(&f, g).unwrap();
        let got = laplace(&t, s).to_f64();
        let want = laplace(&f, g + s).to_f64() / laplace(&f, g).to_f64();
        prop_assert!((got / want - 1.0).abs() < 1e-8);
    }

    #[test]
    fn integrated_tail_is_convex(f in family()) {
        prop_assume!(f.mean().is_finite());
        let it = integrated_tail(&f, GridSpec::new(0.05, 20.0).unwrap()).unwrap();
        let t: Vec<f64> = (0..400).map(|k| it.tail(k as f64 * 0.05).unwrap()).collect();
        for w in t.windows(3) {
            prop_assert!(w[0] - 2.0 * w[1] + w[2] >= -1e-9, "{w:?}");
        }
    }

    #[test]
    fn atomic_convolution_conserves_mass(f in atomic(40), g in atomic(40)) {
        let c = conv_atomic(&f, &g).unwrap();
        let s: f64 = c.as_atomic().unwrap().log_masses().iter().map(|m| m.exp()).sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn atomic_tail_matches_enumeration(f in atomic(200), g in atomic(50), x in 0.0..120.0f64) {
        let brute = brute_tail(&f, &g, x);
        prop_assert!((conv_tail_at(&f, &g, x).unwrap().log_tail.exp() - brute).abs() < 1e-12);
        prop_assert!((conv_atomic(&f, &g).unwrap().tail(x).unwrap() - brute).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn convolution_commutes_within_bracket(f in family(), g in family(), x in 0.5..40.0f64) {
        let (a, b) = (conv_tail_at(&f, &g, x).unwrap(), conv_tail_at(&g, &f, x).unwrap());
        let rel = ((a.log_tail - b.log_tail).exp() - 1.0).abs();
        prop_assert!(rel <= a.rel_width() + b.rel_width() + 1e-12, "{rel}");
    }

    #[test]
    fn convolution_dominates_and_meets_lower_bound(f in prop_oneof![family(), atomic(20)], g in family(), x in 0.0..40.0f64) {
        let c = conv_tail_at(&f, &g, x).unwrap();
        let (tf, tg) = (f.tail(x).unwrap(), g.tail(x).unwrap());
        let up = c.log_upper.exp();
        prop_assert!(up >= tf.max(tg) * (1.0 - 1e-12));
        prop_assert!(up >= (tf * (1.0 - tg) + (1.0 - tf) * tg) * (1.0 - 1e-12));
    }

    #[test]
    fn stopped_sum_dominates_single_tail(f in atomic(8), q in 0.2..0.8f64, x in 0.0..80.0f64) {
        let tau = StoppingTimePmf::geometric(q).unwrap();
        let s = stopped_sum(&f, &tau).unwrap();
        prop_assert!(s.tail(x).unwrap() >= f.tail(x).unwrap() * (1.0 - 1e-9));
    }

    #[test]
    fn h_construction_invariants(beta in 1.2..3.0f64, delta in 0.2..0.9f64) {
        let f = make_parametric("pareto", &[beta]).unwrap();
        let h = construct_h(&f, delta, 8).unwrap();
        prop_assert!(h.slopes.windows(2).all(|w| w[1] < w[0]));
        for (n, x) in h.breakpoints.iter().enumerate().skip(1) {
            prop_assert!(f.tail(*x).unwrap() < delta / 2f64.powi(n as i32));
        }
        prop_assert!(*h.slopes.last().unwrap() < h.slopes[0] / 2.0);
        let d = verify_h(&h, &f, 2000, 11).unwrap();
        prop_assert_eq!(d.subadd_violations, 0);
    }

    #[test]
    fn self_ratio_meets_lower_bound(beta in 1.0..4.0f64) {
        let f = make_parametric("pareto", &[beta]).unwrap();
        let cfg = AnalysisConfig { horizon: 200.0, n_points: 32, ..Default::default() };
        let c = ratio_curve(&f, &cfg).unwrap();
        prop_assert!(c.running_min.windows(2).all(|w| w[1] <= w[0]));
        for (x, r) in c.xs.iter().zip(&c.ratio) {
            let lower = 2.0 * (1.0 - f.tail(*x).unwrap());
            prop_assert!(*r >= lower - cfg.tol, "x={x} r={r}");
        }
    }

    #[test]
    fn verdicts_need_a_full_band_to_flip(target in 0.5..10.0f64, a in 0.5..2.0f64, tol in 0.01..0.2f64, d in -1.0..1.0f64) {
        // observations closer than tol·target never jump satisfied → violated
        let o1 = a * target;
        let o2 = o1 + d * tol * target * 0.999;
        prop_assume!(o2 > 0.0);
        let (s1, s2) = (Status::two_sided(o1, target, tol), Status::two_sided(o2, target, tol));
        prop_assert!(!(s1 == Status::Satisfied && s2 == Status::Violated));
    }

    #[test]
    fn specs_reingest_losslessly(f in prop_oneof![family(), atomic(30), grid()], x in 0.0..60.0f64) {
        let x = x.min(f.max_x());
        let back = DistSpec::from_json(&DistSpec::of(&f).to_json()).unwrap().build().unwrap();
        let (a, b) = (f.log_tail(x).unwrap(), back.log_tail(x).unwrap());
        prop_assert!(a == b || (a - b).abs() < 1e-12);
    }
}

#[test]
fn grid_tilt_lifts_numeric_abscissa() {
    // numeric γ̂ of a tilted tabulated exponential drops by the tilt
    let f = sample_to_grid(&make_parametric("exponential", &[1.5]).unwrap(), 0.01, 60.0).unwrap();
    let t = exp_tilt(&f, 0.5).unwrap();
    let s = gamma_hat(&t);
    assert_eq!(s.method, Method::NumericFit);
    let g = s.gamma_hat.to_f64();
    assert!((g - 1.0).abs() < 0.02, "{g}");
}

#[test]
fn slowvary_tilt_composes() {
    let f = make_parametric("slowvary_exp", &[1.0, 2.0]).unwrap();
    for (g, s) in [(0.25, 0.5), (0.6, -0.3)] {
        let got = laplace(&exp_tilt(&f, g).unwrap(), s).to_f64();
        let want = laplace(&f, g + s).to_f64() / laplace(&f, g).to_f64();
        assert!((got / want - 1.0).abs() < 1e-8);
    }
}
