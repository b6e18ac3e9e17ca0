use coaglab::coagulation::coag_bilinear;
use coaglab::config::{ConfigError, RawConfig};
use coaglab::grid::{Grid, GridFunction};
use coaglab::observables::{moment, psi};
use coaglab::profiles::{
    oracle_m0_physical, oracle_m0_selfsim, oracle_m2_physical, oracle_m2_selfsim_corrected,
};
use coaglab::rates::fit_rate;
use proptest::prelude::*;

fn exp_mix(grid: Grid, terms: &[(f64, f64)]) -> GridFunction {
    GridFunction::from_fn(grid, |y| terms.iter().map(|(a, b)| a * (-b * y).exp()).sum()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fit_recovers_exponential_rate(rate in 0.05f64..3.0, amp in 1e-3f64..1e3, wiggle in 0.0f64..1e-3) {
        let t: Vec<f64> = (0..=80).map(|i| i as f64 * 0.05).collect();
        let v: Vec<f64> = t.iter().map(|t| amp * (-rate * t).exp() * (1.0 + wiggle * (7.0 * t).sin())).collect();
        let fit = fit_rate(&t, &v, (0.5, 4.0)).unwrap();
        prop_assert!((fit.rate - rate).abs() < 1e-3, "{} vs {}", fit.rate, rate);
        prop_assert!(!fit.truncated);
    }

    #[test]
    fn fast_convolution_matches_direct(
        exp in 4u32..9,
        f in prop::collection::vec(-1.0f64..1.0, 512),
        g in prop::collection::vec(-1.0f64..1.0, 512),
    ) {
        let n = 1usize << exp;
        let grid = Grid::new(n, 10.0).unwrap();
        let fast = grid.convolve_values(&f[..n], &g[..n]);
        let direct = grid.convolve_values_direct(&f[..n], &g[..n]);
        let scale = direct.iter().fold(1e-300f64, |m, v| m.max(v.abs()));
        let err = fast.iter().zip(&direct).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        prop_assert!(err / scale < 1e-10, "relative error {}", err / scale);
    }

    #[test]
    fn collision_operator_is_symmetric_and_conserves_mass(
        a in 0.5f64..4.0, b in 1.0f64..3.0, c in 0.5f64..4.0, d in 1.0f64..3.0,
    ) {
        let grid = Grid::new(2048, 40.0).unwrap();
        let g = exp_mix(grid, &[(a, b)]);
        let h = exp_mix(grid, &[(c, d), (0.5 * a, 2.0 * b)]);
        let gh = coag_bilinear(&g, &h).unwrap();
        let hg = coag_bilinear(&h, &g).unwrap();
        let asym = gh.sub(&hg).unwrap().max_abs();
        prop_assert!(asym <= 1e-12 * gh.max_abs().max(1.0));
        let gg = coag_bilinear(&g, &g).unwrap();
        let m0 = moment(&g, 0.0);
        let scale = m0 * moment(&g, 1.0);
        let flux = grid.integrate_values(gg.map_with_nodes(|y, v| y * v).unwrap().values());
        prop_assert!(flux.abs() < 1e-5 * scale, "mass flux {}", flux);
        let loss = grid.integrate_values(gg.values());
        prop_assert!((loss + 0.5 * m0 * m0).abs() < 1e-5 * m0 * m0, "number loss {}", loss);
    }

    #[test]
    fn moment_oracles_commute_with_frame_change(m0 in 0.1f64..20.0, m2 in 0.1f64..50.0, rho in 0.2f64..5.0, tau in 0.0f64..50.0) {
        let s = 1.0 + tau;
        let t = s.ln();
        let lhs = oracle_m0_selfsim(m0, t);
        prop_assert!((lhs - s * oracle_m0_physical(m0, tau)).abs() <= 1e-12 * lhs.abs().max(1.0));
        let lhs = oracle_m2_selfsim_corrected(m2, rho, t);
        prop_assert!((lhs - oracle_m2_physical(m2, rho, tau) / s).abs() <= 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn psi_is_nonnegative_and_continuous(x in -1.0f64..50.0) {
        prop_assert!(psi(x) >= 0.0);
        let h = 1e-9;
        if x + h <= 50.0 {
            prop_assert!((psi(x + h) - psi(x)).abs() <= 1e-6 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn config_round_trips(
        values in prop::collection::vec(-1e6f64..1e6, 4),
        pad in prop::collection::vec(0usize..3, 4),
        comments in prop::collection::vec(any::<bool>(), 4),
    ) {
        let keys = ["grid.y_max", "integrator.dt", "fit.t_lo", "datum.a"];
        let mut text = String::new();
        let mut lines = Vec::new();
        let mut line = 0;
        for i in 0..4 {
            if comments[i] {
                text.push_str("# note = ignored\n");
                line += 1;
            }
            let sp = " ".repeat(pad[i]);
            text.push_str(&format!("{sp}{}{sp}={sp}{}{sp}# trailing\n", keys[i], values[i]));
            line += 1;
            lines.push(line);
        }
        let raw = RawConfig::parse(&text).unwrap();
        for i in 0..4 {
            prop_assert_eq!(raw.get(keys[i]).unwrap().parse::<f64>().unwrap(), values[i]);
            prop_assert_eq!(raw.line(keys[i]), Some(lines[i]));
        }
        let bad = format!("{text}grid.nope = 1\n");
        match RawConfig::parse(&bad) {
            Err(ConfigError::UnknownKey { line: l, .. }) => prop_assert_eq!(l, line + 1),
            other => prop_assert!(false, "{:?}", other),
        }
        let dup = format!("{text}{} = 2\n", keys[0]);
        match RawConfig::parse(&dup) {
            Err(ConfigError::Duplicate { line: l, first, .. }) => {
                prop_assert_eq!(l, line + 1);
                prop_assert_eq!(first, lines[0]);
            }
            other => prop_assert!(false, "{:?}", other),
        }
    }
}
