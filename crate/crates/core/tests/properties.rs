use proptest::prelude::*;

use slowfast::analysis::classify;
use slowfast::characteristics::{chi_endpoint, lambda_general, lambda_h_independent};
use slowfast::heteroclinic::{compute_heteroclinic, compute_heteroclinic_through_peak};
use slowfast::models::chemostat::{chemostat_chi, chemostat_reduced};
use slowfast::models::epidemic::epidemic_n0;
use slowfast::models::toy::toy;
use slowfast::verification::predicted_exit;
use slowfast::{ChemostatParams, EpidemicParams, HeteroclinicSettings, Response, SlowFastModel, Stability};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // b + (a - shift)^2 / 2 is a first integral of the k = 0 toy
    #[test]
    fn toy_orbit_conserves_energy(shift in -1.0f64..1.0, off in 0.2f64..1.6) {
        let m = toy(shift, 0.0, 2.0);
        let o = compute_heteroclinic(&m, shift + off, &HeteroclinicSettings::default()).unwrap();
        let e0 = off * off / 2.0;
        for (_, a, b) in o.path.samples() {
            prop_assert!(b > 0.0);
            prop_assert!((b + (a - shift).powi(2) / 2.0 - e0).abs() < 1e-7 * (1.0 + e0));
        }
        prop_assert!((o.a_omega - (shift - off)).abs() < 1e-6);
        let (chi, err) = chi_endpoint(&m, &o).unwrap();
        prop_assert!(chi.abs() <= 10.0 * err + 1e-12, "chi {} err {}", chi, err);
    }

    #[test]
    fn toy_exit_is_mirror_image(shift in -1.0f64..1.0, depth in 0.1f64..1.8) {
        let m = toy(shift, 0.0, 2.0);
        let exit = predicted_exit(&m, shift - depth).unwrap();
        prop_assert!((exit - (shift + depth)).abs() < 1e-9);
    }

    // the generic chi is a fixed negative multiple of the closed form
    #[test]
    fn chemostat_chi_matches_closed_form(x0 in 4.0f64..9.8, a in 1.0f64..2.0) {
        let p = ChemostatParams { response: Response::HollingII { a, b: 3.0 }, ..ChemostatParams::example() };
        let m = chemostat_reduced(p).unwrap();
        let o = compute_heteroclinic_through_peak(&m, x0, &HeteroclinicSettings::default()).unwrap();
        let abar = m.domain().a_bar;
        prop_assert!(o.a_omega < abar && abar < o.a_alpha);
        let (ce, err) = chi_endpoint(&m, &o).unwrap();
        let closed = chemostat_chi(&p, &o).unwrap();
        prop_assert!((ce - p.chi_factor() * closed).abs() <= err + 1e-10 * ce.abs());
    }

    // with h independent of a the simplified lambda equals the general one
    #[test]
    fn toy_lambda_forms_agree(k in 0.0f64..0.8, off in 0.3f64..1.5) {
        let m = toy(0.0, k, 3.0);
        let o = compute_heteroclinic(&m, off, &HeteroclinicSettings::default()).unwrap();
        let (lg, eg) = lambda_general(&m, &o).unwrap();
        let (lh, eh) = lambda_h_independent(&m, &o).unwrap();
        prop_assert!((lg - lh).abs() <= eg + eh + 1e-12);
    }

    #[test]
    fn classification_respects_threshold(l in -1.0f64..1.0, e in 0.0f64..0.1, base in 1e-6f64..1e-2) {
        let tol = base + 3.0 * e;
        let s = classify(l, e, base);
        match s {
            Stability::Stable => prop_assert!(l < -tol),
            Stability::Unstable => prop_assert!(l > tol),
            Stability::Degenerate => prop_assert!(l.abs() <= tol),
        }
    }

    #[test]
    fn epidemic_threshold_solves_balance(n_max in 200.0f64..600.0, beta in 0.5f64..1.5) {
        let p = EpidemicParams { n_max, beta, ..EpidemicParams::case1() };
        // the incidence saturates at beta, so no threshold exists below a_comb
        if beta <= p.a_comb() {
            prop_assert!(epidemic_n0(&p).is_err());
            return Ok(());
        }
        let n0 = epidemic_n0(&p).unwrap();
        prop_assert!(n0 > 0.0 && n0 < n_max);
        prop_assert!((p.incidence(p.k() * n0, n0) - p.a_comb()).abs() < 1e-10);
    }
}
