//! chi(s) and lambda(s) along a heteroclinic orbit.
//!
//! Path integrals `int_gamma F da` are evaluated in time on the dense output
//! using `da = b h dt`, so the lambda integrands `d_a h / h` and `d_b g / h`
//! become `b d_a h` and `b d_b g` and stay bounded through the peak.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heteroclinic::HeteroclinicOrbit;
use crate::model::{self, SlowFastModel};
use crate::quadrature::{self, Quad, QuadOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaForm {
    General,
    SeparableFh,
    HIndependent,
    GFactor,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndpointData {
    pub a_alpha: f64,
    pub a_omega: f64,
    pub f_alpha: f64,
    pub f_omega: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicValues {
    pub s: f64,
    pub chi: f64,
    pub chi_err: f64,
    pub lambda: f64,
    pub lambda_err: f64,
    pub lambda_form: LambdaForm,
    pub endpoint_data: EndpointData,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineChi {
    pub chi: f64,
    pub chi_err: f64,
    /// chi_line - chi_endpoint
    pub discrepancy: f64,
}

fn quad_opts() -> QuadOptions {
    QuadOptions { abs_tol: 1e-13, rel_tol: 1e-12, max_intervals: 20_000 }
}

fn chi_integrand(model: &dyn SlowFastModel, a: f64) -> Result<f64> {
    let f = model.f(a, 0.0, 0.0);
    if !(f > 0.0) {
        return Err(Error::Domain(format!("f({a},0,0) = {f:e} is not positive")));
    }
    Ok(model.g(a, 0.0, 0.0) / f)
}

/// Adaptive quadrature that records the first domain error raised by the
/// integrand.
fn guarded_quad(xs: &[f64], f: &dyn Fn(f64) -> Result<f64>) -> Result<Quad> {
    let err = std::cell::RefCell::new(None);
    let q = quadrature::integrate_pieces(
        &|x| match f(x) {
            Ok(v) => v,
            Err(e) => {
                err.borrow_mut().get_or_insert(e);
                0.0
            }
        },
        xs,
        &quad_opts(),
    );
    match err.into_inner() {
        Some(e) => Err(e),
        None => Ok(q),
    }
}

/// chi = int_{a_omega}^{a_alpha} g(a,0,0)/f(a,0,0) da.
pub fn chi_endpoint(model: &dyn SlowFastModel, orbit: &HeteroclinicOrbit) -> Result<(f64, f64)> {
    chi_between(model, orbit.a_omega, orbit.a_alpha, orbit.endpoint_err)
}

/// Endpoint integral between arbitrary limits with endpoint uncertainty
/// `sigma` folded into the error.
pub fn chi_between(model: &dyn SlowFastModel, lo: f64, hi: f64, sigma: f64) -> Result<(f64, f64)> {
    let q = guarded_quad(&[lo, hi], &|a| chi_integrand(model, a))?;
    let w = chi_integrand(model, lo)?.abs() + chi_integrand(model, hi)?.abs();
    Ok((q.value, q.error + w * sigma))
}

/// Time integral of `F(a, b) b` over the path plus first-order tails below
/// b_stop at both ends, where b is exponential and `int b dt = b / |g|`.
pub(crate) fn path_integral(
    model: &dyn SlowFastModel,
    orbit: &HeteroclinicOrbit,
    integrand: &dyn Fn(f64, f64) -> f64,
) -> Result<(f64, f64)> {
    let path = &orbit.path;
    let q = guarded_quad(path.times(), &|t| {
        let (a, u) = path
            .log_state_at(t)
            .ok_or_else(|| Error::Domain(format!("t={t} outside orbit path")))?;
        let b = u.exp();
        let h = model.h(a, b, 0.0);
        if !(h < 0.0) {
            return Err(Error::Domain(format!("h({a},{b:e},0) = {h:e} does not stay negative on the path")));
        }
        Ok(integrand(a, b) * b)
    })?;
    let mut tail = 0.0;
    for (a, b) in [path.start(), path.end()] {
        let g = model.g(a, b, 0.0).abs().max(1e-300);
        tail += integrand(a, b) * b / g;
    }
    Ok((q.value + tail, q.error + 1e-3 * tail.abs()))
}

/// chi as the line integral of g(a,0,0)/f(a,0,0) da along the orbit.
pub fn chi_line_integral(model: &dyn SlowFastModel, orbit: &HeteroclinicOrbit) -> Result<LineChi> {
    let err_cell = std::cell::RefCell::new(None);
    let w = |a: f64| match chi_integrand(model, a) {
        Ok(v) => v,
        Err(e) => {
            err_cell.borrow_mut().get_or_insert(e);
            0.0
        }
    };
    let (along, along_err) = path_integral(model, orbit, &|a, b| w(a) * model.h(a, b, 0.0))?;
    if let Some(e) = err_cell.into_inner() {
        return Err(e);
    }
    // the path runs from alpha to omega, chi integrates the other way
    let chi = -along;
    let (ce, ce_err) = chi_endpoint(model, orbit)?;
    Ok(LineChi { chi, chi_err: along_err + ce_err, discrepancy: chi - ce })
}

fn log_ratio(model: &dyn SlowFastModel, orbit: &HeteroclinicOrbit) -> Result<f64> {
    let fa = model.f(orbit.a_alpha, 0.0, 0.0);
    let fw = model.f(orbit.a_omega, 0.0, 0.0);
    if !(fa > 0.0 && fw > 0.0) {
        return Err(Error::Domain(format!("f not positive at endpoints: {fa:e}, {fw:e}")));
    }
    Ok((fa / fw).ln())
}

fn log_ratio_err(model: &dyn SlowFastModel, orbit: &HeteroclinicOrbit) -> f64 {
    let s = orbit.endpoint_err;
    let da = (model::df_da(model, orbit.a_alpha, 0.0, 0.0) / model.f(orbit.a_alpha, 0.0, 0.0)).abs();
    let dw = (model::df_da(model, orbit.a_omega, 0.0, 0.0) / model.f(orbit.a_omega, 0.0, 0.0)).abs();
    (da + dw) * s
}

fn term_dah(model: &dyn SlowFastModel, orbit: &HeteroclinicOrbit) -> Result<(f64, f64)> {
    path_integral(model, orbit, &|a, b| model::dh_da(model, a, b, 0.0))
}

fn term_dbg(model: &dyn SlowFastModel, orbit: &HeteroclinicOrbit) -> Result<(f64, f64)> {
    path_integral(model, orbit, &|a, b| model::dg_db(model, a, b, 0.0))
}

/// ln(f(a_alpha)/f(a_omega)) + int (d_a h/h) da + int (d_b g/h) da.
pub fn lambda_general(model: &dyn SlowFastModel, orbit: &HeteroclinicOrbit) -> Result<(f64, f64)> {
    let l = log_ratio(model, orbit)?;
    let (t2, e2) = term_dah(model, orbit)?;
    let (t3, e3) = term_dbg(model, orbit)?;
    Ok((l + t2 + t3, log_ratio_err(model, orbit) + e2 + e3))
}

/// f = a f~, h = a h~: the log term and the d_a h term cancel.
pub fn lambda_separable(model: &dyn SlowFastModel, orbit: &HeteroclinicOrbit) -> Result<(f64, f64)> {
    if !model.structure().separable_fh {
        return Err(Error::FlagNotSet("separable_fh"));
    }
    term_dbg(model, orbit)
}

pub fn lambda_h_independent(model: &dyn SlowFastModel, orbit: &HeteroclinicOrbit) -> Result<(f64, f64)> {
    if !model.structure().h_independent_of_a {
        return Err(Error::FlagNotSet("h_independent_of_a"));
    }
    let l = log_ratio(model, orbit)?;
    let (t3, e3) = term_dbg(model, orbit)?;
    Ok((l + t3, log_ratio_err(model, orbit) + e3))
}

/// g = phi(b) G: the last term becomes int (d_b G / G) db = int phi b d_b G dt.
pub fn lambda_g_factor(model: &dyn SlowFastModel, orbit: &HeteroclinicOrbit) -> Result<(f64, f64)> {
    if !model.structure().g_factorizable {
        return Err(Error::FlagNotSet("g_factorizable"));
    }
    let l = log_ratio(model, orbit)?;
    let (t2, e2) = term_dah(model, orbit)?;
    let err = std::cell::Cell::new(false);
    let (t3, e3) = path_integral(model, orbit, &|a, b| {
        let phi = model.phi(b).unwrap_or(f64::NAN);
        match model::dbig_g_db(model, a, b, 0.0) {
            Ok(d) => phi * d,
            Err(_) => {
                err.set(true);
                0.0
            }
        }
    })?;
    if err.get() {
        return Err(Error::FlagNotSet("g_factorizable"));
    }
    Ok((l + t2 + t3, log_ratio_err(model, orbit) + e2 + e3))
}

/// Preferred simplified form for the model's flags.
pub fn preferred_form(model: &dyn SlowFastModel) -> LambdaForm {
    let fl = model.structure();
    if fl.h_independent_of_a {
        LambdaForm::HIndependent
    } else if fl.separable_fh {
        LambdaForm::SeparableFh
    } else if fl.g_factorizable {
        LambdaForm::GFactor
    } else {
        LambdaForm::General
    }
}

pub fn lambda_with(model: &dyn SlowFastModel, orbit: &HeteroclinicOrbit, form: LambdaForm) -> Result<(f64, f64)> {
    match form {
        LambdaForm::General => lambda_general(model, orbit),
        LambdaForm::SeparableFh => lambda_separable(model, orbit),
        LambdaForm::HIndependent => lambda_h_independent(model, orbit),
        LambdaForm::GFactor => lambda_g_factor(model, orbit),
    }
}

pub fn evaluate(model: &dyn SlowFastModel, orbit: &HeteroclinicOrbit) -> Result<CharacteristicValues> {
    let form = preferred_form(model);
    let (lambda, lambda_err) = lambda_with(model, orbit, form)?;
    Ok(CharacteristicValues { lambda, lambda_err, lambda_form: form, ..evaluate_chi_only(model, orbit)? })
}

/// chi and endpoint data; lambda fields are left at zero with the general form.
pub fn evaluate_chi_only(model: &dyn SlowFastModel, orbit: &HeteroclinicOrbit) -> Result<CharacteristicValues> {
    let (chi, chi_err) = chi_endpoint(model, orbit)?;
    let (lambda, lambda_err, form) = (0.0, 0.0, LambdaForm::General);
    Ok(CharacteristicValues {
        s: orbit.s,
        chi,
        chi_err,
        lambda,
        lambda_err,
        lambda_form: form,
        endpoint_data: EndpointData {
            a_alpha: orbit.a_alpha,
            a_omega: orbit.a_omega,
            f_alpha: model.f(orbit.a_alpha, 0.0, 0.0),
            f_omega: model.f(orbit.a_omega, 0.0, 0.0),
        },
    })
}

/// Scan CSV: s, chi, chi_err, lambda, lambda_err, a_alpha, a_omega.
pub fn write_csv<W: Write>(mut w: W, rows: &[CharacteristicValues]) -> io::Result<()> {
    writeln!(w, "s,chi,chi_err,lambda,lambda_err,a_alpha,a_omega")?;
    for r in rows {
        writeln!(
            w,
            "{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            r.s, r.chi, r.chi_err, r.lambda, r.lambda_err, r.endpoint_data.a_alpha, r.endpoint_data.a_omega
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heteroclinic::{compute_heteroclinic, HeteroclinicSettings};
    use crate::model::{Bound, Domain, FnModel, StructureFlags};

    fn dom() -> Domain {
        Domain::new(Bound::Finite(-3.0), Bound::Finite(3.0), 0.0)
    }

    #[test]
    fn symmetric_toy_chi_vanishes() {
        let m = FnModel::new("sym", |_, _, _| 1.0, |a, _, _| a, |_, _, _| -1.0, dom());
        let o = compute_heteroclinic(&m, 1.0, &HeteroclinicSettings::default()).unwrap();
        let (c, _) = chi_endpoint(&m, &o).unwrap();
        assert!(c.abs() < 1e-9, "{c}");
        let l = chi_line_integral(&m, &o).unwrap();
        assert!(l.chi.abs() < 1e-8);
    }

    #[test]
    fn lambda_zero_when_terms_vanish() {
        // g independent of b, f constant, h independent of a
        let m = FnModel::new("z", |_, _, _| 2.0, |a, _, _| a, |_, b, _| -1.0 - b, dom());
        let o = compute_heteroclinic(&m, 1.0, &HeteroclinicSettings::default()).unwrap();
        let (l, e) = lambda_general(&m, &o).unwrap();
        assert!(l.abs() < 1e-9 && e < 1e-6);
    }

    #[test]
    fn flag_required_for_simplified_forms() {
        let m = FnModel::new("z", |_, _, _| 1.0, |a, _, _| a, |_, _, _| -1.0, dom());
        let o = compute_heteroclinic(&m, 1.0, &HeteroclinicSettings::default()).unwrap();
        assert_eq!(lambda_separable(&m, &o).unwrap_err(), Error::FlagNotSet("separable_fh"));
        assert!(lambda_g_factor(&m, &o).is_err());
    }

    #[test]
    fn factor_form_matches_general() {
        // g = (1 + b) (a - b/4)
        let m = FnModel::new("gf", |a, _, _| 2.0 + 0.3 * a, |a, b, _| (1.0 + b) * (a - 0.25 * b), |a, _, _| -1.0 - 0.1 * a * a, dom())
            .with_factor(|b| 1.0 + b, |a, b, _| a - 0.25 * b);
        let o = compute_heteroclinic(&m, 1.0, &HeteroclinicSettings::default()).unwrap();
        let (lg, eg) = lambda_general(&m, &o).unwrap();
        let (lf, ef) = lambda_g_factor(&m, &o).unwrap();
        assert!((lg - lf).abs() <= 1e-6f64.max(3.0 * (eg + ef)), "{lg} {lf}");
    }

    #[test]
    fn separable_form_matches_general() {
        // f = a f~, h = a h~ on a > 0 side shifted: use a in (0.2, 3), a_bar = 1
        let m = FnModel::new(
            "sep",
            |a, b, _| a * (1.0 + 0.5 * b),
            |a, b, _| a - 1.0 - 0.3 * b,
            |a, b, _| -a * (1.0 + b * b),
            Domain::new(Bound::Finite(0.05), Bound::Finite(4.0), 1.0),
        )
        .with_flags(StructureFlags { separable_fh: true, ..Default::default() });
        let o = compute_heteroclinic(&m, 1.6, &HeteroclinicSettings::default()).unwrap();
        let (lg, eg) = lambda_general(&m, &o).unwrap();
        let (ls, es) = lambda_separable(&m, &o).unwrap();
        assert!((lg - ls).abs() <= 1e-8f64.max(3.0 * (eg + es)), "{lg} {ls}");
    }

    #[test]
    fn shifted_toy_chi_against_reference() {
        // g = a - 1/4: chi = [a^2/2 - a/4] from a_omega to 1
        let m = FnModel::new("shift", |_, _, _| 1.0, |a, _, _| a - 0.25, |_, _, _| -1.0, Domain::new(Bound::Finite(-3.0), Bound::Finite(3.0), 0.25));
        let o = compute_heteroclinic(&m, 1.0, &HeteroclinicSettings::default()).unwrap();
        // conic b = -(a^2/2 - a/4) + const through (1, 0): omega solves a^2/2 - a/4 = 1/4
        let w = (0.25 - (0.0625f64 + 2.0 * 0.25).sqrt()) / 1.0;
        assert!((o.a_omega - w).abs() < 1e-7, "{} vs {w}", o.a_omega);
        let prim = |a: f64| 0.5 * a * a - 0.25 * a;
        let (c, _) = chi_endpoint(&m, &o).unwrap();
        assert!((c - (prim(1.0) - prim(o.a_omega))).abs() < 1e-10);
        // chi_line agrees with endpoint form
        let l = chi_line_integral(&m, &o).unwrap();
        assert!(l.discrepancy.abs() <= 1e-6 * c.abs() + 1e-9);
    }

    #[test]
    fn b_dependent_g_lambda_against_reference() {
        // f = 1, h = -1, g = a - b/4: lambda = int (d_b g / h) da = int (1/4) da along gamma
        // = (a_omega - a_alpha)/4
        let m = FnModel::new("gb", |_, _, _| 1.0, |a, b, _| a - 0.25 * b, |_, _, _| -1.0, dom());
        let o = compute_heteroclinic(&m, 1.0, &HeteroclinicSettings::default()).unwrap();
        let (l, _) = lambda_general(&m, &o).unwrap();
        let reference = (o.a_omega - o.a_alpha) * 0.25;
        assert!((l - reference).abs() < 1e-8, "{l} vs {reference}");
    }

    #[test]
    fn vanishing_f_is_domain_error() {
        let m = FnModel::new("f0", |a, _, _| a + 0.5, |a, _, _| a, |_, _, _| -1.0, dom());
        let o = compute_heteroclinic(&m, 1.0, &HeteroclinicSettings::default()).unwrap();
        assert!(matches!(chi_endpoint(&m, &o), Err(Error::Domain(_))));
    }
}
