//! Predator-prey interaction in a chemostat, reduced to the invariant plane
//! `S + rho x + c rho y = S0`.
//!
//! Role mapping: `a = -y`, `b = x`. Then `f = -a`, `h = a p(x)/x` and
//! `g = -eps + m (S0 - rho x + c rho a) + c a p(x)/x = phi(x) (F_eps(x) + a)`
//! with `phi(x) = c (rho m + p(x)/x)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heteroclinic::HeteroclinicOrbit;
use crate::model::{Bound, Domain, SlowFastModel, StructureFlags};
use crate::quadrature::{self, QuadOptions};
use crate::roots;

/// Functional response p(x) with p(0) = 0, p'(0) > 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Response {
    /// p(x) = b x / (a + x)
    #[serde(rename = "holling_ii")]
    HollingII { a: f64, b: f64 },
    /// p(x) = k x
    Linear { k: f64 },
}

impl Response {
    pub fn p(&self, x: f64) -> f64 {
        x * self.p_over_x(x)
    }

    pub fn dp(&self, x: f64) -> f64 {
        match *self {
            Response::HollingII { a, b } => a * b / ((a + x) * (a + x)),
            Response::Linear { k } => k,
        }
    }

    /// p(x)/x, continued by p'(0) at x = 0.
    pub fn p_over_x(&self, x: f64) -> f64 {
        match *self {
            Response::HollingII { a, b } => b / (a + x),
            Response::Linear { k } => k,
        }
    }

    pub fn d_p_over_x(&self, x: f64) -> f64 {
        match *self {
            Response::HollingII { a, b } => -b / ((a + x) * (a + x)),
            Response::Linear { .. } => 0.0,
        }
    }

    fn check(&self) -> Result<()> {
        let ok = match *self {
            Response::HollingII { a, b } => a > 0.0 && b > 0.0,
            Response::Linear { k } => k > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("functional response {self:?} needs positive constants")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChemostatParams {
    pub s0: f64,
    pub m: f64,
    pub rho: f64,
    pub c: f64,
    pub response: Response,
}

impl ChemostatParams {
    /// (S0, m, rho, c) = (10, 1, 1, 1), Holling II with (a, b) = (1.5, 3).
    pub fn example() -> Self {
        ChemostatParams { s0: 10.0, m: 1.0, rho: 1.0, c: 1.0, response: Response::HollingII { a: 1.5, b: 3.0 } }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("S0", self.s0), ("m", self.m), ("rho", self.rho), ("c", self.c)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParams(format!("{name} = {v} must be positive")));
            }
        }
        self.response.check()
    }

    /// S0 / rho: right end of the prey range.
    pub fn x_max(&self) -> f64 {
        self.s0 / self.rho
    }

    fn phi(&self, x: f64) -> f64 {
        self.c * (self.rho * self.m + self.response.p_over_x(x))
    }

    pub fn f_eps(&self, x: f64, eps: f64) -> f64 {
        (self.m * (self.s0 - self.rho * x) - eps) / self.phi(x)
    }

    /// Prey isocline F = F_0.
    pub fn big_f(&self, x: f64) -> f64 {
        self.f_eps(x, 0.0)
    }

    pub fn big_f_prime(&self, x: f64) -> f64 {
        let q = self.rho * self.m + self.response.p_over_x(x);
        let num = -self.m * self.rho * q - self.m * (self.s0 - self.rho * x) * self.response.d_p_over_x(x);
        num / (self.c * q * q)
    }

    /// y_bar = F(0) = m S0 / (c (rho m + p'(0))).
    pub fn y_bar(&self) -> f64 {
        self.big_f(0.0)
    }

    /// chi_generic = CHI_FACTOR * int_{y_alpha}^{y_omega} (y - y_bar)/y dy.
    pub fn chi_factor(&self) -> f64 {
        -self.c * (self.rho * self.m + self.response.dp(0.0))
    }

    /// psi(y) = y - y_bar - y_bar ln(y / y_bar); chi = psi(y_omega) - psi(y_alpha).
    pub fn psi(&self, y: f64) -> f64 {
        let yb = self.y_bar();
        y - yb - yb * (y / yb).ln()
    }
}

#[derive(Clone, Debug)]
pub struct ChemostatModel {
    pub params: ChemostatParams,
}

pub fn chemostat_reduced(params: ChemostatParams) -> Result<ChemostatModel> {
    params.validate()?;
    Ok(ChemostatModel { params })
}

impl SlowFastModel for ChemostatModel {
    fn name(&self) -> &str {
        "chemostat"
    }
    fn f(&self, a: f64, _b: f64, _eps: f64) -> f64 {
        -a
    }
    fn g(&self, a: f64, b: f64, eps: f64) -> f64 {
        let p = &self.params;
        -eps + p.m * (p.s0 - p.rho * b + p.c * p.rho * a) + p.c * a * p.response.p_over_x(b)
    }
    fn h(&self, a: f64, b: f64, _eps: f64) -> f64 {
        a * self.params.response.p_over_x(b)
    }
    fn domain(&self) -> Domain {
        Domain::new(Bound::Infinite, Bound::Finite(0.0), -self.params.y_bar())
    }
    fn df_da(&self, _a: f64, _b: f64, _eps: f64) -> Option<f64> {
        Some(-1.0)
    }
    fn dh_da(&self, _a: f64, b: f64, _eps: f64) -> Option<f64> {
        Some(self.params.response.p_over_x(b))
    }
    fn dg_db(&self, a: f64, b: f64, _eps: f64) -> Option<f64> {
        let p = &self.params;
        Some(-p.m * p.rho + p.c * a * p.response.d_p_over_x(b))
    }
    fn structure(&self) -> StructureFlags {
        StructureFlags { separable_fh: true, h_independent_of_a: false, g_factorizable: true }
    }
    fn phi(&self, b: f64) -> Option<f64> {
        Some(self.params.phi(b))
    }
    fn big_g(&self, a: f64, b: f64, eps: f64) -> Option<f64> {
        Some(self.params.f_eps(b, eps) + a)
    }
    fn peak_a(&self, b: f64) -> Option<f64> {
        (b > 0.0 && b < self.params.x_max()).then(|| -self.params.big_f(b))
    }
}

fn endpoint_ys(orbit: &HeteroclinicOrbit) -> Result<(f64, f64)> {
    let (ya, yw) = (-orbit.a_alpha, -orbit.a_omega);
    if !(ya > 0.0 && yw > 0.0) {
        return Err(Error::Domain(format!("endpoints y_alpha={ya}, y_omega={yw} must be positive")));
    }
    Ok((ya, yw))
}

/// chi(x0) = int_{y_alpha}^{y_omega} (y - y_bar)/y dy in closed form.
pub fn chemostat_chi(params: &ChemostatParams, orbit: &HeteroclinicOrbit) -> Result<f64> {
    let (ya, yw) = endpoint_ys(orbit)?;
    Ok(chi_from_endpoints(params, ya, yw))
}

pub fn chi_from_endpoints(params: &ChemostatParams, y_alpha: f64, y_omega: f64) -> f64 {
    let yb = params.y_bar();
    (y_omega - y_alpha) - yb * (y_omega / y_alpha).ln()
}

/// ln(y_omega / y_alpha): the period coefficient.
pub fn period_coefficient(orbit: &HeteroclinicOrbit) -> Result<f64> {
    let (ya, yw) = endpoint_ys(orbit)?;
    Ok((yw / ya).ln())
}

/// Exit level y_exit < y_bar with psi(y_exit) = psi(y_entry) for y_entry > y_bar.
pub fn psi_exit(params: &ChemostatParams, y_entry: f64) -> Result<f64> {
    let yb = params.y_bar();
    if !(y_entry > yb) {
        return Err(Error::Precondition(format!("entry level {y_entry} not above y_bar={yb}")));
    }
    let target = params.psi(y_entry);
    let f = |y: f64| params.psi(y) - target;
    // psi decreases on (0, y_bar) from +inf to 0
    let mut lo = yb * 0.5;
    while f(lo) < 0.0 {
        lo *= 0.5;
        if lo < 1e-300 {
            return Err(Error::Root("psi exit level underflows".into()));
        }
    }
    Ok(roots::brent(f, lo, yb, 1e-15 * yb, 200)?.x)
}

/// The orbit split at its peak into the rising branch Y_-(x) < F(x) and the
/// falling branch Y_+(x) > F(x), each resolved by root solving x(t) = x.
struct Branches<'a> {
    orbit: &'a HeteroclinicOrbit,
    t_lo: f64,
    t_peak: f64,
    t_hi: f64,
    x0: f64,
}

impl<'a> Branches<'a> {
    fn new(orbit: &'a HeteroclinicOrbit) -> Result<Self> {
        let path = &orbit.path;
        if path.log_solution().is_none() {
            return Err(Error::Domain("orbit path lies on the axis".into()));
        }
        let t_peak = orbit.t_peak;
        let (_, x0) = path.state_at(t_peak).ok_or_else(|| Error::Domain("peak outside path".into()))?;
        let (t_lo, t_hi) = (path.t_start(), path.t_end());
        if !(t_lo < t_peak && t_peak < t_hi) {
            return Err(Error::Domain("orbit is not split by its peak".into()));
        }
        Ok(Branches { orbit, t_lo, t_peak, t_hi, x0 })
    }

    fn x_start(&self) -> f64 {
        self.orbit.path.start().1
    }

    fn x_end(&self) -> f64 {
        self.orbit.path.end().1
    }

    /// y on the branch at prey level x.
    fn y_at(&self, x: f64, rising: bool) -> Result<f64> {
        let path = &self.orbit.path;
        let lx = x.ln();
        let (a, b) = if rising { (self.t_lo, self.t_peak) } else { (self.t_peak, self.t_hi) };
        let fu = |t: f64| path.log_state_at(t).map_or(f64::NAN, |s| s.1) - lx;
        let r = roots::brent(fu, a, b, 1e-13 * a.abs().max(b.abs()).max(1.0), 300)?;
        Ok(-path.log_state_at(r.x).unwrap().0)
    }

    /// int_{x_lo}^{x0} K(x, Y(x)) dx with x = x0 - (x0 - x_lo) v^2, plus a
    /// first-order piece on (0, x_lo).
    fn integrate(&self, rising: bool, k: &dyn Fn(f64, f64) -> f64) -> Result<(f64, f64)> {
        let x_lo = if rising { self.x_start() } else { self.x_end() };
        let span = self.x0 - x_lo;
        let fail = std::cell::RefCell::new(None);
        let integrand = |v: f64| {
            let x = self.x0 - span * v * v;
            match self.y_at(x, rising) {
                Ok(y) => k(x, y) * 2.0 * span * v,
                Err(e) => {
                    fail.borrow_mut().get_or_insert(e);
                    0.0
                }
            }
        };
        // F - Y vanishes at the peak, where the branch root solve loses
        // relative accuracy; the first V0 of the v-range is extrapolated.
        const V0: f64 = 1e-4;
        let q = quadrature::integrate(&integrand, V0, 1.0, &QuadOptions { abs_tol: 1e-12, rel_tol: 1e-11, max_intervals: 4000 });
        let head = V0 * (3.0 * integrand(V0) - integrand(2.0 * V0)) / 2.0;
        if let Some(e) = fail.into_inner() {
            return Err(e);
        }
        let y_lo = if rising { -self.orbit.path.start().0 } else { -self.orbit.path.end().0 };
        let tail = k(x_lo, y_lo) * x_lo;
        Ok((q.value + head + tail, q.error + 1e-6 * head.abs() + 0.5 * tail.abs()))
    }
}

/// chi(x0) = int_gamma p/(rho m x + p) (F(x) - F(0))/(F(x) - y) dx.
pub fn chemostat_chi_line(params: &ChemostatParams, orbit: &HeteroclinicOrbit) -> Result<(f64, f64)> {
    let br = Branches::new(orbit)?;
    let f0 = params.y_bar();
    let k = |x: f64, y: f64| {
        let px = params.response.p_over_x(x);
        let fx = params.big_f(x);
        px / (params.rho * params.m + px) * (fx - f0) / (fx - y)
    };
    let (up, e1) = br.integrate(true, &k)?;
    let (down, e2) = br.integrate(false, &k)?;
    Ok((up - down, e1 + e2))
}

/// lambda(x0) = int_0^{x0} F'(x) (1/(F - Y_-) + 1/(Y_+ - F)) dx.
pub fn chemostat_lambda(params: &ChemostatParams, orbit: &HeteroclinicOrbit) -> Result<(f64, f64)> {
    let br = Branches::new(orbit)?;
    let k = |x: f64, y: f64| params.big_f_prime(x) / (params.big_f(x) - y);
    let (up, e1) = br.integrate(true, &k)?;
    let (down, e2) = br.integrate(false, &k)?;
    Ok((up - down, e1 + e2))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneHump {
    pub holds: bool,
    pub x_hat: Option<f64>,
    pub sign_changes: usize,
}

/// One sign change of `fprime` from + to - on (lo, hi), sampled at `n` cell
/// midpoints.
pub fn one_hump(fprime: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> OneHump {
    let xs: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * (i as f64 + 0.5) / n as f64).collect();
    let vals: Vec<f64> = xs.iter().map(|&x| fprime(x)).collect();
    let changes: Vec<usize> = (1..n).filter(|&i| vals[i - 1].signum() != vals[i].signum()).collect();
    let sign_changes = changes.len();
    let holds = sign_changes == 1 && vals[0] > 0.0 && vals[n - 1] < 0.0;
    let x_hat = holds.then(|| {
        let i = changes[0];
        roots::brent(&fprime, xs[i - 1], xs[i], 1e-14 * hi.abs().max(1.0), 200).map_or(0.5 * (xs[i - 1] + xs[i]), |r| r.x)
    });
    OneHump { holds, x_hat, sign_changes }
}

pub fn one_hump_check(params: &ChemostatParams, n_grid: usize) -> OneHump {
    one_hump(|x| params.big_f_prime(x), 0.0, params.x_max(), n_grid.max(2))
}

/// Full (S, x, y) vector field.
pub fn chemostat_full(params: ChemostatParams, eps: f64) -> impl Fn(f64, &[f64; 3]) -> [f64; 3] {
    move |_, z| {
        let (s, x, y) = (z[0], z[1], z[2]);
        let p = params.response.p(x);
        [
            (params.s0 - s) * eps - params.rho * params.m * s * x,
            x * (-eps + params.m * s) - params.c * y * p,
            y * (-eps + p),
        ]
    }
}

/// S + rho x + c rho y - S0, which decays like exp(-eps t).
pub fn simplex_residual(params: &ChemostatParams, z: &[f64; 3]) -> f64 {
    z[0] + params.rho * z[1] + params.c * params.rho * z[2] - params.s0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::characteristics::{chi_endpoint, chi_line_integral, lambda_g_factor, lambda_general, lambda_separable};
    use crate::heteroclinic::{compute_heteroclinic_through_peak, HeteroclinicSettings};
    use crate::integrator::{integrate, Options, Tolerance};
    use crate::model::{validate_flags, validate_model, SampleGrid};

    fn model() -> ChemostatModel {
        chemostat_reduced(ChemostatParams::example()).unwrap()
    }

    #[test]
    fn isocline_values() {
        let p = ChemostatParams::example();
        assert!((p.y_bar() - 10.0 / 3.0).abs() < 1e-14);
        assert!(p.big_f(10.0).abs() < 1e-14);
        for x in [0.3, 2.0, 7.5] {
            let fd = (p.big_f(x + 1e-6) - p.big_f(x - 1e-6)) / 2e-6;
            assert!((fd - p.big_f_prime(x)).abs() < 1e-7);
        }
    }

    #[test]
    fn reduced_model_validates() {
        let m = model();
        // a = -y in [-10, 0], b = x in [0, 12]
        let grid = SampleGrid::new(-10.0, 0.0, 12.0);
        let r = validate_model(&m, &grid).unwrap();
        assert!(r.passed(), "{:?}", r.first_failure());
        assert!(validate_flags(&m, &grid).iter().all(|c| c.passed));
    }

    #[test]
    fn unstable_direction_matches_jacobian() {
        let m = model();
        let a = -1.0;
        let v = crate::heteroclinic::unstable_direction(&m, a).unwrap();
        // Jacobian of (b h, b g) at (a, 0) by finite differences
        let e = 1e-7;
        let rhs = |a: f64, b: f64| [b * m.h(a, b, 0.0), b * m.g(a, b, 0.0)];
        let c0 = rhs(a, e);
        let c1 = rhs(a, -e);
        let j12 = (c0[0] - c1[0]) / (2.0 * e);
        let j22 = (c0[1] - c1[1]) / (2.0 * e);
        // eigenvector for eigenvalue j22 of [[0, j12], [0, j22]] is (j12/j22, 1)
        let n = (j12 / j22).hypot(1.0);
        assert!((v[0] - j12 / j22 / n).abs() < 1e-6 && (v[1] - 1.0 / n).abs() < 1e-6);
    }

    #[test]
    fn chi_forms_agree() {
        let m = model();
        let p = m.params;
        let o = compute_heteroclinic_through_peak(&m, 5.0, &HeteroclinicSettings::default()).unwrap();
        let (ce, _) = chi_endpoint(&m, &o).unwrap();
        let cp = chemostat_chi(&p, &o).unwrap();
        assert!((ce - p.chi_factor() * cp).abs() < 1e-9 * ce.abs().max(1.0), "{ce} {cp}");
        let line = chi_line_integral(&m, &o).unwrap();
        assert!(line.discrepancy.abs() < 1e-6 * ce.abs() + 1e-9);
        let (cl, _) = chemostat_chi_line(&p, &o).unwrap();
        assert!((cl - cp).abs() < 1e-6 * cp.abs() + 1e-9, "{cl} {cp}");
        // psi form
        assert!((p.psi(-o.a_omega) - p.psi(-o.a_alpha) - cp).abs() < 1e-12 * cp.abs().max(1.0));
        assert!(cp > 0.0);
    }

    #[test]
    fn lambda_forms_agree() {
        let m = model();
        let p = m.params;
        let o = compute_heteroclinic_through_peak(&m, 7.0, &HeteroclinicSettings::default()).unwrap();
        let (lg, eg) = lambda_general(&m, &o).unwrap();
        let (ls, es) = lambda_separable(&m, &o).unwrap();
        let (lf, ef) = lambda_g_factor(&m, &o).unwrap();
        let (lc, ec) = chemostat_lambda(&p, &o).unwrap();
        for (l, e) in [(ls, es), (lf, ef), (lc, ec)] {
            assert!((l - lg).abs() <= 1e-6f64.max(3.0 * (e + eg)), "{l} vs {lg}");
        }
        assert!(lg < 0.0);
    }

    #[test]
    fn psi_exit_inverts_psi() {
        let p = ChemostatParams::example();
        let y = psi_exit(&p, 9.0).unwrap();
        assert!(y < p.y_bar());
        assert!((p.psi(y) - p.psi(9.0)).abs() < 1e-12);
    }

    #[test]
    fn one_hump_cases() {
        let h = one_hump_check(&ChemostatParams::example(), 400);
        assert!(h.holds);
        let xh = h.x_hat.unwrap();
        assert!(xh > 0.0 && xh < 10.0);
        // quadratic F = -(x - 3)^2: vertex at 3
        let q = one_hump(|x| -2.0 * (x - 3.0), 0.0, 10.0, 101);
        assert!(q.holds && (q.x_hat.unwrap() - 3.0).abs() < 1e-12);
        // two humps
        let t = one_hump(|x: f64| (x * 1.3).cos(), 0.0, 10.0, 200);
        assert!(!t.holds);
        // linear response: F is linear and decreasing
        let lin = ChemostatParams { response: Response::Linear { k: 2.0 }, ..ChemostatParams::example() };
        assert!(!one_hump_check(&lin, 100).holds);
    }

    #[test]
    fn simplex_decays_at_rate_eps() {
        let p = ChemostatParams::example();
        let eps = 0.3;
        let z0 = [6.0, 1.0, 10.0];
        let r0 = simplex_residual(&p, &z0);
        let sol = integrate(chemostat_full(p, eps), 0.0, z0, 5.0, &[], &Options::with_tol(Tolerance { rel: 1e-11, abs: 1e-13 })).unwrap();
        let r1 = simplex_residual(&p, &sol.y_last());
        assert!((r1 - r0 * (-eps * 5.0f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn no_predator_nutrient_relaxes() {
        let p = ChemostatParams::example();
        let sol = integrate(chemostat_full(p, 0.5), 0.0, [2.0, 0.0, 0.0], 60.0, &[], &Options::default()).unwrap();
        assert!((sol.y_last()[0] - 10.0).abs() < 1e-7, "{:?} {:?}", sol.y_last(), sol.termination);
    }

    #[test]
    fn invalid_params_rejected() {
        let bad = ChemostatParams { s0: -1.0, ..ChemostatParams::example() };
        assert!(chemostat_reduced(bad).is_err());
    }
}
