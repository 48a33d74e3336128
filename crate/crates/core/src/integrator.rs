//! Dormand–Prince 5(4) with PI step control, a 4th-order continuous
//! extension per accepted step, and event location on the dense output.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roots;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance { rel: 1e-9, abs: 1e-12 }
    }
}

#[derive(Clone, Debug)]
pub struct Options {
    pub tol: Tolerance,
    pub h_init: Option<f64>,
    pub h_max: Option<f64>,
    pub max_steps: usize,
}

impl Default for Options {
    fn default() -> Self {
        Options { tol: Tolerance::default(), h_init: None, h_max: None, max_steps: 5_000_000 }
    }
}

impl Options {
    pub fn with_tol(tol: Tolerance) -> Self {
        Options { tol, ..Default::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
    Either,
}

impl Direction {
    fn admits(self, before: f64, after: f64) -> bool {
        let up = before < 0.0 && after >= 0.0;
        let down = before > 0.0 && after <= 0.0;
        match self {
            Direction::Up => up,
            Direction::Down => down,
            Direction::Either => up || down,
        }
    }
}

type EventFn<'a, const N: usize> = Box<dyn Fn(f64, &[f64; N]) -> f64 + 'a>;

/// Zero crossing of a scalar function of (t, y).
pub struct Event<'a, const N: usize> {
    func: EventFn<'a, N>,
    pub direction: Direction,
    pub terminal: bool,
}

impl<'a, const N: usize> Event<'a, N> {
    pub fn new(func: impl Fn(f64, &[f64; N]) -> f64 + 'a, direction: Direction) -> Self {
        Event { func: Box::new(func), direction, terminal: true }
    }

    pub fn recording(mut self) -> Self {
        self.terminal = false;
        self
    }

    pub fn value(&self, t: f64, y: &[f64; N]) -> f64 {
        (self.func)(t, y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    EventHit,
    TimeLimit,
    StepFailure,
}

#[derive(Clone, Debug)]
pub struct EventHit<const N: usize> {
    pub index: usize,
    pub t: f64,
    pub y: [f64; N],
}

/// Continuous extension over one accepted step.
#[derive(Clone, Debug)]
pub struct Segment<const N: usize> {
    t0: f64,
    h: f64,
    y1: [f64; N],
    r: [[f64; N]; 5],
}

impl<const N: usize> Segment<N> {
    pub fn t_start(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.t0 + self.h
    }

    fn lo(&self) -> f64 {
        self.t0.min(self.t0 + self.h)
    }

    fn hi(&self) -> f64 {
        self.t0.max(self.t0 + self.h)
    }

    pub fn eval(&self, t: f64) -> [f64; N] {
        if t == self.t0 + self.h {
            return self.y1;
        }
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        let mut out = [0.0; N];
        for i in 0..N {
            let r = &self.r;
            out[i] = r[0][i] + th * (r[1][i] + th1 * (r[2][i] + th * (r[3][i] + th1 * r[4][i])));
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct Solution<const N: usize> {
    pub t: Vec<f64>,
    pub y: Vec<[f64; N]>,
    pub segments: Vec<Segment<N>>,
    pub termination: Termination,
    pub events: Vec<EventHit<N>>,
    pub diagnostic: Option<String>,
    pub rhs_evals: usize,
}

impl<const N: usize> Solution<N> {
    pub fn t_first(&self) -> f64 {
        self.t[0]
    }

    pub fn t_last(&self) -> f64 {
        *self.t.last().unwrap()
    }

    pub fn y_last(&self) -> [f64; N] {
        *self.y.last().unwrap()
    }

    fn ascending(&self) -> bool {
        self.t_last() >= self.t_first()
    }

    pub fn t_min(&self) -> f64 {
        self.t_first().min(self.t_last())
    }

    pub fn t_max(&self) -> f64 {
        self.t_first().max(self.t_last())
    }

    /// Segment index covering `t`, if any.
    pub fn segment_index(&self, t: f64) -> Option<usize> {
        if self.segments.is_empty() || t < self.t_min() || t > self.t_max() {
            return None;
        }
        let idx = if self.ascending() {
            self.segments.partition_point(|s| s.hi() < t)
        } else {
            self.segments.partition_point(|s| s.lo() > t)
        };
        Some(idx.min(self.segments.len() - 1))
    }

    pub fn interpolate(&self, t: f64) -> Option<[f64; N]> {
        if self.segments.is_empty() {
            return (t == self.t[0]).then(|| self.y[0]);
        }
        self.segment_index(t).map(|i| self.segments[i].eval(t))
    }

    /// Last event that stopped the integration.
    pub fn terminal_event(&self) -> Option<&EventHit<N>> {
        match self.termination {
            Termination::EventHit => self.events.last(),
            _ => None,
        }
    }

    /// Reverses storage order so that a backward-in-time run reads with
    /// ascending t. Segments keep their own parameterisation.
    pub fn into_ascending(mut self) -> Self {
        if !self.ascending() {
            self.t.reverse();
            self.y.reverse();
            self.segments.reverse();
        }
        self
    }

    /// Appends `next`, which must start where `self` ends (both ascending).
    pub fn concat(mut self, next: Solution<N>) -> Self {
        debug_assert!(self.ascending() && next.ascending());
        let skip = usize::from(!next.t.is_empty() && next.t[0] == self.t_last());
        self.t.extend_from_slice(&next.t[skip..]);
        self.y.extend_from_slice(&next.y[skip..]);
        self.segments.extend(next.segments);
        self.termination = next.termination;
        self.events.extend(next.events);
        self.rhs_evals += next.rhs_evals;
        if next.diagnostic.is_some() {
            self.diagnostic = next.diagnostic;
        }
        self
    }
}

// Dormand–Prince coefficients
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

fn rms<const N: usize>(v: &[f64; N], scale: &[f64; N]) -> f64 {
    let s: f64 = v.iter().zip(scale).map(|(x, s)| (x / s) * (x / s)).sum();
    (s / N as f64).sqrt()
}

fn finite<const N: usize>(v: &[f64; N]) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn axpy<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for i in 0..N {
        let mut acc = 0.0;
        for (c, k) in terms {
            acc += c * k[i];
        }
        out[i] += h * acc;
    }
    out
}

fn initial_step<const N: usize, F>(
    rhs: &F,
    t0: f64,
    y0: &[f64; N],
    f0: &[f64; N],
    dir: f64,
    tol: Tolerance,
    h_max: f64,
) -> f64
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let mut sc = [0.0; N];
    for i in 0..N {
        sc[i] = tol.abs + tol.rel * y0[i].abs();
    }
    let d0 = rms(y0, &sc);
    let d1 = rms(f0, &sc);
    let mut h0 = if d0 < 1e-10 || d1 < 1e-10 { 1e-6 } else { 0.01 * d0 / d1 };
    h0 = h0.min(h_max);
    let y1 = axpy(y0, dir * h0, &[(1.0, f0)]);
    let f1 = rhs(t0 + dir * h0, &y1);
    if !finite(&f1) {
        return h0 * 1e-3;
    }
    let mut diff = [0.0; N];
    for i in 0..N {
        diff[i] = f1[i] - f0[i];
    }
    let d2 = rms(&diff, &sc) / h0;
    let der = d1.max(d2);
    let h1 = if der <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / der).powf(0.2) };
    (100.0 * h0).min(h1).min(h_max)
}

/// Integrates `y' = rhs(t, y)` from `t0` toward `t1` (either direction).
///
/// Step-size underflow and exhausted step budgets end the run with
/// `Termination::StepFailure`; a non-finite right-hand side at an accepted
/// state is an error.
pub fn integrate<const N: usize, F>(
    rhs: F,
    t0: f64,
    y0: [f64; N],
    t1: f64,
    events: &[Event<'_, N>],
    opts: &Options,
) -> Result<Solution<N>>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let tol = opts.tol;
    if !(tol.rel > 0.0 && tol.abs > 0.0) {
        return Err(Error::Precondition("tolerances must be positive".into()));
    }
    if !finite(&y0) || !t0.is_finite() || !t1.is_finite() {
        return Err(Error::Precondition(format!("non-finite initial data t0={t0}, y0={y0:?}")));
    }
    let mut sol = Solution {
        t: vec![t0],
        y: vec![y0],
        segments: Vec::new(),
        termination: Termination::TimeLimit,
        events: Vec::new(),
        diagnostic: None,
        rhs_evals: 0,
    };
    if t1 == t0 {
        return Ok(sol);
    }
    let dir = (t1 - t0).signum();
    let h_max = opts.h_max.unwrap_or((t1 - t0).abs()).min((t1 - t0).abs());

    let mut k1 = rhs(t0, &y0);
    sol.rhs_evals += 1;
    if !finite(&k1) {
        return Err(Error::NonFinite { t: t0, state: y0.to_vec() });
    }
    let mut h = match opts.h_init {
        Some(h) => h.abs().min(h_max),
        None => initial_step(&rhs, t0, &y0, &k1, dir, tol, h_max),
    };
    sol.rhs_evals += 1;

    // Events starting on their zero set are armed only after the first step.
    let mut prev: Vec<Option<f64>> = events
        .iter()
        .map(|e| {
            let v = e.value(t0, &y0);
            (v.abs() > 1e-13 * (1.0 + y0.iter().fold(0.0f64, |m, x| m.max(x.abs())))).then_some(v)
        })
        .collect();

    let mut t = t0;
    let mut y = y0;
    let mut err_old: f64 = 1e-4;
    let mut last_rejected = false;
    let mut steps = 0usize;
    const SAFE: f64 = 0.9;
    const BETA: f64 = 0.04;
    const EXPO1: f64 = 0.2 - BETA * 0.75;
    const FACC1: f64 = 5.0;
    const FACC2: f64 = 0.1;

    loop {
        if steps >= opts.max_steps {
            sol.termination = Termination::StepFailure;
            sol.diagnostic = Some(format!("step budget {} exhausted at t={t}", opts.max_steps));
            return Ok(sol);
        }
        let remaining = (t1 - t).abs();
        if remaining <= 0.0 {
            sol.termination = Termination::TimeLimit;
            return Ok(sol);
        }
        if h < 16.0 * f64::EPSILON * t.abs().max(1.0) {
            sol.termination = Termination::StepFailure;
            sol.diagnostic = Some(format!("step size underflow h={h:e} at t={t}, y={y:?}"));
            return Ok(sol);
        }
        let last = h >= remaining;
        let hs = if last { remaining } else { h };
        let hd = dir * hs;
        steps += 1;

        let k2 = rhs(t + C2 * hd, &axpy(&y, hd, &[(A21, &k1)]));
        let k3 = rhs(t + C3 * hd, &axpy(&y, hd, &[(A31, &k1), (A32, &k2)]));
        let k4 = rhs(t + C4 * hd, &axpy(&y, hd, &[(A41, &k1), (A42, &k2), (A43, &k3)]));
        let k5 = rhs(t + C5 * hd, &axpy(&y, hd, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]));
        let ys = axpy(&y, hd, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]);
        let k6 = rhs(t + hd, &ys);
        let y_new = axpy(&y, hd, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
        let t_new = if last { t1 } else { t + hd };
        let k7 = rhs(t_new, &y_new);
        sol.rhs_evals += 6;

        if ![k2, k3, k4, k5, k6, k7].iter().all(finite) || !finite(&y_new) {
            h = hs * 0.25;
            last_rejected = true;
            continue;
        }

        let mut errv = [0.0; N];
        let mut sc = [0.0; N];
        for i in 0..N {
            errv[i] = hd * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            sc[i] = tol.abs + tol.rel * y[i].abs().max(y_new[i].abs());
        }
        let err = rms(&errv, &sc);
        let fac11 = err.powf(EXPO1);

        if err > 1.0 {
            h = hs / FACC1.min(fac11 / SAFE);
            last_rejected = true;
            continue;
        }

        let mut fac = fac11 / err_old.powf(BETA);
        fac = FACC2.max(FACC1.min(fac / SAFE));
        let mut h_next = hs / fac;
        err_old = err.max(1e-4);
        if last_rejected {
            h_next = h_next.min(hs);
        }
        last_rejected = false;

        let mut r = [[0.0; N]; 5];
        for i in 0..N {
            let dy = y_new[i] - y[i];
            let bspl = hd * k1[i] - dy;
            r[0][i] = y[i];
            r[1][i] = dy;
            r[2][i] = bspl;
            r[3][i] = dy - hd * k7[i] - bspl;
            r[4][i] = hd * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
        }
        let seg = Segment { t0: t, h: t_new - t, y1: y_new, r };

        // event detection on this step
        let mut hits: Vec<(f64, usize)> = Vec::new();
        for (i, ev) in events.iter().enumerate() {
            let v_new = ev.value(t_new, &y_new);
            if let Some(v_old) = prev[i] {
                if ev.direction.admits(v_old, v_new) {
                    let g = |tt: f64| ev.value(tt, &seg.eval(tt));
                    let te = locate(&g, t, t_new, v_old, v_new);
                    hits.push((te, i));
                }
            }
            prev[i] = Some(v_new);
        }
        hits.sort_by(|a, b| (dir * a.0).partial_cmp(&(dir * b.0)).unwrap().then(a.1.cmp(&b.1)));

        sol.segments.push(seg);
        let mut stop = None;
        for (te, i) in hits {
            let ye = sol.segments.last().unwrap().eval(te);
            sol.events.push(EventHit { index: i, t: te, y: ye });
            if events[i].terminal {
                stop = Some((te, ye));
                break;
            }
        }
        if let Some((te, ye)) = stop {
            if te != t {
                sol.t.push(te);
                sol.y.push(ye);
            }
            sol.termination = Termination::EventHit;
            return Ok(sol);
        }

        sol.t.push(t_new);
        sol.y.push(y_new);
        t = t_new;
        y = y_new;
        k1 = k7;
        if last {
            sol.termination = Termination::TimeLimit;
            return Ok(sol);
        }
        h = h_next.min(h_max);
    }
}

fn locate(g: &dyn Fn(f64) -> f64, ta: f64, tb: f64, ga: f64, gb: f64) -> f64 {
    if gb == 0.0 {
        return tb;
    }
    let t_tol = 1e-12_f64.max(4.0 * f64::EPSILON * ta.abs().max(tb.abs()));
    let (lo, hi, glo, ghi) = if ta < tb { (ta, tb, ga, gb) } else { (tb, ta, gb, ga) };
    match roots::brent_with_values(g, lo, hi, glo, ghi, t_tol, 100) {
        Ok(r) => r.x,
        Err(_) => tb,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_is_accurate() {
        let sol = integrate(|_, y: &[f64; 1]| [-y[0]], 0.0, [1.0], 5.0, &[], &Options::default()).unwrap();
        assert_eq!(sol.termination, Termination::TimeLimit);
        let (t, y) = (sol.t_last(), sol.y_last()[0]);
        assert_eq!(t, 5.0);
        assert!((y - (-5.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn dense_output_matches_samples_and_solution() {
        let sol = integrate(|_, y: &[f64; 2]| [y[1], -y[0]], 0.0, [0.0, 1.0], 10.0, &[], &Options::default())
            .unwrap();
        for (t, y) in sol.t.iter().zip(&sol.y) {
            assert_eq!(sol.interpolate(*t).unwrap(), *y);
        }
        for k in 0..200 {
            let t = 0.05 * k as f64;
            let y = sol.interpolate(t).unwrap();
            assert!((y[0] - t.sin()).abs() < 1e-7, "t={t}");
        }
    }

    #[test]
    fn backward_integration_and_reversal() {
        let sol = integrate(|_, y: &[f64; 1]| [y[0]], 0.0, [1.0], -3.0, &[], &Options::default()).unwrap();
        assert!((sol.y_last()[0] - (-3.0f64).exp()).abs() < 1e-10);
        let asc = sol.into_ascending();
        assert_eq!(asc.t_first(), -3.0);
        let y = asc.interpolate(-1.5).unwrap()[0];
        assert!((y - (-1.5f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn event_located_precisely() {
        let ev = Event::new(|_, y: &[f64; 2]| y[0] - 0.5, Direction::Up);
        let sol =
            integrate(|_, y: &[f64; 2]| [y[1], -y[0]], 0.0, [0.0, 1.0], 10.0, &[ev], &Options::default()).unwrap();
        assert_eq!(sol.termination, Termination::EventHit);
        let te = sol.terminal_event().unwrap().t;
        assert!((te - 0.5f64.asin()).abs() < 1e-9);
    }

    #[test]
    fn direction_filter_and_recording() {
        let up = Event::new(|_, y: &[f64; 2]| y[0], Direction::Down).recording();
        let sol =
            integrate(|_, y: &[f64; 2]| [y[1], -y[0]], 0.0, [0.0, 1.0], 20.0, &[up], &Options::default()).unwrap();
        // sin crosses zero downward at pi and 5pi
        let times: Vec<f64> = sol.events.iter().map(|e| e.t).collect();
        assert_eq!(times.len(), 3);
        assert!((times[0] - std::f64::consts::PI).abs() < 1e-8);
    }

    #[test]
    fn event_at_start_does_not_retrigger() {
        let ev = Event::new(|_, y: &[f64; 2]| y[0], Direction::Either);
        let sol =
            integrate(|_, y: &[f64; 2]| [y[1], -y[0]], 0.0, [0.0, 1.0], 4.0, &[ev], &Options::default()).unwrap();
        let te = sol.terminal_event().unwrap().t;
        assert!((te - std::f64::consts::PI).abs() < 1e-8);
    }

    #[test]
    fn non_finite_start_is_error() {
        let r = integrate(|_, _y: &[f64; 1]| [f64::NAN], 0.0, [1.0], 1.0, &[], &Options::default());
        assert!(matches!(r, Err(Error::NonFinite { .. })));
    }

    #[test]
    fn blowup_reports_step_failure() {
        let sol = integrate(|_, y: &[f64; 1]| [y[0] * y[0]], 0.0, [1.0], 2.0, &[], &Options::default()).unwrap();
        assert_eq!(sol.termination, Termination::StepFailure);
        assert!(sol.t_last() < 1.0 + 1e-6);
    }

    #[test]
    fn global_error_shrinks_with_tolerance() {
        let mut last = f64::INFINITY;
        for k in 4..10 {
            let tol = Tolerance { rel: 10f64.powi(-k), abs: 10f64.powi(-k - 3) };
            let sol = integrate(|_, y: &[f64; 2]| [y[1], -y[0]], 0.0, [0.0, 1.0], 10.0, &[], &Options::with_tol(tol))
                .unwrap();
            let e = (sol.y_last()[0] - 10f64.sin()).abs();
            assert!(e <= last * 1.5, "k={k}: {e} vs {last}");
            last = e;
        }
        assert!(last < 1e-8);
    }

    #[test]
    fn observed_order_at_least_four() {
        // fixed steps through h_init/h_max with loose tolerance to defeat control
        let run = |h: f64| {
            let opts = Options {
                tol: Tolerance { rel: 1.0, abs: 1.0 },
                h_init: Some(h),
                h_max: Some(h),
                max_steps: 1_000_000,
            };
            let sol = integrate(|_, y: &[f64; 1]| [-y[0] * y[0]], 0.0, [1.0], 4.0, &[], &opts).unwrap();
            (sol.y_last()[0] - 0.2).abs()
        };
        let e1 = run(0.1);
        let e2 = run(0.05);
        let order = (e1 / e2).log2();
        assert!(order >= 4.0, "observed order {order}");
    }
}
