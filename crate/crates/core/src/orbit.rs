//! Planar trajectories of slow–fast models.
//!
//! Off-axis orbits are integrated in `(a, u = ln b)`: the right-hand side
//! becomes `a' = eps f + e^u h`, `u' = g`, which keeps b representable when
//! it decays like `exp(-K/eps)` during slow passages. Orbits started on the
//! invariant axis stay there and only integrate the slow flow in a.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{integrate, Direction, Event, Options, Solution, Termination, Tolerance};
use crate::model::SlowFastModel;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    BCrossesLevel,
    ACrossesLevel,
    ProximityToPoint,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    pub kind: EventKind,
    pub level: f64,
    pub point: (f64, f64),
    pub direction: Direction,
}

impl EventSpec {
    pub fn b_level(level: f64, direction: Direction) -> Self {
        EventSpec { kind: EventKind::BCrossesLevel, level, point: (0.0, 0.0), direction }
    }

    pub fn a_level(level: f64, direction: Direction) -> Self {
        EventSpec { kind: EventKind::ACrossesLevel, level, point: (0.0, 0.0), direction }
    }

    /// Fires when the distance to `point` drops below `radius`.
    pub fn near(point: (f64, f64), radius: f64) -> Self {
        EventSpec { kind: EventKind::ProximityToPoint, level: radius, point, direction: Direction::Down }
    }

    fn check(&self) -> Result<()> {
        if !self.level.is_finite() || !self.point.0.is_finite() || !self.point.1.is_finite() {
            return Err(Error::Precondition("event level must be finite".into()));
        }
        match self.kind {
            EventKind::BCrossesLevel if self.level <= 0.0 => {
                Err(Error::Precondition("b-level events need a positive level".into()))
            }
            EventKind::ProximityToPoint if self.level <= 0.0 || self.direction != Direction::Down => {
                Err(Error::Precondition("proximity events need radius > 0 and direction down".into()))
            }
            _ => Ok(()),
        }
    }

    fn to_log_event(self) -> Event<'static, 2> {
        match self.kind {
            EventKind::BCrossesLevel => {
                let l = self.level.ln();
                Event::new(move |_, y: &[f64; 2]| y[1] - l, self.direction)
            }
            EventKind::ACrossesLevel => {
                let l = self.level;
                Event::new(move |_, y: &[f64; 2]| y[0] - l, self.direction)
            }
            EventKind::ProximityToPoint => {
                let (pa, pb, r) = (self.point.0, self.point.1, self.level);
                Event::new(move |_, y: &[f64; 2]| (y[0] - pa).hypot(y[1].exp() - pb) - r, self.direction)
            }
        }
    }
}

#[derive(Clone, Debug)]
enum Repr {
    Log(Solution<2>),
    Axis(Solution<1>),
}

#[derive(Clone, Debug)]
pub struct OrbitPath {
    repr: Repr,
}

impl OrbitPath {
    pub fn from_log(sol: Solution<2>) -> Self {
        OrbitPath { repr: Repr::Log(sol) }
    }

    pub fn log_solution(&self) -> Option<&Solution<2>> {
        match &self.repr {
            Repr::Log(s) => Some(s),
            Repr::Axis(_) => None,
        }
    }

    pub fn len(&self) -> usize {
        match &self.repr {
            Repr::Log(s) => s.t.len(),
            Repr::Axis(s) => s.t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn times(&self) -> &[f64] {
        match &self.repr {
            Repr::Log(s) => &s.t,
            Repr::Axis(s) => &s.t,
        }
    }

    /// Sample i as (t, a, b).
    pub fn sample(&self, i: usize) -> (f64, f64, f64) {
        match &self.repr {
            Repr::Log(s) => (s.t[i], s.y[i][0], s.y[i][1].exp()),
            Repr::Axis(s) => (s.t[i], s.y[i][0], 0.0),
        }
    }

    pub fn samples(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        (0..self.len()).map(move |i| self.sample(i))
    }

    pub fn t_start(&self) -> f64 {
        self.times()[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times().last().unwrap()
    }

    pub fn start(&self) -> (f64, f64) {
        let (_, a, b) = self.sample(0);
        (a, b)
    }

    pub fn end(&self) -> (f64, f64) {
        let (_, a, b) = self.sample(self.len() - 1);
        (a, b)
    }

    /// (a, ln b) at time t from the dense output.
    pub fn log_state_at(&self, t: f64) -> Option<(f64, f64)> {
        match &self.repr {
            Repr::Log(s) => s.interpolate(t).map(|y| (y[0], y[1])),
            Repr::Axis(s) => s.interpolate(t).map(|y| (y[0], f64::NEG_INFINITY)),
        }
    }

    /// (a, b) at time t from the dense output.
    pub fn state_at(&self, t: f64) -> Option<(f64, f64)> {
        self.log_state_at(t).map(|(a, u)| (a, u.exp()))
    }

    pub fn termination(&self) -> Termination {
        match &self.repr {
            Repr::Log(s) => s.termination,
            Repr::Axis(s) => s.termination,
        }
    }

    pub fn diagnostic(&self) -> Option<&str> {
        match &self.repr {
            Repr::Log(s) => s.diagnostic.as_deref(),
            Repr::Axis(s) => s.diagnostic.as_deref(),
        }
    }

    /// State (t, a, b) at the event that stopped the run.
    pub fn event_state(&self) -> Option<(f64, f64, f64)> {
        match &self.repr {
            Repr::Log(s) => s.terminal_event().map(|e| (e.t, e.y[0], e.y[1].exp())),
            Repr::Axis(s) => s.terminal_event().map(|e| (e.t, e.y[0], 0.0)),
        }
    }

    /// Index of the terminal event among the requested events.
    pub fn event_index(&self) -> Option<usize> {
        match &self.repr {
            Repr::Log(s) => s.terminal_event().map(|e| e.index),
            Repr::Axis(s) => s.terminal_event().map(|e| e.index),
        }
    }

    pub fn peak_b(&self) -> f64 {
        self.samples().map(|s| s.2).fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,a,b")?;
        for (t, a, b) in self.samples() {
            writeln!(w, "{t:e},{a:e},{b:e}")?;
        }
        Ok(())
    }
}

/// Right-hand side of the planar system in (a, ln b).
pub fn log_rhs(model: &dyn SlowFastModel, eps: f64) -> impl Fn(f64, &[f64; 2]) -> [f64; 2] + '_ {
    move |_, y| {
        let b = y[1].exp();
        let a = y[0];
        let slow = if eps == 0.0 { 0.0 } else { eps * model.f(a, b, eps) };
        [slow + b * model.h(a, b, eps), model.g(a, b, eps)]
    }
}

/// Integrates the planar system from (a, b) over `t_span`, stopping at the
/// first event that fires.
pub fn integrate_planar(
    model: &dyn SlowFastModel,
    eps: f64,
    init: (f64, f64),
    t_span: (f64, f64),
    events: &[EventSpec],
    tol: Tolerance,
) -> Result<OrbitPath> {
    let (a0, b0) = init;
    if !(a0.is_finite() && b0.is_finite()) || b0 < 0.0 {
        return Err(Error::Precondition(format!("initial point ({a0}, {b0}) must be finite with b >= 0")));
    }
    for e in events {
        e.check()?;
    }
    let opts = Options::with_tol(tol);
    if b0 == 0.0 {
        let evs: Vec<Event<'static, 1>> = events
            .iter()
            .filter(|e| e.kind == EventKind::ACrossesLevel)
            .map(|e| {
                let l = e.level;
                Event::new(move |_, y: &[f64; 1]| y[0] - l, e.direction)
            })
            .collect();
        let sol = integrate(|_, y: &[f64; 1]| [eps * model.f(y[0], 0.0, eps)], t_span.0, [a0], t_span.1, &evs, &opts)?;
        return Ok(OrbitPath { repr: Repr::Axis(sol) });
    }
    let evs: Vec<Event<'static, 2>> = events.iter().map(|e| e.to_log_event()).collect();
    let sol = integrate(log_rhs(model, eps), t_span.0, [a0, b0.ln()], t_span.1, &evs, &opts)?;
    Ok(OrbitPath::from_log(sol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Bound, Domain, FnModel};

    fn toy() -> FnModel {
        FnModel::new("toy", |_, _, _| 1.0, |a, _, _| a, |_, _, _| -1.0, Domain::new(Bound::Infinite, Bound::Infinite, 0.0))
    }

    #[test]
    fn axis_is_invariant() {
        let m = toy();
        let p = integrate_planar(&m, 0.1, (-1.0, 0.0), (0.0, 5.0), &[], Tolerance::default()).unwrap();
        for (t, a, b) in p.samples() {
            assert_eq!(b, 0.0);
            assert!((a - (-1.0 + 0.1 * t)).abs() < 1e-12);
        }
    }

    #[test]
    fn toy_fast_orbit_conserves_conic() {
        // db/da = -a  =>  b + a^2/2 is constant along eps = 0 orbits
        let m = toy();
        let ev = [EventSpec::b_level(1e-3, Direction::Down)];
        let p = integrate_planar(&m, 0.0, (0.0, 0.5), (0.0, 100.0), &ev, Tolerance { rel: 1e-11, abs: 1e-14 }).unwrap();
        assert_eq!(p.termination(), Termination::EventHit);
        for (_, a, b) in p.samples() {
            assert!((b + 0.5 * a * a - 0.5).abs() < 1e-8);
        }
        let (_, a, b) = p.event_state().unwrap();
        assert!((b - 1e-3).abs() < 1e-12);
        assert!(a < 0.0);
    }

    #[test]
    fn samples_reproduced_by_dense_output() {
        let m = toy();
        let p = integrate_planar(&m, 0.05, (0.5, 0.2), (0.0, 30.0), &[], Tolerance::default()).unwrap();
        for (t, a, b) in p.samples() {
            let (ai, bi) = p.state_at(t).unwrap();
            assert_eq!((ai, bi), (a, b));
        }
        let ts = p.times();
        assert!(ts.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn bad_event_rejected() {
        let m = toy();
        let ev = [EventSpec::b_level(-1.0, Direction::Down)];
        assert!(integrate_planar(&m, 0.0, (0.0, 0.5), (0.0, 1.0), &ev, Tolerance::default()).is_err());
    }

    #[test]
    fn csv_has_header() {
        let m = toy();
        let p = integrate_planar(&m, 0.0, (0.0, 0.5), (0.0, 1.0), &[], Tolerance::default()).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("t,a,b\n"));
        assert_eq!(s.lines().count(), p.len() + 1);
    }
}
