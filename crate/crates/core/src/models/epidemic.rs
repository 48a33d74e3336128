//! SIR-type epidemic model in (S, I, N) with the planar reduction on the
//! center manifold `S = S~(I, N)` of the equilibrium line
//! `Z0 = {I = 0, S = D N / (D + p)}`.
//!
//! Role mapping: `a = N`, `b = I`, `f = f(N)`, `h = -alpha`,
//! `g = g(S~(I,N), N) - a_comb`.

use std::io::{self, BufRead, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::characteristics;
use crate::error::{Error, Result};
use crate::heteroclinic::HeteroclinicOrbit;
use crate::integrator::{integrate, Direction, Event, Options, Solution, Tolerance};
use crate::model::{Bound, Domain, SlowFastModel, StructureFlags};
use crate::roots;

/// Perturbation profile f(N).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Profile {
    /// r N (1 - N / N_max)
    Logistic,
    /// logistic minus c1 exp(-(c2 (N - c3))^2)
    GaussianDip { c1: f64, c2: f64, c3: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpidemicParams {
    /// D
    pub d: f64,
    pub p: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// saturation constant of the incidence beta S / (m + S)
    pub m: f64,
    pub n_max: f64,
    /// logistic rate in f
    #[serde(default = "one")]
    pub r: f64,
    /// death rate entering a_comb; defaults to D
    #[serde(default)]
    pub death: Option<f64>,
    #[serde(default = "logistic")]
    pub profile: Profile,
}

fn one() -> f64 {
    1.0
}

fn logistic() -> Profile {
    Profile::Logistic
}

impl EpidemicParams {
    pub fn case1() -> Self {
        EpidemicParams {
            d: 0.2,
            p: 0.01,
            alpha: 0.048,
            beta: 1.0,
            gamma: 0.75,
            m: 0.1,
            n_max: 400.0,
            r: 1.0,
            death: None,
            profile: Profile::Logistic,
        }
    }

    pub fn case2() -> Self {
        EpidemicParams { profile: Profile::GaussianDip { c1: 60.0, c2: 0.04, c3: 90.0 }, ..Self::case1() }
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("D", self.d),
            ("p", self.p),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("m", self.m),
            ("N_max", self.n_max),
            ("r", self.r),
            ("death", self.death.unwrap_or(self.d)),
        ];
        for (name, v) in named {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParams(format!("{name} = {v} must be positive")));
            }
        }
        if let Profile::GaussianDip { c1, c2, c3 } = self.profile {
            if !(c1 >= 0.0 && c2 > 0.0 && c3.is_finite()) {
                return Err(Error::InvalidParams(format!("profile constants ({c1}, {c2}, {c3}) invalid")));
            }
        }
        // incidence monotonicity: d_S g > 0 and d_N g >= 0 hold for beta, m > 0
        Ok(())
    }

    /// a = d + gamma + alpha.
    pub fn a_comb(&self) -> f64 {
        self.death.unwrap_or(self.d) + self.gamma + self.alpha
    }

    /// D / (D + p): slope of the equilibrium line S = k N.
    pub fn k(&self) -> f64 {
        self.d / (self.d + self.p)
    }

    pub fn incidence(&self, s: f64, _n: f64) -> f64 {
        self.beta * s / (self.m + s)
    }

    pub fn incidence_ds(&self, s: f64, _n: f64) -> f64 {
        self.beta * self.m / ((self.m + s) * (self.m + s))
    }

    pub fn incidence_dn(&self, _s: f64, _n: f64) -> f64 {
        0.0
    }

    pub fn f(&self, n: f64) -> f64 {
        let base = self.r * n * (1.0 - n / self.n_max);
        match self.profile {
            Profile::Logistic => base,
            Profile::GaussianDip { c1, c2, c3 } => base - c1 * (-(c2 * (n - c3)).powi(2)).exp(),
        }
    }

    pub fn df(&self, n: f64) -> f64 {
        let base = self.r * (1.0 - 2.0 * n / self.n_max);
        match self.profile {
            Profile::Logistic => base,
            Profile::GaussianDip { c1, c2, c3 } => {
                let z = c2 * (n - c3);
                base + c1 * 2.0 * z * c2 * (-z * z).exp()
            }
        }
    }

    /// g(kN, N) - a on the equilibrium line.
    pub fn growth_on_line(&self, n: f64) -> f64 {
        self.incidence(self.k() * n, n) - self.a_comb()
    }

    /// Unit eigenvector (S, I, N) of the limiting system at (kN1, 0, N1) for
    /// the eigenvalue mu = g(kN1) - a, oriented with I > 0.
    pub fn unstable_eigvec(&self, n1: f64) -> Result<[f64; 3]> {
        let mu = self.growth_on_line(n1);
        if !(mu > 0.0) {
            return Err(Error::Precondition(format!("N1 = {n1} is not on the repelling part of the line (mu = {mu:e})")));
        }
        let g = self.incidence(self.k() * n1, n1);
        let vn = -self.alpha / mu;
        let vs = (-g + self.d * vn) / (mu + self.d + self.p);
        let norm = (vs * vs + 1.0 + vn * vn).sqrt();
        Ok([vs / norm, 1.0 / norm, vn / norm])
    }

    /// d_I S~(0, N): slope of the center manifold on the equilibrium line.
    pub fn boundary_s_i(&self, n: f64) -> f64 {
        let mu = self.growth_on_line(n);
        let g = self.incidence(self.k() * n, n);
        (-g + self.k() * self.alpha) / (mu + self.d + self.p)
    }

    /// (S, ln I, N) vector field of the full system.
    pub fn rhs_log(&self, eps: f64) -> impl Fn(f64, &[f64; 3]) -> [f64; 3] + Send + Sync + '_ {
        move |_, z| {
            let (s, i, n) = (z[0], z[1].exp(), z[2]);
            let g = self.incidence(s, n);
            let ef = if eps == 0.0 { 0.0 } else { eps * self.f(n) };
            [self.d * n + ef - g * i - (self.d + self.p) * s, g - self.a_comb(), ef - self.alpha * i]
        }
    }
}

/// Threshold N0 with g(D N/(D+p), N) = a_comb.
pub fn epidemic_n0(params: &EpidemicParams) -> Result<f64> {
    let f = |n: f64| params.growth_on_line(n);
    let lo = 1e-12 * params.n_max;
    if !(f(lo) < 0.0 && f(params.n_max) > 0.0) {
        return Err(Error::NoConnection(format!(
            "g(kN) - a does not change sign on (0, {}): no threshold N0",
            params.n_max
        )));
    }
    Ok(roots::brent(f, lo, params.n_max, 1e-13 * params.n_max, 300)?.x)
}

/// Full (S, I, N) vector field.
pub fn epidemic_full(params: EpidemicParams, eps: f64) -> impl Fn(f64, &[f64; 3]) -> [f64; 3] {
    move |_, z| {
        let (s, i, n) = (z[0], z[1], z[2]);
        let g = params.incidence(s, n);
        let ef = eps * params.f(n);
        [params.d * n + ef - g * i - (params.d + params.p) * s, (g - params.a_comb()) * i, ef - params.alpha * i]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Secant {
    /// neighbour orbits at the same time
    SameTime,
    /// neighbour orbits at the same N
    SameColumn,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CmOptions {
    /// Seed offset along the eigenvector; default 1e-4 N_max.
    pub delta: Option<f64>,
    /// Upper end of the seed interval; default 1.1 N_max so that eps > 0
    /// orbits near the outermost cycle stay inside the table.
    pub seed_max: Option<f64>,
    pub m_orbits: usize,
    pub t_horizon: f64,
    pub d_i: f64,
    pub d_n: f64,
    /// Orbits stop once I falls below this level after the peak.
    pub i_stop: f64,
    pub cond_max: f64,
    pub secant: Secant,
    pub tol: Tolerance,
}

impl Default for CmOptions {
    fn default() -> Self {
        CmOptions {
            delta: None,
            seed_max: None,
            m_orbits: 200,
            t_horizon: 1e6,
            d_i: 0.05,
            d_n: 1.0,
            i_stop: 1e-8,
            cond_max: 1e8,
            secant: Secant::SameColumn,
            tol: Tolerance { rel: 1e-10, abs: 1e-12 },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeFlag {
    Ok,
    /// partials from neighbouring crossings (ill-conditioned 2x2), or
    /// extrapolated just above the outermost orbit
    Filled,
    /// further above the outermost orbit
    Outside,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableMeta {
    pub delta: f64,
    pub t_horizon: f64,
    pub m_orbits: usize,
    pub n0: f64,
    pub crossings: usize,
    pub flagged_crossings: usize,
    pub secant: Secant,
}

/// S~ and its partials on the regular grid I = i d_i, N = n_lo + j d_n.
#[derive(Clone, Debug, PartialEq)]
pub struct CenterManifoldTable {
    pub n_lo: f64,
    pub d_n: f64,
    pub n_cols: usize,
    pub d_i: f64,
    pub n_rows: usize,
    s: Vec<f64>,
    s_i: Vec<f64>,
    s_n: Vec<f64>,
    flag: Vec<NodeFlag>,
    pub meta: TableMeta,
}

#[derive(Clone, Copy, Debug)]
struct Crossing {
    i: f64,
    s: f64,
    s_i: f64,
    s_n: f64,
    ok: bool,
}

fn solve_partials(v: [f64; 3], w: [f64; 3], cond_max: f64) -> (f64, f64, bool) {
    // [S_I S_N] [[v_I w_I] [v_N w_N]] = [v_S w_S]
    let nv = v[1].hypot(v[2]);
    let nw = w[1].hypot(w[2]);
    let (a, b, c, d) = (v[1] / nv, w[1] / nw, v[2] / nv, w[2] / nw);
    let det = a * d - b * c;
    let fro2 = a * a + b * b + c * c + d * d;
    let cond = if det == 0.0 { f64::INFINITY } else { fro2 / det.abs() };
    let (vs, ws) = (v[0] / nv, w[0] / nw);
    let s_i = (vs * d - ws * c) / det;
    let s_n = (ws * a - vs * b) / det;
    (s_i, s_n, cond.is_finite() && cond <= cond_max && s_i.is_finite() && s_n.is_finite())
}

fn plain(z: [f64; 3]) -> [f64; 3] {
    [z[0], z[1].exp(), z[2]]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn hermite(x0: f64, x1: f64, y0: f64, y1: f64, d0: f64, d1: f64, x: f64) -> f64 {
    let h = x1 - x0;
    if h <= 0.0 {
        return y0;
    }
    let t = (x - x0) / h;
    let (t2, t3) = (t * t, t * t * t);
    (2.0 * t3 - 3.0 * t2 + 1.0) * y0 + (t3 - 2.0 * t2 + t) * h * d0 + (-2.0 * t3 + 3.0 * t2) * y1 + (t3 - t2) * h * d1
}

/// Integrates the limiting system from `m_orbits` seeds on [N0 + delta, N_max],
/// extracts S~ and its partials where the orbits cross the table's N columns,
/// and fills the regular grid column by column.
pub fn build_center_manifold(params: &EpidemicParams, opts: &CmOptions) -> Result<CenterManifoldTable> {
    params.validate()?;
    if opts.m_orbits < 50 {
        return Err(Error::Precondition(format!("M = {} < 50", opts.m_orbits)));
    }
    if !(opts.d_i > 0.0 && opts.d_n > 0.0 && opts.t_horizon > 0.0 && opts.i_stop > 0.0) {
        return Err(Error::Precondition("table spacings, horizon and I-stop must be positive".into()));
    }
    let n0 = epidemic_n0(params)?;
    let delta = opts.delta.unwrap_or(1e-4 * params.n_max);
    if !(delta > 0.0 && n0 + delta < params.n_max) {
        return Err(Error::Precondition(format!("delta = {delta} invalid")));
    }
    let top = opts.seed_max.unwrap_or(1.1 * params.n_max);
    if !(top > n0 + delta) {
        return Err(Error::Precondition(format!("seed interval ({}, {top}) is empty", n0 + delta)));
    }
    let mm = opts.m_orbits;
    let seeds: Vec<f64> = (0..mm).map(|k| n0 + delta + (top - n0 - delta) * k as f64 / (mm - 1) as f64).collect();
    let ls = opts.i_stop.ln();
    let sols: Vec<Solution<3>> = seeds
        .par_iter()
        .map(|&n1| -> Result<Solution<3>> {
            let v = params.unstable_eigvec(n1)?;
            let z0 = [params.k() * n1 + delta * v[0], (delta * v[1]).ln(), n1 + delta * v[2]];
            let stop = Event::new(move |_, z: &[f64; 3]| z[1] - ls, Direction::Down);
            let sol = integrate(params.rhs_log(0.0), 0.0, z0, opts.t_horizon, &[stop], &Options::with_tol(opts.tol))?;
            if sol.termination == crate::integrator::Termination::StepFailure {
                return Err(Error::StepFailure(sol.diagnostic.unwrap_or_default()));
            }
            Ok(sol)
        })
        .collect::<Result<_>>()?;

    let n_end = sols.iter().map(|s| s.y_last()[2]).fold(f64::INFINITY, f64::min);
    let n_lo = ((n_end / opts.d_n).floor() * opts.d_n).max(opts.d_n);
    let n_cols = ((top - n_lo) / opts.d_n).floor() as usize + 1;
    let col_n = |j: usize| n_lo + opts.d_n * j as f64;

    // crossings per orbit, as (column, crossing)
    let per_orbit: Vec<Vec<(usize, Crossing)>> = (0..mm)
        .into_par_iter()
        .map(|k| {
            let sol = &sols[k];
            let mut out = Vec::new();
            for seg_i in 0..sol.segments.len() {
                let (n_a, n_b) = (sol.y[seg_i][2], sol.y[seg_i + 1][2]);
                if !(n_b < n_a) {
                    continue;
                }
                let j_hi = ((n_a - n_lo) / opts.d_n).floor();
                let j_lo = ((n_b - n_lo) / opts.d_n).floor() + 1.0;
                let mut j = j_hi;
                while j >= j_lo && j >= 0.0 {
                    let ju = j as usize;
                    if ju < n_cols {
                        let nc = col_n(ju);
                        let seg = &sol.segments[seg_i];
                        let r = roots::brent(|t| seg.eval(t)[2] - nc, sol.t[seg_i], sol.t[seg_i + 1], 1e-12 * sol.t[seg_i + 1].abs().max(1.0), 200);
                        if let Ok(r) = r {
                            out.push((ju, crossing_at(params, &sols, k, r.x, opts)));
                        }
                    }
                    j -= 1.0;
                }
            }
            out
        })
        .collect();

    let mut columns: Vec<Vec<Crossing>> = vec![Vec::new(); n_cols];
    let mut crossings = 0;
    let mut flagged = 0;
    for list in per_orbit {
        for (j, c) in list {
            crossings += 1;
            if !c.ok {
                flagged += 1;
            }
            columns[j].push(c);
        }
    }
    if opts.secant == Secant::SameColumn {
        same_column_partials(params, &mut columns, &col_n, opts.cond_max);
        flagged = columns.iter().flatten().filter(|c| !c.ok).count();
    }

    for col in columns.iter_mut() {
        col.sort_by(|a, b| a.i.total_cmp(&b.i));
        col.retain(|c| c.i > 0.0);
    }
    let i_last: Vec<f64> = columns.iter().map(|c| c.last().map_or(0.0, |x| x.i)).collect();
    // extrapolated rows reach the neighbours' outermost crossings so that cells
    // straddling the steep outer envelope stay usable
    let reach: Vec<f64> = (0..n_cols)
        .map(|j| {
            let lo = j.saturating_sub(1);
            let hi = (j + 1).min(n_cols - 1);
            i_last[lo].max(i_last[j]).max(i_last[hi]) + opts.d_i
        })
        .collect();
    let i_top = reach.iter().copied().fold(0.0, f64::max);
    let n_rows = (i_top / opts.d_i).ceil() as usize + 2;
    let mut s = vec![f64::NAN; n_rows * n_cols];
    let mut s_i = vec![f64::NAN; n_rows * n_cols];
    let mut s_n = vec![f64::NAN; n_rows * n_cols];
    let mut flag = vec![NodeFlag::Outside; n_rows * n_cols];
    for (j, col) in columns.iter().enumerate() {
        let nc = col_n(j);
        let mut pts = vec![Crossing { i: 0.0, s: params.k() * nc, s_i: params.boundary_s_i(nc), s_n: params.k(), ok: true }];
        pts.extend(col.iter().copied());
        let valid: Vec<Crossing> = pts.iter().copied().filter(|c| c.ok).collect();
        let i_last = pts.last().unwrap().i;
        for row in 0..n_rows {
            let iv = opts.d_i * row as f64;
            let idx = j * n_rows + row;
            if iv > reach[j] {
                break;
            }
            if iv > i_last {
                let top = pts[pts.len() - 1];
                let vt = valid[valid.len() - 1];
                s[idx] = top.s + vt.s_i * (iv - top.i);
                s_i[idx] = vt.s_i;
                s_n[idx] = vt.s_n;
                flag[idx] = NodeFlag::Filled;
                continue;
            }
            let q = pts.partition_point(|c| c.i <= iv).clamp(1, pts.len().max(2) - 1);
            let (c0, c1) = if pts.len() == 1 { (pts[0], pts[0]) } else { (pts[q - 1], pts[q]) };
            // partials from the nearest well-conditioned crossings
            let qv = valid.partition_point(|c| c.i <= iv).clamp(1, valid.len().max(2) - 1);
            let (v0, v1) = if valid.len() == 1 { (valid[0], valid[0]) } else { (valid[qv - 1], valid[qv]) };
            let lin = |x0: f64, x1: f64, y0: f64, y1: f64| if x1 > x0 { y0 + (y1 - y0) * (iv - x0) / (x1 - x0) } else { y0 };
            let clean = c0.ok && c1.ok;
            s[idx] = if clean {
                hermite(c0.i, c1.i, c0.s, c1.s, c0.s_i, c1.s_i, iv)
            } else {
                lin(c0.i, c1.i, c0.s, c1.s)
            };
            s_i[idx] = lin(v0.i, v1.i, v0.s_i, v1.s_i);
            s_n[idx] = lin(v0.i, v1.i, v0.s_n, v1.s_n);
            flag[idx] = if clean { NodeFlag::Ok } else { NodeFlag::Filled };
        }
    }
    Ok(CenterManifoldTable {
        n_lo,
        d_n: opts.d_n,
        n_cols,
        d_i: opts.d_i,
        n_rows,
        s,
        s_i,
        s_n,
        flag,
        meta: TableMeta {
            delta,
            t_horizon: opts.t_horizon,
            m_orbits: mm,
            n0,
            crossings,
            flagged_crossings: flagged,
            secant: opts.secant,
        },
    })
}

/// Partials at a crossing of orbit k at time t: the vector field is the
/// time difference quotient in the limit, neighbours at time t give the
/// transverse one.
fn crossing_at(params: &EpidemicParams, sols: &[Solution<3>], k: usize, t: f64, opts: &CmOptions) -> Crossing {
    let z = plain(sols[k].interpolate(t).unwrap());
    let rhs = epidemic_full(*params, 0.0);
    let v = rhs(t, &z);
    let at = |j: usize| sols.get(j).and_then(|s| s.interpolate(t)).map(plain);
    let w = match (k.checked_sub(1).and_then(at), at(k + 1)) {
        (Some(lo), Some(hi)) => sub(hi, lo).map(|x| 0.5 * x),
        (None, Some(hi)) => sub(hi, z),
        (Some(lo), None) => sub(z, lo),
        (None, None) => [f64::NAN; 3],
    };
    let (s_i, s_n, ok) = if opts.secant == Secant::SameTime {
        solve_partials(v, w, opts.cond_max)
    } else {
        (f64::NAN, f64::NAN, true)
    };
    Crossing { i: z[1], s: z[0], s_i, s_n, ok }
}

fn same_column_partials(params: &EpidemicParams, columns: &mut [Vec<Crossing>], col_n: &dyn Fn(usize) -> f64, cond_max: f64) {
    for (j, col) in columns.iter_mut().enumerate() {
        col.sort_by(|a, b| a.i.total_cmp(&b.i));
        let nc = col_n(j);
        let rhs = epidemic_full(*params, 0.0);
        let snapshot = col.clone();
        for (q, c) in col.iter_mut().enumerate() {
            let lo = if q == 0 {
                Crossing { i: 0.0, s: params.k() * nc, s_i: 0.0, s_n: 0.0, ok: true }
            } else {
                snapshot[q - 1]
            };
            let hi = snapshot.get(q + 1).copied().unwrap_or(snapshot[q]);
            let w = [hi.s - lo.s, hi.i - lo.i, 0.0];
            let v = rhs(0.0, &[c.s, c.i, nc]);
            let (si, sn, ok) = solve_partials(v, w, cond_max);
            c.s_i = si;
            c.s_n = sn;
            c.ok = ok;
        }
    }
}

impl CenterManifoldTable {
    fn idx(&self, row: usize, col: usize) -> usize {
        col * self.n_rows + row
    }

    pub fn n_hi(&self) -> f64 {
        self.n_lo + self.d_n * (self.n_cols - 1) as f64
    }

    pub fn node(&self, row: usize, col: usize) -> (f64, f64, f64, NodeFlag) {
        let k = self.idx(row, col);
        (self.s[k], self.s_i[k], self.s_n[k], self.flag[k])
    }

    /// (S~, d_I S~, d_N S~) by bilinear interpolation.
    pub fn eval(&self, i: f64, n: f64) -> Result<(f64, f64, f64)> {
        let out = Error::OutsideTable { i, n };
        if !(i >= 0.0 && n >= self.n_lo && n <= self.n_hi()) {
            return Err(out);
        }
        let fi = i / self.d_i;
        let fj = (n - self.n_lo) / self.d_n;
        let r = (fi.floor() as usize).min(self.n_rows - 2);
        let c = (fj.floor() as usize).min(self.n_cols - 2);
        let (ti, tj) = (fi - r as f64, fj - c as f64);
        if ti > 1.0 {
            return Err(out);
        }
        let ks = [self.idx(r, c), self.idx(r + 1, c), self.idx(r, c + 1), self.idx(r + 1, c + 1)];
        if ks.iter().any(|&k| self.flag[k] == NodeFlag::Outside) {
            return Err(out);
        }
        let w = [(1.0 - ti) * (1.0 - tj), ti * (1.0 - tj), (1.0 - ti) * tj, ti * tj];
        let mix = |v: &[f64]| ks.iter().zip(w).map(|(&k, wk)| v[k] * wk).sum::<f64>();
        Ok((mix(&self.s), mix(&self.s_i), mix(&self.s_n)))
    }

    pub fn s_tilde(&self, i: f64, n: f64) -> Result<f64> {
        self.eval(i, n).map(|e| e.0)
    }

    /// Invariance defect of the S-equation at (S~(I,N), I, N) for eps = 0.
    pub fn residual(&self, params: &EpidemicParams, i: f64, n: f64) -> Result<f64> {
        let (s, si, sn) = self.eval(i, n)?;
        let v = epidemic_full(*params, 0.0)(0.0, &[s, i, n]);
        Ok(si * v[1] + sn * v[2] - v[0])
    }

    pub fn flag_counts(&self) -> (usize, usize, usize) {
        let c = |f: NodeFlag| self.flag.iter().filter(|x| **x == f).count();
        (c(NodeFlag::Ok), c(NodeFlag::Filled), c(NodeFlag::Outside))
    }

    /// CSV with columns I, N, S, S_I, S_N, flag.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "# n_lo={:e} d_n={:e} n_cols={} d_i={:e} n_rows={}", self.n_lo, self.d_n, self.n_cols, self.d_i, self.n_rows)?;
        writeln!(
            w,
            "# delta={:e} t_horizon={:e} m_orbits={} n0={:e} crossings={} flagged={} secant={:?}",
            self.meta.delta,
            self.meta.t_horizon,
            self.meta.m_orbits,
            self.meta.n0,
            self.meta.crossings,
            self.meta.flagged_crossings,
            self.meta.secant
        )?;
        writeln!(w, "I,N,S,S_I,S_N,flag")?;
        for col in 0..self.n_cols {
            for row in 0..self.n_rows {
                let (s, si, sn, f) = self.node(row, col);
                let fl = match f {
                    NodeFlag::Ok => "ok",
                    NodeFlag::Filled => "filled",
                    NodeFlag::Outside => "outside",
                };
                writeln!(
                    w,
                    "{:e},{:e},{:e},{:e},{:e},{fl}",
                    self.d_i * row as f64,
                    self.n_lo + self.d_n * col as f64,
                    s,
                    si,
                    sn
                )?;
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let bad = |m: &str| Error::Precondition(format!("table CSV: {m}"));
        let mut lines = r.lines();
        let mut next = || lines.next().transpose().map_err(|e| bad(&e.to_string()));
        let kv = |line: &str| -> Vec<(String, String)> {
            line.trim_start_matches('#')
                .split_whitespace()
                .filter_map(|p| p.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
                .collect()
        };
        let get = |v: &[(String, String)], k: &str| -> Result<String> {
            v.iter().find(|(a, _)| a == k).map(|(_, b)| b.clone()).ok_or_else(|| bad(&format!("missing {k}")))
        };
        let num = |s: String| s.parse::<f64>().map_err(|_| bad(&format!("bad number {s}")));
        let h1 = kv(&next()?.ok_or_else(|| bad("empty"))?);
        let h2 = kv(&next()?.ok_or_else(|| bad("missing header"))?);
        let n_lo = num(get(&h1, "n_lo")?)?;
        let d_n = num(get(&h1, "d_n")?)?;
        let n_cols = num(get(&h1, "n_cols")?)? as usize;
        let d_i = num(get(&h1, "d_i")?)?;
        let n_rows = num(get(&h1, "n_rows")?)? as usize;
        let secant = match get(&h2, "secant")?.as_str() {
            "SameColumn" => Secant::SameColumn,
            _ => Secant::SameTime,
        };
        let meta = TableMeta {
            delta: num(get(&h2, "delta")?)?,
            t_horizon: num(get(&h2, "t_horizon")?)?,
            m_orbits: num(get(&h2, "m_orbits")?)? as usize,
            n0: num(get(&h2, "n0")?)?,
            crossings: num(get(&h2, "crossings")?)? as usize,
            flagged_crossings: num(get(&h2, "flagged")?)? as usize,
            secant,
        };
        if next()?.as_deref() != Some("I,N,S,S_I,S_N,flag") {
            return Err(bad("missing column header"));
        }
        let total = n_rows * n_cols;
        let (mut s, mut s_i, mut s_n, mut flag) =
            (Vec::with_capacity(total), Vec::with_capacity(total), Vec::with_capacity(total), Vec::with_capacity(total));
        while let Some(line) = next()? {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad(&format!("row has {} fields", f.len())));
            }
            s.push(num(f[2].into())?);
            s_i.push(num(f[3].into())?);
            s_n.push(num(f[4].into())?);
            flag.push(match f[5] {
                "ok" => NodeFlag::Ok,
                "filled" => NodeFlag::Filled,
                _ => NodeFlag::Outside,
            });
        }
        if s.len() != total {
            return Err(bad(&format!("expected {total} rows, found {}", s.len())));
        }
        Ok(CenterManifoldTable { n_lo, d_n, n_cols, d_i, n_rows, s, s_i, s_n, flag, meta })
    }
}

/// Planar model on the center manifold, backed by a table.
#[derive(Clone, Debug)]
pub struct EpidemicReduced {
    pub params: EpidemicParams,
    pub table: Arc<CenterManifoldTable>,
    pub n0: f64,
}

pub fn epidemic_reduced(params: EpidemicParams, table: Arc<CenterManifoldTable>) -> Result<EpidemicReduced> {
    params.validate()?;
    let n0 = epidemic_n0(&params)?;
    Ok(EpidemicReduced { params, table, n0 })
}

impl EpidemicReduced {
    /// g(S~(I,N), N) - a, with table errors surfaced.
    pub fn try_g(&self, n: f64, i: f64) -> Result<f64> {
        if i == 0.0 {
            return Ok(self.params.growth_on_line(n));
        }
        let s = self.table.s_tilde(i, n)?;
        Ok(self.params.incidence(s, n) - self.params.a_comb())
    }
}

impl SlowFastModel for EpidemicReduced {
    fn name(&self) -> &str {
        "epidemic"
    }
    fn f(&self, a: f64, _b: f64, _eps: f64) -> f64 {
        self.params.f(a)
    }
    fn g(&self, a: f64, b: f64, _eps: f64) -> f64 {
        self.try_g(a, b).unwrap_or(f64::NAN)
    }
    fn h(&self, _a: f64, _b: f64, _eps: f64) -> f64 {
        -self.params.alpha
    }
    fn domain(&self) -> Domain {
        Domain::new(Bound::Finite(0.0), Bound::Finite(self.params.n_max), self.n0)
    }
    fn df_da(&self, a: f64, _b: f64, _eps: f64) -> Option<f64> {
        Some(self.params.df(a))
    }
    fn dh_da(&self, _a: f64, _b: f64, _eps: f64) -> Option<f64> {
        Some(0.0)
    }
    fn structure(&self) -> StructureFlags {
        StructureFlags { h_independent_of_a: true, ..Default::default() }
    }
}

/// lambda(N1) = ln(f(N1)/f(omega)) - (1/alpha) int_gamma d_S g d_I S~ dN, with
/// the table's partials. Along the path dN = -alpha I dt.
pub fn epidemic_lambda(model: &EpidemicReduced, orbit: &HeteroclinicOrbit) -> Result<(f64, f64)> {
    let p = &model.params;
    let (fa, fw) = (p.f(orbit.a_alpha), p.f(orbit.a_omega));
    if !(fa > 0.0 && fw > 0.0) {
        return Err(Error::Domain(format!("f not positive at endpoints: {fa:e}, {fw:e}")));
    }
    let log = (fa / fw).ln();
    let log_err = (p.df(orbit.a_alpha) / fa).abs() * orbit.endpoint_err + (p.df(orbit.a_omega) / fw).abs() * orbit.endpoint_err;
    let miss = std::sync::Mutex::new(None);
    let (int, int_err) = characteristics::path_integral(model, orbit, &|n, i| match model.table.eval(i, n) {
        Ok((s, si, _)) => p.incidence_ds(s, n) * si,
        Err(e) => {
            miss.lock().unwrap().get_or_insert(e);
            0.0
        }
    })?;
    if let Some(e) = miss.into_inner().unwrap() {
        return Err(e);
    }
    Ok((log + int, log_err + int_err))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_n0() {
        let p = EpidemicParams::case1();
        let n0 = epidemic_n0(&p).unwrap();
        assert!(p.growth_on_line(n0).abs() < 1e-10);
        assert!((n0 - 52.395).abs() < 1e-2, "{n0}");
        // larger beta lowers the threshold
        let big = EpidemicParams { beta: 50.0, ..p };
        assert!(epidemic_n0(&big).unwrap() < n0 / 10.0);
    }

    #[test]
    fn eigenvector_is_eigenvector() {
        let p = EpidemicParams::case1();
        let n1 = 300.0;
        let v = p.unstable_eigvec(n1).unwrap();
        let mu = p.growth_on_line(n1);
        let z = [p.k() * n1, 0.0, n1];
        let e = 1e-6;
        let rhs = epidemic_full(p, 0.0);
        let zp = [z[0] + e * v[0], z[1] + e * v[1], z[2] + e * v[2]];
        let jv = rhs(0.0, &zp);
        for c in 0..3 {
            assert!((jv[c] / e - mu * v[c]).abs() < 1e-5, "{c}");
        }
        assert!(p.unstable_eigvec(20.0).is_err());
    }

    #[test]
    fn invariant_plane_and_profile() {
        let p = EpidemicParams::case2();
        let rhs = epidemic_full(p, 1e-3);
        assert_eq!(rhs(0.0, &[30.0, 0.0, 100.0])[1], 0.0);
        for k in 1..400 {
            let n = k as f64;
            assert!(p.f(n) > 0.0 || n >= p.n_max);
            let fd = (p.f(n + 1e-5) - p.f(n - 1e-5)) / 2e-5;
            assert!((fd - p.df(n)).abs() < 1e-6 * (1.0 + fd.abs()));
        }
        // the dip is local
        let base = EpidemicParams::case1();
        let mut n = 90.0 + 10.0 / 0.04;
        while n < 399.0 {
            assert!((p.f(n) - base.f(n)).abs() < 1e-3 * base.f(n));
            n += 1.0;
        }
    }

    #[test]
    fn hermite_reproduces_cubic() {
        let f = |x: f64| x * x * x - 2.0 * x;
        let d = |x: f64| 3.0 * x * x - 2.0;
        let v = hermite(0.5, 2.0, f(0.5), f(2.0), d(0.5), d(2.0), 1.3);
        assert!((v - f(1.3)).abs() < 1e-12);
    }

    #[test]
    fn partials_solve() {
        // S = 2 I + 3 N: any two independent tangent vectors recover (2, 3)
        let v = [2.0 * 0.7 + 3.0 * -0.2, 0.7, -0.2];
        let w = [2.0 * 0.1 + 3.0 * 0.9, 0.1, 0.9];
        let (si, sn, ok) = solve_partials(v, w, 1e8);
        assert!(ok && (si - 2.0).abs() < 1e-12 && (sn - 3.0).abs() < 1e-12);
        let (_, _, ok) = solve_partials(v, v, 1e8);
        assert!(!ok);
    }

    fn small_table() -> (EpidemicParams, CenterManifoldTable) {
        let p = EpidemicParams::case1();
        let t = build_center_manifold(&p, &CmOptions { m_orbits: 60, ..Default::default() }).unwrap();
        (p, t)
    }

    #[test]
    fn table_is_invariant() {
        let (p, t) = small_table();
        assert_eq!(t.meta.flagged_crossings, 0);
        for &(i, n) in &[(0.5, 100.0), (2.0, 200.0), (1.0, 350.0), (0.1, 60.0), (3.0, 150.0)] {
            let r = t.residual(&p, i, n).unwrap();
            assert!(r.abs() < 1e-6, "residual {r:e} at ({i}, {n})");
        }
        // boundary row is the equilibrium line
        let (s, si, sn) = t.eval(0.0, 123.0).unwrap();
        assert!((s - p.k() * 123.0).abs() < 1e-9);
        assert!((si - p.boundary_s_i(123.0)).abs() < 1e-2 * si.abs());
        assert!((sn - p.k()).abs() < 1e-9);
        assert!(matches!(t.eval(50.0, 100.0), Err(Error::OutsideTable { .. })));
        assert!(matches!(t.eval(1.0, 1e4), Err(Error::OutsideTable { .. })));
    }

    #[test]
    fn table_csv_round_trip() {
        let (_, t) = small_table();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = CenterManifoldTable::read_csv(io::Cursor::new(buf)).unwrap();
        assert_eq!(back.n_rows, t.n_rows);
        assert_eq!(back.meta, t.meta);
        let (a, b) = (t.eval(1.3, 211.7).unwrap(), back.eval(1.3, 211.7).unwrap());
        assert!((a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9);
        assert!(CenterManifoldTable::read_csv(io::Cursor::new(b"garbage\n".to_vec())).is_err());
    }

    #[test]
    fn reduced_model_and_lambda_forms() {
        let (p, t) = small_table();
        let m = epidemic_reduced(p, Arc::new(t)).unwrap();
        assert!((m.g(200.0, 0.0, 0.0) - p.growth_on_line(200.0)).abs() < 1e-15);
        assert!(m.g(200.0, 80.0, 0.0).is_nan());
        let o = crate::heteroclinic::compute_heteroclinic(&m, 250.0, &Default::default()).unwrap();
        let (lt, _) = epidemic_lambda(&m, &o).unwrap();
        let (lg, _) = characteristics::lambda_h_independent(&m, &o).unwrap();
        assert!((lt - lg).abs() < 1e-3, "{lt} vs {lg}");
    }
}
