//! Derivative-free maximisation of the peak concurrence within a stopping time
//! by engineering on-site energies or hoppings, with robustness sweeps and
//! dissipative replays.
//!
//! Decision vectors are angles:
//! * onsite: `Delta = r cos(theta)` for `c_1..c_L, n_1..n_N`;
//! * hopping: `x = r cos^2(theta/2)` for `J_1..J_{L-1}`, then
//!   `g_{n_a,left}, g_{n_a,right}` per atom.

use crate::dynamics::{
    evolve_lindblad, pair_dynamics, pair_dynamics_decay, time_grid, DissipationParams, LindbladOptions,
    LINDBLAD_MAX_SITES,
};
use crate::entanglement::{concurrence, partial_trace_atoms, ConcurrenceTrace, QuantumState, DEFAULT_PEAK_TOL};
use crate::error::{Error, Result};
use crate::linalg::{c, DensityMatrix};
use crate::model::{build_full_h, site_bit, ModelParams, SiteOrdering};
use crate::parallel::par_map;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

/// Objective time step in units of 1/J.
pub const OBJECTIVE_DT: f64 = 0.05;
pub const MIN_BUDGET: usize = 100;
pub const DEFAULT_RESTARTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Onsite,
    Hopping,
}

impl Mode {
    pub fn n_angles(self, l: usize, n: usize) -> usize {
        match self {
            Mode::Onsite => l + n,
            Mode::Hopping => l - 1 + 2 * n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub mode: Mode,
    pub r: f64,
    pub t_f: f64,
    pub angles: Vec<f64>,
}

impl ObjectiveSpec {
    /// Angles reproducing the unmodified `base` where the bound allows it.
    pub fn neutral(mode: Mode, r: f64, t_f: f64, base: &ModelParams) -> Self {
        let angles = match mode {
            Mode::Onsite => vec![FRAC_PI_2; mode.n_angles(base.l, base.n)],
            Mode::Hopping => {
                let mut v: Vec<f64> = base.j_c.clone();
                for a in 0..base.n {
                    v.push(base.g_left[a]);
                    v.push(base.g_right[a]);
                }
                v.iter().map(|&x| hopping_angle(x, r)).collect()
            }
        };
        ObjectiveSpec { mode, r, t_f, angles }
    }

    pub fn validate(&self, base: &ModelParams) -> Result<()> {
        if !self.r.is_finite() || self.r < 0.0 {
            return Err(Error::Param(format!("bound r must be finite and >= 0, got {}", self.r)));
        }
        if !self.t_f.is_finite() || self.t_f < 0.0 {
            return Err(Error::Param(format!("stopping time must be finite and >= 0, got {}", self.t_f)));
        }
        let want = self.mode.n_angles(base.l, base.n);
        if self.angles.len() != want {
            return Err(Error::Dimension { expected: want, got: self.angles.len() });
        }
        if self.angles.iter().any(|a| !a.is_finite()) {
            return Err(Error::Param("angles must be finite".into()));
        }
        Ok(())
    }
}

fn hopping_angle(x: f64, r: f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    2.0 * (x / r).clamp(0.0, 1.0).sqrt().acos()
}

/// Angles mapping exactly onto the parameters of `p`, clamped to the bound.
pub fn angles_for(mode: Mode, r: f64, p: &ModelParams) -> Vec<f64> {
    match mode {
        Mode::Onsite => p
            .delta_c
            .iter()
            .chain(&p.delta_n)
            .map(|&d| if r > 0.0 { (d / r).clamp(-1.0, 1.0).acos() } else { FRAC_PI_2 })
            .collect(),
        Mode::Hopping => ObjectiveSpec::neutral(mode, r, 0.0, p).angles,
    }
}

/// Parameters selected by `angles` on top of `base`.
pub fn map_angles(mode: Mode, r: f64, angles: &[f64], base: &ModelParams) -> Result<ModelParams> {
    let want = mode.n_angles(base.l, base.n);
    if angles.len() != want {
        return Err(Error::Dimension { expected: want, got: angles.len() });
    }
    let mut p = base.clone();
    match mode {
        Mode::Onsite => {
            let d: Vec<f64> = angles.iter().map(|t| r * t.cos()).collect();
            p.delta_c = d[..base.l].to_vec();
            p.delta_n = d[base.l..].to_vec();
        }
        Mode::Hopping => {
            let x: Vec<f64> = angles.iter().map(|t| r * (t / 2.0).cos().powi(2)).collect();
            let nj = base.l - 1;
            p.j_c = x[..nj].to_vec();
            for a in 0..base.n {
                p.g_left[a] = x[nj + 2 * a];
                p.g_right[a] = x[nj + 2 * a + 1];
            }
        }
    }
    Ok(p)
}

/// Peak concurrence and its first time over `[0, t_f]`.
pub fn peak_within(p: &ModelParams, t_f: f64) -> Result<(f64, f64)> {
    let d = pair_dynamics(p, &time_grid(t_f, OBJECTIVE_DT), DEFAULT_PEAK_TOL)?;
    Ok((d.trace.c_max, d.trace.t_max))
}

/// `C_m` over `[0, t_f]` for the mapped parameters.
pub fn objective(spec: &ObjectiveSpec, base: &ModelParams) -> Result<f64> {
    spec.validate(base)?;
    let p = map_angles(spec.mode, spec.r, &spec.angles, base)?;
    Ok(peak_within(&p, spec.t_f)?.0)
}

#[derive(Debug)]
struct Exhausted;

/// Budgeted minimiser state: counts calls and tracks the best point.
struct Evaluator<'a> {
    f: &'a dyn Fn(&[f64]) -> Result<f64>,
    budget: usize,
    count: usize,
    best_x: Vec<f64>,
    best_f: f64,
    history: Vec<(usize, f64)>,
    error: Option<Error>,
}

impl Evaluator<'_> {
    fn eval(&mut self, x: &[f64]) -> std::result::Result<f64, Exhausted> {
        if self.count >= self.budget || self.error.is_some() {
            return Err(Exhausted);
        }
        self.count += 1;
        let v = match (self.f)(x) {
            Ok(v) => v,
            Err(e) => {
                self.error = Some(e);
                return Err(Exhausted);
            }
        };
        if v < self.best_f {
            self.best_f = v;
            self.best_x = x.to_vec();
            self.history.push((self.count, v));
        }
        Ok(v)
    }
}

type Step<T> = std::result::Result<T, Exhausted>;

const GOLD: f64 = 1.618_033_988_749_895;
const CGOLD: f64 = 0.381_966_011_250_105;

/// Downhill bracket `(a, b, c)` of `phi` starting from `0` (value `fa`) and `1`.
fn bracket(phi: &mut dyn FnMut(f64) -> Step<f64>, fa: f64) -> Step<[(f64, f64); 3]> {
    let (mut a, mut fa) = (0.0, fa);
    let mut b = 1.0;
    let mut fb = phi(b)?;
    if fb > fa {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let mut cx = b + GOLD * (b - a);
    let mut fc = phi(cx)?;
    let mut iter = 0;
    while fb > fc && iter < 50 {
        iter += 1;
        let r = (b - a) * (fb - fc);
        let q = (b - cx) * (fb - fa);
        let denom = 2.0 * (q - r).abs().max(1e-21).copysign(q - r);
        let mut u = b - ((b - cx) * q - (b - a) * r) / denom;
        let ulim = b + 100.0 * (cx - b);
        let mut fu;
        if (b - u) * (u - cx) > 0.0 {
            fu = phi(u)?;
            if fu < fc {
                return Ok([(b, fb), (u, fu), (cx, fc)]);
            } else if fu > fb {
                return Ok([(a, fa), (b, fb), (u, fu)]);
            }
            u = cx + GOLD * (cx - b);
            fu = phi(u)?;
        } else if (cx - u) * (u - ulim) > 0.0 {
            fu = phi(u)?;
            if fu < fc {
                b = cx;
                cx = u;
                u = cx + GOLD * (cx - b);
                fb = fc;
                fc = fu;
                fu = phi(u)?;
            }
        } else if (u - ulim) * (ulim - cx) >= 0.0 {
            u = ulim;
            fu = phi(u)?;
        } else {
            u = cx + GOLD * (cx - b);
            fu = phi(u)?;
        }
        a = b;
        b = cx;
        cx = u;
        fa = fb;
        fb = fc;
        fc = fu;
    }
    Ok([(a, fa), (b, fb), (cx, fc)])
}

/// Brent's parabolic/golden minimisation inside a bracket.
fn brent(phi: &mut dyn FnMut(f64) -> Step<f64>, br: [(f64, f64); 3], tol: f64) -> Step<(f64, f64)> {
    let (ax, cx) = (br[0].0, br[2].0);
    let (mut a, mut b) = (ax.min(cx), ax.max(cx));
    let (mut x, mut fx) = br[1];
    let (mut w, mut fw, mut v, mut fv) = (x, fx, x, fx);
    let (mut d, mut e): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let xm = 0.5 * (a + b);
        let tol1 = tol * x.abs() + 1e-10;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if p.abs() >= (0.5 * q * etemp).abs() || p <= q * (a - x) || p >= q * (b - x) {
                e = if x >= xm { a - x } else { b - x };
                d = CGOLD * e;
            } else {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
            }
        } else {
            e = if x >= xm { a - x } else { b - x };
            d = CGOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = phi(u)?;
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            (v, fv, w, fw, x, fx) = (w, fw, x, fx, u, fu);
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                (v, fv, w, fw) = (w, fw, u, fu);
            } else if fu <= fv || v == x || v == w {
                (v, fv) = (u, fu);
            }
        }
    }
    Ok((x, fx))
}

fn line_min(ev: &mut Evaluator, x: &[f64], dir: &[f64], fx: f64) -> Step<(f64, f64)> {
    let mut phi = |t: f64| {
        let y: Vec<f64> = x.iter().zip(dir).map(|(a, b)| a + t * b).collect();
        ev.eval(&y)
    };
    let br = bracket(&mut phi, fx)?;
    let (t, ft) = brent(&mut phi, br, 1e-4)?;
    // never accept a step that is worse than staying put
    Ok(if ft <= fx { (t, ft) } else { (0.0, fx) })
}

/// Powell's conjugate-direction method minimising `ev.f` from `x0`.
fn powell(ev: &mut Evaluator, x0: &[f64], ftol: f64) -> Step<usize> {
    let n = x0.len();
    let mut dirs: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let mut x = x0.to_vec();
    let mut fx = ev.eval(&x)?;
    let mut iters = 0;
    loop {
        iters += 1;
        let (xs, fs) = (x.clone(), fx);
        let (mut ibig, mut drop) = (0, 0.0);
        for (i, dir) in dirs.iter().enumerate() {
            let before = fx;
            let (t, ft) = line_min(ev, &x, dir, fx)?;
            x.iter_mut().zip(dir).for_each(|(a, b)| *a += t * b);
            fx = ft;
            if before - fx > drop {
                drop = before - fx;
                ibig = i;
            }
        }
        if 2.0 * (fs - fx) <= ftol * (fs.abs() + fx.abs()) + 1e-20 {
            return Ok(iters);
        }
        let moved: Vec<f64> = x.iter().zip(&xs).map(|(a, b)| a - b).collect();
        let ext: Vec<f64> = x.iter().zip(&moved).map(|(a, m)| a + m).collect();
        let fe = ev.eval(&ext)?;
        if fe < fs {
            let t = 2.0 * (fs - 2.0 * fx + fe) * (fs - fx - drop).powi(2) - drop * (fs - fe).powi(2);
            if t < 0.0 {
                let (s, fs2) = line_min(ev, &x, &moved, fx)?;
                x.iter_mut().zip(&moved).for_each(|(a, b)| *a += s * b);
                fx = fs2;
                dirs[ibig] = dirs[n - 1].clone();
                dirs[n - 1] = moved;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RestartSummary {
    pub index: usize,
    pub c_m: f64,
    pub evaluations: usize,
    pub exhausted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizationReport {
    pub mode: Mode,
    pub r: f64,
    pub t_f: f64,
    pub angles: Vec<f64>,
    pub params: ModelParams,
    pub c_m: f64,
    pub t_m: f64,
    pub evaluations: usize,
    pub budget: usize,
    /// Some restart stopped because its share of the budget ran out.
    pub budget_exhausted: bool,
    /// `(evaluation, best C_m so far)` of the winning restart.
    pub history: Vec<(usize, f64)>,
    pub restarts: Vec<RestartSummary>,
}

struct RestartOutcome {
    x: Vec<f64>,
    c_m: f64,
    evaluations: usize,
    exhausted: bool,
    history: Vec<(usize, f64)>,
}

/// Initial angles of restart `k`: the given vector for `k = 0`, else seeded
/// uniform draws on `[0, 2pi)` from stream `k`.
pub fn restart_angles(spec0: &ObjectiveSpec, seed: u64, k: usize) -> Vec<f64> {
    if k == 0 {
        return spec0.angles.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    (0..spec0.angles.len()).map(|_| 2.0 * PI * rng.random::<f64>()).collect()
}

/// Powell with Brent line searches and random restarts sharing `budget`
/// objective evaluations.
pub fn optimize(
    spec0: &ObjectiveSpec,
    base: &ModelParams,
    budget: usize,
    restarts: usize,
    seed: u64,
    jobs: usize,
) -> Result<OptimizationReport> {
    if budget < MIN_BUDGET {
        return Err(Error::Budget { min: MIN_BUDGET, got: budget });
    }
    spec0.validate(base)?;
    let restarts = restarts.max(1);
    let share = budget / restarts;
    let ks: Vec<usize> = (0..restarts).collect();
    let outcomes = par_map(&ks, jobs, |&k| {
        let f = |x: &[f64]| -> Result<f64> {
            let p = map_angles(spec0.mode, spec0.r, x, base)?;
            Ok(-peak_within(&p, spec0.t_f)?.0)
        };
        let x0 = restart_angles(spec0, seed, k);
        let mut ev = Evaluator {
            f: &f,
            budget: share,
            count: 0,
            best_x: x0.clone(),
            best_f: f64::INFINITY,
            history: Vec::new(),
            error: None,
        };
        let finished = powell(&mut ev, &x0, 1e-8).is_ok();
        if let Some(e) = ev.error {
            return Err(e);
        }
        Ok(RestartOutcome {
            x: ev.best_x,
            c_m: -ev.best_f,
            evaluations: ev.count,
            exhausted: !finished,
            history: ev.history.into_iter().map(|(k, v)| (k, -v)).collect(),
        })
    })?;
    let best = outcomes.iter().enumerate().fold(0, |b, (k, o)| if o.c_m > outcomes[b].c_m { k } else { b });
    let win = &outcomes[best];
    let params = map_angles(spec0.mode, spec0.r, &win.x, base)?;
    let (c_m, t_m) = peak_within(&params, spec0.t_f)?;
    Ok(OptimizationReport {
        mode: spec0.mode,
        r: spec0.r,
        t_f: spec0.t_f,
        angles: win.x.clone(),
        params,
        c_m,
        t_m,
        evaluations: outcomes.iter().map(|o| o.evaluations).sum(),
        budget,
        budget_exhausted: outcomes.iter().any(|o| o.exhausted),
        history: win.history.clone(),
        restarts: outcomes
            .iter()
            .enumerate()
            .map(|(index, o)| RestartSummary { index, c_m: o.c_m, evaluations: o.evaluations, exhausted: o.exhausted })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamGroup {
    /// The cavity on-site energy of largest magnitude.
    LargestOnsite,
    AllOnsite,
    Hoppings,
    Couplings,
    HoppingsAndCouplings,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub scale: f64,
    pub c_m: f64,
}

fn scaled(p: &ModelParams, which: ParamGroup, s: f64) -> ModelParams {
    let mut q = p.clone();
    match which {
        ParamGroup::LargestOnsite => {
            let k = (0..p.l).fold(0, |b, i| if p.delta_c[i].abs() > p.delta_c[b].abs() { i } else { b });
            q.delta_c[k] *= s;
        }
        ParamGroup::AllOnsite => {
            q.delta_c.iter_mut().chain(q.delta_n.iter_mut()).for_each(|d| *d *= s);
        }
        ParamGroup::Hoppings => q.j_c.iter_mut().for_each(|j| *j *= s),
        ParamGroup::Couplings => {
            q.g_left.iter_mut().chain(q.g_right.iter_mut()).for_each(|g| *g *= s);
        }
        ParamGroup::HoppingsAndCouplings => {
            q.j_c.iter_mut().chain(q.g_left.iter_mut()).chain(q.g_right.iter_mut()).for_each(|x| *x *= s);
        }
    }
    q
}

/// `C_m` over `[0, t_f]` with one parameter group multiplied by each scale.
pub fn tolerance_sweep(
    p: &ModelParams,
    which: ParamGroup,
    scales: &[f64],
    t_f: f64,
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    par_map(scales, jobs, |&s| {
        if !s.is_finite() || s < 0.0 {
            return Err(Error::Param(format!("scale must be finite and >= 0, got {s}")));
        }
        Ok(SweepRow { scale: s, c_m: peak_within(&scaled(p, which, s), t_f)?.0 })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DissipationSolver {
    /// Exact vacuum plus one-excitation solver when undriven, else RK4.
    Auto,
    /// Exact solver of the number-conserving decay dynamics.
    DecaySector,
    /// RK4 master equation on the full register.
    Lindblad,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DissipativeReplay {
    pub solver: DissipationSolver,
    pub trace: ConcurrenceTrace,
}

/// Concurrence of the (optimised) parameters under site decay, starting from
/// atom n1 excited.
pub fn replay_with_dissipation(
    p: &ModelParams,
    d: &DissipationParams,
    times: &[f64],
    solver: DissipationSolver,
) -> Result<DissipativeReplay> {
    let solver = match solver {
        DissipationSolver::Auto if p.is_driven() => DissipationSolver::Lindblad,
        DissipationSolver::Auto => DissipationSolver::DecaySector,
        s => s,
    };
    match solver {
        DissipationSolver::DecaySector => {
            if p.is_driven() {
                return Err(Error::Param("driving breaks the one-excitation decay solver".into()));
            }
            let trace = pair_dynamics_decay(p, d, times, DEFAULT_PEAK_TOL)?.trace;
            Ok(DissipativeReplay { solver, trace })
        }
        _ => {
            let ord = SiteOrdering::new(p)?;
            let nt = ord.len();
            if nt > LINDBLAD_MAX_SITES {
                return Err(Error::Guard(format!("master equation needs N_T <= {LINDBLAD_MAX_SITES}, got {nt}")));
            }
            let h = build_full_h(p)?;
            let k = site_bit(nt, ord.atom(0));
            let mut rho0 = DensityMatrix::zeros(1 << nt, 1 << nt);
            rho0[(k, k)] = c(1.0, 0.0);
            let rhos = evolve_lindblad(&h, &rho0, d, &ord, times, &LindbladOptions::default())?;
            let cs = rhos
                .iter()
                .map(|r| Ok(concurrence(&partial_trace_atoms(QuantumState::Mixed(r), &ord)?)))
                .collect::<Result<Vec<f64>>>()?;
            Ok(DissipativeReplay { solver, trace: ConcurrenceTrace::new(times.to_vec(), cs, DEFAULT_PEAK_TOL)? })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub t_f: f64,
    pub values: Vec<f64>,
}

/// Published optimal parameter table, one row per stopping time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalTable {
    pub note: String,
    pub mode: Mode,
    pub r: f64,
    #[serde(rename = "L")]
    pub l: usize,
    pub pos: Vec<usize>,
    pub phi: f64,
    /// Atom coupling held fixed in onsite mode.
    #[serde(default)]
    pub g: Option<f64>,
    /// Hopping held fixed in onsite mode.
    #[serde(rename = "J", default)]
    pub j: Option<f64>,
    pub columns: Vec<String>,
    pub rows: Vec<TableRow>,
}

impl OptimalTable {
    pub fn from_json(s: &str) -> Result<Self> {
        let t: OptimalTable = serde_json::from_str(s)?;
        let want = t.mode.n_angles(t.l, t.pos.len());
        if t.columns.len() != want {
            return Err(Error::Dimension { expected: want, got: t.columns.len() });
        }
        if let Some(r) = t.rows.iter().find(|r| r.values.len() != want) {
            return Err(Error::Dimension { expected: want, got: r.values.len() });
        }
        Ok(t)
    }

    pub fn row(&self, t_f: f64) -> Result<&TableRow> {
        self.rows
            .iter()
            .find(|r| (r.t_f - t_f).abs() < 1e-9)
            .ok_or_else(|| Error::Param(format!("no table row for t_f = {t_f}")))
    }

    /// Model parameters of a table row.
    pub fn params(&self, row: &TableRow) -> Result<ModelParams> {
        let n = self.pos.len();
        let mut p = ModelParams::uniform(self.l, &self.pos, self.g.unwrap_or(0.0), self.phi);
        p.j_c = vec![self.j.unwrap_or(1.0); self.l - 1];
        let v = &row.values;
        match self.mode {
            Mode::Onsite => {
                p.delta_c = v[..self.l].to_vec();
                p.delta_n = v[self.l..].to_vec();
            }
            Mode::Hopping => {
                let nj = self.l - 1;
                p.j_c = v[..nj].to_vec();
                for a in 0..n {
                    p.g_left[a] = v[nj + 2 * a];
                    p.g_right[a] = v[nj + 2 * a + 1];
                }
            }
        }
        p.validate()?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::pair_dynamics;
    use std::f64::consts::FRAC_PI_4;

    fn base() -> ModelParams {
        ModelParams::uniform(10, &[2, 8], 0.1, FRAC_PI_4)
    }

    #[test]
    fn mappings_hit_their_ranges() {
        let b = base();
        let on = map_angles(Mode::Onsite, 1.0, &[0.0, PI, FRAC_PI_2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, PI, 0.0], &b)
            .unwrap();
        assert_eq!(on.delta_c[0], 1.0);
        assert_eq!(on.delta_c[1], -1.0);
        assert!(on.delta_c[2].abs() < 1e-16);
        assert_eq!(on.delta_n, vec![-1.0, 1.0]);
        let hop = map_angles(Mode::Hopping, 0.4, &[0.0; 13], &b).unwrap();
        assert!(hop.j_c.iter().chain(&hop.g_left).chain(&hop.g_right).all(|&x| x == 0.4));
        assert_eq!(Mode::Hopping.n_angles(10, 2), 13);
        assert!(map_angles(Mode::Hopping, 0.4, &[0.0; 12], &b).is_err());
    }

    #[test]
    fn inverse_mapping_recovers_parameters() {
        let t = OptimalTable::from_json(include_str!("../fixtures/hopping_r0.4.json")).unwrap();
        let p = t.params(t.row(20.0).unwrap()).unwrap();
        let q = map_angles(Mode::Hopping, 0.4, &angles_for(Mode::Hopping, 0.4, &p), &p).unwrap();
        for (a, b) in p.j_c.iter().chain(&p.g_left).zip(q.j_c.iter().chain(&q.g_left)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ordered_objective_and_short_horizon() {
        let b = base();
        let spec = ObjectiveSpec::neutral(Mode::Onsite, 1.0, 100.0, &b);
        let v = objective(&spec, &b).unwrap();
        let direct = pair_dynamics(&b, &time_grid(100.0, OBJECTIVE_DT), DEFAULT_PEAK_TOL).unwrap();
        assert!((v - direct.trace.c_max).abs() < 1e-12 && v > 0.98);
        let zero = ObjectiveSpec { t_f: 0.0, ..spec.clone() };
        assert!(objective(&zero, &b).unwrap() < 1e-12);
        assert_eq!(objective(&spec, &b).unwrap(), objective(&spec, &b).unwrap());
    }

    #[test]
    fn brent_finds_parabola_minimum() {
        let mut calls = 0;
        let mut phi = |t: f64| -> Step<f64> {
            calls += 1;
            Ok((t - 3.3).powi(2) + 1.0)
        };
        let f0 = 3.3f64.powi(2) + 1.0;
        let br = bracket(&mut phi, f0).unwrap();
        assert!(br[1].1 <= br[0].1 && br[1].1 <= br[2].1);
        let (t, ft) = brent(&mut phi, br, 1e-8).unwrap();
        assert!((t - 3.3).abs() < 1e-6 && (ft - 1.0).abs() < 1e-12);
    }

    #[test]
    fn powell_minimises_quadratic_within_budget() {
        let f = |x: &[f64]| -> Result<f64> { Ok((x[0] - 1.0).powi(2) + 10.0 * (x[1] + 2.0 + 0.5 * x[0]).powi(2)) };
        let mut ev = Evaluator {
            f: &f,
            budget: 2000,
            count: 0,
            best_x: vec![],
            best_f: f64::INFINITY,
            history: vec![],
            error: None,
        };
        powell(&mut ev, &[0.0, 0.0], 1e-12).unwrap();
        assert!(ev.best_f < 1e-10, "{}", ev.best_f);
        assert!(ev.history.windows(2).all(|w| w[1].1 <= w[0].1));
        let mut tight = Evaluator {
            f: &f,
            budget: 5,
            count: 0,
            best_x: vec![],
            best_f: f64::INFINITY,
            history: vec![],
            error: None,
        };
        assert!(powell(&mut tight, &[0.0, 0.0], 1e-12).is_err());
        assert_eq!(tight.count, 5);
    }

    #[test]
    fn budget_floor_and_flat_objective() {
        let b = base();
        let spec = ObjectiveSpec::neutral(Mode::Onsite, 0.0, 5.0, &b);
        assert!(matches!(optimize(&spec, &b, 99, 1, 0, 1), Err(Error::Budget { min: 100, got: 99 })));
        let rep = optimize(&spec, &b, 2000, 1, 0, 1).unwrap();
        assert!(!rep.budget_exhausted);
        assert_eq!(rep.angles, spec.angles);
        assert_eq!(rep.c_m, objective(&spec, &b).unwrap());
    }

    #[test]
    fn short_optimisation_improves_and_replays() {
        let b = base();
        let spec = ObjectiveSpec::neutral(Mode::Onsite, 1.0, 10.0, &b);
        let start = objective(&spec, &b).unwrap();
        let rep = optimize(&spec, &b, 400, 2, 3, 2).unwrap();
        assert!(rep.c_m >= start);
        assert!(rep.evaluations <= 400);
        let again = objective(&ObjectiveSpec { angles: rep.angles.clone(), ..spec.clone() }, &b).unwrap();
        assert_eq!(again, rep.c_m);
        assert!(rep.history.windows(2).all(|w| w[1].1 >= w[0].1));
        assert_eq!(rep, optimize(&spec, &b, 400, 2, 3, 1).unwrap());
    }

    #[test]
    fn sweep_identity_scale() {
        let t = OptimalTable::from_json(include_str!("../fixtures/onsite_r1.0.json")).unwrap();
        let p = t.params(t.row(30.0).unwrap()).unwrap();
        let rows = tolerance_sweep(&p, ParamGroup::LargestOnsite, &[1.0], 30.0, 1).unwrap();
        assert_eq!(rows[0].c_m, peak_within(&p, 30.0).unwrap().0);
    }

    #[test]
    fn lossless_replays_agree() {
        let mut p = ModelParams::uniform(4, &[1, 3], 0.3, FRAC_PI_4);
        p.delta_c = vec![0.2, -0.1, 0.0, 0.3];
        let times = time_grid(20.0, 0.5);
        let unitary = pair_dynamics(&p, &times, DEFAULT_PEAK_TOL).unwrap().trace;
        let none = DissipationParams::none(&p);
        let sector = replay_with_dissipation(&p, &none, &times, DissipationSolver::Auto).unwrap();
        assert_eq!(sector.solver, DissipationSolver::DecaySector);
        assert!(sector.trace.max_deviation(&unitary) < 1e-9);
        let rk = replay_with_dissipation(&p, &none, &times, DissipationSolver::Lindblad).unwrap();
        assert!(rk.trace.max_deviation(&unitary) < 1e-6);
        let lossy =
            replay_with_dissipation(&p, &DissipationParams::uniform(&p, 0.01), &times, DissipationSolver::Lindblad)
                .unwrap();
        let lossy_sector =
            replay_with_dissipation(&p, &DissipationParams::uniform(&p, 0.01), &times, DissipationSolver::DecaySector)
                .unwrap();
        assert!(lossy.trace.max_deviation(&lossy_sector.trace) < 1e-6);
        assert!(lossy.trace.c_max < unitary.c_max);
        let big = base();
        assert!(matches!(
            replay_with_dissipation(&big, &none, &times, DissipationSolver::Lindblad),
            Err(Error::Guard(_))
        ));
    }
}
