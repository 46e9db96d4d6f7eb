//! Second-order effective models of the two atoms, closed-form concurrence,
//! optimal times and the driving-resonance predictor.
//!
//! Atom positions `i = pos[0]` and `j = pos[1]` enter through their parity;
//! brackets `[x]` in the matrix elements are floors.

use crate::dynamics::{pair_dynamics, Propagator};
use crate::entanglement::{ConcurrenceTrace, DEFAULT_PEAK_TOL};
use crate::error::{Error, Result};
use crate::linalg::{basis_state, c, ComplexMatrix, C64};
use crate::model::ModelParams;
use serde::Serialize;
use std::f64::consts::PI;

/// Couplings above this ratio to the hopping leave the perturbative regime.
pub const VALIDITY_RATIO: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParityCase {
    EvenEven,
    OddOdd,
    EvenOdd,
    OddEven,
    OddCavity,
}

impl ParityCase {
    pub fn classify(l: usize, i: usize, j: usize) -> Self {
        match (l % 2, i % 2, j % 2) {
            (1, _, _) => ParityCase::OddCavity,
            (_, 0, 0) => ParityCase::EvenEven,
            (_, 1, 1) => ParityCase::OddOdd,
            (_, 0, 1) => ParityCase::EvenOdd,
            _ => ParityCase::OddEven,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveModel {
    pub case: ParityCase,
    /// Basis `(n1, n2)` or `(n1, n2, eta)` for an odd cavity.
    pub h_eff: ComplexMatrix,
    pub warning: Option<String>,
}

impl EffectiveModel {
    /// Concurrence `2|a b|` of the atom amplitudes, starting from n1 excited.
    pub fn concurrence_trace(&self, times: &[f64], peak_tol: f64) -> Result<ConcurrenceTrace> {
        let prop = Propagator::new(&self.h_eff)?;
        let psi0 = basis_state(self.h_eff.nrows(), 0);
        let amps = prop.amplitudes(&psi0, &[0, 1], times);
        let cs = amps.iter().map(|a| 2.0 * a[0].norm() * a[1].norm()).collect();
        ConcurrenceTrace::new(times.to_vec(), cs, peak_tol)
    }
}

struct Pair {
    l: usize,
    i: usize,
    j: usize,
    g: [f64; 2],
    phi: [f64; 2],
    hop: f64,
    warning: Option<String>,
}

fn pair_setup(p: &ModelParams) -> Result<Pair> {
    p.validate()?;
    if p.n != 2 {
        return Err(Error::Param(format!("effective models need two atoms, got {}", p.n)));
    }
    let hop = p.j_c[0];
    if p.j_c.iter().any(|&v| (v - hop).abs() > 1e-14) || hop <= 0.0 {
        return Err(Error::Param("effective models need a uniform positive hopping".into()));
    }
    if p.delta_c.iter().chain(&p.delta_n).any(|d| d.abs() > 1e-14) {
        return Err(Error::Param("effective models need zero on-site energies".into()));
    }
    if (0..2).any(|a| (p.g_left[a] - p.g_right[a]).abs() > 1e-14) {
        return Err(Error::Param("effective models need symmetric left/right couplings".into()));
    }
    let g = [p.g_left[0], p.g_left[1]];
    let ratio = g[0].max(g[1]) / hop;
    let warning = (ratio > VALIDITY_RATIO)
        .then(|| format!("g/J = {ratio:.3} exceeds {VALIDITY_RATIO}; second-order model may be inaccurate"));
    Ok(Pair { l: p.l, i: p.pos[0], j: p.pos[1], g, phi: [p.phi[0], p.phi[1]], hop, warning })
}

fn sign(x: usize) -> f64 {
    if x.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

fn interference(i: usize, j: usize) -> f64 {
    let (i, j) = (i as f64, j as f64);
    ((i + j) * PI / 2.0).cos() + ((i - j) * PI / 2.0).sin()
}

/// 2x2 effective Hamiltonian of an even cavity.
pub fn effective_h_even(p: &ModelParams) -> Result<EffectiveModel> {
    let s = pair_setup(p)?;
    if s.l % 2 == 1 {
        return Err(Error::Case(format!("L = {} is odd; use the three-level model", s.l)));
    }
    let lamb = |a: usize, x: usize| -(s.g[a] * s.g[a] / s.hop) * (1.0 - sign(x)) * (2.0 * s.phi[a]).cos();
    let off = s.g[0] * s.g[1] / s.hop * interference(s.i, s.j);
    let theta = sign(s.i) * s.phi[0] + sign(s.j) * s.phi[1];
    let mut h = ComplexMatrix::zeros(2, 2);
    h[(0, 0)] = c(lamb(0, s.i), 0.0);
    h[(1, 1)] = c(lamb(1, s.j), 0.0);
    h[(0, 1)] = C64::from_polar(off, theta);
    h[(1, 0)] = C64::from_polar(off, -theta);
    Ok(EffectiveModel { case: ParityCase::classify(s.l, s.i, s.j), h_eff: h, warning: s.warning })
}

/// 3x3 effective Hamiltonian of an odd cavity including its zero-energy mode.
pub fn effective_h_odd(p: &ModelParams) -> Result<EffectiveModel> {
    let s = pair_setup(p)?;
    if s.l % 2 == 0 {
        return Err(Error::Case(format!("L = {} is even; use the two-level model", s.l)));
    }
    let lf = s.l as f64 + 1.0;
    let lamb = |a: usize, x: usize| {
        let xf = x as f64;
        let w = (1.0 - sign(x)) * (s.l as f64 - xf) / lf + (1.0 + sign(x)) * xf / lf;
        -(s.g[a] * s.g[a] / s.hop) * w * (2.0 * s.phi[a]).cos()
    };
    let f = s.g[0] * s.g[1] / s.hop * interference(s.i, s.j);
    let theta = sign(s.i) * s.phi[0] + sign(s.j) * s.phi[1];
    let wa = (s.l as f64 - 2.0 * (s.j / 2) as f64 + sign(s.j)) / lf;
    let wb = 2.0 * ((s.i - 1) / 2 + 1) as f64 * sign(s.i + s.j + 1) / lf;
    let fwd = C64::from_polar(1.0, theta);
    let mut h = ComplexMatrix::zeros(3, 3);
    h[(0, 0)] = c(lamb(0, s.i), 0.0);
    h[(1, 1)] = c(lamb(1, s.j), 0.0);
    h[(0, 1)] = (fwd * wa + fwd.conj() * wb) * f;
    h[(1, 0)] = (fwd.conj() * wa + fwd * wb) * f;
    let norm = (2.0 / lf).sqrt();
    for (a, x) in [(0, s.i), (1, s.j)] {
        let xf = x as f64;
        let e = C64::from_polar(1.0, s.phi[a]);
        let v = (e.conj() * (PI * xf / 2.0).sin() + e * (PI * xf / 2.0).cos()) * (norm * s.g[a]);
        h[(a, 2)] = v;
        h[(2, a)] = v.conj();
    }
    Ok(EffectiveModel { case: ParityCase::OddCavity, h_eff: h, warning: s.warning })
}

/// Effective model matching the cavity parity.
pub fn effective_model(p: &ModelParams) -> Result<EffectiveModel> {
    if p.l.is_multiple_of(2) {
        effective_h_even(p)
    } else {
        effective_h_odd(p)
    }
}

/// Closed-form concurrence of the four even-cavity parity cases.
pub fn analytic_concurrence(case: ParityCase, g: f64, j: f64, phi: f64, times: &[f64]) -> Result<ConcurrenceTrace> {
    let cs: Vec<f64> = match case {
        ParityCase::EvenEven | ParityCase::OddOdd => times.iter().map(|t| (2.0 * g * g * t / j).sin().abs()).collect(),
        ParityCase::EvenOdd | ParityCase::OddEven => {
            let q = 1.0 + (2.0 * phi).cos().powi(2);
            times
                .iter()
                .map(|t| {
                    let a = (g * g * q.sqrt() * t / j).sin().powi(2) / q;
                    2.0 * ((1.0 - a) * a).max(0.0).sqrt()
                })
                .collect()
        }
        ParityCase::OddCavity => {
            return Err(Error::Case("no closed form for an odd cavity; evolve the three-level model".into()))
        }
    };
    ConcurrenceTrace::new(times.to_vec(), cs, DEFAULT_PEAK_TOL)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Minus,
    Plus,
}

/// Times of maximal concurrence for mixed-parity atom positions,
/// `(J/2g^2) ((2k+1) pi -/+ arccos(cos^2 2phi)) / sqrt(1 + cos^2 2phi)`.
pub fn optimal_time(g: f64, j: f64, phi: f64, k: u32, branch: Branch) -> f64 {
    let c2 = (2.0 * phi).cos().powi(2);
    let s = match branch {
        Branch::Minus => -1.0,
        Branch::Plus => 1.0,
    };
    j / (2.0 * g * g) * ((2 * k + 1) as f64 * PI + s * c2.acos()) / (1.0 + c2).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DipPrediction {
    pub k: usize,
    pub omega_k: f64,
}

/// Driving strengths `sqrt(J c_k (Delta + J c_k))`, `c_k = cos(pi k/(L+1))`, where a
/// driven atom hybridises resonantly with cavity mode `k`. Sorted, duplicates
/// removed (the lowest `k` is kept), and restricted to `Omega < 2J`.
pub fn dip_strengths(l: usize, j: f64, delta: f64) -> Result<Vec<DipPrediction>> {
    if l < 2 {
        return Err(Error::Param(format!("dip prediction needs L >= 2, got {l}")));
    }
    let mut out: Vec<DipPrediction> = (1..=l)
        .filter_map(|k| {
            let ck = (PI * k as f64 / (l as f64 + 1.0)).cos();
            let rad = j * ck * (delta + j * ck);
            (rad >= -1e-15).then(|| DipPrediction { k, omega_k: rad.max(0.0).sqrt() })
        })
        .filter(|d| d.omega_k < 2.0 * j.abs() || d.omega_k == 0.0)
        .collect();
    out.sort_by(|a, b| a.omega_k.total_cmp(&b.omega_k).then(a.k.cmp(&b.k)));
    out.dedup_by(|b, a| (a.omega_k - b.omega_k).abs() < 1e-12);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EffectiveRoute {
    /// Closed-form concurrence (even cavities only).
    Analytic,
    /// Numerical evolution of the effective Hamiltonian.
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleComparison {
    pub case: ParityCase,
    pub full: ConcurrenceTrace,
    pub effective: ConcurrenceTrace,
    pub max_abs_diff: f64,
}

impl OracleComparison {
    /// `(Jt, C_full, C_eff, abs_diff)` rows.
    pub fn rows(&self) -> Vec<[f64; 4]> {
        self.full
            .times
            .iter()
            .zip(self.full.c.iter().zip(&self.effective.c))
            .map(|(&t, (&a, &b))| [t, a, b, (a - b).abs()])
            .collect()
    }
}

/// Exact one-excitation dynamics against the effective description.
pub fn compare_full_effective(p: &ModelParams, times: &[f64], route: EffectiveRoute) -> Result<OracleComparison> {
    let model = effective_model(p)?;
    let full = pair_dynamics(p, times, DEFAULT_PEAK_TOL)?.trace;
    let effective = match (route, model.case) {
        (EffectiveRoute::Analytic, ParityCase::OddCavity) | (EffectiveRoute::Numeric, _) => {
            model.concurrence_trace(times, DEFAULT_PEAK_TOL)?
        }
        (EffectiveRoute::Analytic, case) => {
            if (p.phi[0] - p.phi[1]).abs() > 1e-14 || (p.g_left[0] - p.g_left[1]).abs() > 1e-14 {
                return Err(Error::Param("closed forms assume equal couplings and phases".into()));
            }
            analytic_concurrence(case, p.g_left[0], p.j_c[0], p.phi[0], times)?
        }
    };
    let max_abs_diff = full.max_deviation(&effective);
    Ok(OracleComparison { case: model.case, full, effective, max_abs_diff })
}
