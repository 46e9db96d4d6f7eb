//! Parameter scans shared by the command line and the acceptance checks.

use crate::dynamics::{evolve_krylov, pair_dynamics};
use crate::entanglement::{concurrence, partial_trace_atoms, ConcurrenceTrace, QuantumState, DEFAULT_PEAK_TOL};
use crate::error::{Error, Result};
use crate::linalg::basis_state;
use crate::model::{build_full_h, ModelParams, SiteOrdering};
use crate::parallel::par_map;
use serde::Serialize;
use std::f64::consts::FRAC_PI_2;

/// Krylov accuracy of full-space driven runs.
pub const DRIVEN_TOL: f64 = 1e-9;

/// Ordered chain of length `l` with atoms at `(2, l-2)`.
pub fn parity_params(l: usize, g: f64, phi: f64, j: f64) -> Result<ModelParams> {
    if l < 5 {
        return Err(Error::Param(format!("parity scans need L >= 5, got {l}")));
    }
    let mut p = ModelParams::uniform(l, &[2, l - 2], g, phi);
    p.j_c = vec![j; l - 1];
    p.validate()?;
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanPoint {
    pub x: f64,
    pub trace: ConcurrenceTrace,
}

/// One-excitation concurrence for every cavity length.
pub fn parity_scan(ls: &[usize], g: f64, phi: f64, j: f64, times: &[f64], jobs: usize) -> Result<Vec<ScanPoint>> {
    if ls.is_empty() {
        return Err(Error::Param("empty L range".into()));
    }
    par_map(ls, jobs, |&l| {
        let p = parity_params(l, g, phi, j)?;
        Ok(ScanPoint { x: l as f64, trace: pair_dynamics(&p, times, DEFAULT_PEAK_TOL)?.trace })
    })
}

/// One-excitation concurrence for every (common) hopping phase.
pub fn chirality_scan(base: &ModelParams, phis: &[f64], times: &[f64], jobs: usize) -> Result<Vec<ScanPoint>> {
    if phis.is_empty() {
        return Err(Error::Param("empty phase range".into()));
    }
    par_map(phis, jobs, |&phi| {
        let p = base.clone().with_phi(phi);
        Ok(ScanPoint { x: phi, trace: pair_dynamics(&p, times, DEFAULT_PEAK_TOL)?.trace })
    })
}

/// Largest trace difference between phases `phi` and `pi/2 - phi` present in the scan.
pub fn mirror_asymmetry(scan: &[ScanPoint]) -> Option<f64> {
    let mut worst: Option<f64> = None;
    for a in scan {
        if let Some(b) = scan.iter().find(|b| (a.x + b.x - FRAC_PI_2).abs() < 1e-9) {
            let d = a.trace.max_deviation(&b.trace);
            worst = Some(worst.map_or(d, |w: f64| w.max(d)));
        }
    }
    worst
}

/// Full-register concurrence starting from all spins down; drives break
/// number conservation so the whole Hilbert space is evolved.
pub fn driven_concurrence(p: &ModelParams, times: &[f64]) -> Result<ConcurrenceTrace> {
    let ord = SiteOrdering::new(p)?;
    let h = build_full_h(p)?;
    let psi0 = basis_state(h.dim, 0);
    let states = evolve_krylov(&h, &psi0, times, DRIVEN_TOL)?;
    let cs = states
        .iter()
        .map(|s| Ok(concurrence(&partial_trace_atoms(QuantumState::Pure(s), &ord)?)))
        .collect::<Result<Vec<f64>>>()?;
    ConcurrenceTrace::new(times.to_vec(), cs, DEFAULT_PEAK_TOL)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DrivingPoint {
    pub omega: f64,
    pub c_m: f64,
    pub t_m: f64,
}

/// Peak concurrence against the drive on atom n1.
pub fn driving_scan(base: &ModelParams, omegas: &[f64], times: &[f64], jobs: usize) -> Result<Vec<DrivingPoint>> {
    if omegas.is_empty() {
        return Err(Error::Param("empty driving range".into()));
    }
    par_map(omegas, jobs, |&omega| {
        let mut p = base.clone();
        p.omega = vec![0.0; p.n];
        p.omega[0] = omega;
        let tr = driven_concurrence(&p, times)?;
        Ok(DrivingPoint { omega, c_m: tr.c_max, t_m: tr.t_max })
    })
}

/// Interior points lower than both neighbours (a flat bottom counts once, at its start).
pub fn local_minima(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    let mut k = 1;
    while k + 1 < ys.len() {
        if ys[k] < ys[k - 1] {
            let mut e = k;
            while e + 1 < ys.len() && ys[e + 1] == ys[k] {
                e += 1;
            }
            if e + 1 < ys.len() && ys[e + 1] > ys[k] {
                out.push(xs[k]);
            }
            k = e + 1;
        } else {
            k += 1;
        }
    }
    out
}
