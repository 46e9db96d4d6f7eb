//! Unitary and dissipative time evolution.
//!
//! * [`Propagator`] caches one Hermitian eigendecomposition and evaluates
//!   `exp(-iHt)` at any time.
//! * [`evolve_krylov`] propagates sparse full-space states with short Lanczos steps.
//! * [`evolve_decay_sector`] is the exact decay-only dynamics of a state with at
//!   most one excitation, where the master equation closes on the vacuum plus
//!   the one-excitation sector.
//! * [`evolve_lindblad`] integrates the general master equation with RK4.

use crate::entanglement::{concurrence, partial_trace_atoms, ConcurrenceTrace, QuantumState};
use crate::error::{Error, Result};
use crate::linalg::{
    basis_state, c, hermiticity_error, max_abs, ComplexMatrix, CsrMatrix, DensityMatrix, StateVector, C64,
};
use crate::model::{build_single_excitation_h, site_bit, ModelParams, Site, SiteOrdering};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Largest register accepted by [`evolve_lindblad`].
pub const LINDBLAD_MAX_SITES: usize = 10;
const HERMITIAN_TOL: f64 = 1e-10;

/// Uniform grid `0, dt, 2dt, ..` up to and including `t_max`.
pub fn time_grid(t_max: f64, dt: f64) -> Vec<f64> {
    let n = (t_max / dt + 1e-9).floor() as usize;
    (0..=n).map(|k| k as f64 * dt).collect()
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.iter().any(|t| !t.is_finite() || *t < 0.0) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Validation("times must be finite, nonnegative and sorted".into()));
    }
    Ok(())
}

fn check_normalized(psi: &StateVector) -> Result<()> {
    let n = psi.norm();
    if (n - 1.0).abs() > 1e-10 {
        return Err(Error::Validation(format!("initial state norm {n} is not one")));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Propagator {
    energies: DVector<f64>,
    vectors: ComplexMatrix,
}

impl Propagator {
    pub fn new(h: &ComplexMatrix) -> Result<Self> {
        let err = hermiticity_error(h);
        if err > HERMITIAN_TOL * max_abs(h).max(1.0) {
            return Err(Error::Validation(format!("Hamiltonian is not Hermitian (error {err:e})")));
        }
        let e = h.clone().symmetric_eigen();
        Ok(Propagator { energies: e.eigenvalues, vectors: e.eigenvectors })
    }

    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    pub fn energies(&self) -> &DVector<f64> {
        &self.energies
    }

    pub fn vectors(&self) -> &ComplexMatrix {
        &self.vectors
    }

    fn phases(&self, t: f64) -> DVector<C64> {
        self.energies.map(|e| C64::from_polar(1.0, -e * t))
    }

    pub fn unitary(&self, t: f64) -> ComplexMatrix {
        let d = ComplexMatrix::from_diagonal(&self.phases(t));
        &self.vectors * d * self.vectors.adjoint()
    }

    pub fn evolve(&self, psi0: &StateVector, t: f64) -> StateVector {
        let coef = self.vectors.ad_mul(psi0);
        &self.vectors * coef.component_mul(&self.phases(t))
    }

    pub fn evolve_all(&self, psi0: &StateVector, times: &[f64]) -> Vec<StateVector> {
        let coef = self.vectors.ad_mul(psi0);
        times.iter().map(|&t| &self.vectors * coef.component_mul(&self.phases(t))).collect()
    }

    /// Amplitudes `<site|psi(t)>` for a few sites only; row per time.
    pub fn amplitudes(&self, psi0: &StateVector, sites: &[usize], times: &[f64]) -> Vec<Vec<C64>> {
        let coef = self.vectors.ad_mul(psi0);
        let w: Vec<Vec<C64>> =
            sites.iter().map(|&s| (0..self.dim()).map(|k| self.vectors[(s, k)] * coef[k]).collect()).collect();
        let mut ph = vec![C64::new(0.0, 0.0); self.dim()];
        times
            .iter()
            .map(|&t| {
                for (k, p) in ph.iter_mut().enumerate() {
                    *p = C64::from_polar(1.0, -self.energies[k] * t);
                }
                w.iter().map(|row| row.iter().zip(&ph).map(|(a, b)| a * b).sum()).collect()
            })
            .collect()
    }
}

/// `psi(t) = exp(-iHt) psi0` at every requested time.
pub fn evolve_unitary(h: &ComplexMatrix, psi0: &StateVector, times: &[f64]) -> Result<Vec<StateVector>> {
    if psi0.len() != h.nrows() {
        return Err(Error::Dimension { expected: h.nrows(), got: psi0.len() });
    }
    check_times(times)?;
    check_normalized(psi0)?;
    Ok(Propagator::new(h)?.evolve_all(psi0, times))
}

const KRYLOV_MAX_DIM: usize = 40;

// One Lanczos step; returns None when the subspace did not converge.
fn lanczos_step(h: &CsrMatrix, v: &StateVector, dt: f64, tol: f64) -> Option<StateVector> {
    let beta0 = v.norm();
    if beta0 == 0.0 {
        return Some(v.clone());
    }
    let mut basis: Vec<StateVector> = vec![v / c(beta0, 0.0)];
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut w = StateVector::zeros(h.dim);
    for j in 0..KRYLOV_MAX_DIM {
        h.matvec_into(basis[j].as_slice(), w.as_mut_slice());
        let a = basis[j].dotc(&w).re;
        alpha.push(a);
        // full reorthogonalisation
        for q in &basis {
            let p = q.dotc(&w);
            w.axpy(-p, q, c(1.0, 0.0));
        }
        let b = w.norm();
        let m = j + 1;
        let t = DMatrix::<f64>::from_fn(m, m, |r, s| {
            if r == s {
                alpha[r]
            } else if r + 1 == s {
                beta[r]
            } else if s + 1 == r {
                beta[s]
            } else {
                0.0
            }
        });
        let e = t.symmetric_eigen();
        let coef: Vec<C64> = (0..m)
            .map(|r| {
                (0..m)
                    .map(|k| C64::from_polar(e.eigenvectors[(r, k)] * e.eigenvectors[(0, k)], -e.eigenvalues[k] * dt))
                    .sum()
            })
            .collect();
        let err = b * coef[m - 1].norm();
        if b < 1e-13 || err < tol {
            let mut out = StateVector::zeros(h.dim);
            for (q, &y) in basis.iter().zip(&coef) {
                out.axpy(y * beta0, q, c(1.0, 0.0));
            }
            return Some(out);
        }
        beta.push(b);
        basis.push(&w / c(b, 0.0));
    }
    None
}

/// Sparse propagation `exp(-iHt) psi0` through a chain of Lanczos steps.
///
/// Each step spans at most `8/||H||` in time and is halved until the a-posteriori
/// error estimate drops below `tol`.
pub fn evolve_krylov(h: &CsrMatrix, psi0: &StateVector, times: &[f64], tol: f64) -> Result<Vec<StateVector>> {
    if psi0.len() != h.dim {
        return Err(Error::Dimension { expected: h.dim, got: psi0.len() });
    }
    check_times(times)?;
    check_normalized(psi0)?;
    let herm = h.hermiticity_error();
    if herm > HERMITIAN_TOL * h.max_abs().max(1.0) {
        return Err(Error::Validation(format!("Hamiltonian is not Hermitian (error {herm:e})")));
    }
    let max_step = 8.0 / h.norm_bound().max(1e-12);
    let mut psi = psi0.clone();
    let mut now = 0.0;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        while t - now > 1e-14 {
            let mut dt = (t - now).min(max_step);
            loop {
                if let Some(next) = lanczos_step(h, &psi, dt, tol) {
                    psi = next;
                    now += dt;
                    break;
                }
                dt *= 0.5;
                if dt < 1e-10 {
                    return Err(Error::Accuracy("Krylov step failed to converge".into()));
                }
            }
        }
        out.push(psi.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DissipationParams {
    pub gamma_c: Vec<f64>,
    pub gamma_n: Vec<f64>,
}

impl DissipationParams {
    pub fn uniform(p: &ModelParams, gamma: f64) -> Self {
        DissipationParams { gamma_c: vec![gamma; p.l], gamma_n: vec![gamma; p.n] }
    }

    pub fn none(p: &ModelParams) -> Self {
        Self::uniform(p, 0.0)
    }

    /// Decay rate per site in canonical order.
    pub fn site_rates(&self, ord: &SiteOrdering) -> Result<Vec<f64>> {
        let l = ord.labels().iter().filter(|s| matches!(s, Site::Cavity(_))).count();
        if self.gamma_c.len() != l || self.gamma_n.len() != ord.n_atoms() {
            return Err(Error::Param(format!(
                "decay rates have lengths {}/{}, expected {l}/{}",
                self.gamma_c.len(),
                self.gamma_n.len(),
                ord.n_atoms()
            )));
        }
        if self.gamma_c.iter().chain(&self.gamma_n).any(|g| !g.is_finite() || *g < 0.0) {
            return Err(Error::Param("decay rates must be nonnegative".into()));
        }
        Ok(ord
            .labels()
            .iter()
            .map(|s| match *s {
                Site::Cavity(i) => self.gamma_c[i - 1],
                Site::Atom(a) => self.gamma_n[a],
            })
            .collect())
    }

    pub fn max_rate(&self) -> f64 {
        self.gamma_c.iter().chain(&self.gamma_n).copied().fold(0.0, f64::max)
    }
}

/// Decay-only evolution of a state with at most one excitation.
///
/// Returns the unnormalised one-excitation amplitudes
/// `exp(-i(H - i Gamma/2) t) psi0`; the lost norm is the vacuum population.
pub fn evolve_decay_sector(
    h1: &ComplexMatrix,
    rates: &[f64],
    psi0: &StateVector,
    times: &[f64],
) -> Result<Vec<StateVector>> {
    let n = h1.nrows();
    if psi0.len() != n || rates.len() != n {
        return Err(Error::Dimension { expected: n, got: psi0.len().min(rates.len()) });
    }
    check_times(times)?;
    let mut heff = h1.clone();
    for (k, g) in rates.iter().enumerate() {
        heff[(k, k)] -= c(0.0, 0.5 * g);
    }
    let gen = heff * c(0.0, -1.0);
    let mut cache: Option<(f64, ComplexMatrix)> = None;
    let mut psi = psi0.clone();
    let mut now = 0.0;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        let dt = t - now;
        if dt > 0.0 {
            let reuse = matches!(&cache, Some((d, _)) if (d - dt).abs() <= 1e-12 * dt.max(1.0));
            if !reuse {
                cache = Some((dt, (&gen * c(dt, 0.0)).exp()));
            }
            psi = &cache.as_ref().unwrap().1 * psi;
            now = t;
        }
        out.push(psi.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LindbladOptions {
    /// Fixed RK4 step; defaults to `min(0.01/J, 0.1/Gamma_max)` with `J` the largest
    /// Hamiltonian entry.
    pub step: Option<f64>,
    /// Re-run with half the step and require the final concurrence to agree.
    pub verify_halving: bool,
    pub halving_tol: f64,
}

impl Default for LindbladOptions {
    fn default() -> Self {
        LindbladOptions { step: None, verify_halving: true, halving_tol: 1e-6 }
    }
}

struct Liouvillian<'a> {
    h: &'a CsrMatrix,
    jumps: Vec<(usize, f64)>,
    loss: Vec<f64>,
}

impl Liouvillian<'_> {
    fn apply(&self, rho: &DensityMatrix) -> DensityMatrix {
        let hr = self.h.mul_dense(rho);
        // rho stays Hermitian, so rho H = (H rho)^dagger
        let mut out = (hr.adjoint() - &hr) * c(0.0, 1.0);
        let dim = rho.nrows();
        for y in 0..dim {
            for x in 0..dim {
                out[(x, y)] -= rho[(x, y)] * (0.5 * (self.loss[x] + self.loss[y]));
            }
        }
        for &(m, g) in &self.jumps {
            for y in (0..dim).filter(|y| y & m == 0) {
                for x in (0..dim).filter(|x| x & m == 0) {
                    out[(x, y)] += rho[(x | m, y | m)] * g;
                }
            }
        }
        out
    }
}

fn rk4_run(op: &Liouvillian, rho0: &DensityMatrix, times: &[f64], step: f64) -> Vec<DensityMatrix> {
    let mut rho = rho0.clone();
    let mut now = 0.0;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        let span = t - now;
        if span > 0.0 {
            let n = (span / step).ceil().max(1.0) as usize;
            let h = span / n as f64;
            for _ in 0..n {
                let k1 = op.apply(&rho);
                let k2 = op.apply(&(&rho + &k1 * c(0.5 * h, 0.0)));
                let k3 = op.apply(&(&rho + &k2 * c(0.5 * h, 0.0)));
                let k4 = op.apply(&(&rho + &k3 * c(h, 0.0)));
                rho += (k1 + (k2 + k3) * c(2.0, 0.0) + k4) * c(h / 6.0, 0.0);
                rho = (&rho + rho.adjoint()) * c(0.5, 0.0);
            }
            now = t;
        }
        out.push(rho.clone());
    }
    out
}

/// Master equation `d rho/dt = -i[H, rho] + sum_s Gamma_s (s- rho s+ - {s+ s-, rho}/2)`.
pub fn evolve_lindblad(
    h: &CsrMatrix,
    rho0: &DensityMatrix,
    d: &DissipationParams,
    ord: &SiteOrdering,
    times: &[f64],
    opts: &LindbladOptions,
) -> Result<Vec<DensityMatrix>> {
    let nt = ord.len();
    if nt > LINDBLAD_MAX_SITES {
        return Err(Error::Guard(format!("master equation needs N_T <= {LINDBLAD_MAX_SITES}, got {nt}")));
    }
    let dim = 1usize << nt;
    if h.dim != dim || rho0.nrows() != dim || rho0.ncols() != dim {
        return Err(Error::Dimension { expected: dim, got: rho0.nrows() });
    }
    check_times(times)?;
    if (rho0.trace().re - 1.0).abs() > 1e-8 || hermiticity_error(rho0) > 1e-10 {
        return Err(Error::Validation("initial density matrix must be Hermitian with unit trace".into()));
    }
    let rates = d.site_rates(ord)?;
    let jumps: Vec<(usize, f64)> =
        rates.iter().enumerate().filter(|(_, &g)| g > 0.0).map(|(s, &g)| (site_bit(nt, s), g)).collect();
    let loss = (0..dim).map(|x| jumps.iter().filter(|(m, _)| x & m != 0).map(|(_, g)| g).sum()).collect();
    let op = Liouvillian { h, jumps, loss };
    let step = opts.step.unwrap_or_else(|| {
        let scale = h.max_abs().max(1e-12);
        let g = d.max_rate();
        let s = 0.01 / scale;
        if g > 0.0 {
            s.min(0.1 / g)
        } else {
            s
        }
    });
    let out = rk4_run(&op, rho0, times, step);
    if opts.verify_halving && !times.is_empty() {
        let last = &times[times.len() - 1..];
        let fine = rk4_run(&op, rho0, last, 0.5 * step);
        let a = out.last().unwrap();
        let b = &fine[0];
        let diff = if ord.n_atoms() >= 2 {
            let ca = concurrence(&partial_trace_atoms(QuantumState::Mixed(a), ord)?);
            let cb = concurrence(&partial_trace_atoms(QuantumState::Mixed(b), ord)?);
            (ca - cb).abs()
        } else {
            max_abs(&(a - b))
        };
        if diff > opts.halving_tol {
            return Err(Error::Accuracy(format!("halving the step changed the result by {diff:e}")));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairDynamics {
    pub trace: ConcurrenceTrace,
    pub r1: Vec<f64>,
    pub r2: Vec<f64>,
}

fn pair_from_amplitudes(amps: &[Vec<C64>], times: &[f64], peak_tol: f64) -> Result<PairDynamics> {
    let cs = amps.iter().map(|a| 2.0 * a[0].norm() * a[1].norm()).collect();
    let r1 = amps.iter().map(|a| a[0].norm_sqr()).collect();
    let r2 = amps.iter().map(|a| a[1].norm_sqr()).collect();
    Ok(PairDynamics { trace: ConcurrenceTrace::new(times.to_vec(), cs, peak_tol)?, r1, r2 })
}

/// One-excitation dynamics from atom n1 excited: concurrence `2|ab|` and the
/// two return probabilities.
pub fn pair_dynamics(p: &ModelParams, times: &[f64], peak_tol: f64) -> Result<PairDynamics> {
    check_times(times)?;
    let ord = SiteOrdering::new(p)?;
    let h = build_single_excitation_h(p)?;
    let prop = Propagator::new(&h)?;
    let psi0 = basis_state(ord.len(), ord.atom(0));
    let amps = prop.amplitudes(&psi0, &[ord.atom(0), ord.atom(1)], times);
    pair_from_amplitudes(&amps, times, peak_tol)
}

/// [`pair_dynamics`] with site decay, solved exactly in the vacuum plus
/// one-excitation sector.
pub fn pair_dynamics_decay(
    p: &ModelParams,
    d: &DissipationParams,
    times: &[f64],
    peak_tol: f64,
) -> Result<PairDynamics> {
    let ord = SiteOrdering::new(p)?;
    let h = build_single_excitation_h(p)?;
    let rates = d.site_rates(&ord)?;
    let psi0 = basis_state(ord.len(), ord.atom(0));
    let states = evolve_decay_sector(&h, &rates, &psi0, times)?;
    let amps: Vec<Vec<C64>> = states.iter().map(|s| vec![s[ord.atom(0)], s[ord.atom(1)]]).collect();
    pair_from_amplitudes(&amps, times, peak_tol)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExcitationTable {
    pub times: Vec<f64>,
    pub sites: Vec<String>,
    /// `occupation[t][s]`
    pub occupation: Vec<Vec<f64>>,
    /// Cavity weight on spins `c_1..c_pos`.
    pub left: Vec<f64>,
    /// Cavity weight on spins `c_{pos+1}..c_L`.
    pub right: Vec<f64>,
}

/// Site occupations after exciting atom `atom` in the one-excitation sector.
pub fn propagate_excitation(p: &ModelParams, atom: usize, times: &[f64]) -> Result<ExcitationTable> {
    if atom >= p.n {
        return Err(Error::Param(format!("atom {atom} out of range")));
    }
    let ord = SiteOrdering::new(p)?;
    let h = build_single_excitation_h(p)?;
    let psi0 = basis_state(ord.len(), ord.atom(atom));
    let states = evolve_unitary(&h, &psi0, times)?;
    let occupation: Vec<Vec<f64>> = states.iter().map(|s| s.iter().map(|z| z.norm_sqr()).collect()).collect();
    let q = p.pos[atom];
    let side = |row: &Vec<f64>, left: bool| -> f64 {
        (1..=p.l).filter(|&i| (i <= q) == left).map(|i| row[ord.cavity(i)]).sum()
    };
    Ok(ExcitationTable {
        times: times.to_vec(),
        sites: ord.labels().iter().map(|s| s.to_string()).collect(),
        left: occupation.iter().map(|r| side(r, true)).collect(),
        right: occupation.iter().map(|r| side(r, false)).collect(),
        occupation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_full_h, single_excitation_indices};
    use std::f64::consts::FRAC_PI_4;

    fn pure_rho(psi: &StateVector) -> DensityMatrix {
        psi * psi.adjoint()
    }

    #[test]
    fn zero_hamiltonian_is_identity() {
        let h = ComplexMatrix::zeros(3, 3);
        let psi = basis_state(3, 1);
        for s in evolve_unitary(&h, &psi, &[0.0, 1.0, 5.0]).unwrap() {
            assert!((s - &psi).norm() < 1e-15);
        }
    }

    #[test]
    fn rabi_oscillation() {
        let g = 0.3;
        let h = ComplexMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(g, 0.0), c(g, 0.0), c(0.0, 0.0)]);
        let times = time_grid(10.0, 0.5);
        let states = evolve_unitary(&h, &basis_state(2, 0), &times).unwrap();
        for (t, s) in times.iter().zip(&states) {
            assert!((s[1].norm_sqr() - (g * t).sin().powi(2)).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let h = ComplexMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(0.5, 0.0), c(0.0, 0.0)]);
        assert!(matches!(evolve_unitary(&h, &basis_state(2, 0), &[0.0]), Err(Error::Validation(_))));
        let h = ComplexMatrix::identity(2, 2);
        assert!(evolve_unitary(&h, &basis_state(2, 0), &[1.0, 0.5]).is_err());
        assert!(evolve_unitary(&h, &(basis_state(2, 0) * c(2.0, 0.0)), &[1.0]).is_err());
    }

    #[test]
    fn propagator_group_property_and_reversal() {
        let p = ModelParams::uniform(6, &[2, 5], 0.1, 0.4);
        let h = build_single_excitation_h(&p).unwrap();
        let u = Propagator::new(&h).unwrap();
        let (a, b) = (1.7, 4.2);
        assert!(max_abs(&(u.unitary(a + b) - u.unitary(a) * u.unitary(b))) < 1e-9);
        let uu = u.unitary(a) * u.unitary(a).adjoint();
        assert!(max_abs(&(uu - ComplexMatrix::identity(8, 8))) < 1e-10);
        let psi0 = basis_state(8, 2);
        let back = u.evolve(&u.evolve(&psi0, 37.0), -37.0);
        assert!((back - psi0).norm() < 1e-9);
    }

    #[test]
    fn l10_reaches_high_concurrence() {
        let p = ModelParams::uniform(10, &[2, 8], 0.1, FRAC_PI_4);
        let d = pair_dynamics(&p, &time_grid(500.0, 0.1), 1e-4).unwrap();
        assert!((d.trace.c_max - 0.99).abs() < 0.01, "{}", d.trace.c_max);
        assert!((d.r1[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sector_and_full_space_agree() {
        let p = ModelParams::uniform(6, &[2, 5], 0.1, 0.3);
        let ord = SiteOrdering::new(&p).unwrap();
        let nt = ord.len();
        let times = [0.0, 3.0, 17.5, 60.0];
        let small = evolve_unitary(&build_single_excitation_h(&p).unwrap(), &basis_state(nt, 2), &times).unwrap();
        let full_h = build_full_h(&p).unwrap();
        let idx = single_excitation_indices(nt);
        let big0 = basis_state(1 << nt, idx[2]);
        let dense = evolve_unitary(&full_h.to_dense(), &big0, &times).unwrap();
        let kry = evolve_krylov(&full_h, &big0, &times, 1e-12).unwrap();
        for k in 0..times.len() {
            for s in 0..nt {
                let occ = small[k][s].norm_sqr();
                assert!((occ - dense[k][idx[s]].norm_sqr()).abs() < 1e-9);
                assert!((occ - kry[k][idx[s]].norm_sqr()).abs() < 1e-9);
            }
            assert!((kry[k].norm() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn krylov_matches_dense_with_driving() {
        let p = ModelParams::uniform(4, &[1, 3], 0.2, FRAC_PI_4).with_omega(0, 0.3);
        let h = build_full_h(&p).unwrap();
        let psi0 = basis_state(h.dim, 0);
        let times = time_grid(20.0, 2.5);
        let a = evolve_krylov(&h, &psi0, &times, 1e-12).unwrap();
        let b = evolve_unitary(&h.to_dense(), &psi0, &times).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).norm() < 1e-9);
        }
    }

    #[test]
    fn single_spin_decay() {
        let p = ModelParams::uniform(2, &[1], 0.0, 0.0);
        let ord = SiteOrdering::new(&p).unwrap();
        let mut d = DissipationParams::none(&p);
        d.gamma_n[0] = 0.05;
        let h = build_full_h(&p).unwrap();
        let psi0 = basis_state(8, site_bit(3, ord.atom(0)));
        let times = time_grid(40.0, 10.0);
        let opts = LindbladOptions { verify_halving: false, ..Default::default() };
        let rhos = evolve_lindblad(&h, &pure_rho(&psi0), &d, &ord, &times, &opts).unwrap();
        let m = site_bit(3, ord.atom(0));
        for (t, r) in times.iter().zip(&rhos) {
            assert!((r[(m, m)].re - (-0.05 * t).exp()).abs() < 1e-9);
            assert!((r.trace().re - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn closed_master_equation_matches_unitary() {
        let p = ModelParams::uniform(3, &[1, 2], 0.3, 0.5);
        let ord = SiteOrdering::new(&p).unwrap();
        let h = build_full_h(&p).unwrap();
        let psi0 = basis_state(h.dim, site_bit(5, ord.atom(0)));
        let times = [0.0, 2.0, 6.0];
        let rhos =
            evolve_lindblad(&h, &pure_rho(&psi0), &DissipationParams::none(&p), &ord, &times, &Default::default())
                .unwrap();
        let states = evolve_unitary(&h.to_dense(), &psi0, &times).unwrap();
        for (r, s) in rhos.iter().zip(&states) {
            assert!(max_abs(&(r - pure_rho(s))) < 1e-7);
        }
    }

    #[test]
    fn sector_solver_agrees_with_master_equation() {
        let p = ModelParams::uniform(3, &[1, 2], 0.3, FRAC_PI_4);
        let ord = SiteOrdering::new(&p).unwrap();
        let mut d = DissipationParams::uniform(&p, 0.02);
        d.gamma_c[1] = 0.05;
        let times = time_grid(30.0, 5.0);
        let h = build_full_h(&p).unwrap();
        let psi0 = basis_state(h.dim, site_bit(5, ord.atom(0)));
        let rhos = evolve_lindblad(&h, &pure_rho(&psi0), &d, &ord, &times, &Default::default()).unwrap();
        let sector = pair_dynamics_decay(&p, &d, &times, 1e-4).unwrap();
        for (k, r) in rhos.iter().enumerate() {
            let cm = concurrence(&partial_trace_atoms(QuantumState::Mixed(r), &ord).unwrap());
            assert!((cm - sector.trace.c[k]).abs() < 1e-7, "{cm} vs {}", sector.trace.c[k]);
            let ev = r.clone().symmetric_eigen().eigenvalues;
            assert!(ev.iter().all(|&l| l > -1e-7));
        }
    }

    #[test]
    fn lindblad_guards() {
        let p = ModelParams::uniform(9, &[2, 6], 0.1, 0.0);
        let ord = SiteOrdering::new(&p).unwrap();
        let h = CsrMatrix::from_rows(vec![vec![]; 2]);
        let rho = DensityMatrix::identity(2, 2);
        let r = evolve_lindblad(&h, &rho, &DissipationParams::none(&p), &ord, &[0.0], &Default::default());
        assert!(matches!(r, Err(Error::Guard(_))));
    }

    #[test]
    fn halving_check_flags_coarse_steps() {
        let p = ModelParams::uniform(3, &[1, 2], 0.5, FRAC_PI_4);
        let ord = SiteOrdering::new(&p).unwrap();
        let h = build_full_h(&p).unwrap();
        let psi0 = basis_state(h.dim, site_bit(5, ord.atom(0)));
        let opts = LindbladOptions { step: Some(0.5), ..Default::default() };
        let r = evolve_lindblad(&h, &pure_rho(&psi0), &DissipationParams::uniform(&p, 0.01), &ord, &[0.0, 20.0], &opts);
        assert!(matches!(r, Err(Error::Accuracy(_))));
    }

    #[test]
    fn decay_sector_without_loss_is_unitary() {
        let p = ModelParams::uniform(6, &[2, 5], 0.1, 0.2);
        let times = time_grid(100.0, 0.5);
        let a = pair_dynamics(&p, &times, 1e-4).unwrap();
        let b = pair_dynamics_decay(&p, &DissipationParams::none(&p), &times, 1e-4).unwrap();
        assert!(a.trace.max_deviation(&b.trace) < 1e-9);
    }

    #[test]
    fn emission_direction() {
        let sym = ModelParams::uniform(50, &[25], 0.1, 0.0);
        let tab = propagate_excitation(&sym, 0, &[10.0]).unwrap();
        assert!((tab.left[0] - tab.right[0]).abs() < 1e-3);
        let chiral = ModelParams::uniform(50, &[25], 0.5, FRAC_PI_4);
        let tab = propagate_excitation(&chiral, 0, &[10.0]).unwrap();
        assert!(tab.right[0] > 10.0 * tab.left[0]);
        let bare = ModelParams::uniform(10, &[5], 0.0, 0.0);
        let tab = propagate_excitation(&bare, 0, &time_grid(10.0, 1.0)).unwrap();
        assert!(tab.occupation.iter().all(|row| (row[5] - 1.0).abs() < 1e-14));
    }
}
