//! Two-atom reduced states, Wootters concurrence, participation ratios and
//! peak statistics of concurrence traces.
//!
//! Reduced states use the basis `|n1 n2>` with index `2*n1 + n2`, so `|10>`
//! (first atom excited) is index 2.

use crate::error::{Error, Result};
use crate::linalg::{c, ComplexMatrix, DensityMatrix, StateVector, C64};
use crate::model::{site_bit, SiteOrdering};
use nalgebra::Matrix4;
use serde::Serialize;

pub const DEFAULT_PEAK_TOL: f64 = 1e-4;
/// Eigenvalues of `rho * rho_tilde` below this magnitude are treated as zero.
pub const EIGEN_CLAMP: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedState(pub Matrix4<C64>);

impl ReducedState {
    pub fn matrix(&self) -> &Matrix4<C64> {
        &self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }

    /// `a|10> + b|01>` mixed with weight `1 - |a|^2 - |b|^2` on `|00>`.
    pub fn from_single_excitation(a: C64, b: C64) -> Self {
        let mut m = Matrix4::zeros();
        m[(2, 2)] = a * a.conj();
        m[(1, 1)] = b * b.conj();
        m[(2, 1)] = a * b.conj();
        m[(1, 2)] = b * a.conj();
        m[(0, 0)] = c((1.0 - a.norm_sqr() - b.norm_sqr()).max(0.0), 0.0);
        ReducedState(m)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum QuantumState<'a> {
    Pure(&'a StateVector),
    Mixed(&'a DensityMatrix),
}

fn atom_pair(ord: &SiteOrdering) -> Result<(usize, usize)> {
    if ord.n_atoms() < 2 {
        return Err(Error::Param("concurrence needs two atoms".into()));
    }
    Ok((ord.atom(0), ord.atom(1)))
}

/// Reduced density matrix of atoms n1 and n2, tracing out everything else.
///
/// A state of dimension N_T is a one-excitation amplitude vector; if its norm
/// is below one the missing weight is read as vacuum population.
pub fn partial_trace_atoms(state: QuantumState<'_>, ord: &SiteOrdering) -> Result<ReducedState> {
    let nt = ord.len();
    let full = 1usize << nt;
    let (s1, s2) = atom_pair(ord)?;
    let (m1, m2) = (site_bit(nt, s1), site_bit(nt, s2));
    let pair = |x: usize| 2 * usize::from(x & m1 != 0) + usize::from(x & m2 != 0);
    match state {
        QuantumState::Pure(psi) if psi.len() == nt => {
            let norm = psi.norm_squared();
            if norm > 1.0 + 1e-8 {
                return Err(Error::Validation(format!("state norm^2 {norm} exceeds one")));
            }
            Ok(ReducedState::from_single_excitation(psi[s1], psi[s2]))
        }
        QuantumState::Pure(psi) if psi.len() == full => {
            let mut m = Matrix4::<C64>::zeros();
            // Group amplitudes by the environment configuration.
            let env_mask = !(m1 | m2) & (full - 1);
            for x in 0..full {
                if psi[x].norm_sqr() == 0.0 {
                    continue;
                }
                let env = x & env_mask;
                for (q, bits) in [0, m2, m1, m1 | m2].into_iter().enumerate() {
                    let y = env | bits;
                    m[(pair(x), q)] += psi[x] * psi[y].conj();
                }
            }
            Ok(ReducedState(m))
        }
        QuantumState::Mixed(rho) if rho.nrows() == full && rho.ncols() == full => {
            let mut m = Matrix4::<C64>::zeros();
            let env_mask = !(m1 | m2) & (full - 1);
            for x in 0..full {
                let env = x & env_mask;
                for bits in [0, m2, m1, m1 | m2] {
                    let y = env | bits;
                    m[(pair(x), pair(y))] += rho[(x, y)];
                }
            }
            Ok(ReducedState(m))
        }
        QuantumState::Pure(psi) => Err(Error::Dimension { expected: full, got: psi.len() }),
        QuantumState::Mixed(rho) => Err(Error::Dimension { expected: full, got: rho.nrows() }),
    }
}

fn sigma_yy() -> Matrix4<C64> {
    let z = c(0.0, 0.0);
    let one = c(1.0, 0.0);
    // sigma_y (x) sigma_y = antidiag(-1, 1, 1, -1)
    Matrix4::new(z, z, z, -one, z, z, one, z, z, one, z, z, -one, z, z, z)
}

/// Wootters concurrence from the eigenvalues of `rho * rho_tilde`.
pub fn concurrence(rho: &ReducedState) -> f64 {
    let yy = sigma_yy();
    let r = rho.0;
    let rt = yy * r.conjugate() * yy;
    let prod = r * rt;
    let ev: Vec<f64> = match prod.eigenvalues() {
        Some(v) => v.iter().map(|z| z.re).collect(),
        None => hermitian_route(&r, &rt),
    };
    let mut s: Vec<f64> = ev.into_iter().map(|l| if l < EIGEN_CLAMP { 0.0 } else { l.sqrt() }).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    (s[0] - s[1] - s[2] - s[3]).clamp(0.0, 1.0)
}

// Same spectrum as rho*rho_tilde via the Hermitian sqrt(rho) rho_tilde sqrt(rho).
fn hermitian_route(r: &Matrix4<C64>, rt: &Matrix4<C64>) -> Vec<f64> {
    let e = r.symmetric_eigen();
    let sq = e.eigenvalues.map(|l| c(l.max(0.0).sqrt(), 0.0));
    let root = e.eigenvectors * Matrix4::from_diagonal(&sq) * e.eigenvectors.adjoint();
    let m = root * rt * root;
    let m = (m + m.adjoint()) * c(0.5, 0.0);
    m.symmetric_eigen().eigenvalues.iter().copied().collect()
}

/// `2|ab|` for a state with one excitation shared by the two atoms and the cavity.
pub fn concurrence_pure_single_exc(a: C64, b: C64) -> f64 {
    2.0 * a.norm() * b.norm()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IprSpectrum {
    /// `(energy, IPR)` per eigenstate, sorted by energy.
    pub points: Vec<(f64, f64)>,
    pub mean: f64,
}

/// Inverse participation ratio `sum_i |beta_i|^4` of each eigenstate.
pub fn ipr(h: &ComplexMatrix) -> Result<IprSpectrum> {
    if h.nrows() == 0 {
        return Err(Error::Empty("Hamiltonian".into()));
    }
    let e = h.clone().symmetric_eigen();
    let mut points: Vec<(f64, f64)> = (0..h.nrows())
        .map(|j| {
            let v = e.eigenvectors.column(j);
            let n2 = v.norm_squared();
            (e.eigenvalues[j], v.iter().map(|z| z.norm_sqr().powi(2)).sum::<f64>() / (n2 * n2))
        })
        .collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mean = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
    Ok(IprSpectrum { points, mean })
}

/// Populations of the states with only atom n1 (resp. n2) excited.
pub fn return_probabilities(states: &[StateVector], ord: &SiteOrdering) -> Result<(Vec<f64>, Vec<f64>)> {
    let nt = ord.len();
    let (s1, s2) = atom_pair(ord)?;
    let (i1, i2) = match states.first().map(|s| s.len()) {
        None => return Ok((vec![], vec![])),
        Some(d) if d == nt => (s1, s2),
        Some(d) if d == 1 << nt => (site_bit(nt, s1), site_bit(nt, s2)),
        Some(d) => return Err(Error::Dimension { expected: nt, got: d }),
    };
    let dim = states[0].len();
    if let Some(s) = states.iter().find(|s| s.len() != dim) {
        return Err(Error::Dimension { expected: dim, got: s.len() });
    }
    Ok(states.iter().map(|s| (s[i1].norm_sqr(), s[i2].norm_sqr())).unzip())
}

/// Global maximum and the earliest time reaching within `peak_tol` of it.
pub fn peak_stats(times: &[f64], c: &[f64], peak_tol: f64) -> Result<(f64, f64)> {
    if c.is_empty() || times.len() != c.len() {
        return Err(Error::Empty(format!("trace with {} times and {} values", times.len(), c.len())));
    }
    let c_max = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let k = c.iter().position(|&v| v >= c_max - peak_tol).unwrap();
    Ok((c_max, times[k]))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcurrenceTrace {
    pub times: Vec<f64>,
    pub c: Vec<f64>,
    pub c_max: f64,
    pub t_max: f64,
}

impl ConcurrenceTrace {
    pub fn new(times: Vec<f64>, c: Vec<f64>, peak_tol: f64) -> Result<Self> {
        let (c_max, t_max) = peak_stats(&times, &c, peak_tol)?;
        Ok(ConcurrenceTrace { times, c, c_max, t_max })
    }

    /// Peak statistics restricted to `t <= t_end`.
    pub fn peak_until(&self, t_end: f64, peak_tol: f64) -> Result<(f64, f64)> {
        let n = self.times.iter().take_while(|&&t| t <= t_end + 1e-9).count();
        peak_stats(&self.times[..n], &self.c[..n], peak_tol)
    }

    /// Largest pointwise deviation from another trace on the same grid.
    pub fn max_deviation(&self, other: &ConcurrenceTrace) -> f64 {
        self.c.iter().zip(&other.c).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn ord(l: usize) -> SiteOrdering {
        SiteOrdering::new(&ModelParams::uniform(l, &[1, l - 1], 0.1, 0.0)).unwrap()
    }

    #[test]
    fn bell_and_product_states() {
        let h = FRAC_1_SQRT_2;
        let bell = ReducedState::from_single_excitation(c(h, 0.0), c(h, 0.0));
        assert!((concurrence(&bell) - 1.0).abs() < 1e-12);
        let prod = ReducedState::from_single_excitation(c(1.0, 0.0), c(0.0, 0.0));
        assert!(concurrence(&prod) < 1e-12);
        // |+>|+> product state
        let v = nalgebra::Vector4::from_element(c(0.5, 0.0));
        assert!(concurrence(&ReducedState(v * v.adjoint())) < 1e-7);
    }

    #[test]
    fn pure_path_formula() {
        let (a, b) = (c(0.3, 0.4), c(-0.2, 0.5));
        let r = ReducedState::from_single_excitation(a, b);
        assert!((concurrence(&r) - concurrence_pure_single_exc(a, b)).abs() < 1e-12);
        assert_eq!(concurrence_pure_single_exc(c(1.0, 0.0), c(0.0, 0.0)), 0.0);
        assert!((concurrence_pure_single_exc(c(FRAC_1_SQRT_2, 0.0), c(0.0, FRAC_1_SQRT_2)) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn vacuum_full_state() {
        let o = ord(3);
        let mut psi = StateVector::zeros(32);
        psi[0] = c(1.0, 0.0);
        let r = partial_trace_atoms(QuantumState::Pure(&psi), &o).unwrap();
        assert!((r.0[(0, 0)] - c(1.0, 0.0)).norm() < 1e-15);
        assert!((r.trace() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn maximally_mixed_reduces_to_identity() {
        let o = ord(3);
        let rho = DensityMatrix::identity(32, 32) * c(1.0 / 32.0, 0.0);
        let r = partial_trace_atoms(QuantumState::Mixed(&rho), &o).unwrap();
        assert!((r.0 - Matrix4::identity() * c(0.25, 0.0)).norm() < 1e-14);
        assert_eq!(concurrence(&r), 0.0);
    }

    #[test]
    fn embedding_oracle() {
        // one excitation: atom amplitudes a, b and cavity amplitudes elsewhere
        let o = ord(3);
        let nt = o.len();
        let amps = [c(0.1, 0.2), c(0.5, -0.1), c(0.3, 0.0), c(-0.2, 0.4), c(0.0, 0.1)];
        let norm: f64 = amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let small = StateVector::from_iterator(nt, amps.iter().map(|z| z / norm));
        let mut big = StateVector::zeros(1 << nt);
        for s in 0..nt {
            big[site_bit(nt, s)] = small[s];
        }
        let r1 = partial_trace_atoms(QuantumState::Pure(&small), &o).unwrap();
        let r2 = partial_trace_atoms(QuantumState::Pure(&big), &o).unwrap();
        assert!((r1.0 - r2.0).norm() < 1e-14);
        let rho = &big * big.adjoint();
        let r3 = partial_trace_atoms(QuantumState::Mixed(&rho), &o).unwrap();
        assert!((r1.0 - r3.0).norm() < 1e-14);
        let (a, b) = (small[o.atom(0)], small[o.atom(1)]);
        let cav: f64 = (0..nt).filter(|&s| s != o.atom(0) && s != o.atom(1)).map(|s| small[s].norm_sqr()).sum();
        assert!((r1.0[(0, 0)].re - cav).abs() < 1e-14);
        assert!((r1.0[(2, 1)] - a * b.conj()).norm() < 1e-15);
    }

    #[test]
    fn dimension_errors() {
        let o = ord(3);
        let psi = StateVector::zeros(7);
        assert!(matches!(partial_trace_atoms(QuantumState::Pure(&psi), &o), Err(Error::Dimension { .. })));
        let one_atom = SiteOrdering::new(&ModelParams::uniform(3, &[1], 0.1, 0.0)).unwrap();
        assert!(partial_trace_atoms(QuantumState::Pure(&StateVector::zeros(4)), &one_atom).is_err());
    }

    #[test]
    fn ipr_extremes() {
        let loc =
            ComplexMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c(0.0, 0.0), c(1.0, 0.0), c(2.0, 0.0)]));
        let s = ipr(&loc).unwrap();
        assert!(s.points.iter().all(|p| (p.1 - 1.0).abs() < 1e-14));
        // all-to-all hopping has the uniform vector as ground state
        let n = 5;
        let ones = ComplexMatrix::from_element(n, n, c(-1.0, 0.0));
        let s = ipr(&ones).unwrap();
        assert!((s.points[0].1 - 1.0 / n as f64).abs() < 1e-12);
    }

    #[test]
    fn ipr_of_bare_chain_modes() {
        // mean over sine modes: sum_i sin^4 weights equals 3/(2(L+1)) for every mode
        let mut p = ModelParams::uniform(10, &[2, 8], 0.0, 0.0);
        p.delta_n = vec![5.0, 6.0];
        let h = crate::model::build_single_excitation_h(&p).unwrap();
        let s = ipr(&h).unwrap();
        let cavity: Vec<f64> = s.points.iter().map(|p| p.1).filter(|&v| v < 0.99).collect();
        assert_eq!(cavity.len(), 10);
        for v in cavity {
            assert!((v - 3.0 / 22.0).abs() < 1e-10, "{v}");
        }
        assert_eq!(s.points.iter().filter(|p| (p.1 - 1.0).abs() < 1e-12).count(), 2);
    }

    #[test]
    fn peak_first_occurrence() {
        let t = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(peak_stats(&t, &[0.0, 1.0, 0.2, 1.0, 0.0], 1e-4).unwrap(), (1.0, 1.0));
        assert_eq!(peak_stats(&t, &[0.5; 5], 1e-4).unwrap(), (0.5, 0.0));
        assert!(peak_stats(&[], &[], 1e-4).is_err());
    }

    #[test]
    fn peak_of_sine_trace() {
        let (g, j) = (0.1, 1.0);
        let times: Vec<f64> = (0..20000).map(|k| k as f64 * 0.1).collect();
        let cs: Vec<f64> = times.iter().map(|t| (2.0 * g * g * t / j).sin().abs()).collect();
        let (cm, tm) = peak_stats(&times, &cs, 1e-4).unwrap();
        assert!((cm - 1.0).abs() < 1e-4);
        let want = std::f64::consts::PI * j / (4.0 * g * g);
        // within the tolerance band around the crest plus one grid step
        assert!((tm - want).abs() < 1.0, "{tm} vs {want}");
    }

    #[test]
    fn return_probability_at_start() {
        let o = ord(4);
        let psi = crate::linalg::basis_state(o.len(), o.atom(0));
        let (r1, r2) = return_probabilities(&[psi], &o).unwrap();
        assert_eq!((r1[0], r2[0]), (1.0, 0.0));
    }
}
