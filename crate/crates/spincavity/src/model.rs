//! Model parameters, canonical site ordering and Hamiltonian constructors.
//!
//! Sites are ordered physically: cavity spins `c1..cL` with every atom `n_a`
//! inserted right after the cavity spin it couples on its left (`pos[a]`).
//! In the full Hilbert space site `s` is the qubit stored in bit `N_T - 1 - s`
//! of the basis index, so site 0 is the leftmost tensor factor. A set bit is
//! an excited spin.

use crate::error::{Error, Result};
use crate::linalg::{c, hermiticity_error, ComplexMatrix, CsrMatrix, C64};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Largest full-space register accepted by [`build_full_h`].
pub const FULL_SPACE_MAX_SITES: usize = 14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub delta_c: Vec<f64>,
    pub delta_n: Vec<f64>,
    #[serde(rename = "J_c")]
    pub j_c: Vec<f64>,
    pub g_left: Vec<f64>,
    pub g_right: Vec<f64>,
    pub phi: Vec<f64>,
    pub omega: Vec<f64>,
    pub pos: Vec<usize>,
}

impl ModelParams {
    /// Ordered chain with unit hopping, zero detunings, no driving and
    /// symmetric couplings `g` with phase `phi` on every atom.
    pub fn uniform(l: usize, pos: &[usize], g: f64, phi: f64) -> Self {
        let n = pos.len();
        ModelParams {
            l,
            n,
            delta_c: vec![0.0; l],
            delta_n: vec![0.0; n],
            j_c: vec![1.0; l.saturating_sub(1)],
            g_left: vec![g; n],
            g_right: vec![g; n],
            phi: vec![phi; n],
            omega: vec![0.0; n],
            pos: pos.to_vec(),
        }
    }

    pub fn n_sites(&self) -> usize {
        self.l + self.n
    }

    pub fn with_phi(mut self, phi: f64) -> Self {
        self.phi = vec![phi; self.n];
        self
    }

    pub fn with_omega(mut self, atom: usize, omega: f64) -> Self {
        self.omega[atom] = omega;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Param(m));
        if self.l < 2 {
            return bad(format!("L must be at least 2, got {}", self.l));
        }
        if self.n == 0 {
            return bad("N must be positive".into());
        }
        let lens = [
            ("delta_c", self.delta_c.len(), self.l),
            ("delta_n", self.delta_n.len(), self.n),
            ("J_c", self.j_c.len(), self.l - 1),
            ("g_left", self.g_left.len(), self.n),
            ("g_right", self.g_right.len(), self.n),
            ("phi", self.phi.len(), self.n),
            ("omega", self.omega.len(), self.n),
            ("pos", self.pos.len(), self.n),
        ];
        for (name, got, want) in lens {
            if got != want {
                return bad(format!("{name} has length {got}, expected {want}"));
            }
        }
        let all = self
            .delta_c
            .iter()
            .chain(&self.delta_n)
            .chain(&self.j_c)
            .chain(&self.g_left)
            .chain(&self.g_right)
            .chain(&self.phi)
            .chain(&self.omega);
        if all.into_iter().any(|v| !v.is_finite()) {
            return bad("non-finite parameter value".into());
        }
        if self.j_c.iter().chain(&self.g_left).chain(&self.g_right).chain(&self.omega).any(|&v| v < 0.0) {
            return bad("hoppings, couplings and drivings must be nonnegative".into());
        }
        if self.phi.iter().any(|&p| !(-1e-12..=PI / 2.0 + 1e-12).contains(&p)) {
            return bad("hopping phases must lie in [0, pi/2]".into());
        }
        if let Some(p) = self.pos.iter().find(|&&p| p < 1 || p >= self.l) {
            return bad(format!("atom position {p} outside [1, {}]", self.l - 1));
        }
        // neighbouring atoms may share one cavity spin (R[n_i] = L[n_{i+1}])
        if self.pos.windows(2).any(|w| w[1] <= w[0]) {
            return bad(format!("atom positions {:?} must be strictly increasing", self.pos));
        }
        Ok(())
    }

    pub fn is_driven(&self) -> bool {
        self.omega.iter().any(|&w| w != 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Site {
    /// Cavity spin, 1-based.
    Cavity(usize),
    /// Atom, 0-based atom index.
    Atom(usize),
}

impl std::fmt::Display for Site {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Site::Cavity(i) => write!(f, "c{i}"),
            Site::Atom(a) => write!(f, "n{}", a + 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiteOrdering {
    labels: Vec<Site>,
    cavity_index: Vec<usize>,
    atom_index: Vec<usize>,
}

impl SiteOrdering {
    pub fn new(p: &ModelParams) -> Result<Self> {
        p.validate()?;
        let mut labels = Vec::with_capacity(p.n_sites());
        let mut cavity_index = vec![0; p.l];
        let mut atom_index = vec![0; p.n];
        for i in 1..=p.l {
            cavity_index[i - 1] = labels.len();
            labels.push(Site::Cavity(i));
            for (a, &q) in p.pos.iter().enumerate() {
                if q == i {
                    atom_index[a] = labels.len();
                    labels.push(Site::Atom(a));
                }
            }
        }
        Ok(SiteOrdering { labels, cavity_index, atom_index })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[Site] {
        &self.labels
    }

    /// Index of cavity spin `c_i` (1-based `i`).
    pub fn cavity(&self, i: usize) -> usize {
        self.cavity_index[i - 1]
    }

    /// Index of atom `a` (0-based).
    pub fn atom(&self, a: usize) -> usize {
        self.atom_index[a]
    }

    pub fn n_atoms(&self) -> usize {
        self.atom_index.len()
    }

    pub fn index_of(&self, s: Site) -> Option<usize> {
        self.labels.iter().position(|&t| t == s)
    }
}

/// One-excitation Hamiltonian in the canonical ordering. Drivings are ignored.
///
/// Row `c_L`, column `n` carries `g_L e^{+i phi}` and row `n`, column `c_R`
/// carries `g_R e^{+i phi}`; the transposed entries are the conjugates.
pub fn build_single_excitation_h(p: &ModelParams) -> Result<ComplexMatrix> {
    let ord = SiteOrdering::new(p)?;
    let nt = ord.len();
    let mut h = ComplexMatrix::zeros(nt, nt);
    for i in 1..=p.l {
        let k = ord.cavity(i);
        h[(k, k)] = c(p.delta_c[i - 1], 0.0);
    }
    for i in 1..p.l {
        let (a, b) = (ord.cavity(i), ord.cavity(i + 1));
        h[(a, b)] = c(p.j_c[i - 1], 0.0);
        h[(b, a)] = c(p.j_c[i - 1], 0.0);
    }
    for a in 0..p.n {
        let na = ord.atom(a);
        let cl = ord.cavity(p.pos[a]);
        let cr = ord.cavity(p.pos[a] + 1);
        let phase = C64::from_polar(1.0, p.phi[a]);
        h[(na, na)] = c(p.delta_n[a], 0.0);
        h[(cl, na)] += phase * p.g_left[a];
        h[(na, cl)] += phase.conj() * p.g_left[a];
        h[(na, cr)] += phase * p.g_right[a];
        h[(cr, na)] += phase.conj() * p.g_right[a];
    }
    debug_assert!(hermiticity_error(&h) < 1e-12);
    Ok(h)
}

#[inline]
pub fn site_bit(n_sites: usize, site: usize) -> usize {
    1 << (n_sites - 1 - site)
}

/// Full-space Hamiltonian `sum_ab h_ab s+_a s-_b + sum_a Omega_a (s+_a + s-_a)`,
/// with `h` the one-excitation matrix, as a sparse matrix of dimension 2^N_T.
pub fn build_full_h(p: &ModelParams) -> Result<CsrMatrix> {
    let ord = SiteOrdering::new(p)?;
    let nt = ord.len();
    if nt > FULL_SPACE_MAX_SITES {
        return Err(Error::Guard(format!("full space needs N_T <= {FULL_SPACE_MAX_SITES}, got {nt}")));
    }
    let h1 = build_single_excitation_h(p)?;
    let mut hops = Vec::new();
    for a in 0..nt {
        for b in 0..nt {
            if a != b && h1[(a, b)].norm() > 0.0 {
                hops.push((site_bit(nt, a), site_bit(nt, b), h1[(a, b)]));
            }
        }
    }
    let onsite: Vec<(usize, f64)> = (0..nt).map(|s| (site_bit(nt, s), h1[(s, s)].re)).collect();
    let drives: Vec<(usize, f64)> =
        (0..p.n).filter(|&a| p.omega[a] != 0.0).map(|a| (site_bit(nt, ord.atom(a)), p.omega[a])).collect();
    let dim = 1usize << nt;
    let mut rows = Vec::with_capacity(dim);
    for y in 0..dim {
        let mut row = Vec::new();
        let diag: f64 = onsite.iter().filter(|(m, _)| y & m != 0).map(|(_, v)| v).sum();
        if diag != 0.0 {
            row.push((y, c(diag, 0.0)));
        }
        // <y| s+_a s-_b |x> with a excited in y, b excited in x.
        for &(ma, mb, v) in &hops {
            if y & ma != 0 && y & mb == 0 {
                row.push((y ^ ma ^ mb, v));
            }
        }
        for &(m, w) in &drives {
            row.push((y ^ m, c(w, 0.0)));
        }
        rows.push(row);
    }
    Ok(CsrMatrix::from_rows(rows))
}

/// Indices of full-space basis states with exactly one excitation, listed in
/// site order: entry `s` is the state with site `s` excited.
pub fn single_excitation_indices(n_sites: usize) -> Vec<usize> {
    (0..n_sites).map(|s| site_bit(n_sites, s)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CavitySpectrum {
    /// Mode energies, k = 1..L.
    pub energies: Vec<f64>,
    /// Row k-1 holds the mode amplitudes on cavity spins 1..L.
    pub modes: DMatrix<f64>,
    /// True when the closed-form dispersion was used.
    pub analytic: bool,
}

/// Magnon energies `Delta + 2J cos(pi k/(L+1))` and sine modes for a uniform
/// chain; a numerical tridiagonal diagonalisation otherwise.
pub fn cavity_spectrum(p: &ModelParams) -> CavitySpectrum {
    let l = p.l;
    let uniform = p.delta_c.iter().all(|&d| (d - p.delta_c[0]).abs() < 1e-14)
        && p.j_c.iter().all(|&j| (j - p.j_c[0]).abs() < 1e-14);
    if uniform {
        let (d, j) = (p.delta_c[0], p.j_c.first().copied().unwrap_or(0.0));
        let s = (2.0 / (l as f64 + 1.0)).sqrt();
        let arg = |k: usize| PI * k as f64 / (l as f64 + 1.0);
        let energies = (1..=l).map(|k| d + 2.0 * j * arg(k).cos()).collect();
        let modes = DMatrix::from_fn(l, l, |k, i| s * (arg(k + 1) * (i + 1) as f64).sin());
        return CavitySpectrum { energies, modes, analytic: true };
    }
    let t = tridiagonal(&p.delta_c, &p.j_c);
    let eig = t.symmetric_eigen();
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let energies = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut modes = DMatrix::zeros(l, l);
    for (row, &k) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        let sign = if v.iter().find(|x| x.abs() > 1e-12).copied().unwrap_or(1.0) < 0.0 { -1.0 } else { 1.0 };
        for i in 0..l {
            modes[(row, i)] = sign * v[i];
        }
    }
    CavitySpectrum { energies, modes, analytic: false }
}

pub(crate) fn tridiagonal(diag: &[f64], off: &[f64]) -> DMatrix<f64> {
    let l = diag.len();
    DMatrix::from_fn(l, l, |i, j| {
        if i == j {
            diag[i]
        } else if i + 1 == j {
            off[i]
        } else if j + 1 == i {
            off[j]
        } else {
            0.0
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentumCoupling {
    /// `(K, g_K)` over `K = 2 pi j / L` in `[-pi, pi)`.
    pub points: Vec<(f64, f64)>,
    /// `sum_{K>0} |g_K|^2 - sum_{K<0} |g_K|^2`.
    pub asymmetry: f64,
}

/// Momentum-space coupling `g_K = (2g/sqrt L) cos(K/2 + phi)` of an atom bridging
/// two neighbouring sites of a periodic chain with unit lattice constant.
pub fn momentum_coupling(g: f64, phi: f64, l: usize) -> Result<MomentumCoupling> {
    if l < 2 {
        return Err(Error::Param(format!("momentum coupling needs L >= 2, got {l}")));
    }
    let lf = l as f64;
    let lo = -((l / 2) as i64);
    let hi = lo + l as i64;
    let points: Vec<(f64, f64)> = (lo..hi)
        .map(|j| {
            let k = 2.0 * PI * j as f64 / lf;
            (k, 2.0 * g / lf.sqrt() * (k / 2.0 + phi).cos())
        })
        .collect();
    let asymmetry = points
        .iter()
        .map(|&(k, gk)| {
            if k > 0.0 {
                gk * gk
            } else if k < 0.0 {
                -gk * gk
            } else {
                0.0
            }
        })
        .sum();
    Ok(MomentumCoupling { points, asymmetry })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    #[test]
    fn ordering_interleaves_atoms() {
        let p = ModelParams::uniform(10, &[2, 8], 0.1, FRAC_PI_4);
        let ord = SiteOrdering::new(&p).unwrap();
        let names: Vec<String> = ord.labels().iter().map(|s| s.to_string()).collect();
        assert_eq!(names.join(","), "c1,c2,n1,c3,c4,c5,c6,c7,c8,n2,c9,c10");
        assert_eq!(ord.atom(0), 2);
        assert_eq!(ord.atom(1), 9);
        assert_eq!(ord.cavity(9), 10);
        assert_eq!(ord.index_of(Site::Atom(1)), Some(9));
    }

    #[test]
    fn golden_single_excitation_matrix() {
        let (g, phi) = (0.1, 0.3);
        let p = ModelParams::uniform(10, &[2, 8], g, phi);
        let h = build_single_excitation_h(&p).unwrap();
        let e = C64::from_polar(g, phi);
        // c2 n1 c3 occupy indices 1 2 3; c8 n2 c9 occupy 8 9 10.
        assert_eq!(h[(1, 2)], e);
        assert_eq!(h[(2, 1)], e.conj());
        assert_eq!(h[(2, 3)], e);
        assert_eq!(h[(3, 2)], e.conj());
        assert_eq!(h[(8, 9)], e);
        assert_eq!(h[(9, 10)], e);
        assert_eq!(h[(1, 3)], c(1.0, 0.0));
        assert_eq!(h[(0, 1)], c(1.0, 0.0));
        assert_eq!(h[(8, 10)], c(1.0, 0.0));
        assert_eq!(h[(2, 2)], c(0.0, 0.0));
        let nonzero = h.iter().filter(|z| z.norm() > 0.0).count();
        assert_eq!(nonzero, 2 * 9 + 2 * 4);
        assert!(hermiticity_error(&h) < 1e-15);
    }

    #[test]
    fn decoupled_and_real_cases() {
        let mut p = ModelParams::uniform(6, &[2, 4], 0.0, 0.5);
        p.delta_n = vec![0.3, -0.2];
        let h = build_single_excitation_h(&p).unwrap();
        let ord = SiteOrdering::new(&p).unwrap();
        for a in 0..2 {
            let k = ord.atom(a);
            for j in 0..h.ncols() {
                if j != k {
                    assert_eq!(h[(k, j)].norm(), 0.0);
                }
            }
        }
        let h = build_single_excitation_h(&ModelParams::uniform(6, &[2, 4], 0.1, 0.0)).unwrap();
        assert!(h.iter().all(|z| z.im == 0.0));
        assert!(h.iter().zip(h.transpose().iter()).all(|(a, b)| a == b));
    }

    #[test]
    fn parameter_errors() {
        let mut p = ModelParams::uniform(6, &[2, 4], 0.1, 0.0);
        p.j_c.pop();
        assert!(matches!(build_single_excitation_h(&p), Err(Error::Param(_))));
        let p = ModelParams::uniform(6, &[6, 4], 0.1, 0.0);
        assert!(SiteOrdering::new(&p).is_err());
    }

    #[test]
    fn decoupled_dimer_full_space() {
        let p = ModelParams::uniform(2, &[1], 0.0, 0.0);
        let h = build_full_h(&p).unwrap().to_dense();
        assert_eq!(h.nrows(), 8);
        let idx = single_excitation_indices(3);
        let block = ComplexMatrix::from_fn(3, 3, |i, j| h[(idx[i], idx[j])]);
        let want = ComplexMatrix::from_row_slice(
            3,
            3,
            &[
                c(0.0, 0.0),
                c(0.0, 0.0),
                c(1.0, 0.0),
                c(0.0, 0.0),
                c(0.0, 0.0),
                c(0.0, 0.0),
                c(1.0, 0.0),
                c(0.0, 0.0),
                c(0.0, 0.0),
            ],
        );
        // ordering is c1, n1, c2
        assert_eq!(block, want);
    }

    #[test]
    fn one_excitation_block_matches() {
        let p = ModelParams::uniform(10, &[2, 8], 0.1, FRAC_PI_4);
        let full = build_full_h(&p).unwrap();
        assert!(full.hermiticity_error() < 1e-15);
        let h1 = build_single_excitation_h(&p).unwrap();
        let idx = single_excitation_indices(12);
        for i in 0..12 {
            for j in 0..12 {
                assert!((full.get(idx[i], idx[j]) - h1[(i, j)]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn driving_connects_sectors() {
        let p = ModelParams::uniform(4, &[2], 0.1, FRAC_PI_4).with_omega(0, 0.2);
        let h = build_full_h(&p).unwrap();
        let nt = 5;
        let mut found = false;
        for r in 0..h.dim {
            for k in h.indptr[r]..h.indptr[r + 1] {
                let col = h.indices[k];
                if (r.count_ones() as i64 - col.count_ones() as i64).abs() == 1 {
                    found = true;
                    assert_eq!(r ^ col, site_bit(nt, 2));
                }
            }
        }
        assert!(found);
    }

    #[test]
    fn full_space_guard() {
        let p = ModelParams::uniform(13, &[2, 8], 0.1, 0.0);
        assert!(matches!(build_full_h(&p), Err(Error::Guard(_))));
    }

    #[test]
    fn small_cavity_spectrum() {
        let p = ModelParams::uniform(3, &[1], 0.1, 0.0);
        let s = cavity_spectrum(&p);
        let r2 = 2f64.sqrt();
        for (e, w) in s.energies.iter().zip([r2, 0.0, -r2]) {
            assert!((e - w).abs() < 1e-14);
        }
        let u = &s.modes;
        assert!((u * u.transpose() - DMatrix::identity(3, 3)).abs().max() < 1e-12);
    }

    #[test]
    fn odd_chain_has_zero_mode_even_chain_gapped() {
        for l in 2..=20 {
            let p = ModelParams::uniform(l, &[1], 0.1, 0.0);
            let s = cavity_spectrum(&p);
            let gap = s.energies.iter().fold(f64::INFINITY, |a, e| a.min(e.abs()));
            if l % 2 == 1 {
                assert!(gap < 1e-12);
                assert_eq!(s.energies.iter().filter(|e| e.abs() < 1e-12).count(), 1);
            } else {
                let bound = 2.0 * (PI * l as f64 / (2.0 * (l as f64 + 1.0))).cos();
                assert!(gap >= bound - 1e-12 && gap > 0.0);
            }
        }
    }

    #[test]
    fn analytic_spectrum_matches_numerics() {
        for l in [2, 5, 10, 23, 50] {
            let mut p = ModelParams::uniform(l, &[1], 0.1, 0.0);
            p.delta_c = vec![0.3; l];
            p.j_c = vec![0.7; l - 1];
            let a = cavity_spectrum(&p);
            let n = tridiagonal(&p.delta_c, &p.j_c).symmetric_eigen();
            let mut ev: Vec<f64> = n.eigenvalues.iter().copied().collect();
            ev.sort_by(|x, y| y.total_cmp(x));
            for (x, y) in a.energies.iter().zip(&ev) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn numerical_spectrum_fallback() {
        let mut p = ModelParams::uniform(6, &[1], 0.1, 0.0);
        p.delta_c = vec![0.1, -0.4, 0.0, 0.2, 0.5, -0.1];
        let s = cavity_spectrum(&p);
        assert!(!s.analytic);
        assert!(s.energies.windows(2).all(|w| w[0] >= w[1]));
        let t = tridiagonal(&p.delta_c, &p.j_c);
        for k in 0..6 {
            let v = s.modes.row(k).transpose();
            assert!((&t * &v - v.clone() * s.energies[k]).norm() < 1e-10);
        }
    }

    #[test]
    fn momentum_coupling_asymmetry() {
        let sym = momentum_coupling(0.1, 0.0, 50).unwrap();
        assert!(sym.asymmetry.abs() < 1e-15);
        let chiral = momentum_coupling(0.1, FRAC_PI_4, 50).unwrap();
        assert!(chiral.asymmetry < 0.0);
        assert_eq!(chiral.points.len(), 50);
        assert!((chiral.points[0].0 + PI).abs() < 1e-15);
        assert!(momentum_coupling(0.0, 0.3, 7).unwrap().points.iter().all(|p| p.1 == 0.0));
    }

    #[test]
    fn json_schema_keys() {
        let p = ModelParams::uniform(4, &[2], 0.1, 0.0);
        let v = serde_json::to_value(&p).unwrap();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(|s| s.as_str()).collect();
        keys.sort();
        assert_eq!(keys, ["J_c", "L", "N", "delta_c", "delta_n", "g_left", "g_right", "omega", "phi", "pos"]);
        let mut bad = v.clone();
        bad["extra"] = serde_json::json!(1);
        assert!(serde_json::from_value::<ModelParams>(bad).is_err());
    }
}
