//! First-order Trotter circuits of the model, their elementary-gate form,
//! statevector simulation and gate-time bookkeeping.
//!
//! Qubit `q` is site `q` of the canonical ordering (first site is the most
//! significant bit). Rotations are `R_AB(theta) = exp(-i theta/2 A(x)B)`, and the
//! bond term `h s+_a s-_b + h.c.` with `a < b` equals
//! `(Re h/2)(XX + YY) - (Im h/2)(XY - YX)`, with the first Pauli on `a`.
//!
//! One step applies, in order: cavity bonds starting at odd `c_i`, cavity
//! bonds starting at even `c_i`, atom-to-left-spin bonds, atom-to-right-spin
//! bonds, on-site `RZ`, drive `RX`. Each bond group emits one layer per Pauli
//! pair (`XX`, `YY`, `XY`, `YX`), split further if two bonds share a qubit.

use crate::dynamics::evolve_unitary;
use crate::entanglement::{concurrence, partial_trace_atoms, ConcurrenceTrace, QuantumState, DEFAULT_PEAK_TOL};
use crate::error::{Error, Result};
use crate::linalg::{basis_state, c, ComplexMatrix, StateVector, C64};
use crate::model::{build_full_h, build_single_excitation_h, site_bit, ModelParams, Site, SiteOrdering};
use serde::Serialize;
use std::f64::consts::FRAC_PI_2;
use std::fmt;

pub const MAX_QUBITS: usize = 12;
/// Duration of one layer of single-qubit gates.
pub const SINGLE_LAYER_NS: f64 = 50.0;
/// Duration of one native entangling (CX) gate layer.
pub const CX_LAYER_NS: f64 = 500.0;
/// A rotation layer costs its elementary form: 3 single-qubit and 2 CX layers.
pub const ROTATION_LAYER_NS: f64 = 3.0 * SINGLE_LAYER_NS + 2.0 * CX_LAYER_NS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GateKind {
    RX,
    RZ,
    H,
    RXX,
    RYY,
    RXY,
    RYX,
    CX,
}

impl GateKind {
    pub fn arity(self) -> usize {
        match self {
            GateKind::RX | GateKind::RZ | GateKind::H => 1,
            _ => 2,
        }
    }

    pub fn is_rotation_pair(self) -> bool {
        matches!(self, GateKind::RXX | GateKind::RYY | GateKind::RXY | GateKind::RYX)
    }
}

impl fmt::Display for GateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Gate {
    pub kind: GateKind,
    pub qubits: Vec<usize>,
    pub angle: f64,
}

impl Gate {
    pub fn one(kind: GateKind, q: usize, angle: f64) -> Self {
        Gate { kind, qubits: vec![q], angle }
    }

    pub fn two(kind: GateKind, q0: usize, q1: usize, angle: f64) -> Self {
        Gate { kind, qubits: vec![q0, q1], angle }
    }

    pub fn validate(&self, n_qubits: usize) -> Result<()> {
        if self.qubits.len() != self.kind.arity() {
            return Err(Error::Validation(format!("{} acts on {} qubits", self.kind, self.kind.arity())));
        }
        if let Some(q) = self.qubits.iter().find(|&&q| q >= n_qubits) {
            return Err(Error::Validation(format!("qubit {q} out of range for {n_qubits} qubits")));
        }
        if self.qubits.len() == 2 && self.qubits[0] == self.qubits[1] {
            return Err(Error::Validation("two-qubit gate on a single qubit".into()));
        }
        if !self.angle.is_finite() {
            return Err(Error::Validation("gate angle must be finite".into()));
        }
        Ok(())
    }

    /// Local unitary; two-qubit matrices use index `2 b(q0) + b(q1)`.
    pub fn matrix(&self) -> ComplexMatrix {
        let (co, si) = ((self.angle / 2.0).cos(), (self.angle / 2.0).sin());
        let z = c(0.0, 0.0);
        match self.kind {
            GateKind::RX => ComplexMatrix::from_row_slice(2, 2, &[c(co, 0.0), c(0.0, -si), c(0.0, -si), c(co, 0.0)]),
            GateKind::RZ => ComplexMatrix::from_row_slice(2, 2, &[c(co, -si), z, z, c(co, si)]),
            GateKind::H => {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                ComplexMatrix::from_row_slice(2, 2, &[c(s, 0.0), c(s, 0.0), c(s, 0.0), c(-s, 0.0)])
            }
            GateKind::CX => {
                let mut m = ComplexMatrix::zeros(4, 4);
                for (r, col) in [(0, 0), (1, 1), (2, 3), (3, 2)] {
                    m[(r, col)] = c(1.0, 0.0);
                }
                m
            }
            kind => {
                let (a, b) = match kind {
                    GateKind::RXX => (pauli_x(), pauli_x()),
                    GateKind::RYY => (pauli_y(), pauli_y()),
                    GateKind::RXY => (pauli_x(), pauli_y()),
                    _ => (pauli_y(), pauli_x()),
                };
                let p = a.kronecker(&b);
                ComplexMatrix::identity(4, 4) * c(co, 0.0) - p * c(0.0, si)
            }
        }
    }
}

fn pauli_x() -> ComplexMatrix {
    ComplexMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)])
}

fn pauli_y() -> ComplexMatrix {
    ComplexMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(0.0, 0.0)])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Layer {
    /// Gates acting on disjoint qubits.
    pub gates: Vec<Gate>,
}

impl Layer {
    pub fn is_two_qubit(&self) -> bool {
        self.gates.iter().any(|g| g.kind.arity() == 2)
    }

    pub fn duration_ns(&self) -> f64 {
        if self.gates.iter().any(|g| g.kind.is_rotation_pair()) {
            ROTATION_LAYER_NS
        } else if self.is_two_qubit() {
            CX_LAYER_NS
        } else {
            SINGLE_LAYER_NS
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GateSequence {
    pub n_qubits: usize,
    pub layers: Vec<Layer>,
}

impl GateSequence {
    pub fn empty(n_qubits: usize) -> Self {
        GateSequence { n_qubits, layers: Vec::new() }
    }

    pub fn gates(&self) -> impl Iterator<Item = &Gate> {
        self.layers.iter().flat_map(|l| l.gates.iter())
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn single_qubit_layers(&self) -> usize {
        self.layers.iter().filter(|l| !l.is_two_qubit()).count()
    }

    pub fn two_qubit_layers(&self) -> usize {
        self.layers.iter().filter(|l| l.is_two_qubit()).count()
    }

    pub fn two_qubit_count(&self) -> usize {
        self.gates().filter(|g| g.kind.arity() == 2).count()
    }

    pub fn duration_ns(&self) -> f64 {
        self.layers.iter().map(Layer::duration_ns).sum()
    }

    /// `n` copies of this sequence.
    pub fn repeat(&self, n: usize) -> Self {
        GateSequence { n_qubits: self.n_qubits, layers: (0..n).flat_map(|_| self.layers.clone()).collect() }
    }

    pub fn validate(&self) -> Result<()> {
        for layer in &self.layers {
            let mut used = vec![false; self.n_qubits];
            for g in &layer.gates {
                g.validate(self.n_qubits)?;
                for &q in &g.qubits {
                    if std::mem::replace(&mut used[q], true) {
                        return Err(Error::Validation(format!("qubit {q} used twice in one layer")));
                    }
                }
            }
        }
        Ok(())
    }

    /// One `GATE kind q0 [q1] angle` line per gate.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for g in self.gates() {
            let qs: Vec<String> = g.qubits.iter().map(|q| q.to_string()).collect();
            s.push_str(&format!("GATE {} {} {:.12e}\n", g.kind, qs.join(" "), g.angle));
        }
        s
    }
}

/// Greedy packing of gates into layers with disjoint qubits, keeping order.
fn pack(gates: Vec<Gate>) -> Vec<Layer> {
    let mut layers: Vec<(Vec<Gate>, Vec<usize>)> = Vec::new();
    for g in gates {
        match layers.iter_mut().find(|(_, used)| g.qubits.iter().all(|q| !used.contains(q))) {
            Some((gs, used)) => {
                used.extend(&g.qubits);
                gs.push(g);
            }
            None => layers.push((vec![g.clone()], g.qubits.clone())),
        }
    }
    layers.into_iter().map(|(gates, _)| Layer { gates }).collect()
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum BondGroup {
    CavityOdd,
    CavityEven,
    AtomLeft,
    AtomRight,
}

// Layout bond joining sites `a` and `b`, if any.
fn bond_group(a: Site, b: Site, p: &ModelParams) -> Option<BondGroup> {
    match (a, b) {
        (Site::Cavity(i), Site::Cavity(j)) if i.abs_diff(j) == 1 => {
            Some(if i.min(j) % 2 == 1 { BondGroup::CavityOdd } else { BondGroup::CavityEven })
        }
        (Site::Cavity(i), Site::Atom(n)) | (Site::Atom(n), Site::Cavity(i)) if i == p.pos[n] => {
            Some(BondGroup::AtomLeft)
        }
        (Site::Cavity(i), Site::Atom(n)) | (Site::Atom(n), Site::Cavity(i)) if i == p.pos[n] + 1 => {
            Some(BondGroup::AtomRight)
        }
        _ => None,
    }
}

/// One first-order Trotter step of `exp(-i H dt)`.
///
/// The circuit is a fixed template of the register layout: cavity bonds get
/// RXX+RYY, chiral atom bonds all four Pauli-pair rotations, then on-site RZ
/// layers (cavity, atoms) and a drive RX layer. Zero angles are kept so the
/// layer budget does not depend on parameter values.
pub fn trotter_step(p: &ModelParams, dt: f64) -> Result<GateSequence> {
    if !dt.is_finite() {
        return Err(Error::Param("time step must be finite".into()));
    }
    let ord = SiteOrdering::new(p)?;
    let n = ord.len();
    if n > MAX_QUBITS {
        return Err(Error::Guard(format!("circuit emulation needs N_T <= {MAX_QUBITS}, got {n}")));
    }
    let h1 = build_single_excitation_h(p)?;
    let labels = ord.labels();
    let groups = [BondGroup::CavityOdd, BondGroup::CavityEven, BondGroup::AtomLeft, BondGroup::AtomRight];
    let mut bonds: Vec<Vec<(usize, usize, C64)>> = vec![Vec::new(); groups.len()];
    for a in 0..n {
        for b in a + 1..n {
            if let Some(g) = bond_group(labels[a], labels[b], p) {
                bonds[groups.iter().position(|&x| x == g).unwrap()].push((a, b, h1[(a, b)]));
            } else if h1[(a, b)].norm() != 0.0 {
                return Err(Error::Validation(format!("no gate layout for the bond {}-{}", labels[a], labels[b])));
            }
        }
    }
    let mut layers = Vec::new();
    for (group, terms) in groups.iter().zip(bonds) {
        let kinds: &[GateKind] = match group {
            BondGroup::CavityOdd | BondGroup::CavityEven => &[GateKind::RXX, GateKind::RYY],
            _ => &[GateKind::RXX, GateKind::RYY, GateKind::RXY, GateKind::RYX],
        };
        for &kind in kinds {
            let gates: Vec<Gate> = terms
                .iter()
                .map(|&(a, b, h)| {
                    let angle = match kind {
                        GateKind::RXX | GateKind::RYY => h.re * dt,
                        GateKind::RXY => -h.im * dt,
                        _ => h.im * dt,
                    };
                    Gate::two(kind, a, b, angle)
                })
                .collect();
            layers.extend(pack(gates));
        }
    }
    let rz = |s: usize| Gate::one(GateKind::RZ, s, -h1[(s, s)].re * dt);
    let cavity: Vec<Gate> = (1..=p.l).map(|i| rz(ord.cavity(i))).collect();
    let atoms: Vec<Gate> = (0..p.n).map(|a| rz(ord.atom(a))).collect();
    let drive: Vec<Gate> = (0..p.n).map(|a| Gate::one(GateKind::RX, ord.atom(a), 2.0 * p.omega[a] * dt)).collect();
    layers.extend(pack(cavity));
    layers.extend(pack(atoms));
    layers.extend(pack(drive));
    Ok(GateSequence { n_qubits: n, layers })
}

/// Elementary form `V, CX, RZ, CX, V^dagger` of a Pauli-pair rotation.
pub fn decompose_two_qubit(g: &Gate) -> Result<GateSequence> {
    if !g.kind.is_rotation_pair() {
        return Err(Error::Validation(format!("cannot decompose {}", g.kind)));
    }
    let (q0, q1) = (g.qubits[0], g.qubits[1]);
    let (x0, x1) = match g.kind {
        GateKind::RXX => (true, true),
        GateKind::RYY => (false, false),
        GateKind::RXY => (true, false),
        _ => (false, true),
    };
    let basis = |q: usize, x: bool, inv: bool| {
        if x {
            Gate::one(GateKind::H, q, 0.0)
        } else {
            Gate::one(GateKind::RX, q, if inv { -FRAC_PI_2 } else { FRAC_PI_2 })
        }
    };
    let layers = vec![
        Layer { gates: vec![basis(q0, x0, false), basis(q1, x1, false)] },
        Layer { gates: vec![Gate::two(GateKind::CX, q0, q1, 0.0)] },
        Layer { gates: vec![Gate::one(GateKind::RZ, q1, g.angle)] },
        Layer { gates: vec![Gate::two(GateKind::CX, q0, q1, 0.0)] },
        Layer { gates: vec![basis(q0, x0, true), basis(q1, x1, true)] },
    ];
    Ok(GateSequence { n_qubits: q0.max(q1) + 1, layers })
}

/// Elementary form of every rotation layer, keeping parallel gates in
/// parallel layers.
pub fn decompose_sequence(seq: &GateSequence) -> Result<GateSequence> {
    let mut layers = Vec::new();
    for layer in &seq.layers {
        if !layer.gates.iter().any(|g| g.kind.is_rotation_pair()) {
            layers.push(layer.clone());
            continue;
        }
        let parts = layer.gates.iter().map(decompose_two_qubit).collect::<Result<Vec<_>>>()?;
        for k in 0..5 {
            layers.push(Layer { gates: parts.iter().flat_map(|s| s.layers[k].gates.clone()).collect() });
        }
    }
    Ok(GateSequence { n_qubits: seq.n_qubits, layers })
}

fn apply_gate(psi: &mut [C64], n: usize, g: &Gate) {
    let m = g.matrix();
    let bit = |q: usize| 1usize << (n - 1 - q);
    match *g.qubits.as_slice() {
        [q] => {
            let b = bit(q);
            for x in (0..psi.len()).filter(|x| x & b == 0) {
                let (u, v) = (psi[x], psi[x | b]);
                psi[x] = m[(0, 0)] * u + m[(0, 1)] * v;
                psi[x | b] = m[(1, 0)] * u + m[(1, 1)] * v;
            }
        }
        [q0, q1] => {
            let (b0, b1) = (bit(q0), bit(q1));
            for x in (0..psi.len()).filter(|x| x & (b0 | b1) == 0) {
                let idx = [x, x | b1, x | b0, x | b0 | b1];
                let v = idx.map(|i| psi[i]);
                for (r, &i) in idx.iter().enumerate() {
                    psi[i] = (0..4).map(|k| m[(r, k)] * v[k]).sum();
                }
            }
        }
        _ => unreachable!("gates are validated before application"),
    }
}

/// Apply the gates in order to `psi0`.
pub fn simulate_circuit(seq: &GateSequence, psi0: &StateVector) -> Result<StateVector> {
    if seq.n_qubits > MAX_QUBITS {
        return Err(Error::Guard(format!("statevector simulation needs <= {MAX_QUBITS} qubits")));
    }
    if psi0.len() != 1 << seq.n_qubits {
        return Err(Error::Dimension { expected: 1 << seq.n_qubits, got: psi0.len() });
    }
    seq.validate()?;
    let mut psi = psi0.clone();
    for g in seq.gates() {
        apply_gate(psi.as_mut_slice(), seq.n_qubits, g);
    }
    Ok(psi)
}

/// Full-register state with only atom n1 excited.
fn initial_state(ord: &SiteOrdering) -> StateVector {
    let n = ord.len();
    basis_state(1 << n, site_bit(n, ord.atom(0)))
}

fn atom_concurrence(psi: &StateVector, ord: &SiteOrdering) -> Result<f64> {
    Ok(concurrence(&partial_trace_atoms(QuantumState::Pure(psi), ord)?))
}

/// States after `0..=steps` Trotter steps of size `dt` from atom n1 excited.
pub fn trotter_states(p: &ModelParams, dt: f64, steps: usize) -> Result<Vec<StateVector>> {
    let ord = SiteOrdering::new(p)?;
    let step = trotter_step(p, dt)?;
    let mut psi = initial_state(&ord);
    let mut out = vec![psi.clone()];
    for _ in 0..steps {
        psi = simulate_circuit(&step, &psi)?;
        out.push(psi.clone());
    }
    Ok(out)
}

fn exact_states(p: &ModelParams, times: &[f64]) -> Result<Vec<StateVector>> {
    let ord = SiteOrdering::new(p)?;
    let h = build_full_h(p)?.to_dense();
    evolve_unitary(&h, &initial_state(&ord), times)
}

fn steps_for(dt: f64, t_final: f64) -> Result<usize> {
    if !dt.is_finite() || dt <= 0.0 || !t_final.is_finite() || t_final < 0.0 {
        return Err(Error::Param(format!("need dt > 0 and t_final >= 0, got {dt} and {t_final}")));
    }
    Ok((t_final / dt + 1e-9).floor() as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrotterTrace {
    pub dt: f64,
    pub steps: usize,
    pub trace: ConcurrenceTrace,
    pub layers_per_step: usize,
    pub two_qubit_layers_per_step: usize,
    pub step_duration_ns: f64,
    pub total_duration_ns: f64,
    /// Largest `|C_trotter - C_exact|` on the Trotter grid.
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrotterComparison {
    pub exact: ConcurrenceTrace,
    pub trotter: Vec<TrotterTrace>,
}

impl TrotterComparison {
    /// Rows on the finest Trotter grid: `Jt, C_exact, C_dt...` (empty where a
    /// coarser grid has no point).
    pub fn rows(&self) -> Vec<Vec<Option<f64>>> {
        let Some(fine) = self.trotter.iter().min_by(|a, b| a.dt.total_cmp(&b.dt)) else {
            return Vec::new();
        };
        fine.trace
            .times
            .iter()
            .map(|&t| {
                let mut row = vec![Some(t), lookup(&self.exact, t)];
                row.extend(self.trotter.iter().map(|tr| lookup(&tr.trace, t)));
                row
            })
            .collect()
    }
}

fn lookup(tr: &ConcurrenceTrace, t: f64) -> Option<f64> {
    tr.times.iter().position(|&s| (s - t).abs() < 1e-9).map(|k| tr.c[k])
}

/// Trotterized and exact concurrence up to `t_final` for each step size. The
/// exact trace is sampled on `exact_dt`.
pub fn trotter_vs_exact(p: &ModelParams, dts: &[f64], t_final: f64, exact_dt: f64) -> Result<TrotterComparison> {
    let ord = SiteOrdering::new(p)?;
    let n_exact = steps_for(exact_dt, t_final)?;
    let mut times: Vec<f64> = (0..=n_exact).map(|k| k as f64 * exact_dt).collect();
    for &dt in dts {
        times.extend((0..=steps_for(dt, t_final)?).map(|k| k as f64 * dt));
    }
    times.sort_by(f64::total_cmp);
    times.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    let exact_all: Vec<f64> =
        exact_states(p, &times)?.iter().map(|s| atom_concurrence(s, &ord)).collect::<Result<_>>()?;
    let exact_full = ConcurrenceTrace::new(times.clone(), exact_all, DEFAULT_PEAK_TOL)?;
    let grid: Vec<f64> = (0..=n_exact).map(|k| k as f64 * exact_dt).collect();
    let exact = ConcurrenceTrace::new(
        grid.clone(),
        grid.iter().map(|&t| lookup(&exact_full, t).unwrap()).collect(),
        DEFAULT_PEAK_TOL,
    )?;
    let mut trotter = Vec::new();
    for &dt in dts {
        let steps = steps_for(dt, t_final)?;
        let seq = trotter_step(p, dt)?;
        let cs: Vec<f64> =
            trotter_states(p, dt, steps)?.iter().map(|s| atom_concurrence(s, &ord)).collect::<Result<_>>()?;
        let ts: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
        let max_abs_error =
            ts.iter().zip(&cs).map(|(&t, &v)| (v - lookup(&exact_full, t).unwrap()).abs()).fold(0.0, f64::max);
        trotter.push(TrotterTrace {
            dt,
            steps,
            trace: ConcurrenceTrace::new(ts, cs, DEFAULT_PEAK_TOL)?,
            layers_per_step: seq.depth(),
            two_qubit_layers_per_step: seq.two_qubit_layers(),
            step_duration_ns: seq.duration_ns(),
            total_duration_ns: seq.repeat(steps).duration_ns(),
            max_abs_error,
        });
    }
    Ok(TrotterComparison { exact, trotter })
}

/// Phase-insensitive distance `sqrt(2 (1 - |<a|b>|))` of normalised states.
pub fn state_distance(a: &StateVector, b: &StateVector) -> f64 {
    (2.0 * (1.0 - a.dotc(b).norm()).max(0.0)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorScaling {
    pub dts: Vec<f64>,
    /// State distance to the exact state at `t_final`.
    pub state_errors: Vec<f64>,
    /// Largest concurrence deviation on each Trotter grid.
    pub concurrence_errors: Vec<f64>,
    /// Successive error ratios `e(dt) / e(dt/2)`.
    pub state_ratios: Vec<f64>,
    pub concurrence_ratios: Vec<f64>,
}

/// Trotter error against step size at fixed `t_final`.
pub fn error_scaling(p: &ModelParams, dts: &[f64], t_final: f64) -> Result<ErrorScaling> {
    let ord = SiteOrdering::new(p)?;
    let exact_final = exact_states(p, &[t_final])?.pop().unwrap();
    let mut state_errors = Vec::new();
    let mut concurrence_errors = Vec::new();
    for &dt in dts {
        let steps = steps_for(dt, t_final)?;
        if ((steps as f64) * dt - t_final).abs() > 1e-9 {
            return Err(Error::Param(format!("t_final = {t_final} is not a multiple of dt = {dt}")));
        }
        let states = trotter_states(p, dt, steps)?;
        let times: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
        let exact = exact_states(p, &times)?;
        state_errors.push(state_distance(states.last().unwrap(), &exact_final));
        let mut worst: f64 = 0.0;
        for (s, e) in states.iter().zip(&exact) {
            worst = worst.max((atom_concurrence(s, &ord)? - atom_concurrence(e, &ord)?).abs());
        }
        concurrence_errors.push(worst);
    }
    let ratios = |e: &[f64]| e.windows(2).map(|w| w[0] / w[1]).collect();
    Ok(ErrorScaling {
        dts: dts.to_vec(),
        state_ratios: ratios(&state_errors),
        concurrence_ratios: ratios(&concurrence_errors),
        state_errors,
        concurrence_errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs;
    use std::f64::consts::{FRAC_PI_4, PI};

    fn phase_distance(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
        // align the global phase on the largest entry of a
        let k = (0..a.len()).max_by(|&i, &j| a[i].norm().total_cmp(&a[j].norm())).unwrap();
        let ph = b[k] / a[k];
        max_abs(&(a * ph - b))
    }

    fn sequence_unitary(seq: &GateSequence) -> ComplexMatrix {
        let dim = 1 << seq.n_qubits;
        let cols: Vec<StateVector> = (0..dim).map(|k| simulate_circuit(seq, &basis_state(dim, k)).unwrap()).collect();
        ComplexMatrix::from_columns(&cols)
    }

    #[test]
    fn decompositions_match_rotations() {
        for kind in [GateKind::RXX, GateKind::RYY, GateKind::RXY, GateKind::RYX] {
            for theta in [0.0, 0.3, -1.7, PI] {
                let g = Gate::two(kind, 0, 1, theta);
                let dec = decompose_two_qubit(&g).unwrap();
                assert_eq!((dec.single_qubit_layers(), dec.two_qubit_layers()), (3, 2));
                assert!(phase_distance(&g.matrix(), &sequence_unitary(&dec)) < 1e-10, "{kind} {theta}");
            }
        }
        let id = Gate::two(GateKind::RXY, 0, 1, 0.0).matrix();
        assert!(max_abs(&(id - ComplexMatrix::identity(4, 4))) < 1e-15);
        let xy = Gate::two(GateKind::RXY, 0, 1, 0.4).matrix();
        let yx = Gate::two(GateKind::RYX, 0, 1, 0.4).matrix();
        assert!(max_abs(&(xy - yx)) > 0.1);
        assert!(decompose_two_qubit(&Gate::two(GateKind::CX, 0, 1, 0.0)).is_err());
    }

    #[test]
    fn single_qubit_basics() {
        let seq = GateSequence { n_qubits: 1, layers: vec![Layer { gates: vec![Gate::one(GateKind::RX, 0, PI)] }] };
        let out = simulate_circuit(&seq, &basis_state(2, 0)).unwrap();
        assert!((out[1].norm() - 1.0).abs() < 1e-15);
        let psi = basis_state(4, 2);
        assert_eq!(simulate_circuit(&GateSequence::empty(2), &psi).unwrap(), psi);
        let bad = GateSequence { n_qubits: 2, layers: vec![Layer { gates: vec![Gate::one(GateKind::RZ, 2, 0.1)] }] };
        assert!(simulate_circuit(&bad, &psi).is_err());
    }

    #[test]
    fn step_structure() {
        let p = ModelParams::uniform(6, &[2, 4], 0.0, 0.0);
        let bare = trotter_step(&p, 0.5).unwrap();
        let atom_bonds = |g: &Gate| g.qubits.iter().any(|&q| q == 2 || q == 5);
        assert!(bare
            .gates()
            .filter(|g| g.qubits.len() == 2 && !atom_bonds(g))
            .all(|g| matches!(g.kind, GateKind::RXX | GateKind::RYY)));
        assert!(bare.gates().filter(|g| g.kind.arity() == 2 && atom_bonds(g)).all(|g| g.angle == 0.0));
        let chiral = trotter_step(&p.clone().with_phi(FRAC_PI_4), 5.0).unwrap();
        assert_eq!(chiral.two_qubit_layers(), 12);
        assert_eq!(chiral.single_qubit_layers(), 3);
        assert_eq!(bare.depth(), chiral.depth());
        let expect = 3.0 * SINGLE_LAYER_NS + 12.0 * ROTATION_LAYER_NS;
        assert!((chiral.duration_ns() - expect).abs() < 1e-9);
        assert_eq!(chiral.repeat(24).duration_ns(), 24.0 * chiral.duration_ns());
        chiral.validate().unwrap();
        let dec = decompose_sequence(&chiral).unwrap();
        assert_eq!(dec.duration_ns(), chiral.duration_ns());
        let driven = trotter_step(&p.clone().with_omega(0, 0.2), 1.0).unwrap();
        assert!(driven.gates().any(|g| g.kind == GateKind::RX && (g.angle - 0.4).abs() < 1e-15));
        let text = chiral.to_text();
        assert_eq!(text.lines().count(), chiral.gates().count());
        assert!(text.lines().all(|l| l.starts_with("GATE R")));
    }

    #[test]
    fn one_step_matches_short_time_evolution() {
        let mut p = ModelParams::uniform(4, &[1, 3], 0.3, 0.6);
        p.delta_c = vec![0.1, -0.2, 0.3, 0.0];
        p.omega = vec![0.05, 0.0];
        let dt = 1e-3;
        let u_trot = sequence_unitary(&trotter_step(&p, dt).unwrap());
        let h = build_full_h(&p).unwrap().to_dense();
        let u_exact = (h * c(0.0, -dt)).exp();
        // agreement to second order in dt up to a global phase
        assert!(phase_distance(&u_exact, &u_trot) < 1e-5);
    }

    #[test]
    fn fine_steps_converge() {
        let p = ModelParams::uniform(6, &[2, 5], 0.1, FRAC_PI_4);
        let cmp = trotter_vs_exact(&p, &[0.1], 120.0, 0.5).unwrap();
        assert!(cmp.trotter[0].max_abs_error < 0.01, "{}", cmp.trotter[0].max_abs_error);
        assert_eq!(cmp.trotter[0].steps, 1200);
        let rows = cmp.rows();
        assert_eq!(rows.len(), 1201);
        assert!(rows[5][1].is_some() && rows[1][1].is_none());
    }

    #[test]
    fn errors_shrink_with_step() {
        let p = ModelParams::uniform(4, &[1, 3], 0.3, FRAC_PI_4);
        let s = error_scaling(&p, &[0.2, 0.1, 0.05], 2.0).unwrap();
        assert!(s.state_ratios.iter().all(|r| (1.8..2.2).contains(r)), "{:?}", s.state_ratios);
        assert!(error_scaling(&p, &[0.3], 1.0).is_err());
    }
}
