//! Seeded on-site disorder ensembles: concurrence statistics, IPR spectra and
//! single-realization diagnostics.
//!
//! Realization `id` draws from `ChaCha8Rng::seed_from_u64(seed)` switched to
//! stream `id`. Each stream first yields the width (only when `mixed_w`),
//! then `L` uniforms `u` mapped to `W(2u - 1)`.

use crate::dynamics::pair_dynamics;
use crate::entanglement::{ipr, ConcurrenceTrace, DEFAULT_PEAK_TOL};
use crate::error::{Error, Result};
use crate::model::{build_single_excitation_h, ModelParams};
use crate::parallel::par_map;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_REALIZATIONS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisorderSpec {
    /// Half-width of the on-site distribution in units of J.
    #[serde(rename = "W")]
    pub w: f64,
    pub n_realizations: usize,
    pub seed: u64,
    /// Draw each realization's width uniformly from `[0, W]`.
    #[serde(default)]
    pub mixed_w: bool,
}

impl DisorderSpec {
    pub fn new(w: f64, n_realizations: usize, seed: u64) -> Self {
        DisorderSpec { w, n_realizations, seed, mixed_w: false }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.w.is_finite() || self.w < 0.0 {
            return Err(Error::Param(format!("W must be finite and >= 0, got {}", self.w)));
        }
        if self.n_realizations == 0 {
            return Err(Error::Param("n_realizations must be positive".into()));
        }
        Ok(())
    }

    /// Width and on-site energies of realization `id`.
    pub fn draw(&self, id: u64, l: usize) -> (f64, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(id);
        let w = if self.mixed_w { self.w * rng.random::<f64>() } else { self.w };
        let delta = (0..l).map(|_| w * (2.0 * rng.random::<f64>() - 1.0)).collect();
        (w, delta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Realization {
    pub id: u64,
    pub w: f64,
    pub delta_c: Vec<f64>,
    pub c_m: f64,
    pub t_m: f64,
    pub ipr_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleResult {
    pub spec: DisorderSpec,
    pub realizations: Vec<Realization>,
    pub times: Vec<f64>,
    /// Ensemble-averaged concurrence trace.
    pub mean_trace: Vec<f64>,
    /// Maximum of the averaged trace.
    pub c_bar_max: f64,
    /// Average of the per-realization maxima.
    pub mean_c_m: f64,
}

fn with_disorder(base: &ModelParams, delta_c: Vec<f64>) -> Result<ModelParams> {
    if base.is_driven() {
        return Err(Error::Param("disorder studies need zero driving".into()));
    }
    if delta_c.len() != base.l {
        return Err(Error::Dimension { expected: base.l, got: delta_c.len() });
    }
    let mut p = base.clone();
    p.delta_c = delta_c;
    p.validate()?;
    Ok(p)
}

/// Evolve every realization and reduce in realization order.
pub fn run_ensemble(base: &ModelParams, spec: &DisorderSpec, times: &[f64], jobs: usize) -> Result<EnsembleResult> {
    spec.validate()?;
    let ids: Vec<u64> = (0..spec.n_realizations as u64).collect();
    let runs = par_map(&ids, jobs, |&id| {
        let (w, delta_c) = spec.draw(id, base.l);
        let p = with_disorder(base, delta_c)?;
        let dyn_ = pair_dynamics(&p, times, DEFAULT_PEAK_TOL)?;
        let ipr_mean = ipr(&build_single_excitation_h(&p)?)?.mean;
        let r = Realization { id, w, delta_c: p.delta_c, c_m: dyn_.trace.c_max, t_m: dyn_.trace.t_max, ipr_mean };
        Ok((r, dyn_.trace.c))
    })?;
    let n = runs.len() as f64;
    let mut mean_trace = vec![0.0; times.len()];
    for (_, c) in &runs {
        for (m, v) in mean_trace.iter_mut().zip(c) {
            *m += v;
        }
    }
    mean_trace.iter_mut().for_each(|m| *m /= n);
    let c_bar_max = mean_trace.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let realizations: Vec<Realization> = runs.into_iter().map(|(r, _)| r).collect();
    let mean_c_m = realizations.iter().map(|r| r.c_m).sum::<f64>() / n;
    Ok(EnsembleResult { spec: spec.clone(), realizations, times: times.to_vec(), mean_trace, c_bar_max, mean_c_m })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IprBin {
    pub e_lo: f64,
    pub e_hi: f64,
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IprHistogram {
    /// Pooled `(energy, IPR)` over all realizations.
    pub points: Vec<(f64, f64)>,
    pub bins: Vec<IprBin>,
}

/// Eigenstate IPRs of every realization, pooled and binned in energy.
pub fn ipr_energy_histogram(
    base: &ModelParams,
    spec: &DisorderSpec,
    n_bins: usize,
    jobs: usize,
) -> Result<IprHistogram> {
    spec.validate()?;
    if n_bins == 0 {
        return Err(Error::Param("n_bins must be positive".into()));
    }
    let ids: Vec<u64> = (0..spec.n_realizations as u64).collect();
    let per = par_map(&ids, jobs, |&id| {
        let p = with_disorder(base, spec.draw(id, base.l).1)?;
        Ok(ipr(&build_single_excitation_h(&p)?)?.points)
    })?;
    let points: Vec<(f64, f64)> = per.into_iter().flatten().collect();
    let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let width = ((hi - lo) / n_bins as f64).max(f64::MIN_POSITIVE);
    let mut bins: Vec<IprBin> = (0..n_bins)
        .map(|b| IprBin {
            e_lo: lo + b as f64 * width,
            e_hi: lo + (b + 1) as f64 * width,
            count: 0,
            mean: 0.0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        })
        .collect();
    for &(e, v) in &points {
        let b = (((e - lo) / width) as usize).min(n_bins - 1);
        let bin = &mut bins[b];
        bin.count += 1;
        bin.mean += v;
        bin.min = bin.min.min(v);
        bin.max = bin.max.max(v);
    }
    for bin in bins.iter_mut().filter(|b| b.count > 0) {
        bin.mean /= bin.count as f64;
    }
    Ok(IprHistogram { points, bins })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Replay {
    pub trace: ConcurrenceTrace,
    pub r1: Vec<f64>,
    pub r2: Vec<f64>,
    pub ipr_mean: f64,
}

/// Diagnostics of one explicit realization.
pub fn replay_realization(delta_c: &[f64], base: &ModelParams, times: &[f64]) -> Result<Replay> {
    let p = with_disorder(base, delta_c.to_vec())?;
    let d = pair_dynamics(&p, times, DEFAULT_PEAK_TOL)?;
    let ipr_mean = ipr(&build_single_excitation_h(&p)?)?.mean;
    Ok(Replay { trace: d.trace, r1: d.r1, r2: d.r2, ipr_mean })
}

/// Published single realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationFixture {
    pub note: String,
    #[serde(rename = "L")]
    pub l: usize,
    pub pos: Vec<usize>,
    pub g: f64,
    pub phi: f64,
    #[serde(rename = "W")]
    pub w: f64,
    pub delta_c: Vec<f64>,
}

impl RealizationFixture {
    pub fn from_json(s: &str) -> Result<Self> {
        let f: RealizationFixture = serde_json::from_str(s)?;
        if f.delta_c.len() != f.l {
            return Err(Error::Dimension { expected: f.l, got: f.delta_c.len() });
        }
        Ok(f)
    }

    /// Ordered model the realization is applied to.
    pub fn base(&self) -> ModelParams {
        ModelParams::uniform(self.l, &self.pos, self.g, self.phi)
    }
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut k = 0;
    while k < idx.len() {
        let mut e = k;
        while e + 1 < idx.len() && x[idx[e + 1]] == x[idx[k]] {
            e += 1;
        }
        let avg = (k + e) as f64 / 2.0 + 1.0;
        for &i in &idx[k..=e] {
            r[i] = avg;
        }
        k = e + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension { expected: x.len(), got: y.len() });
    }
    if x.len() < 2 {
        return Err(Error::Empty("need at least two samples".into()));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Validation("constant sample has no rank correlation".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}
