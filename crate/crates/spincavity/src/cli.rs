//! Command-line experiments: each subcommand writes CSV/JSON data, SVG plots
//! and a `manifest.json` with the resolved configuration and output hashes.

use crate::disorder::{
    ipr_energy_histogram, replay_realization, run_ensemble, spearman, DisorderSpec, RealizationFixture,
};
use crate::dynamics::{pair_dynamics, time_grid, DissipationParams};
use crate::entanglement::DEFAULT_PEAK_TOL;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::optimizer::{
    optimize, peak_within, replay_with_dissipation, tolerance_sweep, DissipationSolver, Mode, ObjectiveSpec,
    OptimalTable, ParamGroup, OBJECTIVE_DT,
};
use crate::perturbation::{compare_full_effective, dip_strengths, effective_model, EffectiveRoute};
use crate::plot::{Heatmap, LinePlot, Series};
use crate::studies::{chirality_scan, driving_scan, local_minima, mirror_asymmetry, parity_scan, ScanPoint};
use crate::trotter::{error_scaling, trotter_step, trotter_vs_exact};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use std::fs;
use std::path::{Path, PathBuf};

/// Exit code signalling that an optimisation stopped on its evaluation budget.
pub const EXIT_BUDGET: i32 = 4;
const COHERENCE_WINDOW_US: [f64; 2] = [200.0, 300.0];
const HEATMAP_MAX_COLUMNS: usize = 400;

#[derive(Parser, Debug)]
#[command(name = "spincavity", version, about = "Entanglement of two atoms chirally coupled to a spin-chain cavity")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct Common {
    /// Model parameters as JSON (keys L, N, delta_c, delta_n, J_c, g_left, g_right, phi, omega, pos).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// Override a model key with a JSON value; scalars broadcast over list keys.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Concurrence against time and cavity length, atoms at (2, L-2).
    Parity(ParityArgs),
    /// Concurrence against time and common hopping phase.
    Chirality(ChiralityArgs),
    /// Peak concurrence against the drive on atom n1, from the all-down state.
    Driving(DrivingArgs),
    /// Seeded on-site disorder ensembles.
    Disorder(DisorderArgs),
    /// Optimise on-site energies or hoppings for fast entanglement.
    Optimize(OptimizeArgs),
    /// Trotterized circuit against exact dynamics.
    Trotter(TrotterArgs),
    /// Full model against its second-order effective description.
    Oracle(OracleArgs),
    /// Replay a published optimal table row or disorder realization.
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ParityArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long, default_value_t = 5)]
    pub l_min: usize,
    #[arg(long, default_value_t = 50)]
    pub l_max: usize,
    #[arg(long, default_value_t = 2000.0)]
    pub t_max: f64,
    #[arg(long, default_value_t = 0.1)]
    pub dt: f64,
    /// Sampling of the heatmap output (the summary uses the full grid).
    #[arg(long, default_value_t = 1.0)]
    pub heatmap_dt: f64,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ChiralityArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long, default_value_t = 0.0)]
    pub phi_min: f64,
    #[arg(long, default_value_t = FRAC_PI_2)]
    pub phi_max: f64,
    #[arg(long, default_value_t = 31)]
    pub phi_points: usize,
    #[arg(long, default_value_t = 300.0)]
    pub t_max: f64,
    #[arg(long, default_value_t = 0.1)]
    pub dt: f64,
    #[arg(long, default_value_t = 1.0)]
    pub heatmap_dt: f64,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct DrivingArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long, default_value_t = 0.01)]
    pub omega_min: f64,
    #[arg(long, default_value_t = 1.2)]
    pub omega_max: f64,
    #[arg(long, default_value_t = 0.01)]
    pub omega_step: f64,
    #[arg(long, default_value_t = 200.0)]
    pub t_max: f64,
    #[arg(long, default_value_t = 0.5)]
    pub dt: f64,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct DisorderArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Disorder half-widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,1.5,2")]
    pub widths: Vec<f64>,
    #[arg(long, default_value_t = crate::disorder::DEFAULT_REALIZATIONS)]
    pub realizations: usize,
    /// Size of the mixed-width ensemble (0 skips it).
    #[arg(long, default_value_t = 500)]
    pub mixed: usize,
    /// Mixed-width realizations draw W uniformly from [0, this].
    #[arg(long, default_value_t = 2.0)]
    pub mixed_max_w: f64,
    #[arg(long, default_value_t = 500.0)]
    pub t_max: f64,
    #[arg(long, default_value_t = 0.5)]
    pub dt: f64,
    #[arg(long, default_value_t = 40)]
    pub bins: usize,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Onsite,
    Hopping,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Onsite => Mode::Onsite,
            ModeArg::Hopping => Mode::Hopping,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct OptimizeArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long, value_enum, default_value_t = ModeArg::Onsite)]
    pub mode: ModeArg,
    /// Bound on the engineered parameters.
    #[arg(long, default_value_t = 1.0)]
    pub r: f64,
    /// Stopping time.
    #[arg(long, default_value_t = 30.0)]
    pub tf: f64,
    #[arg(long, default_value_t = 5000)]
    pub budget: usize,
    #[arg(long, default_value_t = crate::optimizer::DEFAULT_RESTARTS)]
    pub restarts: usize,
    /// Uniform site decay rate for a dissipative replay of the optimum.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, default_value_t = 0.7)]
    pub sweep_min: f64,
    #[arg(long, default_value_t = 1.3)]
    pub sweep_max: f64,
    #[arg(long, default_value_t = 0.05)]
    pub sweep_step: f64,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct TrotterArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long, value_delimiter = ',', default_value = "0,0.7853981633974483")]
    pub phis: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "5,10")]
    pub dts: Vec<f64>,
    #[arg(long, default_value_t = 120.0)]
    pub t_final: f64,
    #[arg(long, default_value_t = 0.5)]
    pub exact_dt: f64,
    #[arg(long, value_delimiter = ',', default_value = "2,1,0.5,0.25")]
    pub scaling_dts: Vec<f64>,
    #[arg(long, default_value_t = 120.0)]
    pub scaling_t: f64,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RouteArg {
    Analytic,
    Numeric,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct OracleArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long, value_enum, default_value_t = RouteArg::Analytic)]
    pub route: RouteArg,
    /// Defaults to one concurrence period `pi J / (2 g^2)`.
    #[arg(long)]
    pub t_max: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub dt: f64,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ReplayArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Optimal parameter table (JSON).
    #[arg(long, conflicts_with = "realization")]
    pub table: Option<PathBuf>,
    /// Stopping time selecting the table row.
    #[arg(long)]
    pub tf: Option<f64>,
    /// Disorder realization (JSON).
    #[arg(long)]
    pub realization: Option<PathBuf>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Horizon of a realization replay.
    #[arg(long, default_value_t = 500.0)]
    pub t_max: f64,
    #[arg(long, default_value_t = 0.5)]
    pub dt: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputRecord {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Output directory that hashes every file it writes.
pub struct Outputs {
    dir: PathBuf,
    files: Vec<OutputRecord>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Outputs { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.files.push(OutputRecord { file: name.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() });
        Ok(())
    }

    pub fn csv(&mut self, name: &str, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(header).map_err(io)?;
        for row in rows {
            w.write_record(&row).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        self.write(name, &bytes)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(v)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    pub fn svg(&mut self, name: &str, svg: String) -> Result<()> {
        self.write(name, svg.as_bytes())
    }

    pub fn files(&self) -> &[OutputRecord] {
        &self.files
    }
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

/// Apply `key=value` overrides to the JSON form of `p`.
pub fn apply_overrides(p: &ModelParams, sets: &[String]) -> Result<ModelParams> {
    let mut v = serde_json::to_value(p)?;
    let obj = v.as_object_mut().expect("parameters serialize to an object");
    for s in sets {
        let (k, raw) = s.split_once('=').ok_or_else(|| Error::Config(format!("override {s:?} is not KEY=VALUE")))?;
        let new: Value =
            serde_json::from_str(raw).map_err(|e| Error::Config(format!("value of {k:?} is not JSON: {e}")))?;
        let slot = obj.get_mut(k).ok_or_else(|| Error::Config(format!("unknown key {k:?}")))?;
        *slot = match (&*slot, new) {
            (Value::Array(a), n) if !n.is_array() => Value::Array(vec![n; a.len()]),
            (_, n) => n,
        };
    }
    let explicit: Vec<&str> = sets.iter().filter_map(|s| s.split_once('=').map(|kv| kv.0)).collect();
    let size = |k: &str| obj.get(k).and_then(Value::as_u64).map(|n| n as usize);
    let (l, n) = (size("L").unwrap_or(0), size("N").unwrap_or(0));
    for (k, len) in [
        ("delta_c", l),
        ("J_c", l.saturating_sub(1)),
        ("delta_n", n),
        ("g_left", n),
        ("g_right", n),
        ("phi", n),
        ("omega", n),
    ] {
        if explicit.contains(&k) {
            continue;
        }
        // Uniform lists follow a changed L or N.
        if let Some(Value::Array(a)) = obj.get_mut(k) {
            if a.len() != len && !a.is_empty() && a.iter().all(|x| *x == a[0]) {
                *a = vec![a[0].clone(); len];
            }
        }
    }
    let q: ModelParams = serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
    q.validate()?;
    Ok(q)
}

/// Configuration file (or `default`) with overrides applied.
pub fn resolve_config(common: &Common, default: ModelParams) -> Result<ModelParams> {
    let base = match &common.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => default,
    };
    apply_overrides(&base, &common.set)
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    subcommand: &'static str,
    seed: u64,
    config: &'a ModelParams,
    config_sha256: String,
    options: Value,
    outputs: &'a [OutputRecord],
}

fn finish(out: &mut Outputs, sub: &'static str, common: &Common, config: &ModelParams, options: Value) -> Result<()> {
    let config_sha256 = sha256_hex(&serde_json::to_vec(config)?);
    let files = out.files().to_vec();
    let m = Manifest {
        tool: "spincavity",
        version: env!("CARGO_PKG_VERSION"),
        subcommand: sub,
        seed: common.seed,
        config,
        config_sha256,
        options,
        outputs: &files,
    };
    out.json("manifest.json", &m)
}

fn check_grid(t_max: f64, dt: f64) -> Result<Vec<f64>> {
    if !dt.is_finite() || dt <= 0.0 || !t_max.is_finite() || t_max < 0.0 {
        return Err(Error::Param(format!("need dt > 0 and t_max >= 0, got dt = {dt}, t_max = {t_max}")));
    }
    Ok(time_grid(t_max, dt))
}

fn stride(dt: f64, out_dt: f64) -> usize {
    ((out_dt / dt).round() as usize).max(1)
}

fn heatmap_rows(scan: &[ScanPoint], every: usize) -> Vec<Vec<String>> {
    scan.iter()
        .flat_map(|pt| {
            pt.trace.times.iter().zip(&pt.trace.c).step_by(every).map(move |(t, c)| vec![num(pt.x), num(*t), num(*c)])
        })
        .collect()
}

fn heatmap(scan: &[ScanPoint], title: &str, y_label: &str) -> Heatmap {
    let n = scan.first().map_or(0, |p| p.trace.times.len());
    let every = n.div_ceil(HEATMAP_MAX_COLUMNS).max(1);
    let x: Vec<f64> = scan.first().map_or(vec![], |p| p.trace.times.iter().step_by(every).copied().collect());
    Heatmap {
        title: title.into(),
        x_label: "Jt".into(),
        y_label: y_label.into(),
        x,
        y: scan.iter().map(|p| p.x).collect(),
        z: scan.iter().map(|p| p.trace.c.iter().step_by(every).copied().collect()).collect(),
    }
}

fn summary_rows(scan: &[ScanPoint]) -> Vec<Vec<String>> {
    scan.iter().map(|p| vec![num(p.x), num(p.trace.c_max), num(p.trace.t_max)]).collect()
}

fn default_pair(l: usize, pos: &[usize], phi: f64) -> ModelParams {
    ModelParams::uniform(l, pos, 0.1, phi)
}

/// Outcome of a successful run: the process exit code.
pub type Outcome = i32;

pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Parity(a) => cmd_parity(&a),
        Command::Chirality(a) => cmd_chirality(&a),
        Command::Driving(a) => cmd_driving(&a),
        Command::Disorder(a) => cmd_disorder(&a),
        Command::Optimize(a) => cmd_optimize(&a),
        Command::Trotter(a) => cmd_trotter(&a),
        Command::Oracle(a) => cmd_oracle(&a),
        Command::Replay(a) => cmd_replay(&a),
    }
}

pub fn cmd_parity(a: &ParityArgs) -> Result<Outcome> {
    let p = resolve_config(&a.common, default_pair(10, &[2, 8], FRAC_PI_4))?;
    if a.l_min > a.l_max {
        return Err(Error::Param(format!("empty L range {}..={}", a.l_min, a.l_max)));
    }
    let ls: Vec<usize> = (a.l_min..=a.l_max).collect();
    let times = check_grid(a.t_max, a.dt)?;
    let scan = parity_scan(&ls, p.g_left[0], p.phi[0], p.j_c[0], &times, a.common.jobs)?;
    let mut out = Outputs::new(&a.common.out)?;
    out.csv("parity_heatmap.csv", &header(&["L", "Jt", "C"]), heatmap_rows(&scan, stride(a.dt, a.heatmap_dt)))?;
    out.csv("parity_summary.csv", &header(&["L", "C_m", "Jt_m"]), summary_rows(&scan))?;
    out.svg("parity.svg", heatmap(&scan, "Concurrence vs time and cavity length", "L").to_svg())?;
    finish(&mut out, "parity", &a.common, &p, serde_json::to_value(a)?)?;
    Ok(0)
}

/// `lo, lo + step, ..` up to `hi`, rounded to 12 decimals.
fn stepped(what: &str, lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !step.is_finite() || step <= 0.0 || hi < lo {
        return Err(Error::Param(format!("need {what}_step > 0 and {what}_max >= {what}_min")));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| ((lo + k as f64 * step) * 1e12).round() / 1e12).collect())
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
    }
}

pub fn cmd_chirality(a: &ChiralityArgs) -> Result<Outcome> {
    let p = resolve_config(&a.common, default_pair(6, &[2, 5], 0.0))?;
    let phis = linspace(a.phi_min, a.phi_max, a.phi_points);
    let times = check_grid(a.t_max, a.dt)?;
    let scan = chirality_scan(&p, &phis, &times, a.common.jobs)?;
    let t_at = |phi: f64| scan.iter().find(|s| (s.x - phi).abs() < 1e-9).map(|s| s.trace.t_max);
    let ratio = match (t_at(FRAC_PI_4), t_at(0.0)) {
        (Some(a), Some(b)) if b > 0.0 => Some(a / b),
        _ => None,
    };
    let mut out = Outputs::new(&a.common.out)?;
    out.csv("chirality_heatmap.csv", &header(&["phi", "Jt", "C"]), heatmap_rows(&scan, stride(a.dt, a.heatmap_dt)))?;
    out.csv("chirality_summary.csv", &header(&["phi", "C_m", "Jt_m"]), summary_rows(&scan))?;
    out.json(
        "chirality_checks.json",
        &json!({ "t_m_ratio_pi4_over_0": ratio, "mirror_asymmetry_about_pi4": mirror_asymmetry(&scan) }),
    )?;
    out.svg("chirality.svg", heatmap(&scan, "Concurrence vs time and hopping phase", "phi").to_svg())?;
    finish(&mut out, "chirality", &a.common, &p, serde_json::to_value(a)?)?;
    Ok(0)
}

pub fn cmd_driving(a: &DrivingArgs) -> Result<Outcome> {
    let p = resolve_config(&a.common, default_pair(10, &[2, 8], FRAC_PI_4))?;
    let omegas = stepped("omega", a.omega_min, a.omega_max, a.omega_step)?;
    let times = check_grid(a.t_max, a.dt)?;
    let scan = driving_scan(&p, &omegas, &times, a.common.jobs)?;
    let delta = p.delta_c.iter().sum::<f64>() / p.l as f64;
    let dips = dip_strengths(p.l, p.j_c[0], delta)?;
    let ys: Vec<f64> = scan.iter().map(|d| d.c_m).collect();
    let minima = local_minima(&omegas, &ys);
    let mut out = Outputs::new(&a.common.out)?;
    out.csv(
        "driving.csv",
        &header(&["Omega", "C_m", "Jt_m"]),
        scan.iter().map(|d| vec![num(d.omega), num(d.c_m), num(d.t_m)]),
    )?;
    out.csv(
        "driving_dips.csv",
        &header(&["k", "Omega_k"]),
        dips.iter().map(|d| vec![d.k.to_string(), num(d.omega_k)]),
    )?;
    out.csv("driving_minima.csv", &header(&["Omega"]), minima.iter().map(|&m| vec![num(m)]))?;
    let plot = LinePlot {
        title: "Peak concurrence vs driving".into(),
        x_label: "Omega/J".into(),
        y_label: "C_m".into(),
        series: vec![Series::line("C_m", scan.iter().map(|d| (d.omega, d.c_m)).collect())],
        verticals: dips.iter().map(|d| d.omega_k).filter(|w| *w >= a.omega_min && *w <= a.omega_max).collect(),
    };
    out.svg("driving.svg", plot.to_svg())?;
    finish(&mut out, "driving", &a.common, &p, serde_json::to_value(a)?)?;
    Ok(0)
}

fn realization_rows(e: &crate::disorder::EnsembleResult) -> Vec<Vec<String>> {
    e.realizations
        .iter()
        .map(|r| vec![r.id.to_string(), e.spec.seed.to_string(), num(r.w), num(r.c_m), num(r.t_m), num(r.ipr_mean)])
        .collect()
}

const REALIZATION_HEADER: [&str; 6] = ["realization_id", "seed", "W", "C_m", "Jt_m", "ipr_mean"];

pub fn cmd_disorder(a: &DisorderArgs) -> Result<Outcome> {
    let p = resolve_config(&a.common, default_pair(10, &[2, 8], FRAC_PI_4))?;
    let times = check_grid(a.t_max, a.dt)?;
    let mut out = Outputs::new(&a.common.out)?;
    let mut summary = Vec::new();
    let mut means = Vec::new();
    for &w in &a.widths {
        let spec = DisorderSpec::new(w, a.realizations, a.common.seed);
        let e = run_ensemble(&p, &spec, &times, a.common.jobs)?;
        let tag = num(w);
        out.csv(&format!("disorder_W{tag}.csv"), &header(&REALIZATION_HEADER), realization_rows(&e))?;
        let deltas: Vec<Value> =
            e.realizations.iter().map(|r| json!({"realization_id": r.id, "delta_c": r.delta_c})).collect();
        out.json(&format!("disorder_W{tag}_delta_c.json"), &deltas)?;
        let hist = ipr_energy_histogram(&p, &spec, a.bins, a.common.jobs)?;
        out.csv(
            &format!("ipr_hist_W{tag}.csv"),
            &header(&["energy_lo", "energy_hi", "count", "ipr_mean", "ipr_min", "ipr_max"]),
            hist.bins.iter().map(|b| {
                let some = b.count > 0;
                vec![
                    num(b.e_lo),
                    num(b.e_hi),
                    b.count.to_string(),
                    opt_num(some.then_some(b.mean)),
                    opt_num(some.then_some(b.min)),
                    opt_num(some.then_some(b.max)),
                ]
            }),
        )?;
        summary.push(vec![tag, num(e.c_bar_max), num(e.mean_c_m), e.realizations.len().to_string()]);
        means.push((w, e.mean_trace));
    }
    out.csv("disorder_summary.csv", &header(&["W", "C_bar_max", "mean_C_m", "n_realizations"]), summary)?;
    let mut cols = vec!["Jt".to_string()];
    cols.extend(means.iter().map(|(w, _)| format!("C_bar_W{}", num(*w))));
    out.csv(
        "disorder_mean_traces.csv",
        &cols,
        times.iter().enumerate().map(|(k, t)| {
            let mut r = vec![num(*t)];
            r.extend(means.iter().map(|(_, m)| num(m[k])));
            r
        }),
    )?;
    let mut plot = LinePlot {
        title: "Ensemble-averaged concurrence".into(),
        x_label: "Jt".into(),
        y_label: "mean C".into(),
        series: means
            .iter()
            .map(|(w, m)| {
                Series::line(format!("W={}", num(*w)), times.iter().copied().zip(m.iter().copied()).collect())
            })
            .collect(),
        verticals: vec![],
    };
    out.svg("disorder_mean.svg", plot.to_svg())?;
    let mut checks = json!({});
    if a.mixed > 0 {
        let spec =
            DisorderSpec { mixed_w: true, ..DisorderSpec::new(a.mixed_max_w, a.mixed, a.common.seed.wrapping_add(1)) };
        let e = run_ensemble(&p, &spec, &times, a.common.jobs)?;
        out.csv("disorder_mixed.csv", &header(&REALIZATION_HEADER), realization_rows(&e))?;
        let cm: Vec<f64> = e.realizations.iter().map(|r| r.c_m).collect();
        let ip: Vec<f64> = e.realizations.iter().map(|r| r.ipr_mean).collect();
        let split = |low: bool| {
            let v: Vec<f64> = e.realizations.iter().filter(|r| (r.ipr_mean < 0.35) == low).map(|r| r.c_m).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        checks = json!({
            "spearman_C_m_vs_ipr": spearman(&cm, &ip).ok(),
            "mean_C_m_ipr_below_0.35": split(true),
            "mean_C_m_ipr_above_0.35": split(false),
        });
        plot = LinePlot {
            title: "Peak concurrence vs mean IPR".into(),
            x_label: "mean IPR".into(),
            y_label: "C_m".into(),
            series: vec![Series::dots("realizations", ip.into_iter().zip(cm).collect())],
            verticals: vec![0.35],
        };
        out.svg("disorder_scatter.svg", plot.to_svg())?;
    }
    out.json("disorder_checks.json", &checks)?;
    finish(&mut out, "disorder", &a.common, &p, serde_json::to_value(a)?)?;
    Ok(0)
}

fn trace_rows(p: &ModelParams, times: &[f64]) -> Result<Vec<Vec<String>>> {
    let d = pair_dynamics(p, times, DEFAULT_PEAK_TOL)?;
    Ok((0..times.len()).map(|k| vec![num(times[k]), num(d.trace.c[k]), num(d.r1[k]), num(d.r2[k])]).collect())
}

pub fn cmd_optimize(a: &OptimizeArgs) -> Result<Outcome> {
    let p = resolve_config(&a.common, default_pair(10, &[2, 8], FRAC_PI_4))?;
    let mode: Mode = a.mode.into();
    let spec0 = ObjectiveSpec::neutral(mode, a.r, a.tf, &p);
    let rep = optimize(&spec0, &p, a.budget, a.restarts, a.common.seed, a.common.jobs)?;
    let mut out = Outputs::new(&a.common.out)?;
    let times = time_grid(a.tf, OBJECTIVE_DT);
    out.csv("optimize_trace.csv", &header(&["Jt", "C", "r1", "r2"]), trace_rows(&rep.params, &times)?)?;
    out.csv(
        "optimize_history.csv",
        &header(&["evaluation", "best_C_m"]),
        rep.history.iter().map(|(k, v)| vec![k.to_string(), num(*v)]),
    )?;
    let groups: &[ParamGroup] = match mode {
        Mode::Onsite => &[ParamGroup::LargestOnsite, ParamGroup::AllOnsite],
        Mode::Hopping => &[ParamGroup::Hoppings, ParamGroup::Couplings, ParamGroup::HoppingsAndCouplings],
    };
    let scales = stepped("sweep", a.sweep_min, a.sweep_max, a.sweep_step)?;
    let mut sweep = Vec::new();
    for &g in groups {
        let name = serde_json::to_value(g)?.as_str().unwrap_or_default().to_string();
        for row in tolerance_sweep(&rep.params, g, &scales, a.tf, a.common.jobs)? {
            sweep.push(vec![name.clone(), num(row.scale), num(row.c_m)]);
        }
    }
    out.csv("optimize_sweep.csv", &header(&["group", "scale", "C_m"]), sweep)?;
    let dissipative = match a.gamma {
        Some(gamma) => {
            let r = replay_with_dissipation(
                &rep.params,
                &DissipationParams::uniform(&rep.params, gamma),
                &times,
                DissipationSolver::Auto,
            )?;
            out.csv(
                "optimize_dissipative.csv",
                &header(&["Jt", "C"]),
                times.iter().zip(&r.trace.c).map(|(t, c)| vec![num(*t), num(*c)]),
            )?;
            Some(json!({ "gamma": gamma, "solver": r.solver, "C_m": r.trace.c_max, "Jt_m": r.trace.t_max }))
        }
        None => None,
    };
    out.json("optimize_report.json", &json!({ "report": rep, "dissipative": dissipative }))?;
    let plot = LinePlot {
        title: format!("Optimised concurrence ({:?}, r = {}, Jt_f = {})", mode, a.r, a.tf),
        x_label: "Jt".into(),
        y_label: "C".into(),
        series: vec![Series::line(
            "C",
            trace_rows(&rep.params, &times)?.iter().map(|r| (r[0].parse().unwrap(), r[1].parse().unwrap())).collect(),
        )],
        verticals: vec![],
    };
    out.svg("optimize.svg", plot.to_svg())?;
    finish(&mut out, "optimize", &a.common, &p, serde_json::to_value(a)?)?;
    if rep.budget_exhausted {
        eprintln!("warning: evaluation budget exhausted; best point found is reported");
        return Ok(EXIT_BUDGET);
    }
    Ok(0)
}

pub fn cmd_trotter(a: &TrotterArgs) -> Result<Outcome> {
    let p = resolve_config(&a.common, default_pair(6, &[2, 5], 0.0))?;
    if a.dts.is_empty() || a.phis.is_empty() {
        return Err(Error::Param("need at least one phase and one step size".into()));
    }
    let mut out = Outputs::new(&a.common.out)?;
    let mut summaries = Vec::new();
    let mut scaling = Vec::new();
    let mut plot = LinePlot {
        title: "Trotterized vs exact concurrence".into(),
        x_label: "Jt".into(),
        y_label: "C".into(),
        ..Default::default()
    };
    for (k, &phi) in a.phis.iter().enumerate() {
        let q = p.clone().with_phi(phi);
        q.validate()?;
        let cmp = trotter_vs_exact(&q, &a.dts, a.t_final, a.exact_dt)?;
        let mut cols = header(&["Jt", "C_exact"]);
        cols.extend(a.dts.iter().map(|d| format!("C_trotter_dt{}", num(*d))));
        out.csv(
            &format!("trotter_phi{k}.csv"),
            &cols,
            cmp.rows().into_iter().map(|r| r.into_iter().map(opt_num).collect()),
        )?;
        out.write(&format!("trotter_step_phi{k}.txt"), trotter_step(&q, a.dts[0])?.to_text().as_bytes())?;
        plot.series.push(Series::line(
            format!("exact phi={phi:.3}"),
            cmp.exact.times.iter().copied().zip(cmp.exact.c.iter().copied()).collect(),
        ));
        for tr in &cmp.trotter {
            plot.series.push(Series::line(
                format!("dt={} phi={phi:.3}", num(tr.dt)),
                tr.trace.times.iter().copied().zip(tr.trace.c.iter().copied()).collect(),
            ));
        }
        let sc = error_scaling(&q, &a.scaling_dts, a.scaling_t)?;
        for (i, dt) in sc.dts.iter().enumerate() {
            scaling.push(vec![num(phi), num(*dt), num(sc.state_errors[i]), num(sc.concurrence_errors[i])]);
        }
        let per_dt: Vec<Value> = cmp
            .trotter
            .iter()
            .map(|t| {
                json!({
                    "dt": t.dt,
                    "steps": t.steps,
                    "C_m": t.trace.c_max,
                    "Jt_m": t.trace.t_max,
                    "max_abs_error": t.max_abs_error,
                    "layers_per_step": t.layers_per_step,
                    "two_qubit_layers_per_step": t.two_qubit_layers_per_step,
                    "step_duration_us": t.step_duration_ns / 1000.0,
                    "total_duration_us": t.total_duration_ns / 1000.0,
                    "within_coherence_window": t.total_duration_ns / 1000.0 <= COHERENCE_WINDOW_US[1],
                })
            })
            .collect();
        summaries.push(json!({
            "phi": phi,
            "exact": { "C_m": cmp.exact.c_max, "Jt_m": cmp.exact.t_max },
            "trotter": per_dt,
            "error_scaling": sc,
        }));
    }
    out.csv("trotter_scaling.csv", &header(&["phi", "dt", "state_error", "concurrence_error"]), scaling)?;
    out.json("trotter_summary.json", &json!({ "coherence_window_us": COHERENCE_WINDOW_US, "runs": summaries }))?;
    out.svg("trotter.svg", plot.to_svg())?;
    finish(&mut out, "trotter", &a.common, &p, serde_json::to_value(a)?)?;
    Ok(0)
}

pub fn cmd_oracle(a: &OracleArgs) -> Result<Outcome> {
    let p = resolve_config(&a.common, default_pair(10, &[2, 8], FRAC_PI_4))?;
    let model = effective_model(&p)?;
    if let Some(w) = &model.warning {
        eprintln!("warning: {w}");
    }
    let g = p.g_left[0];
    let t_max = a.t_max.unwrap_or(std::f64::consts::PI * p.j_c[0] / (2.0 * g * g));
    let route = match a.route {
        RouteArg::Analytic => EffectiveRoute::Analytic,
        RouteArg::Numeric => EffectiveRoute::Numeric,
    };
    let cmp = compare_full_effective(&p, &check_grid(t_max, a.dt)?, route)?;
    let mut out = Outputs::new(&a.common.out)?;
    out.csv(
        "oracle.csv",
        &header(&["Jt", "C_full", "C_eff", "abs_diff"]),
        cmp.rows().iter().map(|r| r.iter().map(|v| num(*v)).collect()),
    )?;
    let h: Vec<Vec<[f64; 2]>> = (0..model.h_eff.nrows())
        .map(|i| (0..model.h_eff.ncols()).map(|j| [model.h_eff[(i, j)].re, model.h_eff[(i, j)].im]).collect())
        .collect();
    out.json(
        "oracle_summary.json",
        &json!({ "case": cmp.case, "max_abs_diff": cmp.max_abs_diff, "h_eff_re_im": h, "warning": model.warning }),
    )?;
    let plot = LinePlot {
        title: "Full vs effective concurrence".into(),
        x_label: "Jt".into(),
        y_label: "C".into(),
        series: vec![
            Series::line("full", cmp.full.times.iter().copied().zip(cmp.full.c.iter().copied()).collect()),
            Series::line(
                "effective",
                cmp.effective.times.iter().copied().zip(cmp.effective.c.iter().copied()).collect(),
            ),
        ],
        verticals: vec![],
    };
    out.svg("oracle.svg", plot.to_svg())?;
    finish(&mut out, "oracle", &a.common, &p, serde_json::to_value(a)?)?;
    Ok(0)
}

pub fn cmd_replay(a: &ReplayArgs) -> Result<Outcome> {
    let read = |path: &PathBuf| {
        fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
    };
    let mut out = Outputs::new(&a.common.out)?;
    let p;
    match (&a.table, &a.realization) {
        (Some(path), None) => {
            let table = OptimalTable::from_json(&read(path)?)?;
            let tf = a.tf.ok_or_else(|| Error::Config("--tf selects the table row".into()))?;
            p = apply_overrides(&table.params(table.row(tf)?)?, &a.common.set)?;
            let (c_m, t_m) = peak_within(&p, tf)?;
            let times = time_grid(tf, OBJECTIVE_DT);
            out.csv("replay_trace.csv", &header(&["Jt", "C", "r1", "r2"]), trace_rows(&p, &times)?)?;
            let dissipative = match a.gamma {
                Some(gamma) => {
                    let r = replay_with_dissipation(
                        &p,
                        &DissipationParams::uniform(&p, gamma),
                        &times,
                        DissipationSolver::Auto,
                    )?;
                    Some(json!({ "gamma": gamma, "solver": r.solver, "C_m": r.trace.c_max, "Jt_m": r.trace.t_max }))
                }
                None => None,
            };
            out.json("replay.json", &json!({ "source": "table", "mode": table.mode, "t_f": tf, "C_m": c_m, "Jt_m": t_m, "dissipative": dissipative }))?;
        }
        (None, Some(path)) => {
            let fix = RealizationFixture::from_json(&read(path)?)?;
            let mut base = fix.base();
            base.delta_c = fix.delta_c.clone();
            p = apply_overrides(&base, &a.common.set)?;
            let times = check_grid(a.t_max, a.dt)?;
            let r = replay_realization(&p.delta_c, &p, &times)?;
            out.csv(
                "replay_trace.csv",
                &header(&["Jt", "C", "r1", "r2"]),
                (0..times.len()).map(|k| vec![num(times[k]), num(r.trace.c[k]), num(r.r1[k]), num(r.r2[k])]),
            )?;
            out.json(
                "replay.json",
                &json!({ "source": "realization", "W": fix.w, "C_max": r.trace.c_max, "Jt_max": r.trace.t_max, "ipr_mean": r.ipr_mean }),
            )?;
        }
        _ => return Err(Error::Config("give exactly one of --table or --realization".into())),
    }
    finish(&mut out, "replay", &a.common, &p, serde_json::to_value(a)?)?;
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn common(sets: &[&str]) -> Common {
        Common {
            config: None,
            out: PathBuf::from("out"),
            seed: 0,
            jobs: 1,
            set: sets.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn overrides_broadcast_and_reject_unknown_keys() {
        let base = ModelParams::uniform(6, &[2, 5], 0.1, 0.0);
        let p = resolve_config(&common(&["phi=0.5", "J_c=[1,1,2,1,1]"]), base.clone()).unwrap();
        assert_eq!(p.phi, vec![0.5, 0.5]);
        assert_eq!(p.j_c[2], 2.0);
        assert!(matches!(resolve_config(&common(&["bogus=1"]), base.clone()), Err(Error::Config(_))));
        assert!(matches!(resolve_config(&common(&["phi"]), base.clone()), Err(Error::Config(_))));
        assert!(resolve_config(&common(&["phi=3"]), base.clone()).is_err());
        let q = resolve_config(&common(&["L=8", "pos=[2,6]"]), base).unwrap();
        assert_eq!((q.delta_c.len(), q.j_c.len()), (8, 7));
    }

    #[test]
    fn missing_config_is_a_config_error() {
        let mut c = common(&[]);
        c.config = Some(PathBuf::from("/nonexistent/config.json"));
        let e = resolve_config(&c, ModelParams::uniform(6, &[2, 5], 0.1, 0.0)).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn hashes_and_number_format() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
        assert_eq!(num(0.1), "0.1");
        assert_eq!(num(5.0), "5");
        assert_eq!(linspace(0.0, 1.0, 3), vec![0.0, 0.5, 1.0]);
        assert_eq!(linspace(0.3, 1.0, 1), vec![0.3]);
        assert_eq!(stepped("w", 0.01, 0.05, 0.01).unwrap(), vec![0.01, 0.02, 0.03, 0.04, 0.05]);
        assert!(stepped("w", 1.0, 0.5, 0.1).is_err());
    }
}
