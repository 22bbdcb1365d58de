//! Experiment runner behind the `vfdiff` binary.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, GroundCost, TimeConfig};
use crate::grid::TimeGrid;
use crate::metrics::{fit_growth, stability_ladder, GrowthFit, StabilityError, StabilityReport};
use crate::plot::{histogram, line_plot, Series};
use crate::qoi::{write_qoi_csv, QoIRecord};
use crate::solver::{HypothesisViolation, SolverError, Validation};
use crate::stochastic::{monte_carlo_qoi, StochasticError};
use crate::transport::{
    gluing_bound_check, nested_distance, power_cost, wasserstein_1d, wasserstein_discrete, GluingConfig, LpPathCost,
    ParameterPathCost, PathCost, TransportError,
};

pub const THREADS_ENV: &str = "VFDIFF_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Qoi,
    Stability,
    Mc,
    Wasserstein,
    Nested,
    Glue,
    Check,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Qoi => "qoi",
            Command::Stability => "stability",
            Command::Mc => "mc",
            Command::Wasserstein => "wasserstein",
            Command::Nested => "nested",
            Command::Glue => "glue",
            Command::Check => "check",
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Config { path: PathBuf, source: ConfigError },
    #[error(transparent)]
    Hypothesis(#[from] HypothesisViolation),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Stability(#[from] StabilityError),
    #[error(transparent)]
    Stochastic(#[from] StochasticError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("{0}")]
    Usage(String),
    #[error("cannot build thread pool: {0}")]
    Threads(String),
}

impl CliError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Usage(_) => 2,
            CliError::Hypothesis(_) => 3,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOptions {
    pub config: PathBuf,
    pub out: PathBuf,
    /// Worker cap; falls back to the config's `threads`, then to rayon's default.
    pub threads: Option<usize>,
    pub plot: bool,
}

#[derive(Serialize)]
struct OutputEntry {
    file: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config_file: String,
    config_sha256: String,
    seed: u64,
    outputs: Vec<OutputEntry>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

struct Outputs {
    dir: PathBuf,
    written: Vec<OutputEntry>,
    plot: bool,
}

impl Outputs {
    fn io_err(&self, name: &str) -> impl FnOnce(io::Error) -> CliError {
        let path = self.dir.join(name);
        move |source| CliError::Io { path, source }
    }

    fn write(&mut self, name: &str, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), CliError> {
        let mut buf = Vec::new();
        f(&mut buf).map_err(self.io_err(name))?;
        fs::write(self.dir.join(name), &buf).map_err(self.io_err(name))?;
        self.written.push(OutputEntry { file: name.to_string(), sha256: sha256_hex(&buf) });
        Ok(())
    }

    fn svg(&mut self, name: &str, content: impl FnOnce() -> String) -> Result<(), CliError> {
        if self.plot {
            let s = content();
            self.write(name, |w| w.write_all(s.as_bytes()))?;
        }
        Ok(())
    }
}

/// Runs one subcommand, writing its outputs and `manifest.json` into
/// `opts.out`. Returns a short human-readable summary.
pub fn run(command: Command, opts: &RunOptions) -> Result<String, CliError> {
    let text = fs::read(&opts.config).map_err(|source| CliError::Io { path: opts.config.clone(), source })?;
    let cfg = std::str::from_utf8(&text)
        .map_err(|e| CliError::Usage(format!("{}: not UTF-8: {e}", opts.config.display())))
        .and_then(|s| ExperimentConfig::from_toml(s).map_err(|source| CliError::Config { path: opts.config.clone(), source }))?;
    fs::create_dir_all(&opts.out).map_err(|source| CliError::Io { path: opts.out.clone(), source })?;

    let threads = opts.threads.or(cfg.threads);
    let mut out = Outputs { dir: opts.out.clone(), written: Vec::new(), plot: opts.plot };
    let summary = match threads {
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(k).build().map_err(|e| CliError::Threads(e.to_string()))?;
            pool.install(|| dispatch(command, &cfg, &opts.config, &mut out))?
        }
        None => dispatch(command, &cfg, &opts.config, &mut out)?,
    };

    let manifest = Manifest {
        command: command.name(),
        version: env!("CARGO_PKG_VERSION"),
        config_file: opts.config.file_name().map_or(String::new(), |n| n.to_string_lossy().into_owned()),
        config_sha256: sha256_hex(&text),
        seed: cfg.seed,
        outputs: std::mem::take(&mut out.written),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let path = opts.out.join("manifest.json");
    fs::write(&path, json + "\n").map_err(|source| CliError::Io { path, source })?;
    Ok(summary)
}

fn config_err(path: &Path) -> impl Fn(ConfigError) -> CliError + '_ {
    move |source| CliError::Config { path: path.to_path_buf(), source }
}

fn dispatch(command: Command, cfg: &ExperimentConfig, path: &Path, out: &mut Outputs) -> Result<String, CliError> {
    match command {
        Command::Solve => solve(cfg, path, out),
        Command::Qoi => qoi(cfg, path, out),
        Command::Stability => stability(cfg, path, out),
        Command::Mc => mc(cfg, path, out),
        Command::Wasserstein => wasserstein(cfg, path, out),
        Command::Nested => nested(cfg, path, out),
        Command::Glue => glue(cfg, path, out),
        Command::Check => check(cfg, path, out),
    }
}

fn check(cfg: &ExperimentConfig, path: &Path, out: &mut Outputs) -> Result<String, CliError> {
    let ce = config_err(path);
    let grid = cfg.build_grid().map_err(&ce)?;
    cfg.build_time_grid().map_err(&ce)?;
    let notes = cfg.build_problem(&grid).map_err(&ce)?.validate(&grid, Validation::Strict)?;
    if cfg.random.is_some() {
        cfg.build_model().map_err(&ce)?;
    }
    if cfg.compare.is_some() {
        cfg.build_compare_model().map_err(&ce)?;
    }
    out.write("check.txt", |w| {
        writeln!(w, "ok")?;
        for n in &notes {
            writeln!(w, "{n}")?;
        }
        Ok(())
    })?;
    Ok(format!("all hypotheses hold ({} notes)", notes.len()))
}

fn solve(cfg: &ExperimentConfig, path: &Path, out: &mut Outputs) -> Result<String, CliError> {
    let ce = config_err(path);
    let grid = cfg.build_grid().map_err(&ce)?;
    let tg = cfg.build_time_grid().map_err(&ce)?;
    let u = cfg.build_problem(&grid).map_err(&ce)?.solve(&grid, &tg, &cfg.solver_options())?;
    out.write("trajectory.csv", |w| u.write_trajectory_csv(BufWriter::new(w)))?;
    out.write("flux.csv", |w| u.write_flux_csv(BufWriter::new(w)))?;
    let last = u.num_levels() - 1;
    out.svg("mass.svg", || {
        let pts = (0..=last).map(|k| (tg.time(k), u.mass(k))).collect();
        line_plot("mass", "t", "mass", &[Series { label: "mass", points: pts }])
    })?;
    out.svg("profile.svg", || {
        let x = |c: usize| if grid.dim() == 1 { grid.cell_center(c)[0] } else { c as f64 };
        let series = [0, last]
            .iter()
            .map(|&k| (k, (0..grid.num_cells()).map(|c| (x(c), u.level(k)[c])).collect::<Vec<_>>()))
            .collect::<Vec<_>>();
        let labels = ["t = 0".to_string(), format!("t = {}", tg.t_final())];
        let s: Vec<Series> = series.into_iter().zip(&labels).map(|((_, p), l)| Series { label: l, points: p }).collect();
        line_plot("u", if grid.dim() == 1 { "x" } else { "cell" }, "u", &s)
    })?;
    Ok(format!(
        "solved {} steps: mass {} -> {}, u in [{}, {}]",
        tg.num_steps(),
        u.mass(0),
        u.mass(last),
        u.min_value(),
        u.max_value()
    ))
}

fn qoi(cfg: &ExperimentConfig, path: &Path, out: &mut Outputs) -> Result<String, CliError> {
    let ce = config_err(path);
    let grid = cfg.build_grid().map_err(&ce)?;
    let tg = cfg.build_time_grid().map_err(&ce)?;
    let specs = cfg.build_qois(&grid, &tg).map_err(&ce)?;
    if specs.is_empty() {
        return Err(CliError::Config { path: path.to_path_buf(), source: ConfigError::Missing("qoi") });
    }
    let u = cfg.build_problem(&grid).map_err(&ce)?.solve(&grid, &tg, &cfg.solver_options())?;
    let hash = sha256_hex(cfg.params_toml().as_bytes());
    let rows = specs
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let value = q.evaluate(&u).map_err(|e| CliError::Usage(format!("qoi[{i}]: {e}")))?;
            Ok(QoIRecord { run_id: format!("base-{i}"), qoi_kind: q.kind.label().into(), params_hash: hash[..16].into(), value })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    out.write("qoi.csv", |w| write_qoi_csv(w, &rows))?;
    Ok(rows.iter().map(|r| format!("{} = {}", r.qoi_kind, r.value)).collect::<Vec<_>>().join(", "))
}

/// Time grid with horizon `t` and the configured step size and stage count.
fn horizon_grid(time: &TimeConfig, t: f64) -> Result<TimeGrid, ConfigError> {
    let stages = time.stages.max(1);
    let per_stage = (time.steps as f64 * t / time.t_final / stages as f64).round().max(1.0) as usize;
    let steps = per_stage * stages;
    TimeGrid::with_equal_stages(t, steps, time.stages)
        .map_err(|e| ConfigError::Invalid { field: "stability.horizons".into(), message: e.to_string() })
}

fn growth(cfg: &ExperimentConfig, path: &Path) -> Result<(Vec<(f64, StabilityReport)>, Option<GrowthFit>), CliError> {
    let ce = config_err(path);
    let s = cfg.stability.as_ref().ok_or(ConfigError::Missing("stability")).map_err(&ce)?;
    let grid = cfg.build_grid().map_err(&ce)?;
    let base = cfg.build_problem(&grid).map_err(&ce)?;
    let delta = cfg.build_perturbation(&grid).map_err(&ce)?;
    let mut reports = Vec::new();
    for &t in &s.horizons {
        let tg = horizon_grid(&cfg.time, t).map_err(&ce)?;
        reports.push((t, stability_ladder(&base, &delta, &grid, &tg, &cfg.solver_options(), &s.scales)?));
    }
    let horizons: Vec<f64> = reports.iter().map(|r| r.0).collect();
    let ratios: Vec<f64> = reports.iter().map(|r| r.1.bound_constant).collect();
    Ok((reports, fit_growth(&horizons, &ratios)))
}

fn stability(cfg: &ExperimentConfig, path: &Path, out: &mut Outputs) -> Result<String, CliError> {
    let ce = config_err(path);
    let s = cfg.stability.as_ref().ok_or(ConfigError::Missing("stability")).map_err(&ce)?;
    let grid = cfg.build_grid().map_err(&ce)?;
    let tg = cfg.build_time_grid().map_err(&ce)?;
    let base = cfg.build_problem(&grid).map_err(&ce)?;
    let delta = cfg.build_perturbation(&grid).map_err(&ce)?;
    let report = stability_ladder(&base, &delta, &grid, &tg, &cfg.solver_options(), &s.scales)?;
    out.write("stability.csv", |w| report.write_csv(w))?;
    out.svg("stability.svg", || {
        let pts = report.perturbation_ladder.iter().map(|e| (e.scale, e.ratio)).collect();
        line_plot("stability ratio", "scale", "ratio", &[Series { label: "ratio", points: pts }])
    })?;
    let mut summary = format!("L_S = {} (spread {})", report.bound_constant, report.spread());
    if !s.horizons.is_empty() {
        let (reports, fit) = growth(cfg, path)?;
        out.write("growth.csv", |w| {
            writeln!(w, "horizon,bound_constant,spread")?;
            for (t, r) in &reports {
                writeln!(w, "{t},{},{}", r.bound_constant, r.spread())?;
            }
            Ok(())
        })?;
        if let Some(f) = fit {
            out.write("growth_fit.csv", |w| writeln!(w, "c1,c2\n{},{}", f.c1, f.c2))?;
            summary.push_str(&format!(", growth c1 = {}, c2 = {}", f.c1, f.c2));
        }
        out.svg("growth.svg", || {
            let pts = reports.iter().map(|(t, r)| (*t, r.bound_constant)).collect();
            line_plot("largest ratio per horizon", "T", "ratio", &[Series { label: "L_S(T)", points: pts }])
        })?;
    }
    Ok(summary)
}

fn samples(cfg: &ExperimentConfig, path: &Path) -> Result<u64, CliError> {
    let mc = cfg.mc.as_ref().ok_or(ConfigError::Missing("mc")).map_err(config_err(path))?;
    Ok(mc.samples)
}

fn mc(cfg: &ExperimentConfig, path: &Path, out: &mut Outputs) -> Result<String, CliError> {
    let ce = config_err(path);
    let n = samples(cfg, path)?;
    let model = cfg.build_model().map_err(&ce)?;
    let specs = cfg.build_qois(model.grid(), model.time_grid()).map_err(&ce)?;
    if specs.is_empty() {
        return Err(CliError::Config { path: path.to_path_buf(), source: ConfigError::Missing("qoi") });
    }
    let opts = cfg.solver_options();
    let mut rows = Vec::new();
    for (i, q) in specs.iter().enumerate() {
        let dist = monte_carlo_qoi(&model, q, n, &opts)?;
        out.write(&format!("mc_{i}.csv"), |w| dist.write_csv(w))?;
        out.svg(&format!("mc_{i}.svg"), || histogram(q.kind.label(), "value", &dist.atoms, 20))?;
        let min = dist.atoms.iter().copied().fold(f64::INFINITY, f64::min);
        let max = dist.atoms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        rows.push((i, q.kind.label(), dist.mean(), dist.variance(), min, max, q.lipschitz_constant));
    }
    out.write("mc_summary.csv", |w| {
        writeln!(w, "qoi,kind,samples,mean,variance,min,max,lipschitz")?;
        for r in &rows {
            writeln!(w, "{},{},{n},{},{},{},{},{}", r.0, r.1, r.2, r.3, r.4, r.5, r.6)?;
        }
        Ok(())
    })?;
    Ok(rows.iter().map(|r| format!("{}: mean {} var {}", r.1, r.2, r.3)).collect::<Vec<_>>().join(", "))
}

fn wasserstein(cfg: &ExperimentConfig, path: &Path, out: &mut Outputs) -> Result<String, CliError> {
    let ce = config_err(path);
    let n = samples(cfg, path)?;
    let r = cfg.transport.as_ref().map_or(1.0, |t| t.r);
    let p = cfg.build_model().map_err(&ce)?;
    let q = cfg.build_compare_model().map_err(&ce)?;
    let specs = cfg.build_qois(p.grid(), p.time_grid()).map_err(&ce)?;
    if specs.is_empty() {
        return Err(CliError::Config { path: path.to_path_buf(), source: ConfigError::Missing("qoi") });
    }
    let opts = cfg.solver_options();
    let mut rows = Vec::new();
    for (i, spec) in specs.iter().enumerate() {
        let dp = monte_carlo_qoi(&p, spec, n, &opts)?;
        let dq = monte_carlo_qoi(&q, spec, n, &opts)?;
        let (d, plan) = wasserstein_discrete(&dp.weights, &dq.weights, &power_cost(&dp, &dq, r), r)?;
        let d1d = wasserstein_1d(&dp, &dq, r)?;
        out.write(&format!("plan_{i}.csv"), |w| plan.write_csv(w))?;
        rows.push((i, spec.kind.label(), d, d1d));
    }
    out.write("wasserstein.csv", |w| {
        writeln!(w, "qoi,kind,r,distance,distance_1d")?;
        for x in &rows {
            writeln!(w, "{},{},{r},{},{}", x.0, x.1, x.2, x.3)?;
        }
        Ok(())
    })?;
    Ok(rows.iter().map(|x| format!("{}: W_{r} = {}", x.1, x.2)).collect::<Vec<_>>().join(", "))
}

fn branching(cfg: &ExperimentConfig, path: &Path) -> Result<Vec<usize>, CliError> {
    let t = cfg.tree.as_ref().ok_or(ConfigError::Missing("tree")).map_err(config_err(path))?;
    Ok(t.branching.clone())
}

fn nested(cfg: &ExperimentConfig, path: &Path, out: &mut Outputs) -> Result<String, CliError> {
    let ce = config_err(path);
    let branching = branching(cfg, path)?;
    let (r, ground) = cfg.transport.as_ref().map_or((1.0, GroundCost::default()), |t| (t.r, t.ground));
    let p = cfg.build_model().map_err(&ce)?;
    let q = cfg.build_compare_model().map_err(&ce)?;
    let tp = p.build_scenario_tree(&branching)?;
    let tq = q.build_scenario_tree(&branching)?;
    let param = ParameterPathCost { left: &p, right: &q };
    let xi = LpPathCost { p: 2.0 };
    let cost: &dyn PathCost = match ground {
        GroundCost::Parameter => &param,
        GroundCost::Xi => &xi,
    };
    let res = nested_distance(&tp, &tq, r, cost)?;
    out.write("tree_p.txt", |w| w.write_all(tp.to_text().as_bytes()))?;
    out.write("tree_q.txt", |w| w.write_all(tq.to_text().as_bytes()))?;
    out.write("nested.csv", |w| {
        writeln!(w, "stage,left,right,value")?;
        for c in &res.stagewise_costs {
            writeln!(w, "{},{},{},{}", c.stage, c.left, c.right, c.value)?;
        }
        Ok(())
    })?;
    out.write("nested_summary.csv", |w| writeln!(w, "r,nested,flat_wasserstein\n{r},{},{}", res.distance, res.flat_wasserstein))?;
    Ok(format!("nd_{r} = {}, flat W_{r} = {}", res.distance, res.flat_wasserstein))
}

fn glue(cfg: &ExperimentConfig, path: &Path, out: &mut Outputs) -> Result<String, CliError> {
    let ce = config_err(path);
    let branching = branching(cfg, path)?;
    let g = cfg.glue.as_ref().ok_or(ConfigError::Missing("glue")).map_err(&ce)?;
    let p = cfg.build_model().map_err(&ce)?;
    let q = cfg.build_compare_model().map_err(&ce)?;
    let specs = cfg.build_qois(p.grid(), p.time_grid()).map_err(&ce)?;
    let spec = specs.first().ok_or(ConfigError::Missing("qoi")).map_err(&ce)?;
    let fit = match (g.c1, g.c2) {
        (Some(c1), Some(c2)) => GrowthFit { c1, c2 },
        _ => growth(cfg, path)?.1.ok_or_else(|| {
            CliError::Usage("glue needs `glue.c1` and `glue.c2`, or at least two `stability.horizons` to fit them".into())
        })?,
    };
    let gc = GluingConfig { branching, observed_stages: g.observed_stages.clone(), growth: fit, l_phi: spec.lipschitz_constant };
    let report = gluing_bound_check(&p, &q, spec, &gc, &cfg.solver_options())?;
    out.write("glue.csv", |w| report.write_csv(w))?;
    out.write("glue_summary.csv", |w| {
        let history: Vec<String> = report.history.iter().map(|x| x.to_string()).collect();
        writeln!(
            w,
            "c1,c2,l_phi,c_h,monotone,history\n{},{},{},{},{},{}",
            fit.c1,
            fit.c2,
            gc.l_phi,
            report.c_h,
            report.monotone,
            history.join(" ")
        )
    })?;
    out.svg("glue.svg", || {
        let pts = report.rows.iter().filter_map(|r| r.ratio.map(|x| (r.time, x))).collect();
        line_plot("discrepancy / nested distance", "t", "ratio", &[Series { label: "ratio", points: pts }])
    })?;
    let violations = report.rows.iter().filter(|r| !r.holds).count();
    Ok(format!("C_H = {}, monotone = {}, bound violations = {violations}", report.c_h, report.monotone))
}
