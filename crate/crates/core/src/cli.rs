//! Command-line runs: argument parsing, the pipeline behind each command
//! and the artifacts written for reproducibility.
//!
//! Every run writes into one output directory. Artifact contents depend
//! only on the inputs and options recorded in `manifest.json`; timings go
//! to the log, never to a file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::battery::{fit_default, BatteryParams};
use crate::error::{Error, Result};
use crate::evaluate::{
    compare_to_baseline, monte_carlo_validate, simulate_schedule, EvaluationReport,
    DEFAULT_VALIDATION_SAMPLES,
};
use crate::model::{assemble_deterministic, ChargingCost, McCormickConfig, ModelConfig};
use crate::robust::{
    assemble_robust, solve_robust, BudgetAudit, IdentityStats, RecourseMode, RobustConfig,
};
use crate::scenario::{load_scenario, Decision, Scenario};
use crate::solver::{solve_milp, write_lp, SolveOptions, SolveResult, Status, DEFAULT_GAP_TOL};

/// Version of the manifest layout.
const MANIFEST_FORMAT: u32 = 1;

/// Tolerance used to decide which sampled rows a robust solution violates.
const AUDIT_TOL: f64 = 1e-7;

#[derive(Debug, Parser)]
#[command(
    name = "amrplan",
    version,
    about = "Battery-aware charging and task schedule planning"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Fit the linear degradation coefficients and write a battery file.
    Fit(RunArgs),
    /// Solve the deterministic planning problem.
    Plan(RunArgs),
    /// Solve the chance-constrained robust problem.
    PlanRobust(RunArgs),
    /// Validate a decision on fresh uncertainty samples.
    Evaluate(RunArgs),
    /// Compare a decision with the fastest-possible baseline.
    Compare(RunArgs),
    /// Write the planning model in LP format.
    ExportLp(RunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Fit(_) => "fit",
            Command::Plan(_) => "plan",
            Command::PlanRobust(_) => "plan-robust",
            Command::Evaluate(_) => "evaluate",
            Command::Compare(_) => "compare",
            Command::ExportLp(_) => "export-lp",
        }
    }

    pub fn args(&self) -> &RunArgs {
        match self {
            Command::Fit(a)
            | Command::Plan(a)
            | Command::PlanRobust(a)
            | Command::Evaluate(a)
            | Command::Compare(a)
            | Command::ExportLp(a) => a,
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct RunArgs {
    /// Scenario file (may also be given with --scenario).
    #[arg(value_name = "SCENARIO")]
    #[serde(skip)]
    pub scenario_path: Option<PathBuf>,
    /// Scenario file.
    #[arg(
        long = "scenario",
        value_name = "PATH",
        conflicts_with = "scenario_path"
    )]
    #[serde(skip)]
    pub scenario_flag: Option<PathBuf>,
    /// Battery parameter file; built-in defaults when absent. Missing
    /// kc/ks are fitted on the fly.
    #[arg(long, value_name = "PATH")]
    pub battery: Option<PathBuf>,
    /// Decision file for evaluate and compare.
    #[arg(long, value_name = "PATH")]
    pub decision: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "out")]
    #[serde(skip)]
    pub out: PathBuf,
    /// Root seed; overrides the scenario's uncertainty seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Violation probability of the chance constraints.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Training samples for plan-robust; validation samples for evaluate
    /// and compare.
    #[arg(long)]
    pub samples: Option<usize>,
    /// McCormick partitions along the target SOC.
    #[arg(long)]
    pub ns: Option<usize>,
    /// McCormick partitions along the idle time.
    #[arg(long)]
    pub nt: Option<usize>,
    /// Scalar big-M for the McCormick selection rows.
    #[arg(long = "big-m")]
    pub big_m: Option<f64>,
    /// Relative optimality gap.
    #[arg(long)]
    pub gap: Option<f64>,
    /// Time limit in seconds.
    #[arg(long = "time-limit")]
    pub time_limit: Option<f64>,
    /// Node limit.
    #[arg(long)]
    pub nodes: Option<usize>,
    /// Solver worker threads; results do not depend on this.
    #[arg(long, default_value_t = 1)]
    #[serde(skip)]
    pub threads: usize,
    /// Also write per-task series for plotting.
    #[arg(long = "emit-plotdata")]
    pub emit_plotdata: bool,
    /// Recourse mode for plan-robust; overrides the scenario.
    #[arg(long, value_enum)]
    pub recourse: Option<RecourseMode>,
    /// How the charging term enters the objective.
    #[arg(long = "charging-cost", value_enum, default_value_t = ChargingCost::Taylor)]
    pub charging_cost: ChargingCost,
    /// Export the robust model instead of the deterministic one.
    #[arg(long)]
    pub robust: bool,
}

impl RunArgs {
    fn scenario(&self) -> Result<&Path> {
        self.scenario_flag
            .as_deref()
            .or(self.scenario_path.as_deref())
            .ok_or_else(|| Error::Config("this command needs a scenario file".into()))
    }

    fn model_config(&self) -> ModelConfig {
        let d = McCormickConfig::default();
        ModelConfig {
            mccormick: McCormickConfig {
                ns: self.ns.unwrap_or(d.ns),
                nt: self.nt.unwrap_or(d.nt),
                big_m: self.big_m.or(d.big_m),
            },
            charging_cost: self.charging_cost,
            ..ModelConfig::default()
        }
    }

    fn solve_options(&self) -> Result<SolveOptions> {
        let time_limit = match self.time_limit {
            Some(t) if !(t > 0.0 && t.is_finite()) => {
                return Err(Error::Config(format!(
                    "time limit must be positive (got {t})"
                )))
            }
            Some(t) => Some(Duration::from_secs_f64(t)),
            None => None,
        };
        Ok(SolveOptions {
            gap_tol: self.gap.unwrap_or(DEFAULT_GAP_TOL),
            node_limit: self.nodes,
            time_limit,
            threads: self.threads,
            ..SolveOptions::default()
        })
    }
}

/// What a finished run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    /// 0, or the limit exit code when a search limit cut the solve short but
    /// an incumbent was still written.
    pub exit_code: i32,
    pub artifacts: Vec<PathBuf>,
}

/// Everything a run's artifacts depend on; its hash goes into the manifest.
#[derive(Debug, Serialize)]
struct ResolvedConfig<'a> {
    command: &'a str,
    args: &'a RunArgs,
    scenario: Option<&'a Scenario>,
    battery: &'a BatteryParams,
    decision: Option<&'a Decision>,
    epsilon: Option<f64>,
    samples: Option<usize>,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    format: u32,
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    config_hash: String,
    epsilon: Option<f64>,
    samples: Option<usize>,
    inputs: BTreeMap<&'static str, InputFile>,
    artifacts: BTreeMap<String, String>,
    options: &'a RunArgs,
}

#[derive(Debug, Serialize)]
struct InputFile {
    path: String,
    sha256: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn input_file(path: &Path) -> Result<InputFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(InputFile {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Collects the artifacts of one run and writes them with the manifest.
struct Artifacts {
    dir: PathBuf,
    files: BTreeMap<String, Vec<u8>>,
}

impl Artifacts {
    fn new(dir: &Path) -> Self {
        Artifacts {
            dir: dir.to_path_buf(),
            files: BTreeMap::new(),
        }
    }

    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.insert(name.to_string(), bytes);
    }

    fn add_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.add(name, to_json(value)?.into_bytes());
        Ok(())
    }

    fn add_report(
        &mut self,
        report: &EvaluationReport,
        scenario: &Scenario,
        params: &BatteryParams,
        plot: bool,
    ) -> Result<()> {
        let mut csv = Vec::new();
        report.write_csv(&mut csv)?;
        self.add("report.csv", csv);
        if plot {
            let mut data = Vec::new();
            report.write_plotdata(scenario, params, &mut data)?;
            self.add("plotdata.csv", data);
        }
        Ok(())
    }

    fn finish(
        self,
        manifest: impl FnOnce(BTreeMap<String, String>) -> Result<String>,
    ) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let hashes = self
            .files
            .iter()
            .map(|(k, v)| (k.clone(), sha256_hex(v)))
            .collect();
        let manifest = manifest(hashes)?.into_bytes();
        let mut written = Vec::new();
        for (name, bytes) in self
            .files
            .iter()
            .chain([(&"manifest.json".to_string(), &manifest)])
        {
            let path = self.dir.join(name);
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }
}

fn load_battery(path: Option<&Path>) -> Result<BatteryParams> {
    let params = match path {
        Some(p) => BatteryParams::load(p)?,
        None => BatteryParams::default(),
    };
    if params.kc.is_some() && params.ks.is_some() {
        Ok(params)
    } else {
        log::info!("fitting kc and ks from the battery constants");
        fit_default(&params)
    }
}

fn load_decision(path: Option<&Path>) -> Result<Decision> {
    let path = path.ok_or_else(|| Error::Config("this command needs --decision".into()))?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Parse {
        path: path.to_path_buf(),
        source,
    })
}

/// Turns a solver status into an error when there is nothing to write.
fn require_solution(result: &SolveResult) -> Result<i32> {
    let detail = format!("after {} nodes, best bound {}", result.nodes, result.bound);
    match result.status {
        Status::Optimal | Status::GapLimit => Ok(0),
        Status::NodeLimit | Status::TimeLimit if result.has_incumbent() => {
            log::warn!(
                "{}: returning the best incumbent ({detail})",
                result.status.label()
            );
            Ok(Error::Limit(String::new()).exit_code())
        }
        Status::NodeLimit | Status::TimeLimit => {
            Err(Error::Limit(format!("{} {detail}", result.status.label())))
        }
        Status::Infeasible => Err(Error::Infeasible(
            "no plan satisfies every constraint".into(),
        )),
        Status::Unbounded => Err(Error::Unbounded("the relaxation is unbounded".into())),
    }
}

#[derive(Debug, Serialize)]
struct SolveSummary {
    status: &'static str,
    objective: f64,
    bound: f64,
    gap: f64,
    nodes: usize,
    variables: usize,
    binaries: usize,
    rows: usize,
}

impl SolveSummary {
    fn new(result: &SolveResult, model: &crate::model::MilpModel) -> Self {
        SolveSummary {
            status: result.status.label(),
            objective: result.objective,
            bound: result.bound,
            gap: result.gap(),
            nodes: result.nodes,
            variables: model.vars.len(),
            binaries: model.binary_count(),
            rows: model.rows.len(),
        }
    }
}

#[derive(Debug, Serialize)]
struct PlanSummary {
    solve: SolveSummary,
    evaluation: crate::evaluate::Summary,
}

#[derive(Debug, Serialize)]
struct RobustSummary {
    solve: SolveSummary,
    epsilon: f64,
    training_samples: usize,
    budget: usize,
    audit_ok: bool,
    worst_violations_per_group: BTreeMap<&'static str, usize>,
    presolve: Vec<IdentityStats>,
    validation_samples: usize,
    evaluation: crate::evaluate::Summary,
}

fn group_counts(audit: &BudgetAudit) -> BTreeMap<&'static str, usize> {
    audit
        .per_group()
        .into_iter()
        .map(|(g, k)| (g.label(), k))
        .collect()
}

/// Runs one command and writes its artifacts.
pub fn run(command: &Command) -> Result<RunOutcome> {
    let args = command.args();
    let params = load_battery(args.battery.as_deref())?;
    let mut inputs = BTreeMap::new();
    if let Some(p) = &args.battery {
        inputs.insert("battery", input_file(p)?);
    }
    let scenario = match command {
        Command::Fit(_) => None,
        _ => {
            let path = args.scenario()?;
            inputs.insert("scenario", input_file(path)?);
            let mut s = load_scenario(path)?;
            if let (Some(seed), Some(u)) = (args.seed, s.uncertainty.as_mut()) {
                u.seed = seed;
            }
            Some(s)
        }
    };
    let seed = args
        .seed
        .or_else(|| {
            scenario
                .as_ref()
                .and_then(|s| s.uncertainty.as_ref())
                .map(|u| u.seed)
        })
        .unwrap_or(0);
    let decision = match command {
        Command::Evaluate(_) | Command::Compare(_) => {
            let path = args.decision.as_deref();
            let d = load_decision(path)?;
            if let Some(p) = path {
                inputs.insert("decision", input_file(p)?);
            }
            Some(d)
        }
        _ => None,
    };

    let mut out = Artifacts::new(&args.out);
    let mut exit_code = 0;
    let mut epsilon = None;
    let mut samples = None;

    match command {
        Command::Fit(_) => {
            out.add_json("battery.json", &params)?;
        }
        Command::Plan(_) => {
            let s = scenario.as_ref().expect("plan loads a scenario");
            let det = assemble_deterministic(s, &params, &args.model_config())?;
            let result = solve_milp(&det.model, &args.solve_options()?)?;
            log::info!(
                "deterministic solve: {} nodes in {:.2}s",
                result.nodes,
                result.wall_time
            );
            exit_code = require_solution(&result)?;
            let decision = det.decision(&result.values);
            let report = compare_to_baseline(s, &params, &decision, 0, seed)?;
            out.add_json("decision.json", &decision)?;
            out.add_report(&report, s, &params, args.emit_plotdata)?;
            out.add_json(
                "summary.json",
                &PlanSummary {
                    solve: SolveSummary::new(&result, &det.model),
                    evaluation: report.summary(),
                },
            )?;
        }
        Command::PlanRobust(_) => {
            let s = scenario.as_ref().expect("plan-robust loads a scenario");
            let mut config: RobustConfig = s.robust.clone().unwrap_or_default();
            if let Some(e) = args.epsilon {
                config.epsilon = Some(e);
            }
            if let Some(k) = args.samples {
                config.k_samples = Some(k);
            }
            if let Some(mode) = args.recourse {
                config.set_mode(mode)?;
            }
            let (robust, result) = solve_robust(
                s,
                &params,
                &args.model_config(),
                &config,
                &args.solve_options()?,
            )?;
            epsilon = Some(robust.epsilon);
            samples = Some(robust.samples.len());
            log::info!(
                "robust solve: {} nodes in {:.2}s",
                result.nodes,
                result.wall_time
            );
            exit_code = require_solution(&result)?;
            let mut values = result.values.clone();
            robust.normalize_selectors(&mut values, AUDIT_TOL);
            let audit = robust.audit_budget(&values, AUDIT_TOL);
            if !audit.ok() {
                return Err(Error::Numeric(format!(
                    "solution exceeds the violation budget {} after solving",
                    audit.budget
                )));
            }
            let decision = robust.decision(&values);
            let report =
                monte_carlo_validate(s, &params, &decision, DEFAULT_VALIDATION_SAMPLES, seed)?
                    .expected;
            out.add_json("decision.json", &decision)?;
            out.add_report(&report, s, &params, args.emit_plotdata)?;
            out.add_json(
                "summary.json",
                &RobustSummary {
                    solve: SolveSummary::new(&result, robust.model()),
                    epsilon: robust.epsilon,
                    training_samples: robust.samples.len(),
                    budget: robust.budget(),
                    audit_ok: audit.ok(),
                    worst_violations_per_group: group_counts(&audit),
                    presolve: robust.saa.stats.clone(),
                    validation_samples: DEFAULT_VALIDATION_SAMPLES,
                    evaluation: report.summary(),
                },
            )?;
        }
        Command::Evaluate(_) | Command::Compare(_) => {
            let s = scenario.as_ref().expect("evaluation loads a scenario");
            let d = decision.as_ref().expect("evaluation loads a decision");
            let m = match s.uncertainty {
                Some(_) => args.samples.unwrap_or(DEFAULT_VALIDATION_SAMPLES),
                None => 0,
            };
            samples = Some(m);
            let report = match (command, m) {
                (Command::Compare(_), _) => compare_to_baseline(s, &params, d, m, seed)?,
                (_, 0) => simulate_schedule(s, &params, d, None)?,
                _ => monte_carlo_validate(s, &params, d, m, seed)?.expected,
            };
            out.add_report(&report, s, &params, args.emit_plotdata)?;
            out.add_json("summary.json", &report.summary())?;
        }
        Command::ExportLp(_) => {
            let s = scenario.as_ref().expect("export-lp loads a scenario");
            let model = if args.robust {
                let mut config: RobustConfig = s.robust.clone().unwrap_or_default();
                config.epsilon = args.epsilon.or(config.epsilon);
                config.k_samples = args.samples.or(config.k_samples);
                if let Some(mode) = args.recourse {
                    config.set_mode(mode)?;
                }
                let robust = assemble_robust(s, &params, &args.model_config(), &config)?;
                epsilon = Some(robust.epsilon);
                samples = Some(robust.samples.len());
                robust.core.model
            } else {
                assemble_deterministic(s, &params, &args.model_config())?.model
            };
            out.add("model.lp", write_lp(&model).into_bytes());
        }
    }

    let resolved = ResolvedConfig {
        command: command.name(),
        args,
        scenario: scenario.as_ref(),
        battery: &params,
        decision: decision.as_ref(),
        epsilon,
        samples,
    };
    let config_hash = sha256_hex(serde_json::to_string(&resolved)?.as_bytes());
    let artifacts = out.finish(|artifacts| {
        to_json(&Manifest {
            format: MANIFEST_FORMAT,
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.name(),
            seed,
            config_hash,
            epsilon,
            samples,
            inputs,
            artifacts,
            options: args,
        })
    })?;
    Ok(RunOutcome {
        exit_code,
        artifacts,
    })
}
