//! `elicit`: batch runner, validation replays, dataset statistics, and
//! report self-audit for the interview evaluation environment.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use elicit_core::{
    aggregate, compute_stats, load_dataset, read_annotated_transcript, read_session_log,
    read_transcript_dir, replay_judge_validation, replay_oracle_validation, reports_to_csv,
    run_session, session_report, write_session_log, AgreementSummary, AggregateReport,
    AnnotatedTranscript, EnvironmentConfig, ExternalAgent, Gateway, HttpProvider,
    InterviewerPolicy, JudgeBackend, KeywordDetector, LlmInterviewer, LlmJudge, LlmOracle,
    MetricsReport, ModelConfig, NullPolicy, OracleBackend, PromptVariant, Scenario, ScriptedJudge,
    ScriptedOracle, ScriptedPerfect, StallPolicy, StubProvider, Termination,
};

const EXIT_USAGE: i32 = 1;
const EXIT_VALIDATION: i32 = 2;
const EXIT_BACKEND: i32 = 3;

#[derive(Debug)]
enum AppError {
    Usage(String),
    Validation(String),
    Backend(String),
}

impl AppError {
    fn code(&self) -> i32 {
        match self {
            AppError::Usage(_) => EXIT_USAGE,
            AppError::Validation(_) => EXIT_VALIDATION,
            AppError::Backend(_) => EXIT_BACKEND,
        }
    }

    fn message(&self) -> &str {
        match self {
            AppError::Usage(m) | AppError::Validation(m) | AppError::Backend(m) => m,
        }
    }
}

type AppResult<T> = Result<T, AppError>;

fn usage(e: impl std::fmt::Display) -> AppError {
    AppError::Usage(e.to_string())
}

#[derive(Parser)]
#[command(name = "elicit", version, about = "Interview evaluation environment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run interviewer policies over a scenario dataset and write reports.
    Run(RunArgs),
    /// Replay annotated transcripts against an oracle backend.
    ValidateOracle(ValidateArgs),
    /// Replay annotated transcripts against a judge backend.
    ValidateJudge(ValidateArgs),
    /// Print dataset statistics.
    Stats(StatsArgs),
    /// Recompute a run's reports from its session logs and compare.
    Audit(AuditArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum PolicyKind {
    Null,
    ScriptedPerfect,
    Stall,
    LlmNoncot,
    LlmCot,
    External,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum BackendKind {
    Scripted,
    Stub,
    Http,
}

#[derive(Args)]
struct RunArgs {
    /// Structured config file; command-line flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory or manifest file.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Restrict to these scenario ids (repeatable).
    #[arg(long = "scenario")]
    scenarios: Vec<String>,
    /// Restrict to these application types (repeatable).
    #[arg(long = "app-type")]
    app_types: Vec<String>,
    #[arg(long, value_enum)]
    policy: Option<PolicyKind>,
    #[arg(long, value_enum)]
    oracle: Option<BackendKind>,
    #[arg(long, value_enum)]
    judge: Option<BackendKind>,
    /// Output root; artifacts land in <out>/<run-id>/.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fixed run id (default: config hash + timestamp).
    #[arg(long)]
    run_id: Option<String>,
    /// Skip scenarios whose session log already exists.
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_turns: Option<usize>,
    /// Directory of canned stub responses (<prompt-hash>.txt).
    #[arg(long)]
    stub_dir: Option<PathBuf>,
    /// Model id for HTTP-backed roles.
    #[arg(long)]
    model_id: Option<String>,
    #[arg(long)]
    base_url: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long)]
    api_key_env: Option<String>,
    /// Command to launch an external interviewer agent.
    #[arg(long)]
    agent_cmd: Option<String>,
    /// Arguments for the external agent (repeatable).
    #[arg(long = "agent-arg")]
    agent_args: Vec<String>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Annotated transcript file or directory of .jsonl transcripts.
    #[arg(long)]
    transcripts: PathBuf,
    #[arg(long, value_enum, default_value = "scripted")]
    backend: BackendKind,
    #[arg(long)]
    stub_dir: Option<PathBuf>,
    #[arg(long)]
    model_id: Option<String>,
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long)]
    api_key_env: Option<String>,
    /// Write the full replay report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Also write the per-type table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct AuditArgs {
    /// Run directory containing sessions/ and report.json.
    #[arg(long)]
    run_dir: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
}

/// Config-file mirror of the run flags; every field optional so the file
/// and the command line compose.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfigFile {
    dataset: Option<PathBuf>,
    scenarios: Option<Vec<String>>,
    app_types: Option<Vec<String>>,
    policy: Option<PolicyKind>,
    oracle: Option<BackendKind>,
    judge: Option<BackendKind>,
    out: Option<PathBuf>,
    parallelism: Option<usize>,
    seed: Option<u64>,
    environment: Option<EnvironmentConfig>,
    model: Option<ModelConfig>,
    stub_dir: Option<PathBuf>,
    agent_cmd: Option<String>,
    agent_args: Option<Vec<String>>,
}

/// Effective, fully-resolved run configuration; echoed into the run
/// directory and hashed into the run id.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct EffectiveConfig {
    dataset: PathBuf,
    scenarios: Vec<String>,
    app_types: Vec<String>,
    policy: PolicyKind,
    oracle: BackendKind,
    judge: BackendKind,
    parallelism: usize,
    environment: EnvironmentConfig,
    model: ModelConfig,
    stub_dir: Option<PathBuf>,
    agent_cmd: Option<String>,
    agent_args: Vec<String>,
}

fn main() {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own message (including --help/--version).
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::ValidateOracle(args) => cmd_validate(args, ValidateMode::Oracle),
        Command::ValidateJudge(args) => cmd_validate(args, ValidateMode::Judge),
        Command::Stats(args) => cmd_stats(args),
        Command::Audit(args) => cmd_audit(args),
    };
    match result {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {}", e.message());
            std::process::exit(e.code());
        }
    }
}

fn resolve_config(args: &RunArgs) -> AppResult<EffectiveConfig> {
    let file: RunConfigFile = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| usage(format!("malformed config {}: {e}", path.display())))?
        }
        None => RunConfigFile::default(),
    };

    let mut environment = file.environment.unwrap_or_default();
    if let Some(seed) = args.seed {
        environment.rng_seed = seed;
    }
    if let Some(max_turns) = args.max_turns {
        environment.max_turns = max_turns;
    }
    environment
        .validate()
        .map_err(|e| usage(format!("invalid environment config: {e}")))?;

    let mut model = file.model.unwrap_or_default();
    if let Some(id) = &args.model_id {
        model.model_id = id.clone();
    }
    if let Some(url) = &args.base_url {
        model.base_url = Some(url.clone());
    }
    if let Some(var) = &args.api_key_env {
        model.api_key_env = Some(var.clone());
    }

    let dataset = args
        .dataset
        .clone()
        .or(file.dataset)
        .ok_or_else(|| usage("--dataset is required (flag or config file)"))?;
    let parallelism = args.parallelism.or(file.parallelism).unwrap_or(1);
    if parallelism < 1 {
        return Err(usage("--parallelism must be >= 1"));
    }

    Ok(EffectiveConfig {
        dataset,
        scenarios: if args.scenarios.is_empty() {
            file.scenarios.unwrap_or_default()
        } else {
            args.scenarios.clone()
        },
        app_types: if args.app_types.is_empty() {
            file.app_types.unwrap_or_default()
        } else {
            args.app_types.clone()
        },
        policy: args.policy.or(file.policy).unwrap_or(PolicyKind::Null),
        oracle: args.oracle.or(file.oracle).unwrap_or(BackendKind::Scripted),
        judge: args.judge.or(file.judge).unwrap_or(BackendKind::Scripted),
        parallelism,
        environment,
        model,
        stub_dir: args.stub_dir.clone().or(file.stub_dir),
        agent_cmd: args.agent_cmd.clone().or(file.agent_cmd),
        agent_args: if args.agent_args.is_empty() {
            file.agent_args.unwrap_or_default()
        } else {
            args.agent_args.clone()
        },
    })
}

fn run_id_for(cfg: &EffectiveConfig) -> String {
    let serialized = serde_json::to_string(cfg).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(serialized.as_bytes());
    let digest = hasher.finalize();
    let hash: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    format!("{hash}-{stamp}")
}

fn build_oracle(cfg: &EffectiveConfig) -> AppResult<Box<dyn OracleBackend>> {
    match cfg.oracle {
        BackendKind::Scripted => Ok(Box::new(ScriptedOracle)),
        BackendKind::Stub => {
            let stub = load_stub(cfg.stub_dir.as_deref())?;
            Ok(Box::new(LlmOracle::new(Gateway::new(stub), cfg.model.clone())))
        }
        BackendKind::Http => {
            check_http(&cfg.model)?;
            Ok(Box::new(LlmOracle::new(
                Gateway::new(HttpProvider::new()),
                cfg.model.clone(),
            )))
        }
    }
}

fn build_judge(cfg: &EffectiveConfig) -> AppResult<Box<dyn JudgeBackend>> {
    match cfg.judge {
        BackendKind::Scripted => Ok(Box::new(ScriptedJudge)),
        BackendKind::Stub => {
            let stub = load_stub(cfg.stub_dir.as_deref())?;
            Ok(Box::new(LlmJudge::new(Gateway::new(stub), cfg.model.clone())))
        }
        BackendKind::Http => {
            check_http(&cfg.model)?;
            Ok(Box::new(LlmJudge::new(
                Gateway::new(HttpProvider::new()),
                cfg.model.clone(),
            )))
        }
    }
}

fn build_policy(cfg: &EffectiveConfig, scenario: &Scenario) -> AppResult<Box<dyn InterviewerPolicy>> {
    match cfg.policy {
        PolicyKind::Null => Ok(Box::new(NullPolicy)),
        PolicyKind::ScriptedPerfect => {
            Ok(Box::new(ScriptedPerfect::new(scenario.implicit_reqs.clone())))
        }
        PolicyKind::Stall => Ok(Box::new(StallPolicy::new())),
        PolicyKind::LlmNoncot | PolicyKind::LlmCot => {
            let variant = if cfg.policy == PolicyKind::LlmCot {
                PromptVariant::Cot
            } else {
                PromptVariant::NonCot
            };
            if let Some(dir) = cfg.stub_dir.as_deref() {
                let stub = load_stub(Some(dir))?;
                Ok(Box::new(LlmInterviewer::new(
                    Gateway::new(stub),
                    cfg.model.clone(),
                    variant,
                )))
            } else {
                check_http(&cfg.model)?;
                Ok(Box::new(LlmInterviewer::new(
                    Gateway::new(HttpProvider::new()),
                    cfg.model.clone(),
                    variant,
                )))
            }
        }
        PolicyKind::External => {
            let cmd = cfg
                .agent_cmd
                .as_deref()
                .ok_or_else(|| usage("--agent-cmd is required for the external policy"))?;
            ExternalAgent::spawn(cmd, &cfg.agent_args)
                .map(|a| Box::new(a) as Box<dyn InterviewerPolicy>)
                .map_err(|e| AppError::Backend(format!("cannot spawn agent: {e}")))
        }
    }
}

fn load_stub(dir: Option<&Path>) -> AppResult<StubProvider> {
    let dir = dir.ok_or_else(|| usage("--stub-dir is required for stub-backed roles"))?;
    StubProvider::from_fixture_dir(dir)
        .map_err(|e| usage(format!("cannot load stub fixtures from {}: {e}", dir.display())))
}

fn check_http(model: &ModelConfig) -> AppResult<()> {
    HttpProvider::check_credentials(model).map_err(|e| AppError::Backend(e.to_string()))
}

/// Top-level run artifact: all per-scenario reports plus the aggregate over
/// the sessions that terminated cleanly (Finished or MaxTurnsReached).
#[derive(Debug, Serialize, Deserialize)]
struct RunReport {
    run_id: String,
    session_count: usize,
    failed_sessions: usize,
    failed_scenario_ids: Vec<String>,
    per_scenario: Vec<MetricsReport>,
    aggregate: Option<AggregateReport>,
}

fn cmd_run(args: RunArgs) -> AppResult<()> {
    let cfg = resolve_config(&args)?;
    let scenarios = select_scenarios(&cfg)?;

    let run_id = args.run_id.clone().unwrap_or_else(|| run_id_for(&cfg));
    let out_root = args
        .out
        .clone()
        .or_else(|| Some(PathBuf::from("out")))
        .unwrap();
    let run_dir = out_root.join(&run_id);
    let sessions_dir = run_dir.join("sessions");
    std::fs::create_dir_all(&sessions_dir)
        .map_err(|e| usage(format!("cannot create {}: {e}", sessions_dir.display())))?;

    // Echo the effective config for reproducibility.
    let config_path = run_dir.join("config.json");
    std::fs::write(
        &config_path,
        serde_json::to_string_pretty(&cfg).expect("config serializes"),
    )
    .map_err(|e| usage(format!("cannot write {}: {e}", config_path.display())))?;

    // Fail fast on unusable backend configuration before spawning workers.
    build_oracle(&cfg)?;
    build_judge(&cfg)?;

    let jobs: Vec<&Scenario> = scenarios
        .iter()
        .filter(|s| {
            let done = sessions_dir.join(format!("{}.jsonl", s.id)).exists();
            if args.resume && done {
                log::info!("resume: skipping completed scenario {}", s.id);
            }
            !(args.resume && done)
        })
        .collect();

    let next = AtomicUsize::new(0);
    let failures: Mutex<Vec<(String, String)>> = Mutex::new(Vec::new());
    let workers = cfg.parallelism.min(jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::SeqCst);
                let Some(scenario) = jobs.get(index) else { break };
                if let Err(e) = run_one(&cfg, scenario, &sessions_dir) {
                    failures
                        .lock()
                        .unwrap()
                        .push((scenario.id.clone(), e.message().to_string()));
                }
            });
        }
    });
    for (id, message) in failures.lock().unwrap().iter() {
        eprintln!("scenario {id}: {message}");
    }

    // Assemble the report from the persisted logs (covers resumed sessions).
    let report = assemble_report(&run_id, &sessions_dir, &scenarios)?;
    let json_path = run_dir.join("report.json");
    std::fs::write(
        &json_path,
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )
    .map_err(|e| usage(format!("cannot write {}: {e}", json_path.display())))?;
    let csv_path = run_dir.join("report.csv");
    std::fs::write(&csv_path, reports_to_csv(&report.per_scenario))
        .map_err(|e| usage(format!("cannot write {}: {e}", csv_path.display())))?;

    println!("run {run_id}: {} sessions, {} failed", report.session_count, report.failed_sessions);
    if let Some(agg) = &report.aggregate {
        println!(
            "mean IRE {:.4} (sd {:.4}), mean TKQR {:.4} (sd {:.4}), mean turns {:.2}",
            agg.ire.mean, agg.ire.std, agg.tkqr.mean, agg.tkqr.std, agg.turns.mean
        );
    }
    println!("artifacts: {}", run_dir.display());

    if report.session_count > 0 && report.failed_sessions == report.session_count {
        return Err(AppError::Backend(
            "every session terminated with a backend error".to_string(),
        ));
    }
    Ok(())
}

fn select_scenarios(cfg: &EffectiveConfig) -> AppResult<Vec<Scenario>> {
    let all = load_dataset(&cfg.dataset).map_err(|e| AppError::Validation(e.to_string()))?;
    let ids: BTreeSet<&String> = cfg.scenarios.iter().collect();
    let types: BTreeSet<&String> = cfg.app_types.iter().collect();
    let selected: Vec<Scenario> = all
        .into_iter()
        .filter(|s| ids.is_empty() || ids.contains(&s.id))
        .filter(|s| types.is_empty() || types.contains(&s.application_type))
        .collect();
    if selected.is_empty() {
        return Err(AppError::Validation(
            "scenario filter selected nothing".to_string(),
        ));
    }
    Ok(selected)
}

fn run_one(cfg: &EffectiveConfig, scenario: &Scenario, sessions_dir: &Path) -> AppResult<()> {
    let oracle = build_oracle(cfg)?;
    let judge = build_judge(cfg)?;
    let mut policy = build_policy(cfg, scenario)?;
    let run = run_session(
        scenario,
        cfg.environment.clone(),
        policy.as_mut(),
        oracle.as_ref(),
        judge.as_ref(),
    )
    .map_err(|e| AppError::Backend(format!("session failed: {e}")))?;

    let path = sessions_dir.join(format!("{}.jsonl", scenario.id));
    let file = std::fs::File::create(&path)
        .map_err(|e| usage(format!("cannot create {}: {e}", path.display())))?;
    write_session_log(std::io::BufWriter::new(file), &run.header, &run.session)
        .map_err(|e| usage(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

fn assemble_report(
    run_id: &str,
    sessions_dir: &Path,
    scenarios: &[Scenario],
) -> AppResult<RunReport> {
    let mut per_scenario = Vec::new();
    let mut failed_scenario_ids = Vec::new();
    for scenario in scenarios {
        let path = sessions_dir.join(format!("{}.jsonl", scenario.id));
        if !path.exists() {
            failed_scenario_ids.push(scenario.id.clone());
            continue;
        }
        let (_, session) =
            read_session_log(&path).map_err(|e| AppError::Validation(e.to_string()))?;
        let report =
            session_report(&session, scenario).map_err(|e| AppError::Validation(e.to_string()))?;
        if report.termination == Termination::BackendError {
            failed_scenario_ids.push(scenario.id.clone());
        }
        per_scenario.push(report);
    }
    per_scenario.sort_by(|a, b| a.scenario_id.cmp(&b.scenario_id));
    failed_scenario_ids.sort();

    let clean: Vec<MetricsReport> = per_scenario
        .iter()
        .filter(|r| r.termination != Termination::BackendError)
        .cloned()
        .collect();
    let aggregate_report = if clean.is_empty() {
        None
    } else {
        Some(aggregate(&clean).map_err(|e| AppError::Validation(e.to_string()))?)
    };
    Ok(RunReport {
        run_id: run_id.to_string(),
        session_count: scenarios.len(),
        failed_sessions: failed_scenario_ids.len(),
        failed_scenario_ids,
        per_scenario,
        aggregate: aggregate_report,
    })
}

enum ValidateMode {
    Oracle,
    Judge,
}

fn load_transcripts(path: &Path) -> AppResult<Vec<AnnotatedTranscript>> {
    let result = if path.is_dir() {
        read_transcript_dir(path)
    } else {
        read_annotated_transcript(path).map(|t| vec![t])
    };
    result.map_err(|e| AppError::Validation(e.to_string()))
}

fn cmd_validate(args: ValidateArgs, mode: ValidateMode) -> AppResult<()> {
    let transcripts = load_transcripts(&args.transcripts)?;
    if transcripts.is_empty() {
        return Err(AppError::Validation(format!(
            "no transcripts found at {}",
            args.transcripts.display()
        )));
    }
    let model = {
        let mut model = ModelConfig::default();
        if let Some(id) = &args.model_id {
            model.model_id = id.clone();
        }
        if let Some(url) = &args.base_url {
            model.base_url = Some(url.clone());
        }
        if let Some(var) = &args.api_key_env {
            model.api_key_env = Some(var.clone());
        }
        model
    };
    let cfg = EnvironmentConfig::default();

    let report = match mode {
        ValidateMode::Oracle => {
            let oracle: Box<dyn OracleBackend> = match args.backend {
                BackendKind::Scripted => Box::new(ScriptedOracle),
                BackendKind::Stub => Box::new(LlmOracle::new(
                    Gateway::new(load_stub(args.stub_dir.as_deref())?),
                    model,
                )),
                BackendKind::Http => {
                    check_http(&model)?;
                    Box::new(LlmOracle::new(Gateway::new(HttpProvider::new()), model))
                }
            };
            replay_oracle_validation(&transcripts, oracle.as_ref(), &KeywordDetector, &cfg)
        }
        ValidateMode::Judge => {
            let judge: Box<dyn JudgeBackend> = match args.backend {
                BackendKind::Scripted => Box::new(ScriptedJudge),
                BackendKind::Stub => Box::new(LlmJudge::new(
                    Gateway::new(load_stub(args.stub_dir.as_deref())?),
                    model,
                )),
                BackendKind::Http => {
                    check_http(&model)?;
                    Box::new(LlmJudge::new(Gateway::new(HttpProvider::new()), model))
                }
            };
            replay_judge_validation(&transcripts, judge.as_ref(), &cfg)
        }
    }
    .map_err(|e| AppError::Validation(e.to_string()))?;

    if let Some(summary) = &report.disclosure {
        print_agreement_table("disclosure", summary);
    }
    if let Some(summary) = &report.action {
        print_agreement_table("action", summary);
    }
    if let Some(summary) = &report.relevance {
        print_agreement_table("relevance", summary);
    }
    if report.backend_errors > 0 {
        eprintln!("backend errors during replay: {}", report.backend_errors);
    }
    if let Some(out) = &args.out {
        std::fs::write(
            out,
            serde_json::to_string_pretty(&report).expect("report serializes"),
        )
        .map_err(|e| usage(format!("cannot write {}: {e}", out.display())))?;
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".to_string())
}

fn print_agreement_table(label: &str, summary: &AgreementSummary) {
    println!("== {label} agreement ==");
    println!("{:<24} {:>6} {:>8} {:>8} {:>8}", "session", "n", "kappa", "fp", "fn");
    for (id, result) in &summary.per_session {
        println!(
            "{:<24} {:>6} {:>8} {:>8} {:>8}",
            id,
            result.item_count,
            fmt_opt(result.kappa),
            fmt_opt(result.fp_rate),
            fmt_opt(result.fn_rate)
        );
    }
    println!(
        "{:<24} {:>6} {:>8} {:>8} {:>8}",
        "pooled",
        summary.pooled.item_count,
        fmt_opt(summary.pooled.kappa),
        fmt_opt(summary.pooled.fp_rate),
        fmt_opt(summary.pooled.fn_rate)
    );
    println!(
        "per-session kappa mean {} (sd {})",
        fmt_opt(summary.kappa_mean),
        fmt_opt(summary.kappa_std)
    );
}

fn cmd_stats(args: StatsArgs) -> AppResult<()> {
    let scenarios = load_dataset(&args.dataset).map_err(|e| AppError::Validation(e.to_string()))?;
    let stats = compute_stats(&scenarios).map_err(|e| AppError::Validation(e.to_string()))?;

    let header = format!(
        "{:<24} {:>5} {:>18} {:>18} {:>18}",
        "application type", "n", "initial len", "implicit reqs", "final reqs"
    );
    println!("{header}");
    let row_line = |name: &str, row: &elicit_core::scenario::StatsRow| {
        format!(
            "{:<24} {:>5} {:>6}/{:>5.2}/{:>4} {:>6}/{:>5.2}/{:>4} {:>6}/{:>5.2}/{:>4}",
            name,
            row.scenario_count,
            row.initial_len.min,
            row.initial_len.avg,
            row.initial_len.max,
            row.implicit_count.min,
            row.implicit_count.avg,
            row.implicit_count.max,
            row.final_count.min,
            row.final_count.avg,
            row.final_count.max,
        )
    };
    for (ty, row) in &stats.per_type {
        println!("{}", row_line(ty, row));
    }
    println!("{}", row_line("Total", &stats.total));
    println!();
    for (category, count) in &stats.category_counts {
        println!("category {category}: {count}");
    }
    for (combo, count) in &stats.category_combination_counts {
        println!("combination {combo}: {count}");
    }

    if let Some(csv_path) = &args.csv {
        let mut csv = String::from(
            "application_type,scenarios,initial_min,initial_avg,initial_max,implicit_min,implicit_avg,implicit_max,final_min,final_avg,final_max\n",
        );
        let mut push_row = |name: &str, row: &elicit_core::scenario::StatsRow| {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                name,
                row.scenario_count,
                row.initial_len.min,
                row.initial_len.avg,
                row.initial_len.max,
                row.implicit_count.min,
                row.implicit_count.avg,
                row.implicit_count.max,
                row.final_count.min,
                row.final_count.avg,
                row.final_count.max,
            ));
        };
        for (ty, row) in &stats.per_type {
            push_row(ty, row);
        }
        push_row("Total", &stats.total);
        std::fs::write(csv_path, csv)
            .map_err(|e| usage(format!("cannot write {}: {e}", csv_path.display())))?;
    }
    Ok(())
}

fn cmd_audit(args: AuditArgs) -> AppResult<()> {
    let scenarios = load_dataset(&args.dataset).map_err(|e| AppError::Validation(e.to_string()))?;
    let report_path = args.run_dir.join("report.json");
    let text = std::fs::read_to_string(&report_path)
        .map_err(|e| usage(format!("cannot read {}: {e}", report_path.display())))?;
    let stored: RunReport = serde_json::from_str(&text)
        .map_err(|e| AppError::Validation(format!("malformed {}: {e}", report_path.display())))?;

    let sessions_dir = args.run_dir.join("sessions");
    let recomputed = assemble_report(&stored.run_id, &sessions_dir, &scenarios)?;

    let stored_value = serde_json::to_value(&stored).expect("report serializes");
    let recomputed_value = serde_json::to_value(&recomputed).expect("report serializes");
    if stored_value != recomputed_value {
        return Err(AppError::Validation(format!(
            "audit mismatch: {} does not equal recomputation from session logs",
            report_path.display()
        )));
    }
    println!(
        "audit ok: {} sessions, {} failed, report matches recomputation",
        recomputed.session_count, recomputed.failed_sessions
    );
    Ok(())
}
