//! Core library of the requirements-elicitation interview environment:
//! scenario storage, the turn-based dialogue engine with its oracle user
//! and per-turn judge, interviewer policies, session metrics, and
//! human-agreement statistics.

pub mod agreement;
pub mod engine;
pub mod gateway;
pub mod interviewer;
pub mod judge;
pub mod metrics;
pub mod oracle;
pub mod runner;
pub mod scenario;

pub use agreement::{
    agreement_result, cohen_kappa, fp_fn_rates, read_annotated_transcript, read_transcript_dir,
    replay_judge_validation, replay_oracle_validation, AgreementError, AgreementResult,
    AgreementSummary, AnnotatedTranscript, AnnotatedTurn, DisclosureDetector, KeywordDetector,
    PairedJudgments, ReplayReport, TranscriptMeta,
};
pub use engine::{
    read_session_log, write_session_log, EngineError, Environment, EnvironmentConfig, Session,
    SessionLogHeader, Speaker, Termination, Turn, TurnOutcome,
};
pub use gateway::{
    extract_structured, ChatMessage, ChatProvider, EchoProvider, Gateway, GatewayError,
    HttpProvider, ModelConfig, RawExchange, Role, StubProvider,
};
pub use interviewer::{
    render_interviewer_prompt, ExternalAgent, InterviewerAction, InterviewerPolicy,
    LlmInterviewer, NullPolicy, PolicyError, PolicyStep, PromptVariant, ScriptedPerfect,
    StallPolicy,
};
pub use judge::{
    format_history, render_judge_prompt, ActionType, JudgeBackend, JudgeError,
    JudgePromptVariant, JudgeReply, LlmJudge, ScriptedJudge, StrategyJudgment, FINISH_SENTINEL,
};
pub use metrics::{
    aggregate, esr, ire, mean_std, reports_to_csv, session_report, tkqr, AggregateReport,
    MeanStd, MetricsError, MetricsReport, Strategy, CSV_COLUMNS,
};
pub use oracle::{
    render_oracle_prompt, LlmOracle, OracleBackend, OracleContext, OracleError, OracleReply,
    OracleResponse, ScriptedOracle, SCRIPTED_DECLINE,
};
pub use runner::{run_session, SessionRun};
pub use scenario::{
    compute_stats, load_dataset, save_dataset, validate_scenario, Category, DatasetError,
    DatasetStats, ImplicitReq, Scenario, Severity, UserStory, ValidationIssue,
    DEFAULT_APPLICATION_TYPES,
};
