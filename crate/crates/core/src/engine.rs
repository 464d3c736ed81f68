//! Turn-based execution of one interview session: the interviewer acts, the
//! judge classifies the turn against the remaining implicit requirements,
//! the oracle responds, the elicitation state updates, and termination is
//! enforced.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::RawExchange;
use crate::judge::{ActionType, JudgeBackend, StrategyJudgment};
use crate::oracle::{OracleBackend, OracleContext};
use crate::scenario::{ImplicitReq, Scenario};

/// Runtime parameters of the environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentConfig {
    pub max_turns: usize,
    pub oracle_temperature: f64,
    pub judge_temperature: f64,
    pub max_response_tokens: u32,
    pub request_timeout_s: f64,
    pub retries_on_malformed: u32,
    pub rng_seed: u64,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        EnvironmentConfig {
            max_turns: 20,
            oracle_temperature: 0.7,
            judge_temperature: 0.0,
            max_response_tokens: 1024,
            request_timeout_s: 30.0,
            retries_on_malformed: 2,
            rng_seed: 0,
        }
    }
}

impl EnvironmentConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.max_turns < 1 {
            return Err(EngineError::InvalidConfig("max_turns must be >= 1".into()));
        }
        for (name, t) in [
            ("oracle_temperature", self.oracle_temperature),
            ("judge_temperature", self.judge_temperature),
        ] {
            if !(0.0..=2.0).contains(&t) {
                return Err(EngineError::InvalidConfig(format!(
                    "{name} must be in [0, 2], got {t}"
                )));
            }
        }
        if self.request_timeout_s <= 0.0 {
            return Err(EngineError::InvalidConfig("timeout must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Oracle,
    Interviewer,
}

impl Speaker {
    /// Name used when rendering dialogue history into prompts.
    pub fn display_name(&self) -> &'static str {
        match self {
            Speaker::Oracle => "User",
            Speaker::Interviewer => "Interviewer",
        }
    }
}

/// One completed dialogue turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    /// 1-based turn index.
    pub index: usize,
    pub interviewer_utterance: String,
    pub judgment: StrategyJudgment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_response: Option<String>,
    pub hit: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub newly_elicited_id: Option<String>,
    /// CoT reasoning captured for the log; never shown to oracle or judge.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interviewer_reasoning: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interviewer_exchange: Option<RawExchange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_exchange: Option<RawExchange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_exchange: Option<RawExchange>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Finished,
    MaxTurnsReached,
    BackendError,
}

/// The evolving dialogue state of one interview.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub scenario_id: String,
    pub turns: Vec<Turn>,
    /// Elicited implicit-requirement ids, in elicitation order; grows
    /// monotonically and never repeats.
    pub elicited: Vec<String>,
    pub end_turn: usize,
    pub question_turn_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub termination: Option<Termination>,
    pub rng_seed: u64,
}

impl Session {
    pub fn is_terminal(&self) -> bool {
        self.termination.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TurnOutcome {
    Continue { oracle_response: String },
    Terminated { reason: Termination },
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error("session is already terminal")]
    TerminalSession,
    #[error("empty interviewer utterance")]
    EmptyUtterance,
    #[error("scenario failed validation: {0}")]
    InvalidScenario(String),
    #[error("session log i/o: {0}")]
    LogIo(#[from] std::io::Error),
    #[error("session log line {line}: {message}")]
    LogFormat { line: usize, message: String },
}

/// One running interview over a scenario with fixed backends. A session is
/// strictly sequential; distinct sessions share no mutable state.
pub struct Environment<'a> {
    scenario: &'a Scenario,
    cfg: EnvironmentConfig,
    oracle: &'a dyn OracleBackend,
    judge: &'a dyn JudgeBackend,
    session: Session,
    transcript: Vec<(Speaker, String)>,
}

impl<'a> Environment<'a> {
    /// Starts a session. The returned opening message is the scenario's
    /// initial requirement, verbatim: the oracle initiates the interaction
    /// by presenting it to the interviewer.
    pub fn start(
        scenario: &'a Scenario,
        cfg: EnvironmentConfig,
        oracle: &'a dyn OracleBackend,
        judge: &'a dyn JudgeBackend,
    ) -> Result<(Self, String), EngineError> {
        cfg.validate()?;
        let errors: Vec<_> = crate::scenario::validate_scenario(scenario)
            .into_iter()
            .filter(|i| i.severity == crate::scenario::Severity::Error)
            .collect();
        if let Some(first) = errors.first() {
            return Err(EngineError::InvalidScenario(first.to_string()));
        }
        let opening = scenario.initial_req.clone();
        let session = Session {
            scenario_id: scenario.id.clone(),
            turns: Vec::new(),
            elicited: Vec::new(),
            end_turn: 0,
            question_turn_count: 0,
            termination: None,
            rng_seed: cfg.rng_seed,
        };
        let env = Environment {
            scenario,
            cfg,
            oracle,
            judge,
            session,
            transcript: vec![(Speaker::Oracle, opening.clone())],
        };
        Ok((env, opening))
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn config(&self) -> &EnvironmentConfig {
        &self.cfg
    }

    pub fn into_session(self) -> Session {
        self.session
    }

    /// Ordered (speaker, text) transcript, starting with the oracle's
    /// opening message.
    pub fn transcript(&self) -> &[(Speaker, String)] {
        &self.transcript
    }

    /// Implicit requirements not yet elicited, in scenario order.
    pub fn remaining(&self) -> Vec<ImplicitReq> {
        self.scenario
            .implicit_reqs
            .iter()
            .filter(|r| !self.session.elicited.contains(&r.id))
            .cloned()
            .collect()
    }

    /// Runs one turn: judge first, then (unless the turn finishes the
    /// interview) the oracle. Relevance is always judged against the
    /// remaining set only, so re-asking an elicited requirement comes back
    /// not relevant.
    pub fn step(&mut self, utterance: &str) -> Result<TurnOutcome, EngineError> {
        if self.session.is_terminal() {
            return Err(EngineError::TerminalSession);
        }
        if utterance.trim().is_empty() {
            return Err(EngineError::EmptyUtterance);
        }

        let remaining = self.remaining();
        let history = self.transcript.clone();
        let judge_reply = match self.judge.judge(
            &self.scenario.initial_req,
            &history,
            utterance,
            &remaining,
            &self.cfg,
        ) {
            Ok(reply) => reply,
            Err(e) => {
                log::warn!("judge backend failed: {e}");
                self.session.termination = Some(Termination::BackendError);
                return Ok(TurnOutcome::Terminated {
                    reason: Termination::BackendError,
                });
            }
        };
        let judgment = judge_reply.judgment;
        self.transcript.push((Speaker::Interviewer, utterance.to_string()));

        if judgment.action_type == ActionType::Finish {
            self.push_turn(Turn {
                index: self.session.turns.len() + 1,
                interviewer_utterance: utterance.to_string(),
                judgment,
                oracle_response: None,
                hit: false,
                newly_elicited_id: None,
                interviewer_reasoning: None,
                interviewer_exchange: None,
                judge_exchange: judge_reply.raw,
                oracle_exchange: None,
            });
            self.session.termination = Some(Termination::Finished);
            return Ok(TurnOutcome::Terminated {
                reason: Termination::Finished,
            });
        }

        // Elicitation is recorded at the moment the judge marks the turn
        // relevant; the oracle's disclosure then grounds the content.
        let hit = judgment.is_relevant;
        let newly_elicited_id = judgment.relevant_id.clone();
        if let Some(id) = &newly_elicited_id {
            debug_assert!(!self.session.elicited.contains(id));
            self.session.elicited.push(id.clone());
        }

        let relevant_requirement = newly_elicited_id
            .as_deref()
            .and_then(|id| self.scenario.requirement(id))
            .cloned();
        let ctx = OracleContext {
            conversation_history: history,
            latest_utterance: utterance.to_string(),
            action_type: judgment.action_type,
            is_relevant: judgment.is_relevant,
            relevant_requirement,
        };
        let (oracle_response, oracle_exchange, oracle_failed) =
            match self.oracle.respond(&ctx, &self.cfg) {
                Ok(reply) => (Some(reply.response.text), reply.raw, false),
                Err(e) => {
                    log::warn!("oracle backend failed: {e}");
                    (None, None, true)
                }
            };
        if let Some(text) = &oracle_response {
            self.transcript.push((Speaker::Oracle, text.clone()));
        }

        self.push_turn(Turn {
            index: self.session.turns.len() + 1,
            interviewer_utterance: utterance.to_string(),
            judgment,
            oracle_response: oracle_response.clone(),
            hit,
            newly_elicited_id,
            interviewer_reasoning: None,
            interviewer_exchange: None,
            judge_exchange: judge_reply.raw,
            oracle_exchange,
        });

        if oracle_failed {
            self.session.termination = Some(Termination::BackendError);
            return Ok(TurnOutcome::Terminated {
                reason: Termination::BackendError,
            });
        }
        if self.session.turns.len() >= self.cfg.max_turns {
            self.session.termination = Some(Termination::MaxTurnsReached);
            return Ok(TurnOutcome::Terminated {
                reason: Termination::MaxTurnsReached,
            });
        }
        Ok(TurnOutcome::Continue {
            oracle_response: oracle_response.expect("non-finish turn has an oracle response"),
        })
    }

    /// Attaches interviewer-side artifacts to the most recent turn: CoT
    /// reasoning (log only, never shown to oracle or judge) and the raw
    /// payloads of the interviewer backend call.
    pub fn annotate_last_turn(
        &mut self,
        reasoning: Option<String>,
        interviewer_exchange: Option<RawExchange>,
    ) {
        if let Some(turn) = self.session.turns.last_mut() {
            if reasoning.is_some() {
                turn.interviewer_reasoning = reasoning;
            }
            if interviewer_exchange.is_some() {
                turn.interviewer_exchange = interviewer_exchange;
            }
        }
    }

    /// Terminates the session from outside the turn pipeline, e.g. when the
    /// interviewer policy itself fails.
    pub fn abort(&mut self, reason: Termination) {
        if self.session.termination.is_none() {
            self.session.termination = Some(reason);
        }
    }

    fn push_turn(&mut self, turn: Turn) {
        if turn.judgment.action_type != ActionType::Finish {
            self.session.question_turn_count += 1;
        }
        self.session.turns.push(turn);
        self.session.end_turn = self.session.turns.len();
    }
}

/// Header line of a session log; timestamps live here and only here, so
/// reports derived from the rest of the log stay byte-identical across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionLogHeader {
    pub scenario_id: String,
    pub config: EnvironmentConfig,
    pub seed: u64,
    pub started_at: String,
    pub finished_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SessionLogSummary {
    elicited: Vec<String>,
    termination: Termination,
    end_turn: usize,
    question_turn_count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum LogLine {
    Header(SessionLogHeader),
    Turn(Turn),
    Summary(SessionLogSummary),
}

/// Writes one session as JSONL: header, one line per turn, summary.
pub fn write_session_log(
    mut out: impl Write,
    header: &SessionLogHeader,
    session: &Session,
) -> Result<(), EngineError> {
    let termination = session
        .termination
        .ok_or_else(|| EngineError::InvalidConfig("cannot log a non-terminal session".into()))?;
    serde_json::to_writer(&mut out, &LogLine::Header(header.clone()))
        .map_err(io_from_json)?;
    out.write_all(b"\n")?;
    for turn in &session.turns {
        serde_json::to_writer(&mut out, &LogLine::Turn(turn.clone())).map_err(io_from_json)?;
        out.write_all(b"\n")?;
    }
    let summary = SessionLogSummary {
        elicited: session.elicited.clone(),
        termination,
        end_turn: session.end_turn,
        question_turn_count: session.question_turn_count,
    };
    serde_json::to_writer(&mut out, &LogLine::Summary(summary)).map_err(io_from_json)?;
    out.write_all(b"\n")?;
    Ok(())
}

fn io_from_json(e: serde_json::Error) -> EngineError {
    EngineError::LogIo(std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

/// Reads a session log back into its header and session state.
pub fn read_session_log(path: &Path) -> Result<(SessionLogHeader, Session), EngineError> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut header: Option<SessionLogHeader> = None;
    let mut turns: Vec<Turn> = Vec::new();
    let mut summary: Option<SessionLogSummary> = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LogLine = serde_json::from_str(&line).map_err(|e| EngineError::LogFormat {
            line: i + 1,
            message: e.to_string(),
        })?;
        match parsed {
            LogLine::Header(h) => header = Some(h),
            LogLine::Turn(t) => turns.push(t),
            LogLine::Summary(s) => summary = Some(s),
        }
    }
    let header = header.ok_or(EngineError::LogFormat {
        line: 1,
        message: "missing header line".to_string(),
    })?;
    let summary = summary.ok_or(EngineError::LogFormat {
        line: 0,
        message: "missing summary line".to_string(),
    })?;
    let session = Session {
        scenario_id: header.scenario_id.clone(),
        turns,
        elicited: summary.elicited,
        end_turn: summary.end_turn,
        question_turn_count: summary.question_turn_count,
        termination: Some(summary.termination),
        rng_seed: header.seed,
    };
    Ok((header, session))
}
