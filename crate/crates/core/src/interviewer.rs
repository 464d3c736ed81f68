//! Interviewer policies evaluated by the environment: LLM-backed non-CoT
//! and CoT variants, scripted baselines, and an adapter for external agents
//! speaking a line-delimited JSON protocol over stdin/stdout.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{EnvironmentConfig, Speaker};
use crate::gateway::{ChatMessage, ChatProvider, Gateway, GatewayError, ModelConfig, RawExchange};
use crate::judge::{format_history, FINISH_SENTINEL};
use crate::scenario::ImplicitReq;

/// What the interviewer does this turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InterviewerAction {
    Question { text: String },
    Finish,
}

/// Action plus CoT reasoning (log only) and the raw backend payloads.
#[derive(Debug, Clone)]
pub struct PolicyStep {
    pub action: InterviewerAction,
    pub reasoning: Option<String>,
    pub raw: Option<RawExchange>,
}

impl PolicyStep {
    fn plain(action: InterviewerAction) -> Self {
        PolicyStep {
            action,
            reasoning: None,
            raw: None,
        }
    }

    /// Utterance to feed the environment: the question text, or the finish
    /// sentinel.
    pub fn utterance(&self) -> &str {
        match &self.action {
            InterviewerAction::Question { text } => text,
            InterviewerAction::Finish => FINISH_SENTINEL,
        }
    }
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("malformed interviewer output after {attempts} attempts: {last}")]
    Malformed { attempts: u32, last: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("external agent protocol violation: {0}")]
    Protocol(String),
    #[error("external agent i/o: {0}")]
    AgentIo(#[from] std::io::Error),
    #[error("external agent missed the {0:?} reply deadline")]
    AgentTimeout(Duration),
}

/// One interviewer policy. Policies may keep per-session state (call
/// counters, a subprocess); one policy instance drives one session.
pub trait InterviewerPolicy: Send {
    fn next_action(
        &mut self,
        initial_req: &str,
        history: &[(Speaker, String)],
        cfg: &EnvironmentConfig,
    ) -> Result<PolicyStep, PolicyError>;
}

/// Terminates immediately; the floor baseline.
pub struct NullPolicy;

impl InterviewerPolicy for NullPolicy {
    fn next_action(
        &mut self,
        _initial_req: &str,
        _history: &[(Speaker, String)],
        _cfg: &EnvironmentConfig,
    ) -> Result<PolicyStep, PolicyError> {
        Ok(PolicyStep::plain(InterviewerAction::Finish))
    }
}

/// Asks about each implicit requirement in scenario order (quoting its
/// description so the scripted judge's keyword rule matches), then
/// finishes; the ceiling baseline.
pub struct ScriptedPerfect {
    requirements: Vec<ImplicitReq>,
    next_index: usize,
}

impl ScriptedPerfect {
    pub fn new(requirements: Vec<ImplicitReq>) -> Self {
        ScriptedPerfect {
            requirements,
            next_index: 0,
        }
    }
}

impl InterviewerPolicy for ScriptedPerfect {
    fn next_action(
        &mut self,
        _initial_req: &str,
        _history: &[(Speaker, String)],
        _cfg: &EnvironmentConfig,
    ) -> Result<PolicyStep, PolicyError> {
        match self.requirements.get(self.next_index) {
            Some(req) => {
                self.next_index += 1;
                Ok(PolicyStep::plain(InterviewerAction::Question {
                    text: format!("Could you tell me more about this: {}?", req.description),
                }))
            }
            None => Ok(PolicyStep::plain(InterviewerAction::Finish)),
        }
    }
}

/// Never matches anything and never finishes; exercises the turn cap.
pub struct StallPolicy {
    counter: usize,
}

impl StallPolicy {
    pub fn new() -> Self {
        StallPolicy { counter: 0 }
    }
}

impl Default for StallPolicy {
    fn default() -> Self {
        Self::new()
    }
}

impl InterviewerPolicy for StallPolicy {
    fn next_action(
        &mut self,
        _initial_req: &str,
        _history: &[(Speaker, String)],
        _cfg: &EnvironmentConfig,
    ) -> Result<PolicyStep, PolicyError> {
        self.counter += 1;
        Ok(PolicyStep::plain(InterviewerAction::Question {
            text: format!("Is there anything else worth covering (item {:09})?", self.counter),
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptVariant {
    NonCot,
    Cot,
}

/// Renders the interviewer prompt for one variant. The finish signal is the
/// literal `[FINISH]` on its own line.
pub fn render_interviewer_prompt(
    initial_req: &str,
    history: &[(Speaker, String)],
    variant: PromptVariant,
) -> (String, String) {
    let behavior = match variant {
        PromptVariant::NonCot => {
            "- Directly output your question without intermediate reasoning.\n\
             - To terminate the interview, output the finish signal [FINISH] on its own line."
        }
        PromptVariant::Cot => {
            "- You may reason step-by-step before producing your final question.\n\
             - After any reasoning, output exactly one final line: either `QUESTION: <your question>` or the finish signal [FINISH] on its own line."
        }
    };
    let system = format!(
        "You are an interviewer conducting a requirements elicitation interview for a software project.\n\
         The stakeholder's initial description is incomplete; your goal is to uncover the missing and implicit requirements through targeted questions.\n\
         \n\
         Rules:\n\
         - At each turn, either ask exactly one question to elicit missing requirements or terminate the interview.\n\
         - Ask one question per turn; never bundle several questions together.\n\
         {behavior}"
    );
    let user = format!(
        "Initial Requirements:\n{initial_req}\n\n\
         Conversation History:\n{}\n\n\
         Your next action:",
        format_history(history),
    );
    (system, user)
}

/// True when the text contains more than one question mark outside double
/// quotes. Violations of the one-question contract are logged, not
/// rejected.
pub fn violates_single_question(text: &str) -> bool {
    let mut in_quotes = false;
    let mut count = 0usize;
    for c in text.chars() {
        match c {
            '"' => in_quotes = !in_quotes,
            '?' if !in_quotes => count += 1,
            _ => {}
        }
    }
    count > 1
}

/// LLM-backed interviewer. Non-CoT runs at 2048 output tokens, CoT at 8196
/// to leave room for reasoning traces; both at temperature 0.
pub struct LlmInterviewer<P: ChatProvider> {
    gateway: Gateway<P>,
    model: ModelConfig,
    variant: PromptVariant,
}

impl<P: ChatProvider> LlmInterviewer<P> {
    pub fn new(gateway: Gateway<P>, model: ModelConfig, variant: PromptVariant) -> Self {
        LlmInterviewer {
            gateway,
            model,
            variant,
        }
    }
}

impl<P: ChatProvider> InterviewerPolicy for LlmInterviewer<P> {
    fn next_action(
        &mut self,
        initial_req: &str,
        history: &[(Speaker, String)],
        cfg: &EnvironmentConfig,
    ) -> Result<PolicyStep, PolicyError> {
        let (system, user) = render_interviewer_prompt(initial_req, history, self.variant);
        let messages = [ChatMessage::system(system), ChatMessage::user(user)];
        let model = ModelConfig {
            temperature: 0.0,
            max_tokens: match self.variant {
                PromptVariant::NonCot => 2048,
                PromptVariant::Cot => 8196,
            },
            timeout_s: cfg.request_timeout_s,
            ..self.model.clone()
        };

        let mut last = String::new();
        let attempts = cfg.retries_on_malformed + 1;
        for _ in 0..attempts {
            let (text, raw) = self.gateway.complete(&messages, &model)?;
            match parse_interviewer_output(&text, self.variant) {
                Ok((action, reasoning)) => {
                    if let InterviewerAction::Question { text } = &action {
                        if violates_single_question(text) {
                            log::warn!("interviewer asked more than one question: {text}");
                        }
                    }
                    return Ok(PolicyStep {
                        action,
                        reasoning,
                        raw: Some(raw),
                    });
                }
                Err(e) => last = e,
            }
        }
        Err(PolicyError::Malformed { attempts, last })
    }
}

fn parse_interviewer_output(
    text: &str,
    variant: PromptVariant,
) -> Result<(InterviewerAction, Option<String>), String> {
    match variant {
        PromptVariant::NonCot => {
            let trimmed = text.trim();
            if trimmed.is_empty() {
                return Err("empty output".to_string());
            }
            if trimmed.lines().any(|l| l.trim() == FINISH_SENTINEL) {
                return Ok((InterviewerAction::Finish, None));
            }
            Ok((
                InterviewerAction::Question {
                    text: trimmed.to_string(),
                },
                None,
            ))
        }
        PromptVariant::Cot => {
            // The parser takes the LAST final-form line so verbose traces
            // that mention the format earlier do not confuse it.
            let mut found: Option<(usize, InterviewerAction)> = None;
            for (i, line) in text.lines().enumerate() {
                let line = line.trim();
                if line == FINISH_SENTINEL {
                    found = Some((i, InterviewerAction::Finish));
                } else if let Some(q) = line.strip_prefix("QUESTION:") {
                    let q = q.trim();
                    if !q.is_empty() {
                        found = Some((
                            i,
                            InterviewerAction::Question {
                                text: q.to_string(),
                            },
                        ));
                    }
                }
            }
            match found {
                Some((i, action)) => {
                    let reasoning: String = text
                        .lines()
                        .take(i)
                        .collect::<Vec<_>>()
                        .join("\n")
                        .trim()
                        .to_string();
                    Ok((action, (!reasoning.is_empty()).then_some(reasoning)))
                }
                None => Err("no QUESTION: line or finish signal found".to_string()),
            }
        }
    }
}

/// Wire messages of the external-agent protocol. One state message per
/// turn, one reply per state message, strictly alternating.
#[derive(Debug, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum AgentRequest<'a> {
    State {
        initial_req: &'a str,
        history: &'a [(Speaker, String)],
    },
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum AgentReply {
    Question { text: String },
    Finish,
}

/// Reply deadline for external agents.
pub const AGENT_DEADLINE: Duration = Duration::from_secs(60);

/// Adapter for an external interviewer agent running as a subprocess and
/// speaking line-delimited JSON over stdin/stdout. The policy owns the
/// process; dropping it kills the agent.
pub struct ExternalAgent {
    child: Child,
    stdin: std::process::ChildStdin,
    lines: mpsc::Receiver<std::io::Result<String>>,
    deadline: Duration,
}

impl ExternalAgent {
    pub fn spawn(command: &str, args: &[String]) -> Result<Self, PolicyError> {
        let mut child = Command::new(command)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let reader = BufReader::new(stdout);
            for line in reader.lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(ExternalAgent {
            child,
            stdin,
            lines: rx,
            deadline: AGENT_DEADLINE,
        })
    }

    /// Shortens the reply deadline; intended for tests.
    pub fn with_deadline(mut self, deadline: Duration) -> Self {
        self.deadline = deadline;
        self
    }
}

impl Drop for ExternalAgent {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl InterviewerPolicy for ExternalAgent {
    fn next_action(
        &mut self,
        initial_req: &str,
        history: &[(Speaker, String)],
        _cfg: &EnvironmentConfig,
    ) -> Result<PolicyStep, PolicyError> {
        let request = AgentRequest::State {
            initial_req,
            history,
        };
        let mut line = serde_json::to_string(&request)
            .map_err(|e| PolicyError::Protocol(format!("cannot encode state: {e}")))?;
        line.push('\n');
        self.stdin.write_all(line.as_bytes())?;
        self.stdin.flush()?;

        let reply_line = match self.lines.recv_timeout(self.deadline) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return Err(PolicyError::AgentIo(e)),
            Err(mpsc::RecvTimeoutError::Timeout) => {
                return Err(PolicyError::AgentTimeout(self.deadline))
            }
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                return Err(PolicyError::Protocol(
                    "agent closed stdout before replying (one request, one reply)".to_string(),
                ))
            }
        };
        let reply: AgentReply = serde_json::from_str(&reply_line).map_err(|e| {
            PolicyError::Protocol(format!(
                "reply must be {{\"type\":\"question\",\"text\":...}} or {{\"type\":\"finish\"}}: {e}"
            ))
        })?;
        let action = match reply {
            AgentReply::Question { text } => {
                if text.trim().is_empty() {
                    return Err(PolicyError::Protocol("question text is empty".to_string()));
                }
                InterviewerAction::Question { text }
            }
            AgentReply::Finish => InterviewerAction::Finish,
        };
        Ok(PolicyStep::plain(action))
    }
}
