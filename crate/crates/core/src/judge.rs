//! Task evaluator: classifies each interviewer turn as clarify/probe/finish
//! and judges relevance against the remaining implicit requirements.
//!
//! Two backends ship in-tree: an LLM judge and a deterministic scripted
//! judge for offline runs and tests.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{EnvironmentConfig, Speaker};
use crate::gateway::{ChatMessage, ChatProvider, Gateway, GatewayError, ModelConfig, RawExchange};
use crate::scenario::ImplicitReq;

/// Literal emitted by interviewers to terminate the interview.
pub const FINISH_SENTINEL: &str = "[FINISH]";

/// Interview strategy taken by an interviewer turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionType {
    Clarify,
    Probe,
    Finish,
}

impl ActionType {
    pub fn as_str(&self) -> &'static str {
        match self {
            ActionType::Clarify => "clarify",
            ActionType::Probe => "probe",
            ActionType::Finish => "finish",
        }
    }
}

impl std::fmt::Display for ActionType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-turn verdict of the task evaluator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyJudgment {
    pub action_type: ActionType,
    pub is_relevant: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevant_id: Option<String>,
    pub reasoning: String,
}

impl StrategyJudgment {
    /// Checks the type invariants against the remaining set supplied at
    /// judgment time.
    pub fn check(&self, remaining: &[ImplicitReq]) -> Result<(), JudgeError> {
        if self.action_type == ActionType::Finish && (self.is_relevant || self.relevant_id.is_some())
        {
            return Err(JudgeError::Invalid(
                "finish judgment must not be relevant".to_string(),
            ));
        }
        if self.is_relevant {
            match &self.relevant_id {
                None => {
                    return Err(JudgeError::Invalid(
                        "relevant judgment missing relevant_id".to_string(),
                    ))
                }
                Some(id) if !remaining.iter().any(|r| &r.id == id) => {
                    return Err(JudgeError::Invalid(format!(
                        "relevant_id `{id}` is not in the remaining set"
                    )))
                }
                _ => {}
            }
        } else if self.relevant_id.is_some() {
            return Err(JudgeError::Invalid(
                "non-relevant judgment carries a relevant_id".to_string(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("invalid judgment: {0}")]
    Invalid(String),
    #[error("malformed judge output after {attempts} attempts: {last}")]
    Malformed { attempts: u32, last: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Judgment plus the raw payloads of the backend call (absent for scripted).
#[derive(Debug, Clone)]
pub struct JudgeReply {
    pub judgment: StrategyJudgment,
    pub raw: Option<RawExchange>,
}

pub trait JudgeBackend: Send + Sync {
    fn judge(
        &self,
        initial_req: &str,
        history: &[(Speaker, String)],
        latest_utterance: &str,
        remaining: &[ImplicitReq],
        cfg: &EnvironmentConfig,
    ) -> Result<JudgeReply, JudgeError>;
}

/// Which relevance wording to render. The extended variant asks the
/// relevance question for both clarify and probe turns so that clarify
/// turns are creditable under the per-strategy effectiveness ratio; the
/// paper-verbatim variant restricts it to probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgePromptVariant {
    #[default]
    Extended,
    PaperVerbatim,
}

pub fn format_history(history: &[(Speaker, String)]) -> String {
    if history.is_empty() {
        return "(none)".to_string();
    }
    history
        .iter()
        .map(|(speaker, text)| format!("{}: {}", speaker.display_name(), text))
        .collect::<Vec<_>>()
        .join("\n")
}

fn format_remaining(remaining: &[ImplicitReq]) -> String {
    if remaining.is_empty() {
        return "(none)".to_string();
    }
    remaining
        .iter()
        .map(|r| format!("- [{}] ({}) {}", r.id, r.category, r.description))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Renders the judge prompt. The returned pair is (system text, user text);
/// rendering is bit-exact and golden-file tested.
pub fn render_judge_prompt(
    initial_req: &str,
    history: &[(Speaker, String)],
    latest_utterance: &str,
    remaining: &[ImplicitReq],
    variant: JudgePromptVariant,
) -> (String, String) {
    let relevance_line = match variant {
        JudgePromptVariant::Extended => {
            "- If clarify or probe, assess whether it targets remaining implicit requirements."
        }
        JudgePromptVariant::PaperVerbatim => {
            "- If probe, assess whether it targets remaining implicit requirements."
        }
    };
    let system = format!(
        "You are an expert evaluator assessing the interviewer's action in a conversational requirements elicitation process.\n\
         Classify the interviewer's latest action and determine whether it targets remaining implicit requirements.\n\
         \n\
         Action Definitions:\n\
         - clarify: Ask for clarification of previously mentioned information.\n\
         - probe: Explore new or more detailed requirement information.\n\
         - finish: Conclude the conversation after sufficient information is collected.\n\
         \n\
         Evaluation Guidelines:\n\
         - Analyze the latest utterance based on full context.\n\
         - Determine the action type (clarify, probe, finish).\n\
         {relevance_line}\n\
         - Provide a brief justification.\n\
         \n\
         Output Format:\n\
         Return a JSON object:\n\
         {{\"action_type\": \"<type>\",\n \
         \"is_relevant_to_implicit_requirements\": <true/false>,\n \
         \"relevant_implicit_requirement_id\": \"<id or null>\",\n \
         \"reasoning\": \"<explanation>\"}}"
    );
    let user = format!(
        "Initial Requirements:\n{initial_req}\n\n\
         Conversation History:\n{}\n\n\
         Interviewer's Latest Utterance:\n{latest_utterance}\n\n\
         Remaining Implicit Requirements:\n{}",
        format_history(history),
        format_remaining(remaining),
    );
    (system, user)
}

/// Deterministic rule-based judge. Rules are evaluated in order:
/// 1. the finish sentinel terminates;
/// 2. a case-insensitive keyword match against a remaining requirement is a
///    relevant probe (first match in scenario order wins);
/// 3. an utterance quoting at least three consecutive words of a prior
///    oracle response is a non-relevant clarify;
/// 4. anything else is a non-relevant probe.
pub struct ScriptedJudge;

impl JudgeBackend for ScriptedJudge {
    fn judge(
        &self,
        _initial_req: &str,
        history: &[(Speaker, String)],
        latest_utterance: &str,
        remaining: &[ImplicitReq],
        _cfg: &EnvironmentConfig,
    ) -> Result<JudgeReply, JudgeError> {
        let judgment = scripted_judgment(history, latest_utterance, remaining);
        judgment.check(remaining)?;
        Ok(JudgeReply {
            judgment,
            raw: None,
        })
    }
}

fn scripted_judgment(
    history: &[(Speaker, String)],
    latest_utterance: &str,
    remaining: &[ImplicitReq],
) -> StrategyJudgment {
    if latest_utterance.trim() == FINISH_SENTINEL {
        return StrategyJudgment {
            action_type: ActionType::Finish,
            is_relevant: false,
            relevant_id: None,
            reasoning: "finish sentinel".to_string(),
        };
    }

    let utterance_lc = normalize(latest_utterance);
    for req in remaining {
        if let Some(keyword) = req
            .keywords
            .iter()
            .find(|k| utterance_lc.contains(&normalize(k)))
        {
            return StrategyJudgment {
                action_type: ActionType::Probe,
                is_relevant: true,
                relevant_id: Some(req.id.clone()),
                reasoning: format!("keyword `{keyword}` matches remaining requirement {}", req.id),
            };
        }
    }

    for (speaker, text) in history {
        if *speaker == Speaker::Oracle && quotes_fragment(&utterance_lc, &normalize(text)) {
            return StrategyJudgment {
                action_type: ActionType::Clarify,
                is_relevant: false,
                relevant_id: None,
                reasoning: "quotes a prior oracle response".to_string(),
            };
        }
    }

    StrategyJudgment {
        action_type: ActionType::Probe,
        is_relevant: false,
        relevant_id: None,
        reasoning: "no keyword match against remaining requirements".to_string(),
    }
}

fn normalize(text: &str) -> String {
    text.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

/// True when `utterance` contains any 3-word window of `source`.
fn quotes_fragment(utterance: &str, source: &str) -> bool {
    let words: Vec<&str> = source.split(' ').filter(|w| !w.is_empty()).collect();
    if words.len() < 3 {
        return false;
    }
    words
        .windows(3)
        .any(|window| utterance.contains(&window.join(" ")))
}

/// LLM-backed judge over the gateway.
pub struct LlmJudge<P: ChatProvider> {
    gateway: Gateway<P>,
    model: ModelConfig,
    variant: JudgePromptVariant,
}

impl<P: ChatProvider> LlmJudge<P> {
    pub fn new(gateway: Gateway<P>, model: ModelConfig) -> Self {
        LlmJudge {
            gateway,
            model,
            variant: JudgePromptVariant::default(),
        }
    }

    pub fn with_variant(mut self, variant: JudgePromptVariant) -> Self {
        self.variant = variant;
        self
    }
}

const JUDGE_FIELDS: [&str; 4] = [
    "action_type",
    "is_relevant_to_implicit_requirements",
    "relevant_implicit_requirement_id",
    "reasoning",
];

impl<P: ChatProvider> JudgeBackend for LlmJudge<P> {
    fn judge(
        &self,
        initial_req: &str,
        history: &[(Speaker, String)],
        latest_utterance: &str,
        remaining: &[ImplicitReq],
        cfg: &EnvironmentConfig,
    ) -> Result<JudgeReply, JudgeError> {
        let (system, user) =
            render_judge_prompt(initial_req, history, latest_utterance, remaining, self.variant);
        let messages = [ChatMessage::system(system), ChatMessage::user(user)];
        let model = ModelConfig {
            temperature: cfg.judge_temperature,
            max_tokens: cfg.max_response_tokens,
            timeout_s: cfg.request_timeout_s,
            ..self.model.clone()
        };

        let mut last = String::new();
        let attempts = cfg.retries_on_malformed + 1;
        for _ in 0..attempts {
            let (text, raw) = self.gateway.complete(&messages, &model)?;
            match parse_judgment(&text, remaining) {
                Ok(judgment) => {
                    return Ok(JudgeReply {
                        judgment,
                        raw: Some(raw),
                    })
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(JudgeError::Malformed { attempts, last })
    }
}

fn parse_judgment(text: &str, remaining: &[ImplicitReq]) -> Result<StrategyJudgment, JudgeError> {
    let obj = crate::gateway::extract_structured(text, &JUDGE_FIELDS)?;
    let action_type = match obj["action_type"].as_str() {
        Some("clarify") => ActionType::Clarify,
        Some("probe") => ActionType::Probe,
        Some("finish") => ActionType::Finish,
        other => {
            return Err(JudgeError::Invalid(format!(
                "unknown action_type {other:?}"
            )))
        }
    };
    let is_relevant = obj["is_relevant_to_implicit_requirements"]
        .as_bool()
        .ok_or_else(|| JudgeError::Invalid("relevance flag is not a boolean".to_string()))?;
    let relevant_id = match &obj["relevant_implicit_requirement_id"] {
        serde_json::Value::Null => None,
        serde_json::Value::String(s) if s == "null" || s.is_empty() => None,
        serde_json::Value::String(s) => Some(s.clone()),
        other => {
            return Err(JudgeError::Invalid(format!(
                "relevant_implicit_requirement_id has unexpected type: {other}"
            )))
        }
    };
    let reasoning = obj["reasoning"].as_str().unwrap_or_default().to_string();
    let judgment = StrategyJudgment {
        action_type,
        is_relevant,
        // A non-relevant judgment may still name an id; drop it to satisfy
        // the invariant rather than rejecting the whole output.
        relevant_id: if is_relevant { relevant_id } else { None },
        reasoning,
    };
    judgment.check(remaining)?;
    Ok(judgment)
}
