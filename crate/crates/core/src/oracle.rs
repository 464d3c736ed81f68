//! Oracle user: the simulated stakeholder. Grounded in the scenario's
//! implicit requirements, passive (never volunteers undisclosed
//! requirements), and conditioned on the full dialogue history.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{EnvironmentConfig, Speaker};
use crate::gateway::{ChatMessage, ChatProvider, Gateway, GatewayError, ModelConfig, RawExchange};
use crate::judge::{format_history, ActionType};
use crate::scenario::ImplicitReq;

/// Everything the oracle sees when producing one reply. The judgment fields
/// come from the task evaluator, which runs before the oracle each turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleContext {
    pub conversation_history: Vec<(Speaker, String)>,
    pub latest_utterance: String,
    /// Clarify or probe; finish turns never reach the oracle.
    pub action_type: ActionType,
    pub is_relevant: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevant_requirement: Option<ImplicitReq>,
}

impl OracleContext {
    pub fn check(&self) -> Result<(), OracleError> {
        if self.is_relevant != self.relevant_requirement.is_some() {
            return Err(OracleError::InvalidContext(
                "relevant_requirement must be present iff is_relevant".to_string(),
            ));
        }
        if self.action_type == ActionType::Finish {
            return Err(OracleError::InvalidContext(
                "finish turns never reach the oracle".to_string(),
            ));
        }
        Ok(())
    }
}

/// A 1-3 sentence stakeholder reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleResponse {
    pub text: String,
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("invalid oracle context: {0}")]
    InvalidContext(String),
    #[error("malformed oracle output after {attempts} attempts: {last}")]
    Malformed { attempts: u32, last: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone)]
pub struct OracleReply {
    pub response: OracleResponse,
    pub raw: Option<RawExchange>,
}

pub trait OracleBackend: Send + Sync {
    fn respond(&self, ctx: &OracleContext, cfg: &EnvironmentConfig)
        -> Result<OracleReply, OracleError>;
}

/// Renders the oracle prompt; bit-exact and golden-file tested.
pub fn render_oracle_prompt(ctx: &OracleContext) -> (String, String) {
    let system = "You are a user being interviewed about your software requirements.\n\
         Respond naturally to the interviewer's questions or statements.\n\
         \n\
         Response Guidelines:\n\
         - Answer based on your implicit requirements if the question is relevant.\n\
         - If the question is not relevant, politely indicate that you do not care about it.\n\
         - Keep responses brief and concise (1-3 sentences).\n\
         - Maintain a natural and conversational tone.\n\
         - Adjust your response according to the full dialogue context.\n\
         \n\
         Output Format:\n\
         Return a JSON object:\n\
         {\"response\": \"<answer>\"}"
        .to_string();

    let requirement = match &ctx.relevant_requirement {
        Some(req) => format!("[{}] ({}) {}", req.id, req.category, req.description),
        None => "null".to_string(),
    };
    let user = format!(
        "Conversation History:\n{}\n\n\
         Interviewer's Latest Utterance:\n{}\n\n\
         Context Metadata:\n\
         Action type: {}\n\
         Relevance flag: {}\n\
         Relevant implicit requirement: {} (null if not relevant)",
        format_history(&ctx.conversation_history),
        ctx.latest_utterance,
        ctx.action_type,
        ctx.is_relevant,
        requirement,
    );
    (system, user)
}

/// Fixed reply when the question does not target a remaining requirement.
pub const SCRIPTED_DECLINE: &str = "I don't have a particular preference about that.";

/// Deterministic oracle used for offline tests: discloses exactly the
/// targeted requirement's description when relevant, declines otherwise.
pub struct ScriptedOracle;

impl OracleBackend for ScriptedOracle {
    fn respond(
        &self,
        ctx: &OracleContext,
        _cfg: &EnvironmentConfig,
    ) -> Result<OracleReply, OracleError> {
        ctx.check()?;
        let text = match &ctx.relevant_requirement {
            Some(req) => format!("For that, here is what I need: {}.", req.description),
            None => SCRIPTED_DECLINE.to_string(),
        };
        Ok(OracleReply {
            response: OracleResponse { text },
            raw: None,
        })
    }
}

/// LLM-backed oracle over the gateway. Parses the first well-formed JSON
/// object in the model output; retries on parse failure with the same
/// prompt up to `retries_on_malformed`.
pub struct LlmOracle<P: ChatProvider> {
    gateway: Gateway<P>,
    model: ModelConfig,
}

impl<P: ChatProvider> LlmOracle<P> {
    pub fn new(gateway: Gateway<P>, model: ModelConfig) -> Self {
        LlmOracle { gateway, model }
    }
}

impl<P: ChatProvider> OracleBackend for LlmOracle<P> {
    fn respond(
        &self,
        ctx: &OracleContext,
        cfg: &EnvironmentConfig,
    ) -> Result<OracleReply, OracleError> {
        ctx.check()?;
        let (system, user) = render_oracle_prompt(ctx);
        let messages = [ChatMessage::system(system), ChatMessage::user(user)];
        let model = ModelConfig {
            temperature: cfg.oracle_temperature,
            max_tokens: cfg.max_response_tokens,
            timeout_s: cfg.request_timeout_s,
            ..self.model.clone()
        };

        let mut last = String::new();
        let attempts = cfg.retries_on_malformed + 1;
        for _ in 0..attempts {
            let (text, raw) = self.gateway.complete(&messages, &model)?;
            match parse_response(&text) {
                Ok(response) => {
                    return Ok(OracleReply {
                        response,
                        raw: Some(raw),
                    })
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(OracleError::Malformed { attempts, last })
    }
}

fn parse_response(text: &str) -> Result<OracleResponse, OracleError> {
    let obj = crate::gateway::extract_structured(text, &["response"])?;
    let answer = obj["response"]
        .as_str()
        .ok_or_else(|| OracleError::InvalidContext("response field is not a string".to_string()))?;
    if answer.trim().is_empty() {
        return Err(OracleError::InvalidContext("empty response".to_string()));
    }
    Ok(OracleResponse {
        text: answer.to_string(),
    })
}
