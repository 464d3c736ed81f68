//! Drives one interviewer policy through one full session: policy action,
//! environment step, turn annotation, repeat until termination.

use chrono::{SecondsFormat, Utc};

use crate::engine::{
    Environment, EnvironmentConfig, EngineError, Session, SessionLogHeader, Termination,
    TurnOutcome,
};
use crate::interviewer::InterviewerPolicy;
use crate::judge::JudgeBackend;
use crate::oracle::OracleBackend;
use crate::scenario::Scenario;

/// A completed session plus the log header describing how it was produced.
#[derive(Debug, Clone)]
pub struct SessionRun {
    pub header: SessionLogHeader,
    pub session: Session,
}

/// Runs one policy against one scenario until the session terminates. A
/// policy failure aborts the session with a backend-error termination
/// rather than propagating, so a crashing interviewer still yields a
/// scoreable (zero-credit) session.
pub fn run_session(
    scenario: &Scenario,
    cfg: EnvironmentConfig,
    policy: &mut dyn InterviewerPolicy,
    oracle: &dyn OracleBackend,
    judge: &dyn JudgeBackend,
) -> Result<SessionRun, EngineError> {
    let started_at = now_rfc3339();
    let (mut env, _opening) = Environment::start(scenario, cfg.clone(), oracle, judge)?;

    while !env.session().is_terminal() {
        let history = env.transcript().to_vec();
        let step = match policy.next_action(&scenario.initial_req, &history, env.config()) {
            Ok(step) => step,
            Err(e) => {
                log::warn!("interviewer policy failed: {e}");
                env.abort(Termination::BackendError);
                break;
            }
        };
        match env.step(step.utterance()) {
            Ok(TurnOutcome::Continue { .. }) | Ok(TurnOutcome::Terminated { .. }) => {
                env.annotate_last_turn(step.reasoning, step.raw);
            }
            Err(EngineError::EmptyUtterance) => {
                log::warn!("interviewer produced an empty utterance");
                env.abort(Termination::BackendError);
            }
            Err(e) => return Err(e),
        }
    }

    let session = env.into_session();
    let header = SessionLogHeader {
        scenario_id: scenario.id.clone(),
        config: cfg.clone(),
        seed: cfg.rng_seed,
        started_at,
        finished_at: now_rfc3339(),
    };
    Ok(SessionRun { header, session })
}

fn now_rfc3339() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}
