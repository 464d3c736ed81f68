//! Cohen's kappa and FP/FN rates over paired judgments, plus the
//! replay-based validation protocol: annotated real transcripts are
//! replayed against an oracle or judge backend and the backend's outputs
//! are scored against the reference annotations.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{EnvironmentConfig, Speaker};
use crate::judge::{ActionType, JudgeBackend};
use crate::oracle::{OracleBackend, OracleContext};
use crate::scenario::ImplicitReq;

#[derive(Debug, Error)]
pub enum AgreementError {
    #[error("label `{0}` is outside the declared label set")]
    UnknownLabel(String),
    #[error("paired judgment list is empty")]
    Empty,
    #[error("FP/FN rates require a binary label set, got {0} labels")]
    NonBinary(usize),
    #[error("cannot read {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Transcript {
        path: std::path::PathBuf,
        line: usize,
        message: String,
    },
}

/// Paired (reference, candidate) labels over a shared finite label set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedJudgments {
    pub labels: Vec<String>,
    pub items: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
}

impl PairedJudgments {
    pub fn new(
        labels: Vec<String>,
        items: Vec<(String, String)>,
    ) -> Result<Self, AgreementError> {
        let set: BTreeSet<&String> = labels.iter().collect();
        for (a, b) in &items {
            for label in [a, b] {
                if !set.contains(label) {
                    return Err(AgreementError::UnknownLabel(label.clone()));
                }
            }
        }
        Ok(PairedJudgments {
            labels,
            items,
            session_id: None,
        })
    }

    pub fn from_bools(items: &[(bool, bool)]) -> Self {
        let as_label = |b: bool| if b { "disclose" } else { "not" }.to_string();
        PairedJudgments {
            labels: vec!["disclose".to_string(), "not".to_string()],
            items: items.iter().map(|(a, b)| (as_label(*a), as_label(*b))).collect(),
            session_id: None,
        }
    }
}

/// Agreement statistics with the underlying confusion counts, keyed
/// (reference label, candidate label).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementResult {
    pub kappa: Option<f64>,
    pub fp_rate: Option<f64>,
    pub fn_rate: Option<f64>,
    pub item_count: usize,
    pub confusion: BTreeMap<String, BTreeMap<String, usize>>,
}

/// Chance-corrected agreement: kappa = (p_o - p_e) / (1 - p_e), with p_e
/// from the marginal label frequencies. `None` when p_e = 1 (both raters
/// constant and equal).
pub fn cohen_kappa(pairs: &PairedJudgments) -> Result<Option<f64>, AgreementError> {
    if pairs.items.is_empty() {
        return Err(AgreementError::Empty);
    }
    let n = pairs.items.len() as f64;
    let observed = pairs.items.iter().filter(|(a, b)| a == b).count() as f64 / n;

    let mut ref_marginals: BTreeMap<&String, usize> = BTreeMap::new();
    let mut cand_marginals: BTreeMap<&String, usize> = BTreeMap::new();
    for (a, b) in &pairs.items {
        *ref_marginals.entry(a).or_insert(0) += 1;
        *cand_marginals.entry(b).or_insert(0) += 1;
    }
    let expected: f64 = pairs
        .labels
        .iter()
        .map(|label| {
            let pa = *ref_marginals.get(label).unwrap_or(&0) as f64 / n;
            let pb = *cand_marginals.get(label).unwrap_or(&0) as f64 / n;
            pa * pb
        })
        .sum();

    if (1.0 - expected).abs() < f64::EPSILON {
        return Ok(None);
    }
    Ok(Some((observed - expected) / (1.0 - expected)))
}

/// FP rate = false positives / reference negatives; FN rate = false
/// negatives / reference positives. Positive label is the first of the
/// declared binary set. `None` on zero denominators.
pub fn fp_fn_rates(
    pairs: &PairedJudgments,
) -> Result<(Option<f64>, Option<f64>), AgreementError> {
    if pairs.labels.len() != 2 {
        return Err(AgreementError::NonBinary(pairs.labels.len()));
    }
    let positive = &pairs.labels[0];
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    let mut ref_pos = 0usize;
    let mut ref_neg = 0usize;
    for (reference, candidate) in &pairs.items {
        if reference == positive {
            ref_pos += 1;
            if candidate != positive {
                fn_ += 1;
            }
        } else {
            ref_neg += 1;
            if candidate == positive {
                fp += 1;
            }
        }
    }
    let fp_rate = (ref_neg > 0).then(|| fp as f64 / ref_neg as f64);
    let fn_rate = (ref_pos > 0).then(|| fn_ as f64 / ref_pos as f64);
    Ok((fp_rate, fn_rate))
}

fn confusion(pairs: &PairedJudgments) -> BTreeMap<String, BTreeMap<String, usize>> {
    let mut matrix: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for (a, b) in &pairs.items {
        *matrix
            .entry(a.clone())
            .or_default()
            .entry(b.clone())
            .or_insert(0) += 1;
    }
    matrix
}

/// Full agreement statistics for one paired set; FP/FN only for binary sets.
pub fn agreement_result(pairs: &PairedJudgments) -> Result<AgreementResult, AgreementError> {
    let kappa = cohen_kappa(pairs)?;
    let (fp_rate, fn_rate) = if pairs.labels.len() == 2 {
        fp_fn_rates(pairs)?
    } else {
        (None, None)
    };
    Ok(AgreementResult {
        kappa,
        fp_rate,
        fn_rate,
        item_count: pairs.items.len(),
        confusion: confusion(pairs),
    })
}

/// One line of an annotated transcript. Interviewer turns carry the
/// reference annotations; `ref_req_id` names the requirement the real user
/// disclosed (used to reconstruct the oracle context).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedTurn {
    pub speaker: Speaker,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_disclosure: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_action: Option<ActionType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_relevant: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_req_id: Option<String>,
}

/// Header line of an annotated transcript: session id, the initial
/// requirement opening the interview, and the scenario's implicit
/// requirements (needed to rebuild backend context during replay).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptMeta {
    pub session_id: String,
    pub initial_req: String,
    pub requirements: Vec<ImplicitReq>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedTranscript {
    pub meta: TranscriptMeta,
    pub turns: Vec<AnnotatedTurn>,
}

/// Reads one annotated transcript: JSONL whose first line is the meta
/// header and remaining lines are turns.
pub fn read_annotated_transcript(path: &Path) -> Result<AnnotatedTranscript, AgreementError> {
    let text = std::fs::read_to_string(path).map_err(|source| AgreementError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (i, first) = lines.next().ok_or_else(|| AgreementError::Transcript {
        path: path.to_path_buf(),
        line: 1,
        message: "empty transcript".to_string(),
    })?;
    let meta: TranscriptMeta =
        serde_json::from_str(first).map_err(|e| AgreementError::Transcript {
            path: path.to_path_buf(),
            line: i + 1,
            message: format!("bad meta header: {e}"),
        })?;
    let mut turns = Vec::new();
    for (i, line) in lines {
        let turn: AnnotatedTurn =
            serde_json::from_str(line).map_err(|e| AgreementError::Transcript {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
        turns.push(turn);
    }
    Ok(AnnotatedTranscript { meta, turns })
}

/// Reads every `.jsonl` transcript in a directory, sorted by file name.
pub fn read_transcript_dir(dir: &Path) -> Result<Vec<AnnotatedTranscript>, AgreementError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|source| AgreementError::Io {
            path: dir.to_path_buf(),
            source,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("jsonl"))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_annotated_transcript(p)).collect()
}

/// Reduces an oracle reply to a disclosure label. Pluggable because the
/// reduction used during the original validation is not fixed by the
/// protocol.
pub trait DisclosureDetector: Send + Sync {
    fn name(&self) -> &'static str;
    fn detect(&self, reply: &str, target: Option<&ImplicitReq>, all: &[ImplicitReq]) -> bool;
}

/// Deterministic detector: disclosure iff the reply contains the targeted
/// requirement's description (case-insensitive); with no target, any
/// requirement description counts as a premature disclosure.
pub struct KeywordDetector;

impl DisclosureDetector for KeywordDetector {
    fn name(&self) -> &'static str {
        "keyword"
    }

    fn detect(&self, reply: &str, target: Option<&ImplicitReq>, all: &[ImplicitReq]) -> bool {
        let reply_lc = reply.to_lowercase();
        match target {
            Some(req) => reply_lc.contains(&req.description.to_lowercase()),
            None => all
                .iter()
                .any(|req| reply_lc.contains(&req.description.to_lowercase())),
        }
    }
}

/// Per-session results plus pooled statistics and the mean/std of
/// per-session kappas (undefined kappas are excluded from the mean).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementSummary {
    pub per_session: Vec<(String, AgreementResult)>,
    pub pooled: AgreementResult,
    pub kappa_mean: Option<f64>,
    pub kappa_std: Option<f64>,
}

fn summarize(per_session: Vec<(String, PairedJudgments)>) -> Result<AgreementSummary, AgreementError> {
    let mut results = Vec::new();
    let mut pooled_items = Vec::new();
    let mut labels: Option<Vec<String>> = None;
    for (id, pairs) in per_session {
        labels.get_or_insert_with(|| pairs.labels.clone());
        pooled_items.extend(pairs.items.clone());
        results.push((id, agreement_result(&pairs)?));
    }
    let pooled = agreement_result(&PairedJudgments {
        labels: labels.ok_or(AgreementError::Empty)?,
        items: pooled_items,
        session_id: None,
    })?;
    let kappas: Vec<f64> = results.iter().filter_map(|(_, r)| r.kappa).collect();
    let stats = crate::metrics::mean_std(&kappas);
    Ok(AgreementSummary {
        per_session: results,
        pooled,
        kappa_mean: stats.map(|s| s.mean),
        kappa_std: stats.map(|s| s.std),
    })
}

/// Outcome of one replay validation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    /// Disclosure agreement (oracle mode).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disclosure: Option<AgreementSummary>,
    /// Action-type agreement (judge mode).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<AgreementSummary>,
    /// Relevance agreement (judge mode).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevance: Option<AgreementSummary>,
    /// Backend failures, counted and excluded from the statistics.
    pub backend_errors: usize,
    /// Detector used to reduce oracle replies to disclosure labels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector: Option<String>,
}

/// Replays each transcript's interviewer turns against an oracle backend
/// and scores its disclosure behavior against the reference annotations.
/// The dialogue history fed to the backend is the real transcript, so
/// later turns stay aligned with what the real user actually said.
pub fn replay_oracle_validation(
    transcripts: &[AnnotatedTranscript],
    oracle: &dyn OracleBackend,
    detector: &dyn DisclosureDetector,
    cfg: &EnvironmentConfig,
) -> Result<ReplayReport, AgreementError> {
    let mut per_session = Vec::new();
    let mut backend_errors = 0usize;
    for transcript in transcripts {
        let mut items: Vec<(bool, bool)> = Vec::new();
        let mut history: Vec<(Speaker, String)> =
            vec![(Speaker::Oracle, transcript.meta.initial_req.clone())];
        for turn in &transcript.turns {
            if turn.speaker == Speaker::Interviewer {
                if let Some(reference) = turn.ref_disclosure {
                    let relevant = turn.ref_relevant.unwrap_or(false);
                    let target = turn
                        .ref_req_id
                        .as_deref()
                        .and_then(|id| transcript.meta.requirements.iter().find(|r| r.id == id));
                    let ctx = OracleContext {
                        conversation_history: history.clone(),
                        latest_utterance: turn.text.clone(),
                        action_type: turn.ref_action.unwrap_or(ActionType::Probe),
                        is_relevant: relevant && target.is_some(),
                        relevant_requirement: (relevant && target.is_some())
                            .then(|| target.unwrap().clone()),
                    };
                    match oracle.respond(&ctx, cfg) {
                        Ok(reply) => {
                            let detected = detector.detect(
                                &reply.response.text,
                                target,
                                &transcript.meta.requirements,
                            );
                            items.push((reference, detected));
                        }
                        Err(e) => {
                            log::warn!("oracle replay failed: {e}");
                            backend_errors += 1;
                        }
                    }
                }
            }
            history.push((turn.speaker, turn.text.clone()));
        }
        let mut pairs = PairedJudgments::from_bools(&items);
        pairs.session_id = Some(transcript.meta.session_id.clone());
        per_session.push((transcript.meta.session_id.clone(), pairs));
    }
    Ok(ReplayReport {
        disclosure: Some(summarize(per_session)?),
        action: None,
        relevance: None,
        backend_errors,
        detector: Some(detector.name().to_string()),
    })
}

/// Replays each transcript's interviewer turns against a judge backend and
/// scores action classification and relevance judgment against the
/// reference annotations. The remaining-requirements set evolves per the
/// reference labels so the candidate sees the same context the annotators
/// did.
pub fn replay_judge_validation(
    transcripts: &[AnnotatedTranscript],
    judge: &dyn JudgeBackend,
    cfg: &EnvironmentConfig,
) -> Result<ReplayReport, AgreementError> {
    let action_labels: Vec<String> = ["clarify", "probe", "finish"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut action_sessions = Vec::new();
    let mut relevance_sessions = Vec::new();
    let mut backend_errors = 0usize;

    for transcript in transcripts {
        let mut action_items: Vec<(String, String)> = Vec::new();
        let mut relevance_items: Vec<(bool, bool)> = Vec::new();
        let mut remaining = transcript.meta.requirements.clone();
        let mut history: Vec<(Speaker, String)> =
            vec![(Speaker::Oracle, transcript.meta.initial_req.clone())];
        for turn in &transcript.turns {
            if turn.speaker == Speaker::Interviewer {
                if let (Some(ref_action), Some(ref_relevant)) = (turn.ref_action, turn.ref_relevant)
                {
                    match judge.judge(
                        &transcript.meta.initial_req,
                        &history,
                        &turn.text,
                        &remaining,
                        cfg,
                    ) {
                        Ok(reply) => {
                            action_items.push((
                                ref_action.as_str().to_string(),
                                reply.judgment.action_type.as_str().to_string(),
                            ));
                            relevance_items.push((ref_relevant, reply.judgment.is_relevant));
                        }
                        Err(e) => {
                            log::warn!("judge replay failed: {e}");
                            backend_errors += 1;
                        }
                    }
                }
                // Advance the reference elicitation state.
                if turn.ref_relevant == Some(true) {
                    if let Some(id) = &turn.ref_req_id {
                        remaining.retain(|r| &r.id != id);
                    }
                }
            }
            history.push((turn.speaker, turn.text.clone()));
        }
        let action_pairs = PairedJudgments::new(action_labels.clone(), action_items)?;
        action_sessions.push((transcript.meta.session_id.clone(), action_pairs));
        let mut relevance_pairs = PairedJudgments::from_bools(&relevance_items);
        relevance_pairs.session_id = Some(transcript.meta.session_id.clone());
        relevance_sessions.push((transcript.meta.session_id.clone(), relevance_pairs));
    }

    Ok(ReplayReport {
        disclosure: None,
        action: Some(summarize(action_sessions)?),
        relevance: Some(summarize(relevance_sessions)?),
        backend_errors,
        detector: None,
    })
}
