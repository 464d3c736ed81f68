//! Coverage, efficiency, and strategy metrics for one session, plus
//! aggregation across scenarios.
//!
//! Three measures: the elicitation ratio over implicit requirements
//! (overall and per category), the per-strategy effective-turn ratio, and
//! a turn-discounted key-question rate that rewards early hits with an
//! nDCG-style log2 discount.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Session, Termination, Turn};
use crate::judge::ActionType;
use crate::scenario::{Category, ImplicitReq, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Clarify,
    Probe,
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("elicited id `{0}` is not a requirement of this scenario")]
    UnknownId(String),
    #[error("requirement count K must be >= 1")]
    InvalidK,
    #[error("hit count {hits} exceeds requirement count {k}")]
    TooManyHits { hits: usize, k: usize },
    #[error("session {session} does not belong to scenario {scenario}")]
    ScenarioMismatch { session: String, scenario: String },
    #[error("session is not terminal")]
    NonTerminalSession,
    #[error("cannot aggregate an empty report list")]
    EmptyAggregate,
}

/// Elicitation ratio: |elicited ∩ filtered| / |filtered|. `None` when the
/// category filter leaves an empty denominator.
pub fn ire(
    elicited_ids: &BTreeSet<String>,
    reqs: &[ImplicitReq],
    category_filter: Option<Category>,
) -> Result<Option<f64>, MetricsError> {
    for id in elicited_ids {
        if !reqs.iter().any(|r| &r.id == id) {
            return Err(MetricsError::UnknownId(id.clone()));
        }
    }
    let filtered: Vec<&ImplicitReq> = reqs
        .iter()
        .filter(|r| category_filter.is_none_or(|c| r.category == c))
        .collect();
    if filtered.is_empty() {
        return Ok(None);
    }
    let hit = filtered.iter().filter(|r| elicited_ids.contains(&r.id)).count();
    Ok(Some(hit as f64 / filtered.len() as f64))
}

/// Per-strategy effective-turn ratio. Finish turns are excluded from both
/// numerator and denominator; `None` when a strategy was never used.
pub fn esr(turns: &[Turn]) -> BTreeMap<Strategy, Option<f64>> {
    let mut out = BTreeMap::new();
    for (strategy, action) in [
        (Strategy::Clarify, ActionType::Clarify),
        (Strategy::Probe, ActionType::Probe),
    ] {
        let total = turns.iter().filter(|t| t.judgment.action_type == action).count();
        let effective = turns
            .iter()
            .filter(|t| t.judgment.action_type == action && t.hit)
            .count();
        out.insert(
            strategy,
            (total > 0).then(|| effective as f64 / total as f64),
        );
    }
    out
}

/// Turn-discounted key-question rate over the hit sequence h_1..h_n:
/// DCG_n = Σ h_i / log2(i+1), IDCG_n = Σ_{i<=min(n,K)} 1 / log2(i+1),
/// TKQR = DCG_n / IDCG_n. Returns 0 for n = 0 by convention.
pub fn tkqr(hits: &[bool], k: usize) -> Result<f64, MetricsError> {
    if k < 1 {
        return Err(MetricsError::InvalidK);
    }
    let hit_count = hits.iter().filter(|h| **h).count();
    if hit_count > k {
        return Err(MetricsError::TooManyHits { hits: hit_count, k });
    }
    let n = hits.len();
    if n == 0 {
        return Ok(0.0);
    }
    let dcg: f64 = hits
        .iter()
        .enumerate()
        .filter(|(_, h)| **h)
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum();
    let idcg: f64 = (0..n.min(k)).map(|i| 1.0 / ((i + 2) as f64).log2()).sum();
    Ok(dcg / idcg)
}

/// Per-scenario metrics of one terminal session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario_id: String,
    pub application_type: String,
    pub ire: f64,
    /// `None` when the scenario has no requirement of that category.
    pub ire_by_category: BTreeMap<Category, Option<f64>>,
    /// Elicited / total per category; kept for pooled aggregation.
    pub category_counts: BTreeMap<Category, (usize, usize)>,
    pub esr: BTreeMap<Strategy, Option<f64>>,
    pub tkqr: f64,
    pub turns: usize,
    pub question_turn_count: usize,
    pub clarify_count: usize,
    pub probe_count: usize,
    pub hit_sequence: Vec<bool>,
    pub termination: Termination,
}

/// Computes the full per-scenario report from a terminal session.
pub fn session_report(session: &Session, scenario: &Scenario) -> Result<MetricsReport, MetricsError> {
    if session.scenario_id != scenario.id {
        return Err(MetricsError::ScenarioMismatch {
            session: session.scenario_id.clone(),
            scenario: scenario.id.clone(),
        });
    }
    let termination = session.termination.ok_or(MetricsError::NonTerminalSession)?;

    let elicited: BTreeSet<String> = session.elicited.iter().cloned().collect();
    let overall = ire(&elicited, &scenario.implicit_reqs, None)?
        .expect("scenario has at least one implicit requirement");

    let mut ire_by_category = BTreeMap::new();
    let mut category_counts = BTreeMap::new();
    for category in Category::ALL {
        ire_by_category.insert(
            category,
            ire(&elicited, &scenario.implicit_reqs, Some(category))?,
        );
        let total = scenario
            .implicit_reqs
            .iter()
            .filter(|r| r.category == category)
            .count();
        let hit = scenario
            .implicit_reqs
            .iter()
            .filter(|r| r.category == category && elicited.contains(&r.id))
            .count();
        category_counts.insert(category, (hit, total));
    }

    // Hit sequence over question turns only (finish excluded).
    let hit_sequence: Vec<bool> = session
        .turns
        .iter()
        .filter(|t| t.judgment.action_type != ActionType::Finish)
        .map(|t| t.hit)
        .collect();
    let tkqr_value = tkqr(&hit_sequence, scenario.requirement_count())?;

    let count_action = |action: ActionType| {
        session
            .turns
            .iter()
            .filter(|t| t.judgment.action_type == action)
            .count()
    };

    Ok(MetricsReport {
        scenario_id: scenario.id.clone(),
        application_type: scenario.application_type.clone(),
        ire: overall,
        ire_by_category,
        category_counts,
        esr: esr(&session.turns),
        tkqr: tkqr_value,
        turns: session.turns.len(),
        question_turn_count: session.question_turn_count,
        clarify_count: count_action(ActionType::Clarify),
        probe_count: count_action(ActionType::Probe),
        hit_sequence,
        termination,
    })
}

/// Mean and sample standard deviation (n-1 denominator; 0 for a single
/// observation).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> Option<MeanStd> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Some(MeanStd { mean, std })
}

/// Pooled effective/total turn counts for one strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PooledStrategy {
    pub effective: usize,
    pub total: usize,
}

impl PooledStrategy {
    pub fn ratio(&self) -> Option<f64> {
        (self.total > 0).then(|| self.effective as f64 / self.total as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeAggregate {
    pub scenario_count: usize,
    pub ire_mean: f64,
    pub tkqr_mean: f64,
}

/// Metrics pooled and averaged across scenarios. Per-scenario metrics are
/// averaged with sample standard deviation; the per-strategy ratio is
/// pooled over turn counts, not averaged; per-category coverage is pooled
/// over requirement counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub session_count: usize,
    pub turns: MeanStd,
    pub question_turns: MeanStd,
    pub ire: MeanStd,
    pub tkqr: MeanStd,
    pub esr_pooled: BTreeMap<Strategy, PooledStrategy>,
    pub ire_by_category_pooled: BTreeMap<Category, Option<f64>>,
    /// Scenarios lacking any requirement of a category, per category.
    pub category_absent_counts: BTreeMap<Category, usize>,
    /// Sessions where a strategy was never used, per strategy.
    pub esr_undefined_counts: BTreeMap<Strategy, usize>,
    pub by_application_type: BTreeMap<String, TypeAggregate>,
}

pub fn aggregate(reports: &[MetricsReport]) -> Result<AggregateReport, MetricsError> {
    if reports.is_empty() {
        return Err(MetricsError::EmptyAggregate);
    }

    let collect = |f: fn(&MetricsReport) -> f64| -> Vec<f64> { reports.iter().map(f).collect() };
    let turns = mean_std(&collect(|r| r.turns as f64)).unwrap();
    let question_turns = mean_std(&collect(|r| r.question_turn_count as f64)).unwrap();
    let ire_stats = mean_std(&collect(|r| r.ire)).unwrap();
    let tkqr_stats = mean_std(&collect(|r| r.tkqr)).unwrap();

    let mut esr_pooled: BTreeMap<Strategy, PooledStrategy> = BTreeMap::new();
    let mut esr_undefined_counts: BTreeMap<Strategy, usize> = BTreeMap::new();
    for strategy in [Strategy::Clarify, Strategy::Probe] {
        let mut pooled = PooledStrategy {
            effective: 0,
            total: 0,
        };
        let mut undefined = 0usize;
        for report in reports {
            let count = match strategy {
                Strategy::Clarify => report.clarify_count,
                Strategy::Probe => report.probe_count,
            };
            if count == 0 {
                undefined += 1;
            }
            pooled.total += count;
            // ratio * count is exact here: the ratio came from integer counts
            if let Some(ratio) = report.esr.get(&strategy).copied().flatten() {
                pooled.effective += (ratio * count as f64).round() as usize;
            }
        }
        esr_pooled.insert(strategy, pooled);
        esr_undefined_counts.insert(strategy, undefined);
    }

    let mut ire_by_category_pooled = BTreeMap::new();
    let mut category_absent_counts = BTreeMap::new();
    for category in Category::ALL {
        let mut hit = 0usize;
        let mut total = 0usize;
        let mut absent = 0usize;
        for report in reports {
            let (h, t) = report.category_counts.get(&category).copied().unwrap_or((0, 0));
            hit += h;
            total += t;
            if t == 0 {
                absent += 1;
            }
        }
        ire_by_category_pooled.insert(
            category,
            (total > 0).then(|| hit as f64 / total as f64),
        );
        category_absent_counts.insert(category, absent);
    }

    let mut by_type: BTreeMap<String, Vec<&MetricsReport>> = BTreeMap::new();
    for report in reports {
        by_type
            .entry(report.application_type.clone())
            .or_default()
            .push(report);
    }
    let by_application_type = by_type
        .into_iter()
        .map(|(ty, group)| {
            let n = group.len() as f64;
            (
                ty,
                TypeAggregate {
                    scenario_count: group.len(),
                    ire_mean: group.iter().map(|r| r.ire).sum::<f64>() / n,
                    tkqr_mean: group.iter().map(|r| r.tkqr).sum::<f64>() / n,
                },
            )
        })
        .collect();

    Ok(AggregateReport {
        session_count: reports.len(),
        turns,
        question_turns,
        ire: ire_stats,
        tkqr: tkqr_stats,
        esr_pooled,
        ire_by_category_pooled,
        category_absent_counts,
        esr_undefined_counts,
        by_application_type,
    })
}

/// Fixed CSV columns for per-scenario report export; undefined values are
/// empty cells.
pub const CSV_COLUMNS: [&str; 11] = [
    "scenario_id",
    "ire",
    "ire_int",
    "ire_con",
    "ire_sty",
    "esr_clarify",
    "esr_probe",
    "tkqr",
    "turns",
    "clarify_count",
    "probe_count",
];

pub fn reports_to_csv(reports: &[MetricsReport]) -> String {
    let mut out = String::new();
    out.push_str(&CSV_COLUMNS.join(","));
    out.push('\n');
    for r in reports {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let row = [
            r.scenario_id.clone(),
            format!("{:.6}", r.ire),
            opt(r.ire_by_category[&Category::Interaction]),
            opt(r.ire_by_category[&Category::Content]),
            opt(r.ire_by_category[&Category::Style]),
            opt(r.esr[&Strategy::Clarify]),
            opt(r.esr[&Strategy::Probe]),
            format!("{:.6}", r.tkqr),
            r.turns.to_string(),
            r.clarify_count.to_string(),
            r.probe_count.to_string(),
        ];
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::judge::StrategyJudgment;
    use crate::scenario::UserStory;

    fn req(id: &str, category: Category) -> ImplicitReq {
        ImplicitReq {
            id: id.to_string(),
            description: format!("description of {id}"),
            category,
            keywords: Vec::new(),
        }
    }

    fn turn(index: usize, action: ActionType, hit: bool) -> Turn {
        Turn {
            index,
            interviewer_utterance: format!("q{index}"),
            judgment: StrategyJudgment {
                action_type: action,
                is_relevant: hit,
                relevant_id: hit.then(|| format!("r{index}")),
                reasoning: String::new(),
            },
            oracle_response: (action != ActionType::Finish).then(|| "a".to_string()),
            hit,
            newly_elicited_id: hit.then(|| format!("r{index}")),
            interviewer_reasoning: None,
            interviewer_exchange: None,
            judge_exchange: None,
            oracle_exchange: None,
        }
    }

    fn ids(list: &[&str]) -> BTreeSet<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn ire_basic_ratios() {
        let reqs = vec![
            req("r1", Category::Interaction),
            req("r2", Category::Interaction),
            req("r3", Category::Content),
            req("r4", Category::Content),
        ];
        assert_eq!(ire(&ids(&["r1", "r3"]), &reqs, None).unwrap(), Some(0.5));
        assert_eq!(ire(&ids(&[]), &reqs, None).unwrap(), Some(0.0));
        assert_eq!(ire(&ids(&["r1"]), &reqs, Some(Category::Style)).unwrap(), None);
    }

    #[test]
    fn ire_rejects_unknown_id() {
        let reqs = vec![req("r1", Category::Content)];
        assert!(matches!(
            ire(&ids(&["bogus"]), &reqs, None),
            Err(MetricsError::UnknownId(_))
        ));
    }

    #[test]
    fn esr_ratios_and_undefined() {
        let turns: Vec<Turn> = (1..=6)
            .map(|i| turn(i, ActionType::Probe, i <= 3))
            .collect();
        let r = esr(&turns);
        assert_eq!(r[&Strategy::Probe], Some(0.5));
        assert_eq!(r[&Strategy::Clarify], None);

        let clarify_turns = vec![
            turn(1, ActionType::Clarify, true),
            turn(2, ActionType::Clarify, true),
        ];
        assert_eq!(esr(&clarify_turns)[&Strategy::Clarify], Some(1.0));
    }

    #[test]
    fn tkqr_point_values() {
        assert!((tkqr(&[true, true], 2).unwrap() - 1.0).abs() < 1e-12);
        assert!((tkqr(&[true, false, true], 2).unwrap() - 0.91972).abs() < 1e-5);
        assert!((tkqr(&[false, true, true, false], 3).unwrap() - 0.53072).abs() < 1e-5);
    }

    #[test]
    fn tkqr_edge_cases() {
        assert_eq!(tkqr(&[], 3).unwrap(), 0.0);
        assert!(matches!(tkqr(&[true], 0), Err(MetricsError::InvalidK)));
        assert!(matches!(
            tkqr(&[true, true, true], 2),
            Err(MetricsError::TooManyHits { .. })
        ));
    }

    #[test]
    fn aggregate_two_reports() {
        let scenario = Scenario {
            id: "s".to_string(),
            application_type: "Dashboards".to_string(),
            initial_req: "x".to_string(),
            implicit_reqs: vec![
                req("r1", Category::Interaction),
                req("r2", Category::Content),
                req("r3", Category::Content),
                req("r4", Category::Content),
                req("r5", Category::Content),
            ],
            final_reqs: vec![UserStory {
                id: "f".to_string(),
                text: "t".to_string(),
            }],
        };
        let make = |id: &str, elicited: Vec<&str>, turns: Vec<Turn>| {
            let mut sc = scenario.clone();
            sc.id = id.to_string();
            let question_turn_count = turns
                .iter()
                .filter(|t| t.judgment.action_type != ActionType::Finish)
                .count();
            let session = Session {
                scenario_id: id.to_string(),
                elicited: elicited.iter().map(|s| s.to_string()).collect(),
                end_turn: turns.len(),
                question_turn_count,
                turns,
                termination: Some(Termination::Finished),
                rng_seed: 0,
            };
            session_report(&session, &sc).unwrap()
        };
        // IRE 0.2 and 0.4 → mean 0.3, sample std 0.1414
        let a = make(
            "a",
            vec!["r1"],
            vec![turn(1, ActionType::Probe, true), turn(2, ActionType::Probe, false)],
        );
        let b = make(
            "b",
            vec!["r1", "r2"],
            vec![turn(1, ActionType::Probe, true), turn(2, ActionType::Probe, true)],
        );
        // Fix hit ids so elicited matches requirement ids.
        let agg = aggregate(&[a, b]).unwrap();
        assert!((agg.ire.mean - 0.3).abs() < 1e-12);
        assert!((agg.ire.std - 0.1414).abs() < 1e-4);
    }

    #[test]
    fn aggregate_single_report_std_is_zero() {
        let reqs = vec![req("r1", Category::Content)];
        let scenario = Scenario {
            id: "a".to_string(),
            application_type: "Dashboards".to_string(),
            initial_req: "x".to_string(),
            implicit_reqs: reqs,
            final_reqs: vec![],
        };
        let session = Session {
            scenario_id: "a".to_string(),
            turns: vec![turn(1, ActionType::Finish, false)],
            elicited: vec![],
            end_turn: 1,
            question_turn_count: 0,
            termination: Some(Termination::Finished),
            rng_seed: 0,
        };
        let report = session_report(&session, &scenario).unwrap();
        let agg = aggregate(&[report]).unwrap();
        assert_eq!(agg.ire.std, 0.0);
        assert_eq!(agg.turns.std, 0.0);
    }

    #[test]
    fn pooled_esr_uses_counts_not_ratio_means() {
        // Sessions with probe hits/turns 1/2 and 0/2 pool to 0.25.
        let reqs = vec![req("r1", Category::Content), req("r2", Category::Content)];
        let scenario = |id: &str| Scenario {
            id: id.to_string(),
            application_type: "Dashboards".to_string(),
            initial_req: "x".to_string(),
            implicit_reqs: reqs.clone(),
            final_reqs: vec![],
        };
        let session_a = Session {
            scenario_id: "a".to_string(),
            turns: vec![
                Turn {
                    newly_elicited_id: Some("r1".to_string()),
                    judgment: StrategyJudgment {
                        action_type: ActionType::Probe,
                        is_relevant: true,
                        relevant_id: Some("r1".to_string()),
                        reasoning: String::new(),
                    },
                    ..turn(1, ActionType::Probe, true)
                },
                turn(2, ActionType::Probe, false),
            ],
            elicited: vec!["r1".to_string()],
            end_turn: 2,
            question_turn_count: 2,
            termination: Some(Termination::MaxTurnsReached),
            rng_seed: 0,
        };
        let session_b = Session {
            scenario_id: "b".to_string(),
            turns: vec![turn(1, ActionType::Probe, false), turn(2, ActionType::Probe, false)],
            elicited: vec![],
            end_turn: 2,
            question_turn_count: 2,
            termination: Some(Termination::MaxTurnsReached),
            rng_seed: 0,
        };
        let ra = session_report(&session_a, &scenario("a")).unwrap();
        let rb = session_report(&session_b, &scenario("b")).unwrap();
        let agg = aggregate(&[ra, rb]).unwrap();
        let pooled = agg.esr_pooled[&Strategy::Probe];
        assert_eq!((pooled.effective, pooled.total), (1, 4));
        assert_eq!(pooled.ratio(), Some(0.25));
    }

    #[test]
    fn session_report_rejects_mismatched_scenario() {
        let scenario = Scenario {
            id: "a".to_string(),
            application_type: "t".to_string(),
            initial_req: "x".to_string(),
            implicit_reqs: vec![req("r1", Category::Content)],
            final_reqs: vec![],
        };
        let session = Session {
            scenario_id: "b".to_string(),
            turns: vec![],
            elicited: vec![],
            end_turn: 0,
            question_turn_count: 0,
            termination: Some(Termination::Finished),
            rng_seed: 0,
        };
        assert!(matches!(
            session_report(&session, &scenario),
            Err(MetricsError::ScenarioMismatch { .. })
        ));
    }

    #[test]
    fn csv_serializes_undefined_as_empty_cell() {
        let scenario = Scenario {
            id: "a".to_string(),
            application_type: "t".to_string(),
            initial_req: "x".to_string(),
            implicit_reqs: vec![req("r1", Category::Content)],
            final_reqs: vec![],
        };
        let session = Session {
            scenario_id: "a".to_string(),
            turns: vec![turn(1, ActionType::Finish, false)],
            elicited: vec![],
            end_turn: 1,
            question_turn_count: 0,
            termination: Some(Termination::Finished),
            rng_seed: 0,
        };
        let report = session_report(&session, &scenario).unwrap();
        let csv = reports_to_csv(std::slice::from_ref(&report));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_COLUMNS.join(","));
        // ire_int and ire_sty are undefined for a content-only scenario.
        let cells: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(cells[2], "");
        assert_eq!(cells[4], "");
        assert_eq!(cells[5], "");
    }
}
