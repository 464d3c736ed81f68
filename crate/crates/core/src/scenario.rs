//! Scenario data model, dataset loading/validation, and dataset statistics.
//!
//! A scenario is one elicitation task: an underspecified initial requirement,
//! a set of ground-truth implicit requirements (the gap the interviewer must
//! uncover), and the final requirements expressed as user stories.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Category of an implicit requirement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Interaction,
    Content,
    Style,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Interaction, Category::Content, Category::Style];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Interaction => "interaction",
            Category::Content => "content",
            Category::Style => "style",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One ground-truth implicit requirement that must be elicited through
/// conversation. `keywords` are used only by scripted backends and may be
/// empty for LLM-backed runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImplicitReq {
    pub id: String,
    pub description: String,
    pub category: Category,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub keywords: Vec<String>,
}

/// A user story from the final (complete) requirements specification.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserStory {
    pub id: String,
    pub text: String,
}

/// One requirements elicitation task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub application_type: String,
    pub initial_req: String,
    pub implicit_reqs: Vec<ImplicitReq>,
    pub final_reqs: Vec<UserStory>,
}

impl Scenario {
    /// Number of ground-truth implicit requirements (K).
    pub fn requirement_count(&self) -> usize {
        self.implicit_reqs.len()
    }

    pub fn requirement(&self, id: &str) -> Option<&ImplicitReq> {
        self.implicit_reqs.iter().find(|r| r.id == id)
    }
}

/// The 10 application types of the released dataset; the allow-list is
/// configurable and this is only the default.
pub const DEFAULT_APPLICATION_TYPES: [&str; 10] = [
    "Showcase Websites",
    "Community Platforms",
    "E-commerce Web",
    "Learning Platforms",
    "Entertainment App",
    "Dashboards",
    "Enterprise Management",
    "Publishing Platforms",
    "Job Search Platforms",
    "Productivity Tool",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

/// One problem found while validating a scenario.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub severity: Severity,
    pub path: String,
    pub message: String,
}

impl ValidationIssue {
    fn error(path: impl Into<String>, message: impl Into<String>) -> Self {
        ValidationIssue {
            severity: Severity::Error,
            path: path.into(),
            message: message.into(),
        }
    }

    fn warning(path: impl Into<String>, message: impl Into<String>) -> Self {
        ValidationIssue {
            severity: Severity::Warning,
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev} at {}: {}", self.path, self.message)
    }
}

/// Observed dataset range for implicit requirement counts; counts outside
/// this range produce a warning, not an error.
pub const IMPLICIT_COUNT_WARN_RANGE: (usize, usize) = (2, 12);

/// Structural validation of a single scenario. Returns an empty list iff
/// all invariants hold; warnings never block loading.
pub fn validate_scenario(s: &Scenario) -> Vec<ValidationIssue> {
    let mut issues = Vec::new();

    if s.id.trim().is_empty() {
        issues.push(ValidationIssue::error("id", "scenario id is empty"));
    }
    if s.initial_req.split_whitespace().count() < 1 {
        issues.push(ValidationIssue::error(
            "initial_req",
            "initial requirement must contain at least one word",
        ));
    }
    if s.implicit_reqs.is_empty() {
        issues.push(ValidationIssue::error(
            "implicit_reqs",
            "scenario has no implicit requirements",
        ));
    }

    let mut seen = BTreeSet::new();
    for (i, req) in s.implicit_reqs.iter().enumerate() {
        let path = format!("implicit_reqs[{i}]");
        if req.id.trim().is_empty() {
            issues.push(ValidationIssue::error(
                format!("{path}.id"),
                "implicit requirement id is empty",
            ));
        } else if !seen.insert(req.id.clone()) {
            issues.push(ValidationIssue::error(
                format!("{path}.id"),
                format!("duplicate implicit requirement id `{}`", req.id),
            ));
        }
        if req.description.trim().is_empty() {
            issues.push(ValidationIssue::error(
                format!("{path}.description"),
                "description is empty",
            ));
        }
    }

    let mut story_seen = BTreeSet::new();
    for (i, story) in s.final_reqs.iter().enumerate() {
        let path = format!("final_reqs[{i}]");
        if story.id.trim().is_empty() {
            issues.push(ValidationIssue::error(
                format!("{path}.id"),
                "user story id is empty",
            ));
        } else if !story_seen.insert(story.id.clone()) {
            issues.push(ValidationIssue::error(
                format!("{path}.id"),
                format!("duplicate user story id `{}`", story.id),
            ));
        }
        if story.text.trim().is_empty() {
            issues.push(ValidationIssue::error(
                format!("{path}.text"),
                "user story text is empty",
            ));
        }
    }

    let n = s.implicit_reqs.len();
    if n >= 1 && (n < IMPLICIT_COUNT_WARN_RANGE.0 || n > IMPLICIT_COUNT_WARN_RANGE.1) {
        issues.push(ValidationIssue::warning(
            "implicit_reqs",
            format!(
                "implicit requirement count {n} outside observed dataset range [{}, {}]",
                IMPLICIT_COUNT_WARN_RANGE.0, IMPLICIT_COUNT_WARN_RANGE.1
            ),
        ));
    }

    issues
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no scenarios found at {0}")]
    Empty(PathBuf),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario document {path}: {source}")]
    Malformed {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("duplicate scenario id `{id}` in {path}")]
    DuplicateScenario { id: String, path: PathBuf },
    #[error("validation failed:\n{}", format_issue_list(.0))]
    Validation(Vec<(String, ValidationIssue)>),
    #[error("cannot compute statistics over an empty scenario list")]
    EmptyStats,
}

fn format_issue_list(issues: &[(String, ValidationIssue)]) -> String {
    issues
        .iter()
        .map(|(id, issue)| format!("  [{id}] {issue}"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Deserialize, Serialize)]
struct Manifest {
    scenarios: Vec<String>,
}

/// Loads all scenarios under `path`, which is either a directory of scenario
/// JSON documents (optionally containing a `dataset.json` manifest) or the
/// manifest file itself. Every scenario must pass [`validate_scenario`] with
/// zero errors; ordering is lexicographic by scenario id.
pub fn load_dataset(path: &Path) -> Result<Vec<Scenario>, DatasetError> {
    let files = scenario_files(path)?;
    if files.is_empty() {
        return Err(DatasetError::Empty(path.to_path_buf()));
    }

    let mut scenarios: Vec<Scenario> = Vec::new();
    let mut seen_ids: BTreeMap<String, PathBuf> = BTreeMap::new();
    let mut errors: Vec<(String, ValidationIssue)> = Vec::new();

    for file in files {
        let text = std::fs::read_to_string(&file).map_err(|source| DatasetError::Io {
            path: file.clone(),
            source,
        })?;
        let scenario: Scenario =
            serde_json::from_str(&text).map_err(|source| DatasetError::Malformed {
                path: file.clone(),
                source,
            })?;
        if seen_ids.insert(scenario.id.clone(), file.clone()).is_some() {
            return Err(DatasetError::DuplicateScenario {
                id: scenario.id,
                path: file,
            });
        }
        for issue in validate_scenario(&scenario) {
            if issue.severity == Severity::Error {
                errors.push((scenario.id.clone(), issue));
            } else {
                log::warn!("scenario {}: {issue}", scenario.id);
            }
        }
        scenarios.push(scenario);
    }

    if !errors.is_empty() {
        return Err(DatasetError::Validation(errors));
    }

    scenarios.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(scenarios)
}

fn scenario_files(path: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let io_err = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };

    if path.is_file() {
        // A single manifest document.
        let text = std::fs::read_to_string(path).map_err(io_err)?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|source| DatasetError::Malformed {
                path: path.to_path_buf(),
                source,
            })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        return Ok(manifest.scenarios.iter().map(|rel| base.join(rel)).collect());
    }

    let manifest_path = path.join("dataset.json");
    if manifest_path.is_file() {
        return scenario_files(&manifest_path);
    }

    let mut files = Vec::new();
    for entry in std::fs::read_dir(path).map_err(io_err)? {
        let entry = entry.map_err(io_err)?;
        let p = entry.path();
        if p.extension().and_then(|e| e.to_str()) == Some("json") {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

/// Writes one JSON file per scenario plus a `dataset.json` manifest into
/// `dir`. `load_dataset` over the result round-trips to the same scenarios.
pub fn save_dataset(scenarios: &[Scenario], dir: &Path) -> Result<(), DatasetError> {
    let io_err = |path: &Path, source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;

    let mut rel_paths = Vec::new();
    for scenario in scenarios {
        let rel = format!("{}.json", scenario.id);
        let path = dir.join(&rel);
        let text = serde_json::to_string_pretty(scenario).expect("scenario serializes");
        std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        rel_paths.push(rel);
    }
    let manifest = Manifest {
        scenarios: rel_paths,
    };
    let manifest_path = dir.join("dataset.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, text).map_err(|e| io_err(&manifest_path, e))?;
    Ok(())
}

/// min / avg / max summary of one integer quantity; averages are reported
/// to 2 decimals with half-up rounding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: usize,
    pub avg: f64,
    pub max: usize,
}

fn summarize(values: &[usize]) -> Summary {
    let min = *values.iter().min().expect("non-empty");
    let max = *values.iter().max().expect("non-empty");
    let avg = round2(values.iter().sum::<usize>() as f64 / values.len() as f64);
    Summary { min, avg, max }
}

/// Half-up rounding to 2 decimals.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Statistics for one application type (or the total row).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub scenario_count: usize,
    pub initial_len: Summary,
    pub implicit_count: Summary,
    pub final_count: Summary,
}

/// Dataset statistics laid out like the per-application-type table:
/// one row per type, a total row, plus category distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub per_type: BTreeMap<String, StatsRow>,
    pub total: StatsRow,
    pub category_counts: BTreeMap<Category, usize>,
    /// Keyed by the sorted `+`-joined set of categories a scenario touches,
    /// e.g. "content+interaction".
    pub category_combination_counts: BTreeMap<String, usize>,
}

/// Word count used throughout: whitespace-delimited tokens.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

pub fn compute_stats(scenarios: &[Scenario]) -> Result<DatasetStats, DatasetError> {
    if scenarios.is_empty() {
        return Err(DatasetError::EmptyStats);
    }

    let row = |subset: &[&Scenario]| -> StatsRow {
        StatsRow {
            scenario_count: subset.len(),
            initial_len: summarize(
                &subset
                    .iter()
                    .map(|s| word_count(&s.initial_req))
                    .collect::<Vec<_>>(),
            ),
            implicit_count: summarize(
                &subset.iter().map(|s| s.implicit_reqs.len()).collect::<Vec<_>>(),
            ),
            final_count: summarize(
                &subset.iter().map(|s| s.final_reqs.len()).collect::<Vec<_>>(),
            ),
        }
    };

    let mut by_type: BTreeMap<String, Vec<&Scenario>> = BTreeMap::new();
    for s in scenarios {
        by_type.entry(s.application_type.clone()).or_default().push(s);
    }
    let per_type = by_type
        .iter()
        .map(|(ty, subset)| (ty.clone(), row(subset)))
        .collect();
    let total = row(&scenarios.iter().collect::<Vec<_>>());

    let mut category_counts: BTreeMap<Category, usize> = BTreeMap::new();
    let mut combo_counts: BTreeMap<String, usize> = BTreeMap::new();
    for s in scenarios {
        let mut combo: BTreeSet<Category> = BTreeSet::new();
        for req in &s.implicit_reqs {
            *category_counts.entry(req.category).or_insert(0) += 1;
            combo.insert(req.category);
        }
        let mut names: Vec<&str> = combo.iter().map(|c| c.as_str()).collect();
        names.sort_unstable();
        let key = names.join("+");
        *combo_counts.entry(key).or_insert(0) += 1;
    }

    Ok(DatasetStats {
        per_type,
        total,
        category_counts,
        category_combination_counts: combo_counts,
    })
}
