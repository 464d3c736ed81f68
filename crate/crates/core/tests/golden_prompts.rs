//! Golden-file tests pinning the exact prompt text sent to each backend.
//! Run with GOLDEN_BLESS=1 to rewrite the golden files after an intentional
//! prompt change.

use std::path::PathBuf;

use elicit_core::{
    render_interviewer_prompt, render_judge_prompt, render_oracle_prompt, ActionType, Category,
    ImplicitReq, JudgePromptVariant, OracleContext, PromptVariant, Speaker,
};

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn check(name: &str, rendered: &str) {
    let path = golden_dir().join(name);
    if std::env::var_os("GOLDEN_BLESS").is_some() {
        std::fs::create_dir_all(golden_dir()).unwrap();
        std::fs::write(&path, rendered).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("missing golden file {}: {e}", path.display()));
    assert_eq!(
        rendered,
        expected,
        "prompt drifted from golden file {name}; rerun with GOLDEN_BLESS=1 if intentional"
    );
}

fn sample_reqs() -> Vec<ImplicitReq> {
    vec![
        ImplicitReq {
            id: "r1".to_string(),
            description: "search by ticker symbol".to_string(),
            category: Category::Interaction,
            keywords: vec!["ticker".to_string()],
        },
        ImplicitReq {
            id: "r2".to_string(),
            description: "daily price charts".to_string(),
            category: Category::Content,
            keywords: vec!["charts".to_string()],
        },
    ]
}

fn sample_history() -> Vec<(Speaker, String)> {
    vec![
        (
            Speaker::Oracle,
            "I want a website to search stocks and generate reports".to_string(),
        ),
        (
            Speaker::Interviewer,
            "What information matters most to you?".to_string(),
        ),
        (
            Speaker::Oracle,
            "Mostly prices and recent news.".to_string(),
        ),
    ]
}

#[test]
fn oracle_prompt_matches_golden() {
    let ctx = OracleContext {
        conversation_history: sample_history(),
        latest_utterance: "Should search work by ticker symbol?".to_string(),
        action_type: ActionType::Probe,
        is_relevant: true,
        relevant_requirement: Some(sample_reqs()[0].clone()),
    };
    let (system, user) = render_oracle_prompt(&ctx);
    check("oracle_system.txt", &system);
    check("oracle_user.txt", &user);
}

#[test]
fn judge_prompt_matches_golden() {
    let (system, user) = render_judge_prompt(
        "I want a website to search stocks and generate reports",
        &sample_history(),
        "Should search work by ticker symbol?",
        &sample_reqs(),
        JudgePromptVariant::Extended,
    );
    check("judge_system.txt", &system);
    check("judge_user.txt", &user);
}

#[test]
fn judge_prompt_paper_variant_matches_golden() {
    let (system, _) = render_judge_prompt(
        "init",
        &[],
        "q",
        &sample_reqs(),
        JudgePromptVariant::PaperVerbatim,
    );
    check("judge_system_paper.txt", &system);
}

#[test]
fn interviewer_prompts_match_golden() {
    let initial = "I want a website to search stocks and generate reports";
    let (noncot_system, noncot_user) =
        render_interviewer_prompt(initial, &sample_history(), PromptVariant::NonCot);
    check("interviewer_noncot_system.txt", &noncot_system);
    check("interviewer_noncot_user.txt", &noncot_user);
    let (cot_system, _) = render_interviewer_prompt(initial, &sample_history(), PromptVariant::Cot);
    check("interviewer_cot_system.txt", &cot_system);
}
