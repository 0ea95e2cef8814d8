//! CLI integration: ingest, build-sft, and grpo-check through the binary.

mod common;

use std::fs;
use std::process::Command;

use common::{build_fixtures, corpus, mbt, write_config, GOLDS};
use mbt_core::sft::read_sft;
use mbt_core::store::write_jsonl;

#[test]
fn ingest_hotpotqa_and_musique_files() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();

    let hotpot = serde_json::json!([
        {
            "_id": "h1",
            "question": "Who built the bridge?",
            "answer": "The town engineer",
            "context": [["Bridge", ["The bridge was built in 1901.", "The town engineer led the work."]]]
        }
    ]);
    let hotpot_path = root.join("hotpot.json");
    fs::write(&hotpot_path, serde_json::to_string(&hotpot).unwrap()).unwrap();
    let corpus_path = root.join("hotpot.jsonl");
    mbt(&[
        "ingest",
        "--format",
        "hotpotqa",
        "--input",
        hotpot_path.to_str().unwrap(),
        "--split",
        "train",
        "--out",
        corpus_path.to_str().unwrap(),
    ]);
    let corpus = fs::read_to_string(&corpus_path).unwrap();
    assert_eq!(corpus.lines().count(), 1);
    assert!(corpus.contains("\"source\":\"hotpotqa\""));
    assert!(corpus.contains("The bridge was built in 1901. The town engineer led the work."));

    let musique = serde_json::json!({
        "id": "m1",
        "question": "Where is the mill?",
        "answer": "Halfmoon Bay",
        "paragraphs": [
            {"title": "Mill", "paragraph_text": "The mill stands at Halfmoon Bay.", "is_supporting": true},
            {"title": "Noise", "paragraph_text": "Unrelated distractor text.", "is_supporting": false}
        ]
    });
    let musique_path = root.join("musique.jsonl");
    fs::write(&musique_path, format!("{}\n", serde_json::to_string(&musique).unwrap())).unwrap();
    let filtered_path = root.join("musique-supporting.jsonl");
    mbt(&[
        "ingest",
        "--format",
        "musique",
        "--input",
        musique_path.to_str().unwrap(),
        "--supporting-only",
        "--out",
        filtered_path.to_str().unwrap(),
    ]);
    let filtered = fs::read_to_string(&filtered_path).unwrap();
    assert!(filtered.contains("Halfmoon Bay"));
    assert!(!filtered.contains("distractor text"), "non-supporting paragraph kept:\n{filtered}");
}

#[test]
fn build_sft_exports_synthesis_and_rejection_datasets() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();

    let examples = corpus();
    let corpus_path = root.join("corpus.jsonl");
    write_jsonl(&corpus_path, &examples).unwrap();
    let fixtures_dir = root.join("fixtures");
    build_fixtures(&examples, &fixtures_dir);
    let config_path = write_config(root, &fixtures_dir);
    let config = config_path.to_str().unwrap();

    // drafts + correctness verdicts for the rejection strategy
    let run = root.join("drafts");
    mbt(&[
        "generate",
        "--config",
        config,
        "--dataset",
        corpus_path.to_str().unwrap(),
        "--mode",
        "base",
        "--out",
        run.to_str().unwrap(),
    ]);
    mbt(&[
        "judge",
        "--config",
        config,
        "--run",
        run.to_str().unwrap(),
        "--kinds",
        "correctness",
    ]);

    let rejection_path = root.join("rejection.jsonl");
    mbt(&[
        "build-sft",
        "--config",
        config,
        "--strategy",
        "rejection",
        "--dataset",
        corpus_path.to_str().unwrap(),
        "--drafts",
        run.to_str().unwrap(),
        "--out",
        rejection_path.to_str().unwrap(),
    ]);
    let rejection = read_sft(&rejection_path).unwrap();
    // llm-correct and non-degenerated: ex 0,4,8,12,16 (exact) plus ex 11 (judged)
    assert_eq!(rejection.len(), 6, "rejection kept the correct drafts");
    assert!(rejection.iter().all(|r| r.teacher_model == "student-model"));
    let answers: Vec<&str> =
        rejection.iter().map(|r| r.example_id.as_str()).collect();
    assert!(answers.contains(&"ex-11"), "judge-accepted paraphrase kept: {answers:?}");

    let synth_path = root.join("mbt-s.jsonl");
    mbt(&[
        "build-sft",
        "--config",
        config,
        "--strategy",
        "mbt-s",
        "--dataset",
        corpus_path.to_str().unwrap(),
        "--out",
        synth_path.to_str().unwrap(),
    ]);
    let synth = read_sft(&synth_path).unwrap();
    assert_eq!(synth.len(), 20, "one synthesized record per example");
    for (record, gold) in synth.iter().zip(GOLDS) {
        let assistant = &record.messages[1].content;
        assert!(assistant.starts_with("<think>"), "assistant content is think-delimited");
        assert!(assistant.ends_with(&format!("<answer>{gold}</answer>")));
    }

    let rewrite_path = root.join("mbt-r.jsonl");
    mbt(&[
        "build-sft",
        "--config",
        config,
        "--strategy",
        "mbt-r",
        "--dataset",
        corpus_path.to_str().unwrap(),
        "--drafts",
        run.to_str().unwrap(),
        "--out",
        rewrite_path.to_str().unwrap(),
    ]);
    let rewrite = read_sft(&rewrite_path).unwrap();
    assert_eq!(rewrite.len(), 20, "every draft is rewritten");
    let correct_count = rewrite.iter().filter(|r| r.draft_was_correct == Some(true)).count();
    assert_eq!(correct_count, 6, "draft correctness carried from the judge verdicts");
    assert!(rewrite.iter().all(|r| r.teacher_model == "teacher-model"));
}

#[test]
fn grpo_check_cli_prints_deterministic_group_math() {
    let tmp = tempfile::tempdir().unwrap();
    let group_file = tmp.path().join("groups.jsonl");
    fs::write(
        &group_file,
        concat!(
            r#"{"rewards":[1.0,0.0],"outputs":[{"cur":[-0.5],"old":[-0.5],"ref":[-0.5]},{"cur":[-0.5],"old":[-0.5],"ref":[-0.5]}],"eps_clip":0.2,"beta_kl":0.0,"eps_std":0.0}"#,
            "\n",
            r#"{"rewards":[0.5,0.5],"outputs":[{"cur":[-1.0,-1.0],"old":[-1.0,-1.0],"ref":[-1.0,-1.0]},{"cur":[-1.0],"old":[-1.0],"ref":[-1.0]}]}"#,
            "\n"
        ),
    )
    .unwrap();

    let run = || {
        let output = Command::new(env!("CARGO_BIN_EXE_mbt"))
            .args(["grpo-check", "--group-file", group_file.to_str().unwrap()])
            .output()
            .expect("failed to spawn mbt");
        assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
        String::from_utf8(output.stdout).unwrap()
    };
    let first = run();
    assert_eq!(first, run(), "grpo-check output must be deterministic");

    // group 0: on-policy single tokens, advantages +-1/sqrt(2), objective 0
    assert!(first.contains("group 0: G=2"));
    assert!(first.contains("0.7071067811865475"), "output:\n{first}");
    assert!(first.contains("objective: 0\n") || first.contains("objective: -0\n"));
    // group 1: zero-variance rewards, zero advantages
    assert!(first.contains("advantages: [0, 0]"), "output:\n{first}");
}
