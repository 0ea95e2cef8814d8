//! Shared fixture corpus and canned-completion scripting for CLI tests.

use std::fs;
use std::path::Path;
use std::process::Command;

use mbt_core::gateway::{
    extract_reasoning, CompletionResult, FinishReason, FixtureStore, FixtureTransport, Gateway,
};
use mbt_core::ingest::{DatasetSource, Document, QAExample, Split};
use mbt_core::judge::{JudgeSuite, TruncationMode};
use mbt_core::metrics::exact_match;
use mbt_core::prompts::TemplateStore;
use mbt_core::sft::SftBuilder;
use mbt_core::trace::{TraceGenerator, TraceMode};

pub const GOLDS: [&str; 20] = [
    "Harbor Lighthouse",
    "Eliza Thornton",
    "Mount Verity",
    "Copper Basin",
    "The Silver Meridian",
    "Professor Alder",
    "Willow Creek Dam",
    "Captain Rosa Marinez",
    "The Northern Archive",
    "Halfmoon Bay",
    "Doctor Imre Kovacs",
    "Granite Pass Tunnel",
    "The Argent Review",
    "Sister Mabel Quinn",
    "Ironwood Forge",
    "The Cobalt Charter",
    "Marshal Ortega",
    "Pinebrook Station",
    "The Vermilion Codex",
    "Lady Ashford",
];

pub fn corpus() -> Vec<QAExample> {
    (0..20)
        .map(|i| QAExample {
            id: format!("ex-{i:02}"),
            source: DatasetSource::Hotpotqa,
            split: Split::Validation,
            question: format!("Which subject does passage {i} ultimately describe?"),
            gold_answer: GOLDS[i].to_string(),
            documents: vec![
                Document {
                    title: format!("Passage {i}"),
                    body: format!("This passage concerns {}. It lists several facts.", GOLDS[i]),
                    is_supporting: None,
                },
                Document {
                    title: format!("Distractor {i}"),
                    body: "An unrelated passage about something else entirely.".to_string(),
                    is_supporting: None,
                },
            ],
        })
        .collect()
}

pub struct Scripted {
    /// canned completion for the generation call
    pub completion: CompletionResult,
    /// the trace the pipeline will extract from it
    pub trace: String,
    pub prediction: String,
    pub mentions_gold: bool,
}

pub fn scripted(i: usize, gold: &str) -> Scripted {
    let inclusive_trace = format!(
        "We scan passage {i} for its subject. The passage names {gold} directly. \
We verify the supporting facts before committing."
    );
    let exclusive_trace = format!(
        "We scan passage {i} for its subject. The facts are ambiguous and we guess. \
No strong candidate emerges from the text."
    );
    let make = |trace: &str, pred: &str, finish: FinishReason, tokens: u64| Scripted {
        completion: CompletionResult {
            content: if pred.is_empty() && finish == FinishReason::Length {
                format!("<think>{trace}")
            } else if pred.is_empty() {
                format!("<think>{trace}</think>The subject is unclear.")
            } else {
                format!("<think>{trace}</think><answer>{pred}</answer>")
            },
            reasoning: None,
            finish_reason: finish,
            reported_completion_tokens: Some(tokens),
            cached: false,
        },
        trace: trace.to_string(),
        prediction: pred.to_string(),
        mentions_gold: trace.contains(gold),
    };
    let tokens = 100 + (i as u64) * 17;
    match i {
        3 => {
            // degenerated: unclosed think block at the context limit
            let trace = format!("<think>loop loop loop in passage {i}");
            Scripted {
                completion: CompletionResult {
                    content: trace.clone(),
                    reasoning: None,
                    finish_reason: FinishReason::Length,
                    reported_completion_tokens: Some(32_768),
                    cached: false,
                },
                trace,
                prediction: String::new(),
                mentions_gold: false,
            }
        }
        7 => make(&inclusive_trace, "", FinishReason::Stop, tokens),
        11 => {
            // paraphrase: EM fails, the correctness judge accepts
            let pred = format!("the renowned {gold}");
            make(&inclusive_trace, &pred, FinishReason::Stop, tokens)
        }
        15 => make(&exclusive_trace, &format!("Wrong Candidate {i}"), FinishReason::Stop, tokens),
        19 => make(&inclusive_trace, &format!("Wrong Candidate {i}"), FinishReason::Stop, tokens),
        _ => match i % 4 {
            0 => make(&inclusive_trace, gold, FinishReason::Stop, tokens),
            1 => {
                make(&inclusive_trace, &format!("Wrong Candidate {i}"), FinishReason::Stop, tokens)
            }
            _ => {
                make(&exclusive_trace, &format!("Wrong Candidate {i}"), FinishReason::Stop, tokens)
            }
        },
    }
}

/// Cut a canned truncation reply out of a trace: the first `num` of its
/// `den` chars.
pub fn prefix_of(trace: &str, num: usize, den: usize) -> String {
    let chars: Vec<char> = trace.chars().collect();
    let cut = (chars.len() * num / den).max(1);
    chars[..cut].iter().collect()
}

pub fn text_reply(content: &str) -> CompletionResult {
    CompletionResult {
        content: content.to_string(),
        reasoning: None,
        finish_reason: FinishReason::Stop,
        reported_completion_tokens: Some(8),
        cached: false,
    }
}

/// Fixtures for the full generate -> judge pipeline plus teacher synthesis
/// calls, mirroring exactly the requests the CLI will build.
pub fn build_fixtures(examples: &[QAExample], fixtures_dir: &Path) {
    let templates = TemplateStore::builtin();
    let probe = Gateway::new(Box::new(FixtureTransport::new(FixtureStore::new())));
    let generator = TraceGenerator::new(&probe, &templates, "student-model");
    let judge = JudgeSuite::new(&probe, &templates, "judge-model");
    let teacher = SftBuilder::new(&probe, &templates, "teacher-model");
    let mut store = FixtureStore::new();

    for (i, example) in examples.iter().enumerate() {
        let script = scripted(i, &example.gold_answer);

        // generation
        let request = generator.request_for(example, TraceMode::Base, "sample-0").unwrap();
        store.insert(&request, script.completion.clone());

        // what the pipeline will recover as the trace
        let (trace, _) = extract_reasoning(&script.completion);
        assert_eq!(trace, script.trace, "scripted trace mismatch at {i}");

        // correctness judge (only called for non-empty, non-exact predictions)
        let em = exact_match(&script.prediction, &example.gold_answer);
        let llm_correct = if script.prediction.is_empty() {
            false
        } else if em {
            true
        } else {
            let correct = i == 11;
            let req = judge.correctness_request(example, &script.prediction, "judge-0").unwrap();
            store.insert(&req, text_reply(if correct { "YES" } else { "NO" }));
            correct
        };

        // inclusion judge on every non-empty trace
        let req = judge.inclusion_request(example, &trace, "judge-0").unwrap();
        store.insert(&req, text_reply(if script.mentions_gold { "YES" } else { "NO" }));

        // truncation judge: overthinking on correct, underthinking on incorrect
        if llm_correct {
            let reply = match i {
                0 | 8 | 16 => trace.clone(),
                11 => prefix_of(&trace, 1, 3),
                _ => prefix_of(&trace, 2, 3),
            };
            let req =
                judge.truncation_request(TruncationMode::Overthinking, &trace, "judge-0").unwrap();
            store.insert(&req, text_reply(&reply));
        } else {
            let reply = if i == 3 { trace.clone() } else { prefix_of(&trace, 2, 5) };
            let req =
                judge.truncation_request(TruncationMode::Underthinking, &trace, "judge-0").unwrap();
            store.insert(&req, text_reply(&reply));
        }

        // metacognition judge on every trace
        let req = judge.metacognition_request(&trace, "judge-0").unwrap();
        store.insert(&req, text_reply(&format!("{}", i % 6)));

        // teacher synthesis call (used by build-sft, and as turn one of the
        // rewrite protocol)
        let monologue = format!(
            "We restate the goal for passage {i} and filter distractions. We plan to \
check the supporting passage, monitor each step, and verify. The subject is {}.",
            example.gold_answer
        );
        let req = teacher.synthesis_request(example, "teacher-0").unwrap();
        store.insert(&req, text_reply(&monologue));

        // teacher rewrite call conditioned on its own solution and the draft
        let rewritten = format!(
            "We keep the draft's valid observations about passage {i}. Wait, let us \
double-check the weak step. Correcting it, the subject is {}.",
            example.gold_answer
        );
        let req = teacher.rewrite_request(example, &monologue, &trace, "teacher-0").unwrap();
        store.insert(&req, text_reply(&rewritten));
    }

    store.save_dir(fixtures_dir).unwrap();
}

pub fn write_config(root: &Path, fixtures_dir: &Path) -> std::path::PathBuf {
    let config_path = root.join("run.toml");
    fs::write(
        &config_path,
        format!(
            "transport = \"fixtures\"\nfixtures_dir = \"{}\"\n\n[models]\nstudent = \"student-model\"\nteacher = \"teacher-model\"\njudge = \"judge-model\"\n",
            fixtures_dir.display()
        ),
    )
    .unwrap();
    config_path
}

pub fn mbt(args: &[&str]) {
    let output =
        Command::new(env!("CARGO_BIN_EXE_mbt")).args(args).output().expect("failed to spawn mbt");
    assert!(
        output.status.success(),
        "mbt {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}
