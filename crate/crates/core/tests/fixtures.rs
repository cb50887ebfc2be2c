//! Keeps the recorded transcripts in `tests/fixtures/` in sync with the
//! scripted models in `common`. Rewrite them with
//! `cargo test -p treegen --test fixtures -- --ignored`.

mod common;

use std::io::Write;
use std::sync::{Arc, Mutex};

use treegen::bench::{run_benchmark, BenchConfig, BenchMode};
use treegen::llm::{record_session, ChatTransport, ScriptedTransport};
use treegen::orchestrator::{Engine, EngineConfig};
use treegen::{Sandbox, SandboxConfig};

#[derive(Clone, Default)]
struct Buffer(Arc<Mutex<Vec<u8>>>);

impl Write for Buffer {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

fn sandbox() -> Sandbox {
    Sandbox::new(SandboxConfig::default()).expect("python interpreter available")
}

fn record(model: ScriptedTransport, run: impl FnOnce(&dyn ChatTransport)) -> String {
    let buffer = Buffer::default();
    let transport = record_session(model, buffer.clone());
    run(&transport);
    let bytes = buffer.0.lock().unwrap().clone();
    String::from_utf8(bytes).unwrap()
}

fn toy_transcript() -> String {
    record(common::toy_model(), |t| {
        let sb = sandbox();
        let outcome = Engine::new(t, &sb, EngineConfig::default())
            .solve_task(&common::toy_task())
            .unwrap();
        assert!(outcome.is_solved(), "{:?}", outcome.error);
        assert_eq!(outcome.llm_calls(), common::TOY_CALLS);
    })
}

fn mini_bench_transcript() -> String {
    record(common::mini_model(), |t| {
        let sb = sandbox();
        let tasks = common::mini_tasks();
        let config = BenchConfig::default();
        for mode in [BenchMode::OneShot, BenchMode::Guided] {
            run_benchmark(&tasks, mode, t, &sb, &config).unwrap();
        }
    })
}

fn check(name: &str, recorded: String) {
    let committed = std::fs::read_to_string(common::fixture(name)).unwrap_or_default();
    assert!(
        committed == recorded,
        "{name} is out of date; run `cargo test -p treegen --test fixtures -- --ignored`"
    );
}

#[test]
fn toy_transcript_is_current() {
    check("toy_transcript.jsonl", toy_transcript());
}

#[test]
fn mini_bench_transcript_is_current() {
    check("mini_bench_transcript.jsonl", mini_bench_transcript());
}

#[test]
#[ignore = "rewrites the committed fixtures"]
fn regenerate_fixtures() {
    std::fs::write(common::fixture("toy_transcript.jsonl"), toy_transcript()).unwrap();
    std::fs::write(common::fixture("mini_bench_transcript.jsonl"), mini_bench_transcript()).unwrap();
}
