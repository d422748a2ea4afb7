//! Run the full offline pipeline over the fixture corpus and list the
//! artifacts it writes.

use prompt_logic::report::{run_pipeline, RunConfig};

fn main() {
    let fixtures = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    let out = std::env::temp_dir().join("prompt-logic-example-report");
    let mut config = RunConfig::new(format!("{fixtures}/sessions.jsonl"), &out);
    config.fixture_dir = Some(format!("{fixtures}/replay").into());

    let run = run_pipeline(&config).unwrap_or_else(|e| {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    });
    let m = &run.manifest;
    println!("{} sessions, {} transitions, {} network calls", m.counts.sessions, m.counts.transitions, m.network_calls);
    for a in &m.artifacts {
        println!("{}", out.join(a).display());
    }
    println!();
    print!("{}", std::fs::read_to_string(out.join("summary.csv")).unwrap());
}
