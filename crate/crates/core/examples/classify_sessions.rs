//! Classify prompt-to-prompt transitions of the fixture corpus and print a
//! per-step heatmap for task 1.

use prompt_logic::backend::ReplayBackend;
use prompt_logic::evolution::{classify_session, heatmap, TransitionClass};
use prompt_logic::formalizer::{formalize_session, FewShotExemplar, ModelSettings};
use prompt_logic::session::load_sessions;

fn main() {
    let fixtures = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    let sessions = load_sessions(format!("{fixtures}/sessions.jsonl")).unwrap();
    let backend = ReplayBackend::open(format!("{fixtures}/replay")).unwrap();
    let exemplar = FewShotExemplar::default();

    let mut transitions = Vec::new();
    for s in &sessions {
        let fs = formalize_session(s, &exemplar, &ModelSettings::default(), &backend).unwrap();
        if let Some(fs) = fs.formalized() {
            transitions.extend(classify_session(&fs));
        }
    }
    for t in transitions.iter().filter(|t| t.session_id == "t1-u01") {
        println!("{} P{}->P{}: {} (linked diff {})", t.session_id, t.from_index, t.to_index, t.class, t.diff_size_linked);
    }

    let names: Vec<&str> = TransitionClass::ALL.iter().map(|c| c.name()).collect();
    println!("\nstep  {}", names.join("  "));
    for (step, row) in heatmap("1", &transitions).rows {
        println!("{step:>4}  {row:?}");
    }
}
