//! Draw the seeded review sample a human annotator would check.

use prompt_logic::backend::ReplayBackend;
use prompt_logic::formalizer::{FewShotExemplar, ModelSettings};
use prompt_logic::report::{formalize_corpus, sample_for_review, DEFAULT_SEED};
use prompt_logic::session::load_sessions;

fn main() {
    let fixtures = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    let sessions = load_sessions(format!("{fixtures}/sessions.jsonl")).unwrap();
    let backend = ReplayBackend::open(format!("{fixtures}/replay")).unwrap();
    let corpus: Vec<_> = formalize_corpus(&sessions, &FewShotExemplar::default(), &ModelSettings::default(), &backend, 2)
        .unwrap()
        .into_iter()
        .filter_map(|o| o.formalized())
        .collect();

    let sample = sample_for_review(&corpus, 0.95, 0.06, DEFAULT_SEED).unwrap();
    println!("{} of {} prompts drawn", sample.len(), corpus.iter().map(|f| f.formalizations.len()).sum::<usize>());
    for item in sample.iter().take(5) {
        println!("{item:?}");
    }
}
