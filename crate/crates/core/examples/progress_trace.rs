//! Measure how far each prompt of a long failing session is from a known
//! solution, and list the prompts where an intervention might help.

use prompt_logic::backend::ReplayBackend;
use prompt_logic::formalizer::{FewShotExemplar, ModelSettings};
use prompt_logic::logic::DiffMode;
use prompt_logic::progress::{detect_intervention_points, measure_progress, write_radar_csv, DEFAULT_CHURN_THRESHOLD};
use prompt_logic::report::{load_solutions, solutions_for};
use prompt_logic::session::load_sessions;

fn main() {
    let fixtures = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    let sessions = load_sessions(format!("{fixtures}/sessions.jsonl")).unwrap();
    let solutions = load_solutions(format!("{fixtures}/solutions.json").as_ref()).unwrap();
    let backend = ReplayBackend::open(format!("{fixtures}/replay")).unwrap();

    let session = sessions.iter().find(|s| s.session_id == "t1-u09").unwrap();
    let sols = solutions_for(&solutions, session).unwrap();
    let report = measure_progress(
        session,
        sols,
        &FewShotExemplar::default(),
        &ModelSettings::default(),
        &backend,
        DiffMode::Linked,
    )
    .unwrap();

    println!("distance to solution: {:?}", report.trace.distance_values());
    println!("churn: {:?}", report.trace.churn);
    for p in detect_intervention_points(&report.trace, DEFAULT_CHURN_THRESHOLD) {
        println!("intervene at P{}: {:?}", p.prompt_index, p.trigger);
    }
    println!();
    write_radar_csv(std::io::stdout(), &report).unwrap();
}
