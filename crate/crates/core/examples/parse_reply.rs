//! Parse a hand-written model reply into per-prompt atom sets.

use prompt_logic::formalizer::parse_response;

const REPLY: &str = "\
Formalization of P1
C1: A Python function is written.
C2: The function counts the zeros in a list.
We can formalize P1 as: P1 -> (C1 /\\ C2)
Formalization of P2
C1: A Python function is written.
C3: The function counts the ones in a list.
We can formalize P2 as: P2 implies C1 AND C3
Logical Relationship Between P1 and P2
-- Semantic Refinement: C2 evolves from counting zeros to C3 counting ones.
-- Core Continuation: C1: still a Python function.
";

fn main() {
    let parsed = parse_response(REPLY, 2).expect("reply parses");
    for f in &parsed.formalizations {
        let atoms: Vec<String> = f.atoms.iter().map(|l| l.to_string()).collect();
        println!("P{}: {{{}}} refinements={:?}", f.prompt_index, atoms.join(", "), f.refinements);
    }
    for (label, text) in &parsed.descriptions {
        println!("{label}: {text}");
    }
}
