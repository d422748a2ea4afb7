//! The statistical tests on small hand-made samples.

use prompt_logic::stats::{mann_whitney_u, pearson, required_sample_size};

fn main() {
    let length = [2.0, 3.0, 5.0, 8.0, 13.0];
    let share = [10.0, 25.0, 20.0, 40.0, 45.0];
    let r = pearson(&length, &share).unwrap();
    println!("pearson r = {:.4}, p = {:.4} ({})", r.statistic, r.p_value, r.method);

    let success = [1.0, 0.0, 2.0, 1.0];
    let failure = [3.0, 4.0, 2.5, 5.0];
    let u = mann_whitney_u(&success, &failure).unwrap();
    println!("mann-whitney U = {}, p = {:.4} ({})", u.statistic, u.p_value, u.method);

    let n = required_sample_size(1872, 0.95, 0.06).unwrap();
    println!("review sample for 1872 prompts at 95% / 6%: {n}");
}
