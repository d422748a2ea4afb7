pub mod backend;
pub mod evolution;
pub mod formalizer;
pub mod logic;
pub mod progress;
pub mod report;
pub mod session;
pub mod stats;
