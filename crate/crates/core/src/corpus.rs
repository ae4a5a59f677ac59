//! The built-in 1D problem corpus.

use crate::problem::{MisProblem, ProblemError};

/// `(name, JSON definition)` of every corpus problem.
pub const SOURCES: [(&str, &str); 6] = [
    ("asymmetric_cost", include_str!("../corpus/asymmetric_cost.json")),
    ("perfect_sampler", include_str!("../corpus/perfect_sampler.json")),
    ("disjoint", include_str!("../corpus/disjoint.json")),
    ("single_technique", include_str!("../corpus/single_technique.json")),
    ("symmetric", include_str!("../corpus/symmetric.json")),
    ("three_techniques", include_str!("../corpus/three_techniques.json")),
];

/// The problem whose second technique is the expensive one.
pub const ASYMMETRIC: &str = "asymmetric_cost";

pub fn load(name: &str) -> Option<Result<MisProblem, ProblemError>> {
    SOURCES
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, src)| MisProblem::from_json(src))
}

pub fn all() -> Result<Vec<MisProblem>, ProblemError> {
    SOURCES.iter().map(|(_, src)| MisProblem::from_json(src)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_loads_and_names_match() {
        let problems = all().unwrap();
        assert_eq!(problems.len(), SOURCES.len());
        for (p, (name, _)) in problems.iter().zip(SOURCES) {
            assert_eq!(p.name(), name);
        }
        assert!(load("nope").is_none());
        assert_eq!(load(ASYMMETRIC).unwrap().unwrap().costs(), &[1.0, 30.0]);
    }
}
