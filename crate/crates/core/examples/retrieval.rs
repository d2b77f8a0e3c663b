//! Picks the proposal that matches a prompt. The look-alike wins on embedding
//! similarity alone; the match-confidence criterion recovers the right one.

use posekit::retrieval::{global_retrieve, hierarchical_retrieve, Embedding, MatchSet, RetrievalConfig};

fn confidences(n: usize, high: f64) -> MatchSet {
    let conf = (0..n).map(|i| if i % 4 == 0 { 0.5 } else { high }).collect();
    MatchSet::from_confidences(conf).expect("finite confidences")
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let prompt = Embedding::new(vec![1.0, 0.2, 0.0, 0.1])?;
    let proposals = vec![
        Embedding::new(vec![0.9, 0.5, 0.3, 0.0])?,  // the object, seen from afar
        Embedding::new(vec![1.0, 0.25, 0.0, 0.1])?, // look-alike
        Embedding::new(vec![0.0, 0.1, 1.0, 0.0])?,  // clutter
    ];

    let global = global_retrieve(&prompt, &proposals)?;
    println!("similarity only: proposal {} ({:.3?})", global.best_index, global.similarity_row);

    let cfg = RetrievalConfig::default();
    let matcher = |i: usize| -> Result<MatchSet, std::convert::Infallible> {
        Ok(match i {
            0 => confidences(200, 0.97),
            1 => confidences(40, 0.7),
            _ => confidences(10, 0.2),
        })
    };
    let outcome = hierarchical_retrieve(&prompt, &proposals, matcher, &cfg)?;
    println!(
        "top-{} + criterion (sigma {}): proposal {} scores {:?}",
        cfg.top_k, cfg.sigma, outcome.best_index, outcome.criteria_scores
    );
    Ok(())
}
