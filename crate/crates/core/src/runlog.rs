//! Records produced by training and evaluation runs, shared across agents.

/// One finished episode, with the running score after every step so reward
/// curves can be rebuilt later.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub task: String,
    pub variation: usize,
    pub steps: u32,
    pub score: f64,
    /// (step, cumulative score) pairs, one per step taken.
    pub trajectory: Vec<(u32, f64)>,
}

impl EpisodeRecord {
    pub fn perfect(&self) -> bool {
        self.score == 100.0
    }

    /// Cumulative score at the given step, with the final value carried
    /// forward past the end of the episode.
    pub fn score_at(&self, step: u32) -> f64 {
        let mut score = 0.0;
        for &(s, v) in &self.trajectory {
            if s <= step {
                score = v;
            } else {
                break;
            }
        }
        score
    }
}
