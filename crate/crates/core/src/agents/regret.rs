use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub phase: u8,
    pub episode: usize,
    pub episode_return: f64,
    pub optimal_return: f64,
    pub regret: f64,
    pub steps: usize,
    pub wall_hits: usize,
}

/// Per-episode returns and regrets of a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegretLedger {
    pub rows: Vec<EpisodeRow>,
}

impl RegretLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, phase: u8, episode: usize, ret: f64, optimal: f64, steps: usize, wall_hits: usize) {
        self.rows.push(EpisodeRow {
            phase,
            episode,
            episode_return: ret,
            optimal_return: optimal,
            regret: optimal - ret,
            steps,
            wall_hits,
        });
    }

    pub fn phase_rows(&self, phase: u8) -> impl Iterator<Item = &EpisodeRow> {
        self.rows.iter().filter(move |r| r.phase == phase)
    }

    /// Running cumulative regret within a phase.
    pub fn cumulative_curve(&self, phase: u8) -> Vec<f64> {
        let mut acc = 0.0;
        self.phase_rows(phase)
            .map(|r| {
                acc += r.regret;
                acc
            })
            .collect()
    }
}

/// Summed regret over a phase's episodes.
pub fn cumulative_regret(ledger: &RegretLedger, phase: u8) -> f64 {
    ledger.phase_rows(phase).map(|r| r.regret).sum()
}
