use super::RewardObservation;

/// UCB1-Normal arm statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Ucb1Normal {
    counts: Vec<u64>,
    means: Vec<f64>,
    sum_squares: Vec<f64>,
    total: u64,
}

impl Ucb1Normal {
    pub fn new(arms: usize) -> Self {
        Self {
            counts: vec![0; arms],
            means: vec![0.0; arms],
            sum_squares: vec![0.0; arms],
            total: 0,
        }
    }

    pub fn arms(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn sum_squares(&self) -> &[f64] {
        &self.sum_squares
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Minimum play count `ceil(8 ln n)` before the index policy applies.
    /// Every arm must be played at least once, which also covers `n < 2`
    /// where the logarithm is not usable.
    pub fn exploration_threshold(&self) -> u64 {
        if self.total < 2 {
            return 1;
        }
        ((8.0 * (self.total as f64).ln()).ceil() as u64).max(1)
    }

    /// Upper confidence index of arm `j`; `None` while the arm has fewer
    /// than two plays.
    pub fn upper_bound(&self, j: usize) -> Option<f64> {
        let nj = self.counts[j];
        if nj < 2 || self.total < 2 {
            return None;
        }
        let nj_f = nj as f64;
        let mean = self.means[j];
        let variance = ((self.sum_squares[j] - nj_f * mean * mean) / (nj_f - 1.0)).max(0.0);
        let log_term = ((self.total - 1) as f64).ln();
        Some(mean + (16.0 * variance * log_term / nj_f).sqrt())
    }

    /// Index of the arm to play, and whether the exploration rule chose it.
    pub fn select_with_reason(&self) -> (usize, bool) {
        let threshold = self.exploration_threshold();
        let under_played = self
            .counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c < threshold)
            .min_by_key(|(j, &c)| (c, *j));
        if let Some((j, _)) = under_played {
            return (j, true);
        }
        let mut best = 0;
        let mut best_value = f64::NEG_INFINITY;
        for j in 0..self.arms() {
            let value = self.upper_bound(j).unwrap_or(f64::INFINITY);
            if value > best_value {
                best = j;
                best_value = value;
            }
        }
        (best, false)
    }

    pub fn select(&self) -> usize {
        self.select_with_reason().0
    }

    pub fn update(&mut self, obs: RewardObservation) {
        let j = obs.arm;
        self.counts[j] += 1;
        self.means[j] += (obs.reward - self.means[j]) / self.counts[j] as f64;
        self.sum_squares[j] += obs.reward * obs.reward;
        self.total += 1;
    }

    #[cfg(test)]
    pub(crate) fn from_parts(counts: Vec<u64>, means: Vec<f64>, sum_squares: Vec<f64>) -> Self {
        let total = counts.iter().sum();
        Self {
            counts,
            means,
            sum_squares,
            total,
        }
    }
}
