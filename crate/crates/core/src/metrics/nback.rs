use serde::{Deserialize, Serialize};

/// Responses later than this after a stimulus onset are not attributed to it.
pub const NBACK_WINDOW_US: u64 = 2_500_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stimulus {
    pub onset_us: u64,
    pub symbol: u8,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NbackScore {
    pub hits: u32,
    pub misses: u32,
    pub false_alarms: u32,
    pub correct_rejections: u32,
    /// Targets left unanswered. Equal to `misses` in this response model.
    pub omissions: u32,
    /// Responses that matched no open stimulus window.
    pub stray_responses: u32,
    /// (hits + correct rejections) / stimuli; `None` with no stimuli.
    pub accuracy: Option<f64>,
    /// Mean reaction time over hits, seconds.
    pub mean_rt: Option<f64>,
}

/// Stimulus `i` is a target iff it repeats the symbol shown `n` earlier.
pub fn nback_targets(stimuli: &[Stimulus], n: usize) -> Vec<bool> {
    (0..stimuli.len())
        .map(|i| n > 0 && i >= n && stimuli[i].symbol == stimuli[i - n].symbol)
        .collect()
}

/// Grade an N-back block.
///
/// Stimuli must be in onset order. Each response, taken in time order, is
/// credited to the most recent stimulus whose window contains it and which
/// has no response yet; any other response is stray.
pub fn grade_nback(stimuli: &[Stimulus], responses_us: &[u64], n: usize) -> NbackScore {
    let targets = nback_targets(stimuli, n);
    let mut answered: Vec<Option<u64>> = vec![None; stimuli.len()];
    let mut responses = responses_us.to_vec();
    responses.sort_unstable();

    let mut out = NbackScore::default();
    for t in responses {
        // Stimuli with onset ≤ t, newest first, while still inside the window.
        let upto = stimuli.partition_point(|s| s.onset_us <= t);
        let slot = (0..upto)
            .rev()
            .take_while(|&i| t - stimuli[i].onset_us <= NBACK_WINDOW_US)
            .find(|&i| answered[i].is_none());
        match slot {
            Some(i) => answered[i] = Some(t - stimuli[i].onset_us),
            None => out.stray_responses += 1,
        }
    }

    let mut rt_sum = 0.0;
    for (i, &target) in targets.iter().enumerate() {
        match (target, answered[i]) {
            (true, Some(rt)) => {
                out.hits += 1;
                rt_sum += rt as f64 / 1e6;
            }
            (true, None) => out.misses += 1,
            (false, Some(_)) => out.false_alarms += 1,
            (false, None) => out.correct_rejections += 1,
        }
    }
    out.omissions = out.misses;
    if !stimuli.is_empty() {
        out.accuracy = Some((out.hits + out.correct_rejections) as f64 / stimuli.len() as f64);
    }
    if out.hits > 0 {
        out.mean_rt = Some(rt_sum / out.hits as f64);
    }
    out
}
