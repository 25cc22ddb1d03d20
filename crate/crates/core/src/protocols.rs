//! Send-selection policies and the phase structure they run in.
//!
//! Three protocols share one engine: uniform random (pick any unsent
//! message each round), the ranked protocol (a random phase followed by
//! ranking phases whose per-message probabilities are inversely
//! proportional to rank), and the ranked protocol with shuffle phases
//! interleaved between ranking phases for fault tolerance.

use serde::{Deserialize, Serialize};

use crate::rng::Stream;
use crate::topology::GnkLabels;

/// Protocol choice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Uniform,
    Ranking,
    RankingShuffle,
}

impl Protocol {
    pub fn phased(self) -> bool {
        !matches!(self, Protocol::Uniform)
    }

    pub fn with_shuffle(self) -> bool {
        matches!(self, Protocol::RankingShuffle)
    }

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Uniform => "uniform",
            Protocol::Ranking => "ranking",
            Protocol::RankingShuffle => "ranking_shuffle",
        }
    }
}

/// The kind of phase a given round belongs to. Ranking/shuffle phases are
/// numbered from 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseKind {
    Round0,
    Random,
    Ranking(u32),
    Shuffle(u32),
}

/// Deterministic schedule of phase lengths: round 0, a random phase of
/// `tau` rounds, then ranking phases of `tau_prime` rounds, each followed
/// (in the shuffle variant) by a shuffle phase of `8 * tau` rounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePlan {
    pub tau: u64,
    pub tau_prime: u64,
    pub shuffle_len: u64,
    pub with_shuffle: bool,
    /// Freshness threshold T = tau / 2; a message with cnt < T is fresh.
    pub fresh_threshold: f64,
}

impl PhasePlan {
    /// Derive the plan from node count and scale factors: tau rounds to
    /// `alpha * log2 n`, tau_prime to `8 * d * tau * log2^2 n`.
    pub fn derive(n: usize, alpha: f64, d: f64, with_shuffle: bool) -> PhasePlan {
        let log_n = (n.max(1) as f64).log2();
        let tau = (alpha * log_n).round().max(0.0) as u64;
        let tau_prime = ((8.0 * d * tau as f64 * log_n * log_n).round() as u64).max(1);
        let shuffle_len = 8 * tau;
        PhasePlan {
            tau,
            tau_prime,
            shuffle_len,
            with_shuffle: with_shuffle && shuffle_len > 0,
            fresh_threshold: tau as f64 / 2.0,
        }
    }

    fn cycle_len(&self) -> u64 {
        self.tau_prime + if self.with_shuffle { self.shuffle_len } else { 0 }
    }

    /// Phase containing round `t` (t = 0 is the initial broadcast round).
    pub fn phase_at(&self, t: u64) -> PhaseKind {
        if t == 0 {
            return PhaseKind::Round0;
        }
        if t <= self.tau {
            return PhaseKind::Random;
        }
        let rel = t - 1 - self.tau;
        let p = (rel / self.cycle_len()) as u32 + 1;
        if rel % self.cycle_len() < self.tau_prime {
            PhaseKind::Ranking(p)
        } else {
            PhaseKind::Shuffle(p)
        }
    }

    /// First round of ranking phase `p` (p >= 1), i.e. t_p.
    pub fn ranking_start(&self, p: u32) -> u64 {
        1 + self.tau + (p as u64 - 1) * self.cycle_len()
    }

    /// One past the last round of ranking phase `p`, i.e. t-bar_p.
    pub fn ranking_end(&self, p: u32) -> u64 {
        self.ranking_start(p) + self.tau_prime
    }

    /// If a new phase starts at round `t`, the phase that starts there.
    pub fn boundary_at(&self, t: u64) -> Option<PhaseKind> {
        if t == 0 {
            return Some(PhaseKind::Round0);
        }
        if t == 1 && self.tau > 0 {
            return Some(PhaseKind::Random);
        }
        if t < 1 + self.tau {
            return None;
        }
        let rel = t - 1 - self.tau;
        let off = rel % self.cycle_len();
        let p = (rel / self.cycle_len()) as u32 + 1;
        if off == 0 {
            Some(PhaseKind::Ranking(p))
        } else if self.with_shuffle && off == self.tau_prime {
            Some(PhaseKind::Shuffle(p))
        } else {
            None
        }
    }

    /// Conservative total-round bound used to calibrate the tolerable
    /// failure rate: tau_e = 2 * phases * tau_prime.
    pub fn tau_e(&self, phases: u64) -> u64 {
        2 * phases * self.tau_prime
    }
}

/// The rank-inverse probability space over an ordered message list.
///
/// The entry at rank r (1-based) carries raw weight `1 / (r * H_b)`.
/// Sampling nullifies the picked entry and renormalizes the remaining
/// weights proportionally, so an unsent entry's effective probability
/// never drops below its initial one.
#[derive(Clone, Debug)]
pub struct RankDistribution {
    entries: Vec<u32>,
    weights: Vec<f64>,
    nullified: Vec<bool>,
    active_weight: f64,
    active_count: usize,
}

/// Sort buffer entries by (cnt ascending, origin id ascending) and build
/// the rank distribution. The deterministic tie-break keeps runs
/// reproducible.
pub fn ranking_function(items: &[(u32, u32)]) -> RankDistribution {
    let mut sorted: Vec<(u32, u32)> = items.to_vec();
    sorted.sort_unstable_by_key(|&(origin, cnt)| (cnt, origin));
    RankDistribution::from_ordered(sorted.into_iter().map(|(origin, _)| origin).collect())
}

impl RankDistribution {
    /// Build from an already-ordered list (rank 1 first).
    pub fn from_ordered(entries: Vec<u32>) -> RankDistribution {
        let b = entries.len();
        let harmonic: f64 = (1..=b).map(|i| 1.0 / i as f64).sum();
        let weights: Vec<f64> = (1..=b).map(|r| 1.0 / (r as f64 * harmonic)).collect();
        let active_weight = weights.iter().sum();
        RankDistribution {
            entries,
            weights,
            nullified: vec![false; b],
            active_weight,
            active_count: b,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn remaining(&self) -> usize {
        self.active_count
    }

    /// Raw (initial) weights in rank order.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Current effective probability of the entry at `index`, after
    /// renormalization over the non-nullified entries.
    pub fn effective_probability(&self, index: usize) -> f64 {
        if self.nullified[index] || self.active_weight <= 0.0 {
            0.0
        } else {
            self.weights[index] / self.active_weight
        }
    }

    /// Sample proportionally to the current weights and nullify the pick.
    /// Returns `None` once every entry is nullified.
    pub fn sample_and_nullify(&mut self, rng: &mut Stream) -> Option<u32> {
        if self.active_count == 0 {
            return None;
        }
        let x = rng.next_f64() * self.active_weight;
        let mut acc = 0.0;
        let mut pick = None;
        for i in 0..self.entries.len() {
            if self.nullified[i] {
                continue;
            }
            acc += self.weights[i];
            if x < acc {
                pick = Some(i);
                break;
            }
        }
        // Guard against accumulated rounding at the tail.
        let i = pick.unwrap_or_else(|| {
            (0..self.entries.len())
                .rev()
                .find(|&i| !self.nullified[i])
                .unwrap()
        });
        self.nullified[i] = true;
        self.active_count -= 1;
        self.active_weight -= self.weights[i];
        if self.active_count == 0 {
            self.active_weight = 0.0;
        }
        Some(self.entries[i])
    }
}

/// Pop a uniformly random element. Returns `None` on an empty buffer, in
/// which case the caller falls back to sending its own message.
pub fn pop_uniform(buffer: &mut Vec<u32>, rng: &mut Stream) -> Option<u32> {
    if buffer.is_empty() {
        return None;
    }
    let i = rng.index(buffer.len());
    Some(buffer.swap_remove(i))
}

/// Freshness predicate: received fewer than T times.
pub fn is_fresh(cnt: u32, threshold: f64) -> bool {
    (cnt as f64) < threshold
}

/// Pioneer predicate at the start of ranking phase `p`: the message
/// originated exactly `p + 1` cliques away (either direction).
pub fn is_pioneer(labels: &GnkLabels, node: u32, origin: u32, p: u32) -> bool {
    let cu = labels.clique_of[node as usize] as i64;
    let cv = labels.clique_of[origin as usize] as i64;
    (cu - cv).abs() == p as i64 + 1
}

/// Ordering of the ranking-phase buffer in the shuffle variant:
/// shuffle-selected messages take the leading ranks in their assigned
/// order, the remaining unsent messages follow sorted by (cnt, id).
/// Isolated here so the under-specified interaction between shuffle ranks
/// and cnt ranks stays behind one function.
pub fn shuffle_ranked_order(unsent: &[(u32, u32)], selected: &[u32]) -> Vec<u32> {
    let mut order = Vec::with_capacity(unsent.len());
    let mut taken = vec![false; unsent.len()];
    for &sel in selected {
        if let Some(pos) = unsent.iter().position(|&(origin, _)| origin == sel) {
            if !taken[pos] {
                taken[pos] = true;
                order.push(sel);
            }
        }
    }
    let mut rest: Vec<(u32, u32)> = unsent
        .iter()
        .enumerate()
        .filter(|&(i, _)| !taken[i])
        .map(|(_, &e)| e)
        .collect();
    rest.sort_unstable_by_key(|&(origin, cnt)| (cnt, origin));
    order.extend(rest.into_iter().map(|(origin, _)| origin));
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::build_gnk;

    const EPS: f64 = 1e-12;

    #[test]
    fn ranking_weights_small_cases() {
        let d = RankDistribution::from_ordered(vec![0]);
        assert!((d.weights()[0] - 1.0).abs() < EPS);

        let d = RankDistribution::from_ordered(vec![0, 1]);
        assert!((d.weights()[0] - 2.0 / 3.0).abs() < EPS);
        assert!((d.weights()[1] - 1.0 / 3.0).abs() < EPS);

        let d = RankDistribution::from_ordered(vec![0, 1, 2]);
        let expect = [6.0 / 11.0, 3.0 / 11.0, 2.0 / 11.0];
        for (w, e) in d.weights().iter().zip(expect) {
            assert!((w - e).abs() < EPS);
        }
    }

    #[test]
    fn ranking_weights_sum_and_decrease() {
        for b in [1usize, 2, 5, 17, 100, 1000] {
            let d = RankDistribution::from_ordered((0..b as u32).collect());
            let sum: f64 = d.weights().iter().sum();
            assert!((sum - 1.0).abs() < EPS, "b={b} sum={sum}");
            for w in d.weights().windows(2) {
                assert!(w[0] > w[1], "b={b}");
            }
        }
    }

    #[test]
    fn ranking_function_sorts_by_cnt_then_id() {
        let d = ranking_function(&[(9, 5), (3, 1), (7, 1), (2, 8)]);
        assert_eq!(d.entries, vec![3, 7, 9, 2]);
    }

    #[test]
    fn nullify_renormalizes() {
        let mut d = RankDistribution::from_ordered(vec![10, 11, 12]);
        // Force the first (heaviest) entry out by sampling until it's hit.
        let mut rng = Stream::from_seed(1);
        loop {
            let mut probe = d.clone();
            if probe.sample_and_nullify(&mut rng) == Some(10) {
                d = probe;
                break;
            }
        }
        assert!((d.effective_probability(1) - 3.0 / 5.0).abs() < EPS);
        assert!((d.effective_probability(2) - 2.0 / 5.0).abs() < EPS);
        assert_eq!(d.effective_probability(0), 0.0);
    }

    #[test]
    fn sample_exhausts_then_none() {
        let mut d = RankDistribution::from_ordered(vec![5]);
        let mut rng = Stream::from_seed(2);
        assert_eq!(d.sample_and_nullify(&mut rng), Some(5));
        assert_eq!(d.sample_and_nullify(&mut rng), None);
    }

    #[test]
    fn first_pick_frequencies_match_weights() {
        // Monte-Carlo check of the b = 3 first-pick law against
        // [6/11, 3/11, 2/11], within 3 sigma.
        let trials = 100_000usize;
        let mut rng = Stream::from_seed(7);
        let mut counts = [0usize; 3];
        for _ in 0..trials {
            let mut d = RankDistribution::from_ordered(vec![0, 1, 2]);
            let pick = d.sample_and_nullify(&mut rng).unwrap();
            counts[pick as usize] += 1;
        }
        let expect = [6.0 / 11.0, 3.0 / 11.0, 2.0 / 11.0];
        for (i, &c) in counts.iter().enumerate() {
            let p = expect[i];
            let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
            let delta = (c as f64 - trials as f64 * p).abs();
            assert!(delta < 3.0 * sigma, "rank {i}: delta {delta} sigma {sigma}");
        }
    }

    #[test]
    fn uniform_pick_frequencies() {
        // Each of 4 entries should come out close to 1/4 over 1e5 draws.
        let trials = 100_000usize;
        let mut rng = Stream::from_seed(11);
        let mut counts = [0usize; 4];
        for _ in 0..trials {
            let mut buf = vec![0u32, 1, 2, 3];
            let pick = pop_uniform(&mut buf, &mut rng).unwrap();
            counts[pick as usize] += 1;
        }
        for &c in &counts {
            let p = 0.25;
            let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
            assert!((c as f64 - trials as f64 * p).abs() < 4.0 * sigma);
        }
        let mut empty = Vec::new();
        assert_eq!(pop_uniform(&mut empty, &mut rng), None);
    }

    #[test]
    fn low_ranks_sent_within_phase() {
        // At the n = 64 scale factors (alpha = 2, d = 1) the phase is far
        // longer than any realistic buffer, so every rank up to 8*tau is
        // sent essentially always; assert the >= 99% proxy.
        let plan = PhasePlan::derive(64, 2.0, 1.0, false);
        assert_eq!(plan.tau, 12);
        assert_eq!(plan.tau_prime, 3456);
        let target_rank = (8 * plan.tau).min(64) as usize; // b = 64 buffer
        let sims = 200;
        let mut rng = Stream::from_seed(13);
        let mut sent = 0usize;
        for _ in 0..sims {
            let mut d = RankDistribution::from_ordered((0..64).collect());
            let target = d.entries[target_rank - 1];
            let mut hit = false;
            for _ in 0..plan.tau_prime {
                match d.sample_and_nullify(&mut rng) {
                    Some(m) if m == target => {
                        hit = true;
                        break;
                    }
                    Some(_) => {}
                    None => break,
                }
            }
            if hit {
                sent += 1;
            }
        }
        assert!(sent as f64 / sims as f64 >= 0.99);
    }

    #[test]
    fn phase_plan_arithmetic() {
        let plan = PhasePlan::derive(64, 2.0, 1.0, true);
        assert_eq!(plan.shuffle_len, 96);
        assert_eq!(plan.phase_at(0), PhaseKind::Round0);
        assert_eq!(plan.phase_at(1), PhaseKind::Random);
        assert_eq!(plan.phase_at(12), PhaseKind::Random);
        assert_eq!(plan.phase_at(13), PhaseKind::Ranking(1));
        assert_eq!(plan.boundary_at(13), Some(PhaseKind::Ranking(1)));
        assert_eq!(plan.phase_at(13 + 3455), PhaseKind::Ranking(1));
        assert_eq!(plan.phase_at(13 + 3456), PhaseKind::Shuffle(1));
        assert_eq!(plan.boundary_at(13 + 3456), Some(PhaseKind::Shuffle(1)));
        assert_eq!(plan.phase_at(13 + 3456 + 96), PhaseKind::Ranking(2));
        assert_eq!(plan.ranking_start(2), 13 + 3456 + 96);
        assert_eq!(plan.ranking_end(1), 13 + 3456);

        let no_shuffle = PhasePlan::derive(64, 2.0, 1.0, false);
        assert_eq!(no_shuffle.phase_at(13 + 3456), PhaseKind::Ranking(2));
        // t-bar_p = t_{p+1} without shuffles.
        assert_eq!(no_shuffle.ranking_end(1), no_shuffle.ranking_start(2));
    }

    #[test]
    fn degenerate_tau_zero() {
        let plan = PhasePlan::derive(1, 2.0, 1.0, false);
        assert_eq!(plan.tau, 0);
        assert!(plan.tau_prime >= 1);
        // No random rounds: ranking starts right after round 0.
        assert_eq!(plan.phase_at(1), PhaseKind::Ranking(1));
    }

    #[test]
    fn pioneer_predicate() {
        let t = build_gnk(20, 4).unwrap();
        let labels = t.labels().unwrap();
        // p = 1: node in clique 2 (0-based), origin in clique 0.
        assert!(is_pioneer(labels, 8, 0, 1));
        // Mirror direction.
        assert!(is_pioneer(labels, 0, 8, 1));
        // Same clique: never a pioneer.
        assert!(!is_pioneer(labels, 8, 9, 1));
        // Distance p, not p+1.
        assert!(!is_pioneer(labels, 8, 4, 1));
    }

    #[test]
    fn shuffle_order_heads_with_selection() {
        let unsent = [(1u32, 4u32), (2, 1), (3, 2), (4, 9)];
        let order = shuffle_ranked_order(&unsent, &[3, 1]);
        assert_eq!(order, vec![3, 1, 2, 4]);
        // Selected ids not present in the unsent set are skipped.
        let order = shuffle_ranked_order(&unsent, &[7, 2]);
        assert_eq!(order, vec![2, 3, 1, 4]);
    }
}
