//! Oracles and statistics over run traces: structural property checks on
//! clique chains, exact replay checks from send logs, scaling fits, and
//! sweep aggregation.
//!
//! Everything here is a pure function of immutable traces.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{EffectiveConfig, RunTrace, UNKNOWN};
use crate::protocols::{PhaseKind, PhasePlan};
use crate::topology::Topology;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("property checks need a labeled clique-chain topology")]
    Unlabeled,
    #[error("trace was recorded without {0}")]
    MissingData(&'static str),
    #[error("property checks apply to fault-free runs only")]
    FaultyRun,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Violation counts for one ranking-phase boundary.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PhaseVerdict {
    pub phase: u32,
    /// Pioneer count/layer discipline per clique per direction.
    pub p1: u64,
    /// Fresh-set size and origin-clique confinement per node per direction.
    pub p2: u64,
    /// Distance-p messages fresh in at least T nodes of each clique.
    pub p3: u64,
    /// Everything within distance p-1 known and non-fresh.
    pub p4: u64,
}

impl PhaseVerdict {
    pub fn clean(&self) -> bool {
        self.p1 == 0 && self.p2 == 0 && self.p3 == 0 && self.p4 == 0
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct PropertyReport {
    pub per_phase: Vec<PhaseVerdict>,
    pub p1_violations: u64,
    pub p2_violations: u64,
    pub p3_violations: u64,
    pub p4_violations: u64,
    /// Knowledge escaping graph distance p+1 at any phase start.
    pub distance_violations: u64,
    /// Random-phase start buffers must equal the node degree.
    pub init_buff_violations: u64,
    /// True when the clique width supports the P3 threshold (k >= T).
    pub p3_applicable: bool,
}

impl PropertyReport {
    pub fn clean(&self) -> bool {
        self.p1_violations == 0
            && self.p2_violations == 0
            && self.p3_violations == 0
            && self.p4_violations == 0
            && self.distance_violations == 0
            && self.init_buff_violations == 0
    }
}

/// Check the per-phase structural properties of a fault-free run on a
/// labeled clique chain. Needs boundary snapshots in the trace.
pub fn check_properties(trace: &RunTrace, topo: &Topology) -> Result<PropertyReport, AnalysisError> {
    let labels = topo.labels().ok_or(AnalysisError::Unlabeled)?;
    let snaps = trace
        .snapshots
        .as_ref()
        .ok_or(AnalysisError::MissingData("snapshots"))?;
    if !trace.fail_events.is_empty() {
        return Err(AnalysisError::FaultyRun);
    }
    let n = trace.n();
    let k = labels.k;
    let chains = labels.clique_count() as i64;
    let eff = &trace.effective;
    let plan = PhasePlan::derive(eff.n, eff.alpha, eff.d, eff.protocol.with_shuffle());
    let tau = plan.tau;
    let threshold = plan.fresh_threshold;
    let p3_applicable = (k as f64) >= threshold;

    // All-pairs distances for the confinement proposition.
    let dist: Vec<Vec<u32>> = (0..n as u32).map(|v| topo.bfs_distances(v)).collect();

    let mut report = PropertyReport {
        p3_applicable,
        ..PropertyReport::default()
    };

    for snap in snaps {
        let Some(entering) = snap.entering else {
            continue;
        };
        // Knowledge can advance one hop per phase from its phase-start
        // holders. Without shuffling that is p+1 entering ranking phase p;
        // the shuffle variant inserts one extra sending phase per cycle
        // (shuffle arrivals stay known even when filtered), so its limits
        // are one hop wider per completed cycle.
        let limit = match entering {
            PhaseKind::Round0 => continue,
            PhaseKind::Random => 1,
            PhaseKind::Ranking(p) if plan.with_shuffle => 2 * p,
            PhaseKind::Ranking(p) => p + 1,
            PhaseKind::Shuffle(p) => 2 * p + 1,
        };
        for u in 0..n {
            for v in 0..n {
                if snap.nodes[u].known[v] && dist[v][u] > limit {
                    report.distance_violations += 1;
                }
            }
        }
        if entering == PhaseKind::Random {
            // Everything learned so far is exactly the neighbor set, and
            // only the own message has been sent.
            for u in 0..n {
                let known = snap.nodes[u].known.iter().filter(|&&b| b).count();
                if known != topo.degree(u as u32) + 1 {
                    report.init_buff_violations += 1;
                }
            }
            continue;
        }
        // The per-phase structural properties are statements about the
        // plain ranking schedule; the shuffle variant redefines freshness
        // each cycle and is checked through its shuffle reports instead.
        if plan.with_shuffle {
            continue;
        }
        let PhaseKind::Ranking(p) = entering else {
            continue;
        };

        let mut verdict = PhaseVerdict {
            phase: p,
            p1: 0,
            p2: 0,
            p3: 0,
            p4: 0,
        };
        let clique = |x: usize| labels.clique_of[x] as i64;

        // P1: pioneers (messages at clique distance p+1) per clique per
        // direction: at most 3*tau, carried on distinct layers.
        for i in 0..chains {
            for dir in [-1i64, 1] {
                let j = i - dir * (p as i64 + 1);
                if j < 0 || j >= chains {
                    continue;
                }
                let mut origins = HashSet::new();
                for u in (i as usize * k)..((i as usize + 1) * k) {
                    for v in (j as usize * k)..((j as usize + 1) * k) {
                        if snap.nodes[u].known[v] {
                            origins.insert(v);
                            if labels.layer_of[u] != labels.layer_of[v] {
                                verdict.p1 += 1;
                            }
                        }
                    }
                }
                if origins.len() as u64 > 3 * tau {
                    verdict.p1 += origins.len() as u64 - 3 * tau;
                }
            }
        }

        // P2: per node per direction, fresh origins sit in C_{i +- p} with
        // at most one pioneer from C_{i +- (p+1)}, and at most 4*tau total.
        for u in 0..n {
            for dir in [-1i64, 1] {
                let mut total = 0u64;
                let mut pioneers = 0u64;
                for v in 0..n {
                    if v == u || !snap.nodes[u].fresh[v] {
                        continue;
                    }
                    let delta = clique(v) - clique(u);
                    if delta.signum() != dir {
                        continue;
                    }
                    total += 1;
                    if delta.abs() == p as i64 + 1 {
                        pioneers += 1;
                    } else if delta.abs() != p as i64 {
                        verdict.p2 += 1;
                    }
                }
                if pioneers > 1 {
                    verdict.p2 += pioneers - 1;
                }
                if total > 4 * tau {
                    verdict.p2 += total - 4 * tau;
                }
            }
        }

        // P3: each message from C_{i +- p} is fresh in at least T nodes of
        // C_i. Only meaningful when the clique holds T nodes at all.
        if p3_applicable {
            for i in 0..chains {
                for dir in [-1i64, 1] {
                    let j = i - dir * p as i64;
                    if j < 0 || j >= chains {
                        continue;
                    }
                    for v in (j as usize * k)..((j as usize + 1) * k) {
                        let fresh_in = ((i as usize * k)..((i as usize + 1) * k))
                            .filter(|&u| snap.nodes[u].fresh[v])
                            .count();
                        if (fresh_in as f64) < threshold {
                            verdict.p3 += 1;
                        }
                    }
                }
            }
        }

        // P4: everything within clique distance p-1 is known and spent.
        for u in 0..n {
            for v in 0..n {
                if (clique(v) - clique(u)).abs() <= p as i64 - 1
                    && (!snap.nodes[u].known[v] || snap.nodes[u].fresh[v])
                {
                    verdict.p4 += 1;
                }
            }
        }

        report.p1_violations += verdict.p1;
        report.p2_violations += verdict.p2;
        report.p3_violations += verdict.p3;
        report.p4_violations += verdict.p4;
        report.per_phase.push(verdict);
    }
    Ok(report)
}

/// Exact checks replayed from the send log.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReplayReport {
    /// Sends of a message inside the phase it was first received in.
    pub phase_sep_violations: u64,
    /// A (node, origin) relay pair appearing twice.
    pub repetition_violations: u64,
    /// Final cnt values disagreeing with a delivery-log recount.
    pub conservation_violations: u64,
    pub conservation_checked: bool,
    /// Completion round recomputed from the log matches the trace.
    pub completion_matches: bool,
    /// Knowledge sets unchanged when filler re-broadcasts are dropped.
    pub filler_free_knowledge_matches: bool,
}

impl ReplayReport {
    pub fn clean(&self) -> bool {
        self.phase_sep_violations == 0
            && self.repetition_violations == 0
            && self.conservation_violations == 0
            && self.completion_matches
            && self.filler_free_knowledge_matches
    }
}

fn phase_ordinal(kind: PhaseKind) -> u64 {
    match kind {
        PhaseKind::Round0 => 0,
        PhaseKind::Random => 1,
        PhaseKind::Ranking(p) => 2 * p as u64,
        PhaseKind::Shuffle(p) => 2 * p as u64 + 1,
    }
}

pub fn check_send_log(trace: &RunTrace, topo: &Topology) -> Result<ReplayReport, AnalysisError> {
    let sends = trace
        .sends
        .as_ref()
        .ok_or(AnalysisError::MissingData("send log"))?;
    let n = trace.n();
    let eff = &trace.effective;
    let phased = eff.protocol.phased();
    let plan = PhasePlan::derive(eff.n, eff.alpha, eff.d, eff.protocol.with_shuffle());

    let mut fail_round = vec![u64::MAX; n];
    for &(r, u) in &trace.fail_events {
        fail_round[u as usize] = r;
    }
    let receives = |v: u32, t: u64| fail_round[v as usize] > t;

    let mut report = ReplayReport {
        phase_sep_violations: 0,
        repetition_violations: 0,
        conservation_violations: 0,
        conservation_checked: false,
        completion_matches: true,
        filler_free_knowledge_matches: true,
    };

    // Non-repetition of relays (filler re-broadcasts of the own message
    // are the designed exception) and phase separation.
    let mut seen = HashSet::new();
    for s in sends {
        if s.sender == s.origin {
            continue;
        }
        if !seen.insert((s.sender, s.origin)) {
            report.repetition_violations += 1;
        }
        if phased {
            let learned = trace.learned_round(s.sender, s.origin);
            debug_assert!(learned != UNKNOWN && (learned as u64) <= s.round);
            let received_at = learned.saturating_sub(1) as u64;
            if phase_ordinal(plan.phase_at(received_at)) == phase_ordinal(plan.phase_at(s.round)) {
                report.phase_sep_violations += 1;
            }
        }
    }

    // Independent knowledge replay, with and without filler sends.
    let replay = |skip_fillers: bool| -> Vec<u32> {
        let mut learned = vec![UNKNOWN; n * n];
        for u in 0..n {
            learned[u * n + u] = 0;
        }
        for s in sends {
            if skip_fillers && s.sender == s.origin && s.round > 0 {
                continue;
            }
            for &v in topo.neighbors(s.sender) {
                if receives(v, s.round) {
                    let i = v as usize * n + s.origin as usize;
                    if learned[i] == UNKNOWN {
                        learned[i] = (s.round + 1) as u32;
                    }
                }
            }
        }
        learned
    };
    let full = replay(false);
    let mut worst = 0u64;
    let mut complete = true;
    for &u in &trace.survivors {
        for &v in &trace.survivors {
            let l = full[u as usize * n + v as usize];
            if l == UNKNOWN {
                complete = false;
            } else {
                worst = worst.max(l as u64);
            }
        }
    }
    let replayed_completion = if complete { Some(worst) } else { None };
    report.completion_matches = replayed_completion == trace.completion_round;

    let stripped = replay(true);
    report.filler_free_knowledge_matches = (0..n * n)
        .all(|i| (full[i] == UNKNOWN) == (stripped[i] == UNKNOWN));

    // Counter conservation against the final snapshot, when one exists.
    if let Some(snaps) = &trace.snapshots {
        if let Some(last) = snaps.iter().rev().find(|s| s.entering.is_none()) {
            report.conservation_checked = true;
            let mut cnt = vec![0u64; n * n];
            for u in 0..n {
                cnt[u * n + u] = 1;
            }
            for s in sends {
                if phased && matches!(plan.phase_at(s.round), PhaseKind::Shuffle(_)) {
                    continue; // shuffle receptions bypass cnt
                }
                for &v in topo.neighbors(s.sender) {
                    if receives(v, s.round) {
                        cnt[v as usize * n + s.origin as usize] += 1;
                    }
                }
            }
            for u in 0..n {
                for v in 0..n {
                    if cnt[u * n + v] != last.nodes[u].cnt[v] as u64 {
                        report.conservation_violations += 1;
                    }
                }
            }
        }
    }
    Ok(report)
}

/// One trial's persisted record; embeds the full effective config so the
/// trial can be replayed in isolation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrialSummary {
    pub effective: EffectiveConfig,
    pub completed: bool,
    pub completion_round: Option<u64>,
    pub phases: u32,
    pub survivors: usize,
    pub p1_violations: u64,
    pub p2_violations: u64,
    pub p3_violations: u64,
    pub p4_violations: u64,
    pub phase_sep_violations: u64,
    pub distance_violations: u64,
    /// False when the run skipped the property/replay oracles.
    pub checked: bool,
    pub digest: String,
}

impl TrialSummary {
    pub fn from_trace(trace: &RunTrace) -> TrialSummary {
        TrialSummary {
            effective: trace.effective.clone(),
            completed: trace.completed,
            completion_round: trace.completion_round,
            phases: trace.phases_entered,
            survivors: trace.survivors.len(),
            p1_violations: 0,
            p2_violations: 0,
            p3_violations: 0,
            p4_violations: 0,
            phase_sep_violations: 0,
            distance_violations: 0,
            checked: false,
            digest: trace.digest(),
        }
    }

    /// Summary with the structural and replay oracles filled in. Skips
    /// whichever oracle the trace lacks data for.
    pub fn with_checks(trace: &RunTrace, topo: &Topology) -> Result<TrialSummary, AnalysisError> {
        let mut s = TrialSummary::from_trace(trace);
        if trace.snapshots.is_some() && trace.fail_events.is_empty() && topo.labels().is_some() {
            let props = check_properties(trace, topo)?;
            s.p1_violations = props.p1_violations;
            s.p2_violations = props.p2_violations;
            s.p3_violations = props.p3_violations;
            s.p4_violations = props.p4_violations;
            s.distance_violations = props.distance_violations;
            s.checked = true;
        }
        if trace.sends.is_some() {
            let replay = check_send_log(trace, topo)?;
            s.phase_sep_violations = replay.phase_sep_violations;
            s.checked = true;
        }
        Ok(s)
    }
}

/// One CSV row per trial.
pub fn write_trials_csv<W: Write>(out: W, trials: &[TrialSummary]) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "protocol",
        "n",
        "k",
        "q",
        "seed",
        "round0_to_completion",
        "phases",
        "success",
        "p1_violations",
        "p2_violations",
        "p3_violations",
        "p4_violations",
    ])?;
    for t in trials {
        w.write_record([
            t.effective.protocol.name().to_string(),
            t.effective.n.to_string(),
            t.effective.k.to_string(),
            format!("{}", t.effective.q),
            t.effective.seed.to_string(),
            t.completion_round.map(|r| r.to_string()).unwrap_or_default(),
            t.phases.to_string(),
            (t.completed as u8).to_string(),
            t.p1_violations.to_string(),
            t.p2_violations.to_string(),
            t.p3_violations.to_string(),
            t.p4_violations.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Statistics for one sweep cell.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellStats {
    pub protocol: String,
    pub n: usize,
    pub k: usize,
    pub q: f64,
    pub trials: usize,
    pub success_rate: f64,
    pub mean_rounds: Option<f64>,
    pub median_rounds: Option<f64>,
    pub p95_rounds: Option<f64>,
    /// mean_rounds / (n/k), the diameter-normalized cost.
    pub mean_over_diameter: Option<f64>,
    /// mean_rounds / (n/sqrt(k)).
    pub mean_over_n_sqrt_k: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepResult {
    pub cells: Vec<CellStats>,
}

/// Fold trial summaries into per-(protocol, n, k, q) statistics. The
/// result is independent of the input order.
pub fn aggregate(trials: &[TrialSummary]) -> SweepResult {
    let mut cells: BTreeMap<(String, usize, usize, u64), Vec<&TrialSummary>> = BTreeMap::new();
    for t in trials {
        cells
            .entry((
                t.effective.protocol.name().to_string(),
                t.effective.n,
                t.effective.k,
                t.effective.q.to_bits(),
            ))
            .or_default()
            .push(t);
    }
    let cells = cells
        .into_iter()
        .map(|((protocol, n, k, q_bits), mut ts)| {
            ts.sort_by_key(|t| t.effective.seed);
            let q = f64::from_bits(q_bits);
            let trials = ts.len();
            let successes = ts.iter().filter(|t| t.completed).count();
            let mut rounds: Vec<f64> = ts
                .iter()
                .filter_map(|t| t.completion_round.map(|r| r as f64))
                .collect();
            rounds.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mean = if rounds.is_empty() {
                None
            } else {
                Some(rounds.iter().sum::<f64>() / rounds.len() as f64)
            };
            let quantile = |p: f64| -> Option<f64> {
                if rounds.is_empty() {
                    None
                } else {
                    let i = ((rounds.len() - 1) as f64 * p).round() as usize;
                    Some(rounds[i])
                }
            };
            let diam = if k > 0 { (n / k) as f64 } else { n as f64 };
            let nsk = n as f64 / (k.max(1) as f64).sqrt();
            CellStats {
                protocol,
                n,
                k,
                q,
                trials,
                success_rate: successes as f64 / trials.max(1) as f64,
                mean_rounds: mean,
                median_rounds: quantile(0.5),
                p95_rounds: quantile(0.95),
                mean_over_diameter: mean.map(|m| m / diam),
                mean_over_n_sqrt_k: mean.map(|m| m / nsk),
            }
        })
        .collect();
    SweepResult { cells }
}

/// Log-log least-squares fit over (n, mean rounds) points, plus the
/// growth ratio per doubling of n for each consecutive pair.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub per_doubling: Vec<f64>,
}

pub fn scaling_fit(points: &[(f64, f64)]) -> Result<ScalingFit, AnalysisError> {
    if points.len() < 3 {
        return Err(AnalysisError::InsufficientData(format!(
            "scaling fit needs >= 3 points, got {}",
            points.len()
        )));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let m = logs.len() as f64;
    let sx: f64 = logs.iter().map(|p| p.0).sum();
    let sy: f64 = logs.iter().map(|p| p.1).sum();
    let sxx: f64 = logs.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = logs.iter().map(|p| p.0 * p.1).sum();
    let slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    let mut per_doubling = Vec::new();
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    for w in sorted.windows(2) {
        let (x1, y1) = w[0];
        let (x2, y2) = w[1];
        // Normalize to an exact doubling in case the grid is uneven.
        per_doubling.push((y2 / y1).powf(1.0 / (x2 / x1).log2()));
    }
    Ok(ScalingFit {
        slope,
        per_doubling,
    })
}

/// Side-by-side survivor-to-survivor success rates at one failure rate,
/// over paired seeds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FaultToleranceReport {
    pub q: f64,
    pub paired_trials: usize,
    pub with_shuffle_rate: f64,
    pub without_shuffle_rate: f64,
    pub shuffle_strictly_better: bool,
}

pub fn fault_tolerance_report(
    q: f64,
    with_shuffle: &[bool],
    without_shuffle: &[bool],
) -> FaultToleranceReport {
    let rate = |xs: &[bool]| {
        if xs.is_empty() {
            0.0
        } else {
            xs.iter().filter(|&&b| b).count() as f64 / xs.len() as f64
        }
    };
    let paired = with_shuffle.len().min(without_shuffle.len());
    let wins2 = with_shuffle[..paired].iter().filter(|&&b| b).count();
    let wins1 = without_shuffle[..paired].iter().filter(|&&b| b).count();
    FaultToleranceReport {
        q,
        paired_trials: paired,
        with_shuffle_rate: rate(with_shuffle),
        without_shuffle_rate: rate(without_shuffle),
        shuffle_strictly_better: wins2 > wins1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run, SimConfig};
    use crate::protocols::Protocol;
    use crate::topology::build_gnk;

    #[test]
    fn single_clique_is_vacuous() {
        let topo = build_gnk(8, 8).unwrap();
        let mut cfg = SimConfig::new(Protocol::Ranking, 8, 8);
        cfg.record_snapshots = true;
        let trace = run(cfg, &topo).unwrap();
        let report = check_properties(&trace, &topo).unwrap();
        assert!(report.per_phase.is_empty()); // done before any ranking phase
        assert!(report.clean());
    }

    #[test]
    fn clean_ranking_run_has_no_violations() {
        let topo = build_gnk(64, 8).unwrap();
        let mut cfg = SimConfig::new(Protocol::Ranking, 64, 8);
        cfg.seed = 1;
        cfg.record_snapshots = true;
        let trace = run(cfg, &topo).unwrap();
        assert!(trace.completed);
        let report = check_properties(&trace, &topo).unwrap();
        assert!(report.p3_applicable);
        assert!(report.clean(), "unexpected violations: {report:?}");
        assert!(!report.per_phase.is_empty());
    }

    #[test]
    fn clean_shuffle_run_has_no_violations() {
        let topo = build_gnk(64, 8).unwrap();
        let mut cfg = SimConfig::new(Protocol::RankingShuffle, 64, 8);
        cfg.seed = 2;
        cfg.record_snapshots = true;
        let trace = run(cfg, &topo).unwrap();
        assert!(trace.completed);
        let report = check_properties(&trace, &topo).unwrap();
        assert!(report.clean(), "unexpected violations: {report:?}");
        assert!(report.per_phase.is_empty()); // P1-P4 are plain-ranking claims
    }

    #[test]
    fn skipping_the_random_phase_breaks_p3() {
        let topo = build_gnk(64, 8).unwrap();
        let mut cfg = SimConfig::new(Protocol::Ranking, 64, 8);
        cfg.seed = 1;
        cfg.record_snapshots = true;
        cfg.mutate_skip_random = true;
        cfg.stop_at_completion = false;
        cfg.horizon = Some(cfg.plan().ranking_start(2));
        let trace = run(cfg, &topo).unwrap();
        let report = check_properties(&trace, &topo).unwrap();
        let phase1 = report.per_phase.iter().find(|v| v.phase == 1).unwrap();
        assert!(phase1.p3 > 0, "expected P3 violations at phase 1");
    }

    #[test]
    fn replay_oracles_agree_with_engine() {
        let topo = build_gnk(12, 4).unwrap();
        for seed in 0..5 {
            let mut cfg = SimConfig::new(Protocol::Ranking, 12, 4);
            cfg.seed = seed;
            cfg.record_sends = true;
            cfg.record_snapshots = true;
            let trace = run(cfg, &topo).unwrap();
            let report = check_send_log(&trace, &topo).unwrap();
            assert!(report.conservation_checked);
            assert!(report.clean(), "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn replay_oracles_hold_under_failures() {
        let topo = build_gnk(16, 4).unwrap();
        let mut cfg = SimConfig::new(Protocol::RankingShuffle, 16, 4);
        cfg.seed = 11;
        cfg.q = 0.002;
        cfg.record_sends = true;
        cfg.record_snapshots = true;
        cfg.horizon = Some(2000);
        let trace = run(cfg, &topo).unwrap();
        let report = check_send_log(&trace, &topo).unwrap();
        assert!(report.clean(), "{report:?}");
    }

    #[test]
    fn scaling_fit_recovers_linear_growth() {
        let pts: Vec<(f64, f64)> = [64.0, 128.0, 256.0, 512.0]
            .iter()
            .map(|&n| (n, 3.0 * n))
            .collect();
        let fit = scaling_fit(&pts).unwrap();
        assert!((fit.slope - 1.0).abs() < 0.05, "slope {}", fit.slope);
        for r in &fit.per_doubling {
            assert!((r - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn scaling_fit_rejects_small_grids() {
        assert!(scaling_fit(&[(1.0, 1.0), (2.0, 2.0)]).is_err());
    }

    #[test]
    fn aggregate_is_order_invariant() {
        let topo = build_gnk(8, 4).unwrap();
        let mut trials: Vec<TrialSummary> = (0..6)
            .map(|seed| {
                let mut cfg = SimConfig::new(Protocol::Uniform, 8, 4);
                cfg.seed = seed;
                TrialSummary::from_trace(&run(cfg, &topo).unwrap())
            })
            .collect();
        let a = serde_json::to_string(&aggregate(&trials)).unwrap();
        trials.reverse();
        trials.swap(0, 3);
        let b = serde_json::to_string(&aggregate(&trials)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_schema_is_stable() {
        let topo = build_gnk(8, 4).unwrap();
        let cfg = SimConfig::new(Protocol::Ranking, 8, 4);
        let t = TrialSummary::from_trace(&run(cfg, &topo).unwrap());
        let mut buf = Vec::new();
        write_trials_csv(&mut buf, &[t]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "protocol,n,k,q,seed,round0_to_completion,phases,success,\
             p1_violations,p2_violations,p3_violations,p4_violations"
        ));
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn fault_report_counts_paired_wins() {
        let r = fault_tolerance_report(0.1, &[true, true, false], &[true, false, false]);
        assert!((r.with_shuffle_rate - 2.0 / 3.0).abs() < 1e-12);
        assert!(r.shuffle_strictly_better);
    }
}
