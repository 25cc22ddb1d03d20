//! Experiment campaigns: a grid of simulation cells, trials per cell,
//! deterministic seeding, parallel execution, and persisted artifacts.
//!
//! A campaign is a TOML file listing axis values; the harness expands the
//! Cartesian product, runs `trials` seeds per cell (seed = base seed +
//! trial index, so cells are seed-paired), writes one JSON-lines file per
//! cell plus an aggregate CSV, and skips cells whose file already exists.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{aggregate, write_trials_csv, SweepResult, TrialSummary};
use crate::engine::{run, SimConfig};
use crate::protocols::Protocol;
use crate::topology::build_gnk;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("campaign parse: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("campaign: {0}")]
    Invalid(String),
    #[error("{0}")]
    Analysis(#[from] crate::analysis::AnalysisError),
}

fn default_qs() -> Vec<f64> {
    vec![0.0]
}
fn default_alphas() -> Vec<f64> {
    vec![2.0]
}
fn default_ds() -> Vec<f64> {
    vec![1.0]
}
fn default_c_hats() -> Vec<f64> {
    vec![0.5]
}
fn default_trials() -> usize {
    1
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Campaign {
    pub name: String,
    pub protocols: Vec<Protocol>,
    pub n: Vec<usize>,
    pub k: Vec<usize>,
    #[serde(default = "default_qs")]
    pub q: Vec<f64>,
    #[serde(default = "default_alphas")]
    pub alpha: Vec<f64>,
    #[serde(default = "default_ds")]
    pub d: Vec<f64>,
    #[serde(default = "default_c_hats")]
    pub c_hat: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub horizon: Option<u64>,
}

impl Campaign {
    pub fn from_toml(text: &str) -> Result<Campaign, HarnessError> {
        let c: Campaign = toml::from_str(text)?;
        if c.protocols.is_empty() || c.n.is_empty() || c.k.is_empty() {
            return Err(HarnessError::Invalid(
                "protocols, n, and k axes must be non-empty".into(),
            ));
        }
        if c.trials == 0 {
            return Err(HarnessError::Invalid("trials must be positive".into()));
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Campaign, HarnessError> {
        Campaign::from_toml(&fs::read_to_string(path)?)
    }
}

/// One grid cell: all trial configs share everything but the seed.
#[derive(Clone, Debug)]
pub struct Cell {
    pub tag: String,
    pub configs: Vec<SimConfig>,
}

#[derive(Debug, Default)]
pub struct Expansion {
    pub cells: Vec<Cell>,
    /// Invalid cells, reported by coordinates and skipped.
    pub skipped: Vec<String>,
}

impl Expansion {
    pub fn config_count(&self) -> usize {
        self.cells.iter().map(|c| c.configs.len()).sum()
    }
}

fn float_tag(x: f64) -> String {
    format!("{x}").replace('.', "p").replace('-', "m")
}

/// Stable filename-safe cell identifier (everything but the seed).
pub fn cell_tag(cfg: &SimConfig) -> String {
    format!(
        "{}_n{}_k{}_q{}_a{}_d{}_c{}",
        cfg.protocol.name(),
        cfg.n,
        cfg.k,
        float_tag(cfg.q),
        float_tag(cfg.alpha),
        float_tag(cfg.d),
        float_tag(cfg.c_hat),
    )
}

/// Cartesian expansion in a fixed axis order. Invalid cells are flagged
/// with their coordinates; the rest proceed.
pub fn expand(campaign: &Campaign) -> Expansion {
    let mut out = Expansion::default();
    for &protocol in &campaign.protocols {
        for &n in &campaign.n {
            for &k in &campaign.k {
                for &q in &campaign.q {
                    for &alpha in &campaign.alpha {
                        for &d in &campaign.d {
                            for &c_hat in &campaign.c_hat {
                                let mut proto_cfg = SimConfig::new(protocol, n, k);
                                proto_cfg.q = q;
                                proto_cfg.alpha = alpha;
                                proto_cfg.d = d;
                                proto_cfg.c_hat = c_hat;
                                proto_cfg.horizon = campaign.horizon;
                                if let Err(e) = proto_cfg
                                    .validate()
                                    .map_err(|e| e.to_string())
                                    .and_then(|_| {
                                        build_gnk(n, k).map(|_| ()).map_err(|e| e.to_string())
                                    })
                                {
                                    out.skipped.push(format!("{}: {e}", cell_tag(&proto_cfg)));
                                    continue;
                                }
                                let configs = (0..campaign.trials)
                                    .map(|t| {
                                        let mut cfg = proto_cfg.clone();
                                        cfg.seed = campaign.base_seed + t as u64;
                                        cfg
                                    })
                                    .collect::<Vec<_>>();
                                out.cells.push(Cell {
                                    tag: cell_tag(&proto_cfg),
                                    configs,
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug)]
pub struct ExecutionReport {
    pub summaries: Vec<TrialSummary>,
    pub sweep: SweepResult,
    pub skipped: Vec<String>,
    /// Trials that errored, by cell tag and seed.
    pub failed_trials: Vec<String>,
    pub csv_path: PathBuf,
}

fn cell_file(out_dir: &Path, campaign: &Campaign, tag: &str) -> PathBuf {
    out_dir.join(format!("{}__{}.jsonl", campaign.name, tag))
}

fn load_cell(path: &Path) -> Option<Vec<TrialSummary>> {
    let text = fs::read_to_string(path).ok()?;
    let mut out = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).ok()?);
    }
    Some(out)
}

fn run_cell(cell: &Cell) -> (Vec<TrialSummary>, Vec<String>) {
    // All configs in a cell share (n, k); build the graph once.
    let first = &cell.configs[0];
    let topo = build_gnk(first.n, first.k).expect("cell validated at expansion");
    let results: Vec<Result<TrialSummary, String>> = cell
        .configs
        .par_iter()
        .map(|cfg| {
            run(cfg.clone(), &topo)
                .map(|trace| TrialSummary::from_trace(&trace))
                .map_err(|e| format!("{} seed {}: {e}", cell_tag(cfg), cfg.seed))
        })
        .collect();
    let mut summaries = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(s) => summaries.push(s),
            Err(e) => failures.push(e),
        }
    }
    summaries.sort_by_key(|s| s.effective.seed);
    (summaries, failures)
}

/// Run (or resume) a campaign. Cells whose JSON-lines file already exists
/// are loaded instead of recomputed, so an interrupted sweep picks up
/// where it left off. Aggregates are rewritten from the sorted cell files
/// every time, which makes re-runs byte-identical.
pub fn execute(
    campaign: &Campaign,
    out_dir: &Path,
    workers: usize,
) -> Result<ExecutionReport, HarnessError> {
    fs::create_dir_all(out_dir)?;
    let expansion = expand(campaign);
    if expansion.cells.is_empty() {
        return Err(HarnessError::Invalid(format!(
            "no valid cells (skipped: {:?})",
            expansion.skipped
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers) // 0 means rayon's default
        .build()
        .map_err(|e| HarnessError::Invalid(e.to_string()))?;

    let mut summaries = Vec::new();
    let mut failed_trials = Vec::new();
    for cell in &expansion.cells {
        let path = cell_file(out_dir, campaign, &cell.tag);
        let loaded = if path.exists() { load_cell(&path) } else { None };
        let cell_summaries = match loaded {
            Some(s) => s,
            None => {
                let (s, failures) = pool.install(|| run_cell(cell));
                failed_trials.extend(failures);
                let mut text = String::new();
                for summary in &s {
                    text.push_str(&serde_json::to_string(summary).unwrap());
                    text.push('\n');
                }
                let tmp = path.with_extension("jsonl.tmp");
                fs::write(&tmp, text)?;
                fs::rename(&tmp, &path)?;
                s
            }
        };
        summaries.extend(cell_summaries);
    }

    // Deterministic global order regardless of execution interleaving.
    summaries.sort_by(|a, b| {
        let ka = (
            a.effective.protocol.name(),
            a.effective.n,
            a.effective.k,
            a.effective.q.to_bits(),
            a.effective.alpha.to_bits(),
            a.effective.d.to_bits(),
            a.effective.c_hat.to_bits(),
            a.effective.seed,
        );
        let kb = (
            b.effective.protocol.name(),
            b.effective.n,
            b.effective.k,
            b.effective.q.to_bits(),
            b.effective.alpha.to_bits(),
            b.effective.d.to_bits(),
            b.effective.c_hat.to_bits(),
            b.effective.seed,
        );
        ka.cmp(&kb)
    });

    let sweep = aggregate(&summaries);
    let csv_path = out_dir.join(format!("{}__results.csv", campaign.name));
    let mut buf = Vec::new();
    write_trials_csv(&mut buf, &summaries)?;
    fs::write(&csv_path, buf)?;
    fs::write(
        out_dir.join(format!("{}__sweep.json", campaign.name)),
        serde_json::to_string_pretty(&sweep).unwrap(),
    )?;

    Ok(ExecutionReport {
        summaries,
        sweep,
        skipped: expansion.skipped,
        failed_trials,
        csv_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_campaign() -> Campaign {
        Campaign::from_toml(
            r#"
            name = "smoke"
            protocols = ["uniform"]
            n = [8, 12]
            k = [4]
            q = [0.0, 0.01]
            trials = 3
            base_seed = 7
            horizon = 500
            "#,
        )
        .unwrap()
    }

    #[test]
    fn toml_defaults_fill_in() {
        let c = Campaign::from_toml(
            r#"
            name = "t"
            protocols = ["ranking"]
            n = [8]
            k = [4]
            "#,
        )
        .unwrap();
        assert_eq!(c.q, vec![0.0]);
        assert_eq!(c.alpha, vec![2.0]);
        assert_eq!(c.trials, 1);
    }

    #[test]
    fn expansion_is_a_cartesian_product() {
        let e = expand(&small_campaign());
        assert_eq!(e.cells.len(), 4); // 2 n * 2 q
        assert_eq!(e.config_count(), 12); // * 3 trials
        assert!(e.skipped.is_empty());
        // Seeds are paired across cells.
        for cell in &e.cells {
            let seeds: Vec<u64> = cell.configs.iter().map(|c| c.seed).collect();
            assert_eq!(seeds, vec![7, 8, 9]);
        }
    }

    #[test]
    fn invalid_cells_are_flagged_not_fatal() {
        let mut c = small_campaign();
        c.n = vec![8, 9]; // 9 % 4 != 0
        let e = expand(&c);
        assert_eq!(e.cells.len(), 2);
        assert_eq!(e.skipped.len(), 2);
        assert!(e.skipped[0].contains("n9_k4"));
    }

    #[test]
    fn rerun_is_byte_identical_and_resumable() {
        let dir = tempfile::tempdir().unwrap();
        let campaign = small_campaign();
        let r1 = execute(&campaign, dir.path(), 2).unwrap();
        assert!(r1.failed_trials.is_empty());
        let csv1 = fs::read(&r1.csv_path).unwrap();

        let r2 = execute(&campaign, dir.path(), 1).unwrap();
        let csv2 = fs::read(&r2.csv_path).unwrap();
        assert_eq!(csv1, csv2);

        // Existing cell files are trusted, not recomputed: doctor one and
        // check the aggregate reflects it.
        let tag = &expand(&campaign).cells[0].tag;
        let path = cell_file(dir.path(), &campaign, tag);
        let doctored = fs::read_to_string(&path)
            .unwrap()
            .replace("\"phases\":1", "\"phases\":77");
        fs::write(&path, doctored).unwrap();
        let r3 = execute(&campaign, dir.path(), 1).unwrap();
        assert!(r3.summaries.iter().any(|s| s.phases == 77));
    }
}
