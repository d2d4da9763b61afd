//! Round and experiment reports plus their JSON/CSV exports.
//!
//! `report.json` is the full per-seed record, `rounds.jsonl` streams one JSON
//! object per round, `metrics.csv` holds evaluation metrics in long form
//! (`round,client_id,split,metric,value`, client `-1` being the across-client
//! mean on the global test), and `divergence.csv` holds per-client relative
//! weight divergences. Exports are byte-identical across reruns.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Metrics;
use crate::fed::{FedConfig, Strategy};

/// Per-client record inside a round report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClientRoundStats {
    pub client_id: usize,
    pub train_loss: f64,
    /// Micro-F1 on the local test split, when this round evaluated.
    pub local_f1: Option<f64>,
    pub lambda: Option<f64>,
    pub emd: Option<f64>,
    pub wd_relative: Option<f64>,
    pub wd_absolute: Option<f64>,
    pub local_test: Option<Metrics>,
    pub local_val: Option<Metrics>,
    pub global_test: Option<Metrics>,
}

/// Communication bytes of one round, 4 bytes per 32-bit float.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundBytes {
    pub params_up: u64,
    pub params_down: u64,
    pub ego_up: u64,
}

impl RoundBytes {
    pub fn total(&self) -> u64 {
        self.params_up + self.params_down + self.ego_up
    }

    pub fn accumulate(&mut self, other: &RoundBytes) {
        self.params_up += other.params_up;
        self.params_down += other.params_down;
        self.ego_up += other.ego_up;
    }
}

/// One round's record: losses, metrics, mixing statistics, bytes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub clients: Vec<ClientRoundStats>,
    /// Mean over clients of the micro-F1 on the global test set.
    pub global_f1: Option<f64>,
    pub bytes: RoundBytes,
}

/// Frozen evaluation of every client at one point in time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSnapshot {
    pub per_client: Vec<ClientEval>,
    pub mean_local_f1: f64,
    pub mean_val_f1: f64,
    pub mean_global_f1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClientEval {
    pub client_id: usize,
    pub local_test: Metrics,
    pub local_val: Metrics,
    pub global_test: Metrics,
}

impl EvalSnapshot {
    pub fn from_clients(per_client: Vec<ClientEval>) -> EvalSnapshot {
        let n = per_client.len().max(1) as f64;
        let mean_local_f1 = per_client.iter().map(|c| c.local_test.micro_f1).sum::<f64>() / n;
        let mean_val_f1 = per_client.iter().map(|c| c.local_val.micro_f1).sum::<f64>() / n;
        let mean_global_f1 = per_client.iter().map(|c| c.global_test.micro_f1).sum::<f64>() / n;
        EvalSnapshot {
            per_client,
            mean_local_f1,
            mean_val_f1,
            mean_global_f1,
        }
    }
}

/// Full record of one experiment (one seed, one strategy).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: FedConfig,
    pub partition_seed: u64,
    pub num_clients: usize,
    /// Untrained (round 0) evaluation.
    pub initial: EvalSnapshot,
    pub rounds: Vec<RoundReport>,
    pub final_eval: EvalSnapshot,
    pub best_val_round: usize,
    pub best_val_f1: f64,
    pub total_bytes: RoundBytes,
    /// Stderr-only timing; excluded from serialized artifacts so reruns stay
    /// byte-identical.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl ExperimentReport {
    pub fn load(path: &Path) -> Result<ExperimentReport> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

/// Write `report.json`, `rounds.jsonl`, `metrics.csv`, and `divergence.csv`.
/// Returns the paths written.
pub fn export_report(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let json_path = dir.join("report.json");
    {
        let mut w = create(&json_path)?;
        serde_json::to_writer_pretty(&mut w, report)
            .map_err(|e| Error::Invalid(format!("serializing report: {e}")))?;
        w.write_all(b"\n").map_err(|e| Error::io(&json_path, e))?;
    }
    written.push(json_path);

    let jsonl_path = dir.join("rounds.jsonl");
    {
        let mut w = create(&jsonl_path)?;
        for round in &report.rounds {
            serde_json::to_writer(&mut w, round)
                .map_err(|e| Error::Invalid(format!("serializing round: {e}")))?;
            w.write_all(b"\n").map_err(|e| Error::io(&jsonl_path, e))?;
        }
    }
    written.push(jsonl_path);

    let metrics_path = dir.join("metrics.csv");
    {
        let mut w = create(&metrics_path)?;
        let io = |e: std::io::Error| Error::io(&metrics_path, e);
        writeln!(w, "round,client_id,split,metric,value").map_err(io)?;
        let snapshot_rows =
            |w: &mut BufWriter<File>, round: usize, snap: &EvalSnapshot| -> Result<()> {
                for c in &snap.per_client {
                    for (split, m) in [
                        ("local_test", &c.local_test),
                        ("local_val", &c.local_val),
                        ("global_test", &c.global_test),
                    ] {
                        write_metric_rows(w, round, c.client_id as i64, split, m).map_err(io)?;
                    }
                }
                let mean = Metrics {
                    micro_f1: snap.mean_global_f1,
                    macro_f1: mean_of(&snap.per_client, |c| c.global_test.macro_f1),
                    loss: mean_of(&snap.per_client, |c| c.global_test.loss),
                    samples: snap.per_client.first().map(|c| c.global_test.samples).unwrap_or(0),
                };
                write_metric_rows(w, round, -1, "global_test", &mean).map_err(io)?;
                Ok(())
            };
        snapshot_rows(&mut w, 0, &report.initial)?;
        for round in &report.rounds {
            if round.clients.iter().any(|c| c.local_test.is_some()) {
                let per_client: Vec<ClientEval> = round
                    .clients
                    .iter()
                    .map(|c| ClientEval {
                        client_id: c.client_id,
                        local_test: c.local_test.expect("evaluated round"),
                        local_val: c.local_val.expect("evaluated round"),
                        global_test: c.global_test.expect("evaluated round"),
                    })
                    .collect();
                snapshot_rows(&mut w, round.round, &EvalSnapshot::from_clients(per_client))?;
            }
        }
    }
    written.push(metrics_path);

    let divergence_path = dir.join("divergence.csv");
    {
        let mut w = create(&divergence_path)?;
        let io = |e: std::io::Error| Error::io(&divergence_path, e);
        writeln!(w, "gamma,seed,round,client_id,wd_relative").map_err(io)?;
        for round in &report.rounds {
            for c in &round.clients {
                if let Some(wd) = c.wd_relative {
                    writeln!(
                        w,
                        "{},{},{},{},{}",
                        report.config.gamma, report.config.seed, round.round, c.client_id, wd
                    )
                    .map_err(io)?;
                }
            }
        }
    }
    written.push(divergence_path);

    Ok(written)
}

fn mean_of(clients: &[ClientEval], f: impl Fn(&ClientEval) -> f64) -> f64 {
    clients.iter().map(f).sum::<f64>() / clients.len().max(1) as f64
}

fn write_metric_rows(
    w: &mut impl Write,
    round: usize,
    client_id: i64,
    split: &str,
    m: &Metrics,
) -> std::io::Result<()> {
    writeln!(w, "{round},{client_id},{split},micro_f1,{}", m.micro_f1)?;
    writeln!(w, "{round},{client_id},{split},macro_f1,{}", m.macro_f1)?;
    writeln!(w, "{round},{client_id},{split},loss,{}", m.loss)?;
    Ok(())
}

/// Final metrics of one seed inside a multi-seed run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub final_global_f1: f64,
    pub final_local_f1: f64,
    pub final_val_f1: f64,
    pub best_val_round: usize,
    pub total_bytes: RoundBytes,
}

/// Seed-averaged summary of a strategy's runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedSummary {
    pub strategy: Strategy,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<SeedOutcome>,
    pub mean_global_f1: f64,
    pub mean_local_f1: f64,
    pub mean_val_f1: f64,
}

pub fn summarize(reports: &[ExperimentReport]) -> Result<SeedSummary> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Invalid("summary over no reports".into()))?;
    let per_seed: Vec<SeedOutcome> = reports
        .iter()
        .map(|r| SeedOutcome {
            seed: r.config.seed,
            final_global_f1: r.final_eval.mean_global_f1,
            final_local_f1: r.final_eval.mean_local_f1,
            final_val_f1: r.final_eval.mean_val_f1,
            best_val_round: r.best_val_round,
            total_bytes: r.total_bytes,
        })
        .collect();
    let n = per_seed.len() as f64;
    Ok(SeedSummary {
        strategy: first.config.strategy,
        seeds: per_seed.iter().map(|s| s.seed).collect(),
        mean_global_f1: per_seed.iter().map(|s| s.final_global_f1).sum::<f64>() / n,
        mean_local_f1: per_seed.iter().map(|s| s.final_local_f1).sum::<f64>() / n,
        mean_val_f1: per_seed.iter().map(|s| s.final_val_f1).sum::<f64>() / n,
        per_seed,
    })
}

/// Write `summary.json` and `summary.csv` for a multi-seed run.
pub fn export_summary(summary: &SeedSummary, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let json_path = dir.join("summary.json");
    {
        let mut w = create(&json_path)?;
        serde_json::to_writer_pretty(&mut w, summary)
            .map_err(|e| Error::Invalid(format!("serializing summary: {e}")))?;
        w.write_all(b"\n").map_err(|e| Error::io(&json_path, e))?;
    }
    written.push(json_path);

    let csv_path = dir.join("summary.csv");
    {
        let mut w = create(&csv_path)?;
        let io = |e: std::io::Error| Error::io(&csv_path, e);
        writeln!(w, "strategy,seed,final_global_f1,final_local_f1,final_val_f1,best_val_round,total_bytes")
            .map_err(io)?;
        for s in &summary.per_seed {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                summary.strategy,
                s.seed,
                s.final_global_f1,
                s.final_local_f1,
                s.final_val_f1,
                s.best_val_round,
                s.total_bytes.total()
            )
            .map_err(io)?;
        }
        writeln!(
            w,
            "{},mean,{},{},{},,",
            summary.strategy, summary.mean_global_f1, summary.mean_local_f1, summary.mean_val_f1
        )
        .map_err(io)?;
    }
    written.push(csv_path);

    Ok(written)
}
