//! Whole-experiment driver: state initialization, the round loop with paired
//! evaluation, and the gamma sweep used to probe weight divergence.

use std::time::Instant;

use super::round::{run_round, RoundContext};
use super::{ClientState, FedConfig, ServerState, Strategy};
use crate::ego::EgoShape;
use crate::error::{Error, Result};
use crate::eval::{build_eval_set, evaluate_model, EvalSet};
use crate::graph::Graph;
use crate::nn::{AdamState, ModelDims, ModelParams};
use crate::partition::Partition;
use crate::report::{ClientEval, EvalSnapshot, ExperimentReport, RoundBytes, RoundReport};
use crate::rng::derive_stream;

/// Frozen evaluation samples shared by all strategies under one seed: the
/// global test set plus each client's local test and validation sets.
pub struct EvalSets {
    pub global: EvalSet,
    pub local_test: Vec<EvalSet>,
    pub local_val: Vec<EvalSet>,
}

/// Sample one ego-graph per evaluation node from the dedicated `eval` stream.
pub fn build_eval_sets(
    graph: &Graph,
    partition: &Partition,
    shape: &EgoShape,
    seed: u64,
) -> Result<EvalSets> {
    let mut rng = derive_stream(seed, "eval", 0);
    let global = build_eval_set(graph, &partition.global_test, shape, &mut rng)?;
    let mut local_test = Vec::with_capacity(partition.clients.len());
    let mut local_val = Vec::with_capacity(partition.clients.len());
    for client in &partition.clients {
        local_test.push(build_eval_set(graph, &client.test_nodes, shape, &mut rng)?);
        local_val.push(build_eval_set(graph, &client.val_nodes, shape, &mut rng)?);
    }
    Ok(EvalSets {
        global,
        local_test,
        local_val,
    })
}

/// Initialize client and server states: one weight draw shared by every
/// client and the server, per-client RNG streams, per-client Adam state.
pub fn init_states(
    graph: &Graph,
    partition: &Partition,
    config: &FedConfig,
) -> Result<(Vec<ClientState>, ServerState)> {
    if partition.clients.is_empty() {
        return Err(Error::Invalid("partition has no clients".into()));
    }
    let dims = ModelDims {
        feature_dim: graph.feature_dim(),
        reduction_layers: config.reduction_layers,
        reduction_dim: config.reduction_dim,
        hidden_dim: config.hidden_dim,
        num_classes: graph.num_classes(),
        hops: config.hops,
    };
    let mut init_rng = derive_stream(config.seed, "init", 0);
    let template = ModelParams::init(
        &dims,
        crate::nn::Activation::Relu,
        config.activation,
        &mut init_rng,
    );

    let clients: Vec<ClientState> = partition
        .clients
        .iter()
        .map(|dataset| {
            let model = template.clone();
            let adam = AdamState::new(&model, config.learning_rate);
            ClientState {
                client_id: dataset.client_id,
                dataset: dataset.clone(),
                distribution: dataset.distribution.clone(),
                adam,
                model,
                rng: derive_stream(config.seed, "client", dataset.client_id as u64),
            }
        })
        .collect();

    let server_adam = AdamState::new(&template.personalization, config.learning_rate);
    let server = ServerState {
        reduction: template.reduction.clone(),
        personalization: template.personalization.clone(),
        adam: server_adam,
        pool: Vec::new(),
        distribution: None,
        rng: derive_stream(config.seed, "server", 0),
    };
    Ok((clients, server))
}

fn snapshot(
    clients: &[ClientState],
    graph: &Graph,
    eval: &EvalSets,
) -> Result<EvalSnapshot> {
    let per_client = clients
        .iter()
        .enumerate()
        .map(|(i, c)| {
            Ok(ClientEval {
                client_id: c.client_id,
                local_test: evaluate_model(&c.model, graph, &eval.local_test[i])?,
                local_val: evaluate_model(&c.model, graph, &eval.local_val[i])?,
                global_test: evaluate_model(&c.model, graph, &eval.global)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalSnapshot::from_clients(per_client))
}

/// Run a full experiment: initialize from the seed-derived stream family,
/// train for the configured number of rounds, evaluate on the frozen
/// evaluation sets, and assemble the report.
pub fn run_experiment(
    graph: &Graph,
    partition: &Partition,
    config: &FedConfig,
) -> Result<ExperimentReport> {
    run_experiment_with(graph, partition, config, &mut |_| {})
}

/// Like [`run_experiment`], invoking `on_round` after every round completes.
pub fn run_experiment_with(
    graph: &Graph,
    partition: &Partition,
    config: &FedConfig,
    on_round: &mut dyn FnMut(&RoundReport),
) -> Result<ExperimentReport> {
    config.validate()?;
    let start = Instant::now();
    let shape = EgoShape::new(config.hops, config.fanout)?;
    let (mut clients, mut server) = init_states(graph, partition, config)?;
    let eval = build_eval_sets(graph, partition, &shape, config.seed)?;

    let pool = if config.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.threads)
                .build()
                .map_err(|e| Error::Invalid(format!("building thread pool: {e}")))?,
        )
    } else {
        None
    };
    let ctx = RoundContext {
        graph,
        shape: &shape,
        config,
        eval: &eval,
        pool: pool.as_ref(),
    };

    let initial = snapshot(&clients, graph, &eval)?;
    let mut best_val_round = 0usize;
    let mut best_val_f1 = initial.mean_val_f1;

    let mut rounds = Vec::with_capacity(config.rounds);
    let mut total_bytes = RoundBytes::default();
    for round in 1..=config.rounds {
        let report = run_round(&ctx, round, &mut clients, &mut server)?;
        total_bytes.accumulate(&report.bytes);
        let val_mean = if report.clients.iter().all(|c| c.local_val.is_some()) {
            let sum: f64 = report
                .clients
                .iter()
                .map(|c| c.local_val.unwrap().micro_f1)
                .sum();
            Some(sum / report.clients.len() as f64)
        } else {
            None
        };
        if let Some(v) = val_mean {
            if v > best_val_f1 {
                best_val_f1 = v;
                best_val_round = round;
            }
        }
        on_round(&report);
        rounds.push(report);
    }

    let final_eval = if config.rounds == 0 {
        initial.clone()
    } else {
        let last = rounds.last().expect("at least one round");
        let per_client = last
            .clients
            .iter()
            .map(|c| ClientEval {
                client_id: c.client_id,
                local_test: c.local_test.expect("final round evaluates"),
                local_val: c.local_val.expect("final round evaluates"),
                global_test: c.global_test.expect("final round evaluates"),
            })
            .collect();
        EvalSnapshot::from_clients(per_client)
    };

    let wall_clock_secs = start.elapsed().as_secs_f64();
    log::info!(
        "experiment strategy={} seed={} rounds={} finished in {wall_clock_secs:.1}s \
         (global F1 {:.4}, local F1 {:.4})",
        config.strategy,
        config.seed,
        config.rounds,
        final_eval.mean_global_f1,
        final_eval.mean_local_f1,
    );

    Ok(ExperimentReport {
        config: config.clone(),
        partition_seed: partition.seed,
        num_clients: partition.clients.len(),
        initial,
        rounds,
        final_eval,
        best_val_round,
        best_val_f1,
        total_bytes,
        wall_clock_secs,
    })
}

/// One gamma's outcome in a divergence probe.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GammaProbeEntry {
    pub gamma: f64,
    pub per_client_wd: Vec<f64>,
    pub mean_wd: f64,
    pub final_global_f1: f64,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GammaProbe {
    pub seed: u64,
    pub entries: Vec<GammaProbeEntry>,
}

/// Run one experiment per `gamma` value (same seed, same partition) and
/// record the post-training relative weight divergence of every client.
pub fn gamma_divergence_probe(
    graph: &Graph,
    partition: &Partition,
    config: &FedConfig,
    gamma_list: &[f64],
) -> Result<GammaProbe> {
    if gamma_list.len() < 2 {
        return Err(Error::Config(format!(
            "gamma probe needs at least two gamma values, got {}",
            gamma_list.len()
        )));
    }
    if config.rounds == 0 {
        return Err(Error::Config("gamma probe needs at least one round".into()));
    }
    let mut entries = Vec::with_capacity(gamma_list.len());
    for &gamma in gamma_list {
        let mut cfg = config.clone();
        cfg.strategy = Strategy::Fedego;
        cfg.gamma = gamma;
        let report = run_experiment(graph, partition, &cfg)?;
        let last = report.rounds.last().expect("rounds >= 1");
        let per_client_wd: Vec<f64> = last
            .clients
            .iter()
            .map(|c| {
                c.wd_relative.ok_or_else(|| {
                    Error::Invalid("divergence missing from the final round".into())
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mean_wd = per_client_wd.iter().sum::<f64>() / per_client_wd.len() as f64;
        entries.push(GammaProbeEntry {
            gamma,
            per_client_wd,
            mean_wd,
            final_global_f1: report.final_eval.mean_global_f1,
        });
    }
    Ok(GammaProbe {
        seed: config.seed,
        entries,
    })
}
