//! One federation round: client local stages, the server global stage,
//! adaptive mixing, and update application, for the full method and the
//! parameter-averaging / local-only baselines.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::{
    mashed_graph_bytes, param_bytes, ClientState, FedConfig, RoundUpload, ServerState, Strategy,
};
use crate::ego::{sample_ego_graph, EgoShape};
use crate::error::{Error, Result};
use crate::eval::evaluate_model;
use crate::graph::Graph;
use crate::mash::{mash_stacked, MashedEgoGraph};
use crate::nn::{
    average_personalization, average_reduction, mix_personalization, param_distance_linf,
    personalization_backward, train_step, weight_divergence, DivergenceMode,
};
use crate::partition::DistributionVector;
use crate::report::{ClientRoundStats, RoundBytes, RoundReport};

/// Shared read-only inputs of a round.
pub struct RoundContext<'a> {
    pub graph: &'a Graph,
    pub shape: &'a EgoShape,
    pub config: &'a FedConfig,
    pub eval: &'a super::EvalSets,
    pub pool: Option<&'a rayon::ThreadPool>,
}

/// Mixing coefficient from the earth mover distance between local and global
/// label distributions: `lambda = (EMD / 2)^gamma`.
pub fn adaptive_lambda(
    local: &DistributionVector,
    global: &DistributionVector,
    gamma: f64,
) -> f64 {
    let emd = local.emd(global);
    (emd / 2.0).powf(gamma).clamp(0.0, 1.0)
}

/// Run one client's local stage: `local_epochs x batches_per_epoch` batches
/// of `batch_size` train centers sampled uniformly with replacement (or the
/// whole train set in order, when it is no larger than a batch), each batch
/// one forward/backward/Adam step, emitting one mashed ego-graph per batch
/// from the in-flight reduction embeddings.
pub fn client_local_stage(
    client: &mut ClientState,
    graph: &Graph,
    shape: &EgoShape,
    config: &FedConfig,
) -> Result<RoundUpload> {
    let train = &client.dataset.train_nodes;
    if train.is_empty() {
        return Err(Error::Invalid(format!(
            "client {} has an empty train set",
            client.client_id
        )));
    }
    let collect_mashed = config.strategy == Strategy::Fedego;
    let s = shape.positions();
    let mut mashed: Vec<MashedEgoGraph> = Vec::new();
    let mut loss_sum = 0.0;
    let mut batches = 0usize;

    for _epoch in 0..config.local_epochs {
        for _batch in 0..config.batches_per_epoch {
            let centers: Vec<usize> = if config.batch_size >= train.len() {
                train.clone()
            } else {
                (0..config.batch_size)
                    .map(|_| train[client.rng.random_range(0..train.len())])
                    .collect()
            };
            let egos = centers
                .iter()
                .map(|&c| sample_ego_graph(graph, c, shape, &mut client.rng))
                .collect::<Result<Vec<_>>>()?;

            let step = train_step(&client.model, graph, &egos)?;
            if collect_mashed {
                if config.ablation.disable_mixup {
                    let first = step.position_embeddings.slice(ndarray::s![0..s, ..]);
                    mashed.push(mash_stacked(shape, first, &[&egos[0]], graph));
                } else {
                    let members: Vec<&crate::ego::EgoGraph> = egos.iter().collect();
                    mashed.push(mash_stacked(
                        shape,
                        step.position_embeddings.view(),
                        &members,
                        graph,
                    ));
                }
            }
            client.adam.step(&mut client.model, &step.grads)?;
            loss_sum += step.loss;
            batches += 1;
        }
    }

    let train_loss = loss_sum / batches as f64;
    if !train_loss.is_finite() {
        return Err(Error::NonFinite {
            context: format!("client {} train loss", client.client_id),
        });
    }

    let (upload_params, personalization) = match config.strategy {
        Strategy::Fedego => (param_bytes(&client.model.reduction), None),
        Strategy::Fedavg => (
            param_bytes(&client.model.reduction) + param_bytes(&client.model.personalization),
            Some(client.model.personalization.clone()),
        ),
        Strategy::LocalOnly => (0, None),
    };
    let ego_bytes = mashed.len() as u64
        * mashed_graph_bytes(s, config.reduction_dim, graph.num_classes());

    Ok(RoundUpload {
        client_id: client.client_id,
        reduction: client.model.reduction.clone(),
        personalization,
        mashed,
        train_loss,
        param_bytes: upload_params,
        ego_bytes,
    })
}

/// Server global stage. For the full method: average the uploaded reduction
/// weights, replace the mashed pool with this round's uploads, train the
/// global personalization layers over the pool for `server_epochs` epochs of
/// shuffled mini-batches, and recompute the global label distribution from
/// the pool's center soft labels. For parameter averaging: average both
/// weight groups.
pub fn server_global_stage(
    server: &mut ServerState,
    uploads: Vec<RoundUpload>,
    shape: &EgoShape,
    config: &FedConfig,
) -> Result<()> {
    if uploads.is_empty() {
        return Err(Error::Invalid("server stage without uploads".into()));
    }
    match config.strategy {
        Strategy::LocalOnly => Ok(()),
        Strategy::Fedavg => {
            let reductions: Vec<_> = uploads.iter().map(|u| u.reduction.clone()).collect();
            server.reduction = average_reduction(&reductions)?;
            let personalizations = uploads
                .iter()
                .map(|u| {
                    u.personalization.clone().ok_or_else(|| {
                        Error::Invalid(format!(
                            "client {} upload lacks personalization weights",
                            u.client_id
                        ))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            server.personalization = average_personalization(&personalizations)?;
            Ok(())
        }
        Strategy::Fedego => {
            if !config.ablation.disable_reduction_avg {
                let reductions: Vec<_> = uploads.iter().map(|u| u.reduction.clone()).collect();
                server.reduction = average_reduction(&reductions)?;
            }
            server.pool = uploads.into_iter().flat_map(|u| u.mashed).collect();
            if server.pool.is_empty() {
                return Err(Error::Invalid("server received an empty mashed pool".into()));
            }

            let s = shape.positions();
            let d_r = server.pool[0].embedding_dim();
            let c = server.pool[0].num_classes();
            for epoch in 0..config.server_epochs {
                let mut order: Vec<usize> = (0..server.pool.len()).collect();
                order.shuffle(&mut server.rng);
                for chunk in order.chunks(config.batch_size) {
                    let mut positions = Array2::zeros((chunk.len() * s, d_r));
                    let mut soft_labels = Array2::zeros((chunk.len() * s, c));
                    for (i, &g) in chunk.iter().enumerate() {
                        let graph = &server.pool[g];
                        positions
                            .slice_mut(ndarray::s![i * s..(i + 1) * s, ..])
                            .assign(&graph.embeddings);
                        soft_labels
                            .slice_mut(ndarray::s![i * s..(i + 1) * s, ..])
                            .assign(&graph.soft_labels);
                    }
                    let (loss, grads) = personalization_backward(
                        &server.personalization,
                        &positions,
                        shape,
                        &soft_labels,
                        config.server_all_position_loss,
                    )?;
                    if !loss.is_finite() {
                        return Err(Error::NonFinite {
                            context: format!("server loss in epoch {epoch}"),
                        });
                    }
                    server.adam.step(&mut server.personalization, &grads)?;
                }
            }

            let mut centers = Array2::zeros((server.pool.len(), c));
            for (i, g) in server.pool.iter().enumerate() {
                centers.row_mut(i).assign(&g.center_label());
            }
            server.distribution = Some(DistributionVector::from_soft_labels(centers.view())?);
            Ok(())
        }
    }
}

/// Per-client outcome of the update application.
#[derive(Debug, Clone, Copy, Default)]
pub struct UpdateStats {
    pub lambda: Option<f64>,
    pub emd: Option<f64>,
    pub wd_relative: Option<f64>,
    pub wd_absolute: Option<f64>,
}

/// Pull the global weights into a client: replace the reduction weights and
/// mix the personalization weights with the adaptive (or fixed) coefficient.
pub fn apply_global_update(
    client: &mut ClientState,
    server: &ServerState,
    config: &FedConfig,
) -> Result<UpdateStats> {
    match config.strategy {
        Strategy::LocalOnly => Ok(UpdateStats::default()),
        Strategy::Fedavg => {
            client.model.reduction = server.reduction.clone();
            client.model.personalization = server.personalization.clone();
            Ok(UpdateStats::default())
        }
        Strategy::Fedego => {
            if !config.ablation.disable_reduction_avg {
                client.model.reduction = server.reduction.clone();
            }
            let global = server.distribution.as_ref().ok_or_else(|| {
                Error::Invalid("global distribution missing before client update".into())
            })?;
            let emd = client.distribution.emd(global);
            let lambda = config
                .ablation
                .fixed_lambda
                .unwrap_or_else(|| adaptive_lambda(&client.distribution, global, config.gamma));
            if !config.ablation.disable_personalization_mix {
                client.model.personalization = mix_personalization(
                    &client.model.personalization,
                    &server.personalization,
                    lambda,
                )?;
            }
            let rel = weight_divergence(
                &client.model.personalization,
                &server.personalization,
                DivergenceMode::Relative,
            )?;
            let abs = weight_divergence(
                &client.model.personalization,
                &server.personalization,
                DivergenceMode::Absolute,
            )?;
            Ok(UpdateStats {
                lambda: Some(lambda),
                emd: Some(emd),
                wd_relative: Some(rel.value),
                wd_absolute: Some(abs.value),
            })
        }
    }
}

/// Largest pairwise L-infinity distance between clients' full parameter
/// sets; exactly zero only at consensus.
pub fn max_pairwise_distance(clients: &[ClientState]) -> f64 {
    let mut max = 0.0f64;
    for i in 0..clients.len() {
        for j in (i + 1)..clients.len() {
            max = max.max(param_distance_linf(&clients[i].model, &clients[j].model));
        }
    }
    max
}

fn map_clients<T: Send>(
    pool: Option<&rayon::ThreadPool>,
    clients: &mut [ClientState],
    f: impl Fn(&mut ClientState) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    match pool {
        Some(p) => p.install(|| clients.par_iter_mut().map(&f).collect()),
        None => clients.iter_mut().map(f).collect(),
    }
}

/// Run one full round and report losses, metrics, mixing statistics, and
/// communication bytes. `round` is 1-based.
pub fn run_round(
    ctx: &RoundContext<'_>,
    round: usize,
    clients: &mut [ClientState],
    server: &mut ServerState,
) -> Result<RoundReport> {
    let config = ctx.config;
    let with_round = |e: Error| match e {
        Error::NonFinite { context } => Error::NonFinite {
            context: format!("round {round}: {context}"),
        },
        other => other,
    };

    let uploads = map_clients(ctx.pool, clients, |c| {
        client_local_stage(c, ctx.graph, ctx.shape, config)
    })
    .map_err(with_round)?;

    let train_losses: Vec<f64> = uploads.iter().map(|u| u.train_loss).collect();
    let params_up: u64 = uploads.iter().map(|u| u.param_bytes).sum();
    let ego_up: u64 = uploads.iter().map(|u| u.ego_bytes).sum();

    server_global_stage(server, uploads, ctx.shape, config).map_err(with_round)?;

    let mut stats = Vec::with_capacity(clients.len());
    for client in clients.iter_mut() {
        stats.push(apply_global_update(client, server, config)?);
    }

    let params_down: u64 = match config.strategy {
        Strategy::LocalOnly => 0,
        Strategy::Fedavg => {
            clients.len() as u64
                * (param_bytes(&server.reduction) + param_bytes(&server.personalization))
        }
        Strategy::Fedego => {
            let theta = if config.ablation.disable_reduction_avg {
                0
            } else {
                param_bytes(&server.reduction)
            };
            let phi = if config.ablation.disable_personalization_mix {
                0
            } else {
                param_bytes(&server.personalization)
            };
            clients.len() as u64 * (theta + phi)
        }
    };

    if config.strategy == Strategy::Fedavg {
        let spread = max_pairwise_distance(clients);
        if spread != 0.0 {
            return Err(Error::Invalid(format!(
                "parameter averaging lost consensus in round {round}: spread {spread}"
            )));
        }
    }

    let evaluate = round % config.eval_every == 0 || round == config.rounds;
    let mut client_stats = Vec::with_capacity(clients.len());
    for (i, client) in clients.iter().enumerate() {
        let (local_test, local_val, global_test) = if evaluate {
            (
                Some(evaluate_model(&client.model, ctx.graph, &ctx.eval.local_test[i])?),
                Some(evaluate_model(&client.model, ctx.graph, &ctx.eval.local_val[i])?),
                Some(evaluate_model(&client.model, ctx.graph, &ctx.eval.global)?),
            )
        } else {
            (None, None, None)
        };
        client_stats.push(ClientRoundStats {
            client_id: client.client_id,
            train_loss: train_losses[i],
            local_f1: local_test.map(|m| m.micro_f1),
            lambda: stats[i].lambda,
            emd: stats[i].emd,
            wd_relative: stats[i].wd_relative,
            wd_absolute: stats[i].wd_absolute,
            local_test,
            local_val,
            global_test,
        });
    }

    let global_f1 = if evaluate {
        let sum: f64 = client_stats
            .iter()
            .map(|c| c.global_test.map(|m| m.micro_f1).unwrap_or(0.0))
            .sum();
        Some(sum / clients.len() as f64)
    } else {
        None
    };

    Ok(RoundReport {
        round,
        clients: client_stats,
        global_f1,
        bytes: RoundBytes {
            params_up,
            params_down,
            ego_up,
        },
    })
}
