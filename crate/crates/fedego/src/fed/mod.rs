//! Federation orchestration: round configuration, client and server state,
//! the local/global stages, baselines, and communication accounting.

mod experiment;
mod round;

pub use experiment::{
    build_eval_sets, gamma_divergence_probe, init_states, run_experiment, run_experiment_with,
    EvalSets, GammaProbe, GammaProbeEntry,
};
pub use round::{
    adaptive_lambda, apply_global_update, client_local_stage, max_pairwise_distance, run_round,
    server_global_stage, RoundContext, UpdateStats,
};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mash::MashedEgoGraph;
use crate::nn::{
    param_count, AdamState, Activation, ModelParams, ParamTensors, PersonalizationParams,
    ReductionParams,
};
use crate::partition::{ClientDataset, DistributionVector};

/// Training strategy for one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Fedego,
    Fedavg,
    LocalOnly,
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fedego" => Ok(Strategy::Fedego),
            "fedavg" => Ok(Strategy::Fedavg),
            "local" | "local_only" | "local-only" => Ok(Strategy::LocalOnly),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Strategy::Fedego => write!(f, "fedego"),
            Strategy::Fedavg => write!(f, "fedavg"),
            Strategy::LocalOnly => write!(f, "local_only"),
        }
    }
}

/// Ablation switches; all off reproduces the full method.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationFlags {
    /// Upload the first ego-graph of each batch instead of the mashed one.
    pub disable_mixup: bool,
    /// Skip reduction-weight averaging and the broadcast back to clients.
    pub disable_reduction_avg: bool,
    /// Never mix personalization weights (fixed lambda = 0 behavior).
    pub disable_personalization_mix: bool,
    /// Use this mixing coefficient instead of the adaptive one.
    pub fixed_lambda: Option<f64>,
}

/// All knobs of one federated training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FedConfig {
    pub strategy: Strategy,
    pub rounds: usize,
    pub local_epochs: usize,
    pub server_epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    /// Exponent of the adaptive mixing coefficient.
    pub gamma: f64,
    /// Ego-graph hop count k.
    pub hops: usize,
    /// Neighbors sampled per node n.
    pub fanout: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub reduction_layers: usize,
    pub reduction_dim: usize,
    pub hidden_dim: usize,
    pub activation: Activation,
    /// Evaluate every this many rounds (the final round always evaluates).
    pub eval_every: usize,
    /// Worker threads for the client stages; 1 is the canonical reference
    /// and any other count must produce bit-identical results.
    pub threads: usize,
    /// Server loss over every position that passes a SAGE layer instead of
    /// the center only.
    pub server_all_position_loss: bool,
    pub ablation: AblationFlags,
}

impl Default for FedConfig {
    fn default() -> Self {
        FedConfig {
            strategy: Strategy::Fedego,
            rounds: 200,
            local_epochs: 5,
            server_epochs: 5,
            batches_per_epoch: 5,
            batch_size: 32,
            gamma: 0.5,
            hops: 2,
            fanout: 6,
            learning_rate: 0.01,
            seed: 0,
            reduction_layers: 1,
            reduction_dim: 64,
            hidden_dim: 64,
            activation: Activation::Relu,
            eval_every: 1,
            threads: 1,
            server_all_position_loss: false,
            ablation: AblationFlags::default(),
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.gamma <= 0.0 {
            return Err(Error::Config(format!("gamma must be positive, got {}", self.gamma)));
        }
        if let Some(l) = self.ablation.fixed_lambda {
            if !(0.0..=1.0).contains(&l) {
                return Err(Error::Config(format!(
                    "fixed_lambda must lie in [0,1], got {l}"
                )));
            }
        }
        if self.local_epochs == 0 || self.batches_per_epoch == 0 {
            return Err(Error::Config(
                "local_epochs and batches_per_epoch must be positive".into(),
            ));
        }
        if self.fanout == 0 {
            return Err(Error::Config("fanout must be at least 1".into()));
        }
        if self.reduction_layers == 0 {
            return Err(Error::Config("reduction_layers must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-client training state.
pub struct ClientState {
    pub client_id: usize,
    pub dataset: ClientDataset,
    pub model: ModelParams,
    pub adam: AdamState,
    /// Local label distribution, computed once from the train labels.
    pub distribution: DistributionVector,
    pub(crate) rng: ChaCha8Rng,
}

/// Server-side state: global weights, the current mashed pool, and the
/// global label distribution estimated from it.
pub struct ServerState {
    pub reduction: ReductionParams,
    pub personalization: PersonalizationParams,
    pub adam: AdamState,
    pub pool: Vec<MashedEgoGraph>,
    pub distribution: Option<DistributionVector>,
    pub(crate) rng: ChaCha8Rng,
}

/// One client's per-round upload.
pub struct RoundUpload {
    pub client_id: usize,
    pub reduction: ReductionParams,
    /// Present only under full parameter averaging.
    pub personalization: Option<PersonalizationParams>,
    /// Mashed ego-graphs of this round; under `disable_mixup` these carry a
    /// single member's raw embeddings instead of batch means.
    pub mashed: Vec<MashedEgoGraph>,
    pub train_loss: f64,
    pub param_bytes: u64,
    pub ego_bytes: u64,
}

/// Wire size of a parameter set at 4 bytes per 32-bit float.
pub fn param_bytes(params: &impl ParamTensors) -> u64 {
    4 * param_count(params) as u64
}

/// Wire size of one mashed ego-graph: `S * (d_r + C)` floats.
pub fn mashed_graph_bytes(positions: usize, reduction_dim: usize, num_classes: usize) -> u64 {
    4 * (positions * (reduction_dim + num_classes)) as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_parses_both_spellings() {
        assert_eq!("fedego".parse::<Strategy>().unwrap(), Strategy::Fedego);
        assert_eq!("local".parse::<Strategy>().unwrap(), Strategy::LocalOnly);
        assert_eq!("local_only".parse::<Strategy>().unwrap(), Strategy::LocalOnly);
        assert!("gossip".parse::<Strategy>().is_err());
    }

    #[test]
    fn config_validation_catches_bad_values() {
        let mut c = FedConfig::default();
        assert!(c.validate().is_ok());
        c.gamma = 0.0;
        assert!(c.validate().is_err());
        c.gamma = 0.5;
        c.ablation.fixed_lambda = Some(1.5);
        assert!(c.validate().is_err());
        c.ablation.fixed_lambda = Some(1.0);
        assert!(c.validate().is_ok());
        c.batch_size = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn mashed_bytes_example() {
        // shape(k=2, n=6) has 43 positions; with d_r=64 and C=7 one mashed
        // ego-graph costs 43 * 71 * 4 bytes.
        assert_eq!(mashed_graph_bytes(43, 64, 7), 12_212);
    }
}
