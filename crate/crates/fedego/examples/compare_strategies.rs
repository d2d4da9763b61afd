//! Train the three strategies on one synthetic non-IID partition and print
//! the per-round and final global/local F1 scores side by side.
//!
//! Run with: `cargo run --release --example compare_strategies`

use fedego::fed::{run_experiment, FedConfig, Strategy};
use fedego::graph::generate_synthetic_graph;
use fedego::partition::{partition_non_iid, PartitionConfig};

fn main() -> Result<(), fedego::Error> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();

    let graph = generate_synthetic_graph(1400, 7, 16, 0.03, 0.003, 11)?;
    let partition_config = PartitionConfig {
        num_clients: 5,
        alpha_global: 0.3,
        alpha_local: 0.3,
        local_test_nodes: 100,
        seed: 11,
        ..PartitionConfig::default()
    };
    let partition = partition_non_iid(&graph, &partition_config)?;

    let base = FedConfig {
        rounds: 40,
        reduction_dim: 32,
        hidden_dim: 32,
        eval_every: 10,
        seed: 1,
        ..FedConfig::default()
    };

    println!("{:<12} {:>10} {:>10} {:>12}", "strategy", "global_f1", "local_f1", "total_MB");
    for strategy in [Strategy::LocalOnly, Strategy::Fedavg, Strategy::Fedego] {
        let config = FedConfig { strategy, ..base.clone() };
        let report = run_experiment(&graph, &partition, &config)?;
        println!(
            "{:<12} {:>10.4} {:>10.4} {:>12.2}",
            strategy.to_string(),
            report.final_eval.mean_global_f1,
            report.final_eval.mean_local_f1,
            report.total_bytes.total() as f64 / 1e6,
        );
    }
    Ok(())
}
