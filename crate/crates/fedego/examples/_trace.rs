use fedego::fed::{run_experiment, FedConfig, Strategy};
use fedego::graph::generate_synthetic_graph;
use fedego::partition::{partition_non_iid, PartitionConfig};

fn main() -> Result<(), fedego::Error> {
    let args: Vec<String> = std::env::args().collect();
    let intra: f64 = args[1].parse().unwrap();
    let seed: u64 = args[2].parse().unwrap();
    let graph = generate_synthetic_graph(2708, 7, 16, intra, intra / 10.0, 11)?;
    let pc = PartitionConfig { seed: 11 + seed, ..PartitionConfig::default() };
    let partition = partition_non_iid(&graph, &pc)?;
    let base = FedConfig {
        rounds: 200, gamma: 0.25, reduction_dim: 64, hidden_dim: 64,
        eval_every: 200, seed, ..FedConfig::default()
    };
    print!("intra={intra} seed={seed}: ");
    for strategy in [Strategy::Fedavg, Strategy::Fedego] {
        let config = FedConfig { strategy, ..base.clone() };
        print!("{}={:.3} ", strategy, run_experiment(&graph, &partition, &config)?.final_eval.mean_global_f1);
    }
    println!();
    Ok(())
}
