//! Non-IID partitioning of a graph into client datasets plus a global test set.
//!
//! Label skew follows the major-label scheme: each client picks a few major
//! labels and draws most of its quota from those pools, the rest uniformly.
//! Pools are shared across clients (client node sets may overlap); sampling is
//! without replacement within a client.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::ArrayView2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::rng::derive_stream;

/// Settings for [`partition_non_iid`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionConfig {
    pub num_clients: usize,
    /// Fraction of all nodes sampled for the global test set.
    pub alpha_global: f64,
    /// Fraction of the post-global-test remainder each client samples.
    pub alpha_local: f64,
    pub major_labels_per_client: usize,
    /// Fraction of a client's quota drawn from its major-label pools.
    pub major_node_rate: f64,
    pub local_test_nodes: usize,
    /// Fraction of the post-test remainder held out for validation.
    pub local_val_fraction: f64,
    pub seed: u64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            num_clients: 5,
            alpha_global: 0.3,
            alpha_local: 0.3,
            major_labels_per_client: 3,
            major_node_rate: 0.8,
            local_test_nodes: 300,
            local_val_fraction: 0.2,
            seed: 0,
        }
    }
}

impl PartitionConfig {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::Config("num_clients must be positive".into()));
        }
        if !(self.alpha_global > 0.0 && self.alpha_global < 1.0) {
            return Err(Error::Config(format!(
                "alpha_global must lie in (0,1), got {}",
                self.alpha_global
            )));
        }
        if !(self.alpha_local > 0.0 && self.alpha_local <= 1.0) {
            return Err(Error::Config(format!(
                "alpha_local must lie in (0,1], got {}",
                self.alpha_local
            )));
        }
        if self.major_labels_per_client > num_classes {
            return Err(Error::Config(format!(
                "major_labels_per_client {} exceeds {num_classes} classes",
                self.major_labels_per_client
            )));
        }
        if !(0.0..=1.0).contains(&self.major_node_rate) {
            return Err(Error::Config(format!(
                "major_node_rate must lie in [0,1], got {}",
                self.major_node_rate
            )));
        }
        if !(0.0..1.0).contains(&self.local_val_fraction) {
            return Err(Error::Config(format!(
                "local_val_fraction must lie in [0,1), got {}",
                self.local_val_fraction
            )));
        }
        Ok(())
    }
}

/// Label distribution vector: nonnegative entries summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionVector {
    pub probs: Vec<f64>,
}

impl DistributionVector {
    /// Column-wise mean of soft-label rows (one-hot rows included).
    pub fn from_soft_labels(soft_labels: ArrayView2<'_, f64>) -> Result<Self> {
        let m = soft_labels.nrows();
        if m == 0 {
            return Err(Error::Invalid(
                "distribution vector needs at least one row".into(),
            ));
        }
        let mut probs = vec![0.0; soft_labels.ncols()];
        for row in soft_labels.rows() {
            for (p, &v) in probs.iter_mut().zip(row.iter()) {
                *p += v;
            }
        }
        for p in &mut probs {
            *p /= m as f64;
        }
        Ok(DistributionVector { probs })
    }

    /// Distribution of hard labels over `num_classes` classes.
    pub fn from_labels<I: IntoIterator<Item = usize>>(labels: I, num_classes: usize) -> Result<Self> {
        let mut counts = vec![0usize; num_classes];
        let mut total = 0usize;
        for l in labels {
            counts[l] += 1;
            total += 1;
        }
        if total == 0 {
            return Err(Error::Invalid(
                "distribution vector needs at least one label".into(),
            ));
        }
        Ok(DistributionVector {
            probs: counts.iter().map(|&c| c as f64 / total as f64).collect(),
        })
    }

    /// Earth mover distance over the label simplex: `Σ_c |p(c) − q(c)|`.
    pub fn emd(&self, other: &DistributionVector) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }
}

/// One client's slice of the graph.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClientDataset {
    pub client_id: usize,
    pub train_nodes: Vec<NodeId>,
    pub val_nodes: Vec<NodeId>,
    pub test_nodes: Vec<NodeId>,
    pub major_labels: Vec<usize>,
    pub distribution: DistributionVector,
}

impl ClientDataset {
    pub fn all_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.train_nodes
            .iter()
            .chain(&self.val_nodes)
            .chain(&self.test_nodes)
            .copied()
    }
}

/// Result of [`partition_non_iid`], serializable as a single JSON document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Partition {
    pub seed: u64,
    pub config: PartitionConfig,
    pub global_test: Vec<NodeId>,
    pub clients: Vec<ClientDataset>,
}

impl Partition {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self)
            .map_err(|e| Error::Invalid(format!("serializing partition: {e}")))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: 0,
                msg: e.to_string(),
            })
    }
}

fn sample_distinct<R: Rng>(pool: &[NodeId], k: usize, rng: &mut R) -> Vec<NodeId> {
    debug_assert!(k <= pool.len());
    rand::seq::index::sample(rng, pool.len(), k)
        .iter()
        .map(|i| pool[i])
        .collect()
}

/// Split a graph into a global test set and `num_clients` label-skewed client
/// datasets. Deterministic for a fixed `(graph, config)` pair.
pub fn partition_non_iid(graph: &Graph, config: &PartitionConfig) -> Result<Partition> {
    config.validate(graph.num_classes())?;
    let n = graph.num_nodes();
    let num_classes = graph.num_classes();
    let mut rng = derive_stream(config.seed, "partition", 0);

    let global_take = (config.alpha_global * n as f64).floor() as usize;
    let all: Vec<NodeId> = (0..n).collect();
    let mut global_test = sample_distinct(&all, global_take, &mut rng);
    global_test.sort_unstable();

    let mut in_global = vec![false; n];
    for &v in &global_test {
        in_global[v] = true;
    }
    let remaining: Vec<NodeId> = (0..n).filter(|&v| !in_global[v]).collect();
    let mut label_pools: Vec<Vec<NodeId>> = vec![Vec::new(); num_classes];
    for &v in &remaining {
        label_pools[graph.label(v)].push(v);
    }

    let quota = (config.alpha_local * remaining.len() as f64).floor() as usize;
    if quota == 0 {
        return Err(Error::Config(format!(
            "client quota is zero: alpha_local={} over {} remaining nodes",
            config.alpha_local,
            remaining.len()
        )));
    }

    let mut clients = Vec::with_capacity(config.num_clients);
    let mut chosen = vec![false; n]; // scratch mask, reset per client
    for client_id in 0..config.num_clients {
        let mut major_labels: Vec<usize> =
            rand::seq::index::sample(&mut rng, num_classes, config.major_labels_per_client)
                .iter()
                .collect();
        major_labels.sort_unstable();

        let major_pool: Vec<NodeId> = {
            let mut pool: Vec<NodeId> = major_labels
                .iter()
                .flat_map(|&l| label_pools[l].iter().copied())
                .collect();
            pool.sort_unstable();
            pool
        };

        let major_quota = (config.major_node_rate * quota as f64).floor() as usize;
        let take_major = major_quota.min(major_pool.len());
        if take_major < major_quota {
            log::warn!(
                "client {client_id}: major pool for labels {major_labels:?} holds only {} nodes, \
                 short of the quota {major_quota}; filling the rest uniformly",
                major_pool.len()
            );
        }
        let selected_major = sample_distinct(&major_pool, take_major, &mut rng);
        for &v in &selected_major {
            chosen[v] = true;
        }

        let uniform_needed = quota - take_major;
        let uniform_pool: Vec<NodeId> = remaining.iter().copied().filter(|&v| !chosen[v]).collect();
        if uniform_pool.len() < uniform_needed {
            return Err(Error::PartitionInfeasible {
                client: client_id,
                detail: format!(
                    "needs {uniform_needed} more nodes beyond major labels {major_labels:?}, \
                     but only {} remain",
                    uniform_pool.len()
                ),
            });
        }
        let selected_uniform = sample_distinct(&uniform_pool, uniform_needed, &mut rng);
        for &v in &selected_uniform {
            chosen[v] = true;
        }

        let mut nodes = selected_major;
        nodes.extend_from_slice(&selected_uniform);
        for &v in &nodes {
            chosen[v] = false; // reset scratch for the next client
        }

        if nodes.len() <= config.local_test_nodes {
            return Err(Error::PartitionInfeasible {
                client: client_id,
                detail: format!(
                    "quota {} does not exceed local_test_nodes {}",
                    nodes.len(),
                    config.local_test_nodes
                ),
            });
        }
        let mut test_nodes = sample_distinct(&nodes, config.local_test_nodes, &mut rng);
        let mut in_test = vec![false; n];
        for &v in &test_nodes {
            in_test[v] = true;
        }
        let rest: Vec<NodeId> = nodes.iter().copied().filter(|&v| !in_test[v]).collect();
        let val_take = (config.local_val_fraction * rest.len() as f64).floor() as usize;
        let mut val_nodes = sample_distinct(&rest, val_take, &mut rng);
        let mut in_val = vec![false; n];
        for &v in &val_nodes {
            in_val[v] = true;
        }
        let mut train_nodes: Vec<NodeId> = rest.into_iter().filter(|&v| !in_val[v]).collect();
        if train_nodes.is_empty() {
            return Err(Error::PartitionInfeasible {
                client: client_id,
                detail: "no train nodes left after test/validation split".into(),
            });
        }
        test_nodes.sort_unstable();
        val_nodes.sort_unstable();
        train_nodes.sort_unstable();

        let distribution = DistributionVector::from_labels(
            train_nodes.iter().map(|&v| graph.label(v)),
            num_classes,
        )?;

        clients.push(ClientDataset {
            client_id,
            train_nodes,
            val_nodes,
            test_nodes,
            major_labels,
            distribution,
        });
    }

    Ok(Partition {
        seed: config.seed,
        config: config.clone(),
        global_test,
        clients,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::generate_synthetic_graph;
    use ndarray::{array, Array2};

    fn test_graph() -> Graph {
        generate_synthetic_graph(2708, 7, 8, 0.004, 0.0008, 42).unwrap()
    }

    fn small_config() -> PartitionConfig {
        PartitionConfig {
            num_clients: 5,
            alpha_global: 0.3,
            alpha_local: 0.3,
            local_test_nodes: 100,
            seed: 9,
            ..PartitionConfig::default()
        }
    }

    #[test]
    fn global_test_size_uses_floor() {
        let g = test_graph();
        let p = partition_non_iid(&g, &small_config()).unwrap();
        assert_eq!(p.global_test.len(), 812); // floor(0.3 * 2708)
    }

    #[test]
    fn partition_is_deterministic() {
        let g = test_graph();
        let a = partition_non_iid(&g, &small_config()).unwrap();
        let b = partition_non_iid(&g, &small_config()).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn splits_are_disjoint() {
        let g = test_graph();
        let p = partition_non_iid(&g, &small_config()).unwrap();
        let global: std::collections::HashSet<_> = p.global_test.iter().copied().collect();
        for c in &p.clients {
            let train: std::collections::HashSet<_> = c.train_nodes.iter().copied().collect();
            let val: std::collections::HashSet<_> = c.val_nodes.iter().copied().collect();
            let test: std::collections::HashSet<_> = c.test_nodes.iter().copied().collect();
            assert!(train.is_disjoint(&val));
            assert!(train.is_disjoint(&test));
            assert!(val.is_disjoint(&test));
            for v in c.all_nodes() {
                assert!(!global.contains(&v), "client node {v} is in the global test");
            }
        }
    }

    #[test]
    fn major_rate_is_respected() {
        // Count labels of the emitted partition against the 80/20 rule.
        let g = test_graph();
        let p = partition_non_iid(&g, &small_config()).unwrap();
        for c in &p.clients {
            let total = c.all_nodes().count();
            let major = c
                .all_nodes()
                .filter(|&v| c.major_labels.contains(&g.label(v)))
                .count();
            let rate = major as f64 / total as f64;
            assert!(
                rate >= 0.8 - 1e-9,
                "client {} major rate {rate} below 0.8",
                c.client_id
            );
        }
    }

    #[test]
    fn zero_major_rate_is_near_uniform() {
        // With major_node_rate = 0 the client sample is uniform over the
        // remainder, so each client's label histogram should track the global
        // one. Checked with a chi-square statistic against a generous bound.
        let g = test_graph();
        let config = PartitionConfig {
            major_node_rate: 0.0,
            ..small_config()
        };
        let p = partition_non_iid(&g, &config).unwrap();
        let global_set: std::collections::HashSet<_> = p.global_test.iter().copied().collect();
        let remaining: Vec<usize> = (0..g.num_nodes()).filter(|v| !global_set.contains(v)).collect();
        let base = DistributionVector::from_labels(
            remaining.iter().map(|&v| g.label(v)),
            g.num_classes(),
        )
        .unwrap();
        for c in &p.clients {
            let nodes: Vec<usize> = c.all_nodes().collect();
            let m = nodes.len() as f64;
            let hist =
                DistributionVector::from_labels(nodes.iter().map(|&v| g.label(v)), g.num_classes())
                    .unwrap();
            let chi2: f64 = hist
                .probs
                .iter()
                .zip(&base.probs)
                .map(|(&o, &e)| m * (o - e).powi(2) / e.max(1e-12))
                .sum();
            // 6 degrees of freedom; p = 0.001 critical value is about 22.5.
            assert!(chi2 < 30.0, "client {} chi-square {chi2}", c.client_id);
        }
    }

    #[test]
    fn infeasible_quota_names_client() {
        let g = generate_synthetic_graph(40, 4, 4, 0.0, 0.0, 1).unwrap();
        let config = PartitionConfig {
            num_clients: 1,
            alpha_global: 0.3,
            alpha_local: 0.9,
            local_test_nodes: 300,
            ..PartitionConfig::default()
        };
        let err = partition_non_iid(&g, &config).unwrap_err();
        assert!(matches!(err, Error::PartitionInfeasible { client: 0, .. }));
    }

    #[test]
    fn partition_json_round_trips() {
        let g = test_graph();
        let p = partition_non_iid(&g, &small_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("partition.json");
        p.save(&path).unwrap();
        let q = Partition::load(&path).unwrap();
        assert_eq!(serde_json::to_string(&p).unwrap(), serde_json::to_string(&q).unwrap());
    }

    #[test]
    fn distribution_vector_examples() {
        // one-hot rows for labels [0,0,1] with two classes
        let rows = array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let d = DistributionVector::from_soft_labels(rows.view()).unwrap();
        assert!((d.probs[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((d.probs[1] - 1.0 / 3.0).abs() < 1e-12);

        let rows = array![[0.5, 0.5], [0.5, 0.5]];
        let d = DistributionVector::from_soft_labels(rows.view()).unwrap();
        assert_eq!(d.probs, vec![0.5, 0.5]);

        let empty = Array2::<f64>::zeros((0, 2));
        assert!(DistributionVector::from_soft_labels(empty.view()).is_err());
    }

    #[test]
    fn distribution_sums_to_one() {
        let g = test_graph();
        let p = partition_non_iid(&g, &small_config()).unwrap();
        for c in &p.clients {
            let sum: f64 = c.distribution.probs.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(c.distribution.probs.iter().all(|&p| p >= 0.0));
        }
    }
}
