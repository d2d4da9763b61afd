//! Fixed-shape k-hop ego-graph sampling and alignment.
//!
//! Every ego-graph occupies the same position layout: position 0 is the
//! center, layer l holds `n^l` positions, and the children of a position form
//! a contiguous block in the next layer. Sampling draws `n` neighbors per
//! position uniformly *with replacement*; a node without neighbors fills its
//! child slots with itself so every labeled node stays trainable.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::ops::Range;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};

/// Total positions of the fixed shape: `S = 1 + n + n^2 + ... + n^k`.
pub fn shape_positions(hops: usize, fanout: usize) -> Result<usize> {
    if fanout == 0 {
        return Err(Error::Invalid("fanout must be at least 1".into()));
    }
    let mut total: usize = 0;
    let mut layer: usize = 1;
    for _ in 0..=hops {
        total = total
            .checked_add(layer)
            .ok_or_else(|| Error::Invalid("ego-graph shape overflows".into()))?;
        layer = layer
            .checked_mul(fanout)
            .ok_or_else(|| Error::Invalid("ego-graph shape overflows".into()))?;
    }
    Ok(total)
}

/// The fixed shape `S(k, n)` shared by all ego-graphs of an experiment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EgoShape {
    hops: usize,
    fanout: usize,
    /// `layer_starts[l]` is the first position of layer `l`; the final entry
    /// equals the total position count.
    layer_starts: Vec<usize>,
}

impl EgoShape {
    pub fn new(hops: usize, fanout: usize) -> Result<Self> {
        shape_positions(hops, fanout)?;
        let mut layer_starts = Vec::with_capacity(hops + 2);
        let mut start = 0usize;
        let mut layer_len = 1usize;
        for _ in 0..=hops {
            layer_starts.push(start);
            start += layer_len;
            layer_len *= fanout;
        }
        layer_starts.push(start);
        Ok(EgoShape {
            hops,
            fanout,
            layer_starts,
        })
    }

    pub fn hops(&self) -> usize {
        self.hops
    }

    pub fn fanout(&self) -> usize {
        self.fanout
    }

    /// Total number of positions `S`.
    pub fn positions(&self) -> usize {
        *self.layer_starts.last().unwrap()
    }

    /// Positions of layer `l` (the set `Q_l`).
    pub fn layer_range(&self, layer: usize) -> Range<usize> {
        self.layer_starts[layer]..self.layer_starts[layer + 1]
    }

    pub fn layer_len(&self, layer: usize) -> usize {
        self.layer_starts[layer + 1] - self.layer_starts[layer]
    }

    /// Layer containing `position`.
    pub fn layer_of(&self, position: usize) -> usize {
        debug_assert!(position < self.positions());
        self.layer_starts
            .iter()
            .rposition(|&s| s <= position)
            .unwrap()
    }

    /// Positions in layers `0..=layer`, which form a prefix of `[0, S)`.
    pub fn prefix_len(&self, layer: usize) -> usize {
        self.layer_starts[layer + 1]
    }

    /// Child block of `position` in the next layer.
    ///
    /// Blocks of distinct parents are disjoint and tile the next layer.
    pub fn children_of(&self, position: usize) -> Result<Range<usize>> {
        if position >= self.positions() {
            return Err(Error::Invalid(format!(
                "position {position} outside shape with {} positions",
                self.positions()
            )));
        }
        let layer = self.layer_of(position);
        if layer == self.hops {
            return Err(Error::Invalid(format!(
                "position {position} lies in the deepest layer and has no children"
            )));
        }
        let local = position - self.layer_starts[layer];
        let start = self.layer_starts[layer + 1] + local * self.fanout;
        Ok(start..start + self.fanout)
    }
}

/// A sampled ego-graph: node ids assigned to the fixed positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EgoGraph {
    pub shape: EgoShape,
    pub node_at: Vec<NodeId>,
    pub center_label: usize,
}

impl EgoGraph {
    pub fn center(&self) -> NodeId {
        self.node_at[0]
    }
}

/// Breadth-first fill of the fixed shape rooted at `center`.
pub fn sample_ego_graph<R: Rng>(
    graph: &Graph,
    center: NodeId,
    shape: &EgoShape,
    rng: &mut R,
) -> Result<EgoGraph> {
    if center >= graph.num_nodes() {
        return Err(Error::Invalid(format!(
            "center {center} outside graph with {} nodes",
            graph.num_nodes()
        )));
    }
    let mut node_at = vec![0usize; shape.positions()];
    node_at[0] = center;
    for layer in 0..shape.hops() {
        for position in shape.layer_range(layer) {
            let u = node_at[position];
            let neighbors = graph.neighbors(u);
            let children = shape.children_of(position).expect("not deepest layer");
            for child in children {
                node_at[child] = if neighbors.is_empty() {
                    u
                } else {
                    neighbors[rng.random_range(0..neighbors.len())]
                };
            }
        }
    }
    Ok(EgoGraph {
        shape: shape.clone(),
        node_at,
        center_label: graph.label(center),
    })
}

/// Re-align an ego-graph by applying one permutation per layer `1..=k`.
///
/// `layer_permutations[l-1]` maps layer-local indices of layer `l`; moving a
/// position relocates its entire subtree, so the result represents the same
/// sampled subtree. Permutations for layers deeper than the first must stay
/// within sibling blocks (indices `i` and `perm[i]` share `i / n`), since a
/// cross-block move would reattach children to a different parent.
pub fn permute_alignment(ego: &EgoGraph, layer_permutations: &[Vec<usize>]) -> Result<EgoGraph> {
    let shape = &ego.shape;
    if layer_permutations.len() != shape.hops() {
        return Err(Error::Invalid(format!(
            "expected {} layer permutations, got {}",
            shape.hops(),
            layer_permutations.len()
        )));
    }
    for (idx, perm) in layer_permutations.iter().enumerate() {
        let layer = idx + 1;
        let len = shape.layer_len(layer);
        if perm.len() != len {
            return Err(Error::Invalid(format!(
                "layer {layer} permutation has {} entries, layer holds {len} positions",
                perm.len()
            )));
        }
        let mut seen = vec![false; len];
        for (i, &t) in perm.iter().enumerate() {
            if t >= len || seen[t] {
                return Err(Error::Invalid(format!(
                    "layer {layer} permutation is not a bijection"
                )));
            }
            seen[t] = true;
            if layer >= 2 && t / shape.fanout() != i / shape.fanout() {
                return Err(Error::Invalid(format!(
                    "layer {layer} permutation moves position {i} across sibling blocks"
                )));
            }
        }
    }

    let mut node_at = ego.node_at.clone();
    for (idx, perm) in layer_permutations.iter().enumerate() {
        let layer = idx + 1;
        let old = node_at.clone();
        // Relocate each layer-`layer` subtree: a descendant at depth m keeps
        // its offset within the subtree while the subtree root moves.
        let mut stride = 1usize;
        for deeper in layer..=shape.hops() {
            let start = shape.layer_range(deeper).start;
            let len = shape.layer_len(deeper);
            for local in 0..len {
                let ancestor = local / stride;
                let offset = local % stride;
                let target = perm[ancestor] * stride + offset;
                node_at[start + target] = old[start + local];
            }
            stride *= shape.fanout();
        }
    }

    Ok(EgoGraph {
        shape: shape.clone(),
        node_at,
        center_label: ego.center_label,
    })
}

/// Sample a uniformly random valid alignment: the first layer is shuffled
/// freely, deeper layers are shuffled within each sibling block.
pub fn random_alignment<R: Rng>(shape: &EgoShape, rng: &mut R) -> Vec<Vec<usize>> {
    let mut perms = Vec::with_capacity(shape.hops());
    for layer in 1..=shape.hops() {
        let len = shape.layer_len(layer);
        let mut perm: Vec<usize> = (0..len).collect();
        if layer == 1 {
            perm.shuffle(rng);
        } else {
            for block in perm.chunks_mut(shape.fanout()) {
                block.shuffle(rng);
            }
        }
        perms.push(perm);
    }
    perms
}
