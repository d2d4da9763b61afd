//! Mashed ego-graphs: per-position Mixup over a batch.
//!
//! A mashed ego-graph averages reduction embeddings and one-hot labels across
//! batch members, position by position. It carries no node ids and no raw
//! features, which makes the upload feature-anonymous on top of the structure
//! anonymity of fixed-shape sampling.

use std::io::{Read, Write};

use ndarray::Array2;

use crate::ego::{EgoGraph, EgoShape};
use crate::error::{Error, Result};
use crate::graph::Graph;

/// The privacy-preserving upload unit: position-indexed means of reduction
/// embeddings and soft labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MashedEgoGraph {
    pub shape: EgoShape,
    /// `[S x d_r]` mean reduction embedding per position.
    pub embeddings: Array2<f64>,
    /// `[S x C]` mean one-hot label per position; rows stay convex.
    pub soft_labels: Array2<f64>,
}

impl MashedEgoGraph {
    pub fn embedding_dim(&self) -> usize {
        self.embeddings.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.soft_labels.ncols()
    }

    /// Soft label of the center position.
    pub fn center_label(&self) -> ndarray::ArrayView1<'_, f64> {
        self.soft_labels.row(0)
    }
}

/// Average per-member embedding and label matrices position by position.
///
/// Each member contributes an `[S x d_r]` embedding matrix and an `[S x C]`
/// label matrix aligned to the shared shape.
pub fn mash_batch(
    shape: &EgoShape,
    member_embeddings: &[Array2<f64>],
    member_labels: &[Array2<f64>],
) -> Result<MashedEgoGraph> {
    if member_embeddings.is_empty() || member_embeddings.len() != member_labels.len() {
        return Err(Error::Invalid(format!(
            "mash needs matching nonempty member lists, got {} embeddings and {} labels",
            member_embeddings.len(),
            member_labels.len()
        )));
    }
    let s = shape.positions();
    let d = member_embeddings[0].ncols();
    let c = member_labels[0].ncols();
    for m in member_embeddings {
        if m.dim() != (s, d) {
            return Err(Error::dim("mash embeddings", format!("{s}x{d}"), format!("{:?}", m.dim())));
        }
    }
    for m in member_labels {
        if m.dim() != (s, c) {
            return Err(Error::dim("mash labels", format!("{s}x{c}"), format!("{:?}", m.dim())));
        }
    }

    let b = member_embeddings.len() as f64;
    let mut embeddings = Array2::<f64>::zeros((s, d));
    for m in member_embeddings {
        embeddings += m;
    }
    embeddings /= b;
    let mut soft_labels = Array2::<f64>::zeros((s, c));
    for m in member_labels {
        soft_labels += m;
    }
    soft_labels /= b;

    Ok(MashedEgoGraph {
        shape: shape.clone(),
        embeddings,
        soft_labels,
    })
}

/// Mash straight from the training pipeline's stacked position embeddings
/// (`[B*S x d_r]`, member-major) and the members' sampled node labels.
pub(crate) fn mash_stacked(
    shape: &EgoShape,
    stacked: ndarray::ArrayView2<'_, f64>,
    members: &[&EgoGraph],
    graph: &Graph,
) -> MashedEgoGraph {
    let s = shape.positions();
    let b = members.len();
    debug_assert_eq!(stacked.nrows(), b * s);
    let d = stacked.ncols();
    let c = graph.num_classes();

    let mut embeddings = Array2::<f64>::zeros((s, d));
    let mut soft_labels = Array2::<f64>::zeros((s, c));
    for (i, ego) in members.iter().enumerate() {
        for p in 0..s {
            let row = stacked.row(i * s + p);
            let mut out = embeddings.row_mut(p);
            out += &row;
            soft_labels[[p, graph.label(ego.node_at[p])]] += 1.0;
        }
    }
    embeddings /= b as f64;
    soft_labels /= b as f64;
    MashedEgoGraph {
        shape: shape.clone(),
        embeddings,
        soft_labels,
    }
}

const MEGO_MAGIC: &[u8; 4] = b"MEGO";

/// Serialize for checkpoint/debug: `MEGO` magic, `k n d_r C` as u32 LE, then
/// row-major f32 LE embeddings followed by soft labels.
pub fn write_mego<W: Write>(w: &mut W, mashed: &MashedEgoGraph) -> std::io::Result<()> {
    w.write_all(MEGO_MAGIC)?;
    for v in [
        mashed.shape.hops() as u32,
        mashed.shape.fanout() as u32,
        mashed.embedding_dim() as u32,
        mashed.num_classes() as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for &v in mashed.embeddings.iter() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    for &v in mashed.soft_labels.iter() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_mego<R: Read>(r: &mut R) -> Result<MashedEgoGraph> {
    let io = |e: std::io::Error| Error::Invalid(format!("reading mashed ego-graph: {e}"));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MEGO_MAGIC {
        return Err(Error::Invalid("bad mashed ego-graph magic".into()));
    }
    let read_u32 = |r: &mut R| -> Result<u32> {
        let mut buf = [0u8; 4];
        r.read_exact(&mut buf).map_err(io)?;
        Ok(u32::from_le_bytes(buf))
    };
    let hops = read_u32(r)? as usize;
    let fanout = read_u32(r)? as usize;
    let d = read_u32(r)? as usize;
    let c = read_u32(r)? as usize;
    let shape = EgoShape::new(hops, fanout)?;
    let s = shape.positions();
    let read_matrix = |r: &mut R, rows: usize, cols: usize| -> Result<Array2<f64>> {
        let mut data = Vec::with_capacity(rows * cols);
        let mut buf = [0u8; 4];
        for _ in 0..rows * cols {
            r.read_exact(&mut buf).map_err(io)?;
            data.push(f32::from_le_bytes(buf) as f64);
        }
        Ok(Array2::from_shape_vec((rows, cols), data).expect("sized above"))
    };
    let embeddings = read_matrix(r, s, d)?;
    let soft_labels = read_matrix(r, s, c)?;
    Ok(MashedEgoGraph {
        shape,
        embeddings,
        soft_labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn shape26() -> EgoShape {
        EgoShape::new(2, 6).unwrap()
    }

    fn one_hot_rows(s: usize, c: usize, label: usize) -> Array2<f64> {
        let mut m = Array2::zeros((s, c));
        for p in 0..s {
            m[[p, label]] = 1.0;
        }
        m
    }

    #[test]
    fn identical_members_mash_to_themselves() {
        let shape = shape26();
        let s = shape.positions();
        let emb = Array2::from_shape_fn((s, 3), |(i, j)| (i * 3 + j) as f64);
        let labels = one_hot_rows(s, 2, 1);
        let members: Vec<_> = (0..4).map(|_| emb.clone()).collect();
        let lab: Vec<_> = (0..4).map(|_| labels.clone()).collect();
        let mashed = mash_batch(&shape, &members, &lab).unwrap();
        assert_eq!(mashed.embeddings, emb);
        assert_eq!(mashed.soft_labels, labels);
    }

    #[test]
    fn two_members_average() {
        let shape = shape26();
        let s = shape.positions();
        let a = Array2::from_elem((s, 2), 1.0);
        let b = Array2::from_elem((s, 2), 3.0);
        let la = one_hot_rows(s, 2, 0);
        let lb = one_hot_rows(s, 2, 1);
        let mashed = mash_batch(&shape, &[a, b], &[la, lb]).unwrap();
        assert!(mashed.embeddings.iter().all(|&v| (v - 2.0).abs() < 1e-12));
        assert!(mashed.soft_labels.iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn center_soft_label_is_class_histogram() {
        let shape = shape26();
        let s = shape.positions();
        let c = 4;
        let labels: Vec<usize> = (0..32).map(|i| i % c).collect();
        let members: Vec<_> = labels.iter().map(|_| Array2::zeros((s, 2))).collect();
        let lab: Vec<_> = labels.iter().map(|&l| one_hot_rows(s, c, l)).collect();
        let mashed = mash_batch(&shape, &members, &lab).unwrap();
        for cls in 0..c {
            assert!((mashed.soft_labels[[0, cls]] - 8.0 / 32.0).abs() < 1e-12);
        }
        // soft labels stay convex
        for p in 0..s {
            let sum: f64 = mashed.soft_labels.row(p).sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn member_order_does_not_matter() {
        let shape = shape26();
        let s = shape.positions();
        let members: Vec<Array2<f64>> = (0..5)
            .map(|i| Array2::from_shape_fn((s, 3), |(p, j)| ((i + p) * (j + 1)) as f64 * 0.37))
            .collect();
        let labels: Vec<Array2<f64>> = (0..5).map(|i| one_hot_rows(s, 3, i % 3)).collect();
        let forward = mash_batch(&shape, &members, &labels).unwrap();
        let rev_m: Vec<_> = members.iter().rev().cloned().collect();
        let rev_l: Vec<_> = labels.iter().rev().cloned().collect();
        let backward = mash_batch(&shape, &rev_m, &rev_l).unwrap();
        for (a, b) in forward.embeddings.iter().zip(backward.embeddings.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let shape = shape26();
        let bad = Array2::zeros((7, 3));
        let lab = Array2::zeros((7, 2));
        assert!(mash_batch(&shape, &[bad], &[lab]).is_err());
        assert!(mash_batch(&shape, &[], &[]).is_err());
    }

    #[test]
    fn mego_round_trips_at_f32_precision() {
        let shape = shape26();
        let s = shape.positions();
        let mashed = MashedEgoGraph {
            shape: shape.clone(),
            embeddings: Array2::from_shape_fn((s, 5), |(i, j)| (i as f64 + 0.25) * (j as f64 - 1.5)),
            soft_labels: one_hot_rows(s, 3, 2),
        };
        let mut buf = Vec::new();
        write_mego(&mut buf, &mashed).unwrap();
        let back = read_mego(&mut buf.as_slice()).unwrap();
        assert_eq!(back.shape, mashed.shape);
        for (a, b) in mashed.embeddings.iter().zip(back.embeddings.iter()) {
            assert!((a - b).abs() <= (*a as f32).abs() as f64 * 1e-6 + 1e-7);
        }
        assert_eq!(back.soft_labels, mashed.soft_labels);
    }
}
