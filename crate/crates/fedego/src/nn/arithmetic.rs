//! Parameter arithmetic of the federation round: reduction averaging,
//! personalization mixing, and weight divergence.

use super::params::{check_congruent, ParamTensors, PersonalizationParams, ReductionParams};
use crate::error::{Error, Result};

/// Coordinate-wise mean of the clients' reduction weights, accumulated in
/// client-index order.
pub fn average_reduction(all_clients: &[ReductionParams]) -> Result<ReductionParams> {
    let first = all_clients
        .first()
        .ok_or_else(|| Error::Invalid("averaging over no clients".into()))?;
    for other in &all_clients[1..] {
        check_congruent("average_reduction", first, other)?;
    }
    let mut out = first.zeros_like();
    for client in all_clients {
        let src = client.tensors();
        for (dst, s) in out.tensors_mut().iter_mut().zip(&src) {
            for (d, &v) in dst.data.iter_mut().zip(s.data) {
                *d += v;
            }
        }
    }
    let inv = 1.0 / all_clients.len() as f64;
    for t in out.tensors_mut() {
        for d in t.data.iter_mut() {
            *d *= inv;
        }
    }
    Ok(out)
}

/// Coordinate-wise mean of personalization weights, as used by the full
/// parameter averaging baseline.
pub fn average_personalization(
    all_clients: &[PersonalizationParams],
) -> Result<PersonalizationParams> {
    let first = all_clients
        .first()
        .ok_or_else(|| Error::Invalid("averaging over no clients".into()))?;
    for other in &all_clients[1..] {
        check_congruent("average_personalization", first, other)?;
    }
    let mut out = first.zeros_like();
    for client in all_clients {
        let src = client.tensors();
        for (dst, s) in out.tensors_mut().iter_mut().zip(&src) {
            for (d, &v) in dst.data.iter_mut().zip(s.data) {
                *d += v;
            }
        }
    }
    let inv = 1.0 / all_clients.len() as f64;
    for t in out.tensors_mut() {
        for d in t.data.iter_mut() {
            *d *= inv;
        }
    }
    Ok(out)
}

/// Convex combination `lambda * global + (1 - lambda) * local`, elementwise.
pub fn mix_personalization(
    local: &PersonalizationParams,
    global_p: &PersonalizationParams,
    lambda: f64,
) -> Result<PersonalizationParams> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Invalid(format!(
            "mixing coefficient must lie in [0,1], got {lambda}"
        )));
    }
    check_congruent("mix_personalization", local, global_p)?;
    let mut out = local.clone();
    let src = global_p.tensors();
    for (dst, s) in out.tensors_mut().iter_mut().zip(&src) {
        for (d, &g) in dst.data.iter_mut().zip(s.data) {
            *d = lambda * g + (1.0 - lambda) * *d;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DivergenceMode {
    /// `||(local - global) / global||`, skipping entries where the global
    /// weight is numerically zero.
    Relative,
    /// `||local - global||`.
    Absolute,
}

/// Flattened 2-norm distance between local and global personalization
/// weights.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WeightDivergence {
    pub value: f64,
    /// Entries skipped in relative mode because `|global| < 1e-12`.
    pub skipped_entries: usize,
}

pub fn weight_divergence(
    local: &PersonalizationParams,
    global_p: &PersonalizationParams,
    mode: DivergenceMode,
) -> Result<WeightDivergence> {
    check_congruent("weight_divergence", local, global_p)?;
    let mut sum = 0.0;
    let mut skipped = 0;
    for (lt, gt) in local.tensors().iter().zip(global_p.tensors().iter()) {
        for (&l, &g) in lt.data.iter().zip(gt.data) {
            match mode {
                DivergenceMode::Absolute => sum += (l - g) * (l - g),
                DivergenceMode::Relative => {
                    if g.abs() < 1e-12 {
                        skipped += 1;
                    } else {
                        let q = (l - g) / g;
                        sum += q * q;
                    }
                }
            }
        }
    }
    Ok(WeightDivergence {
        value: sum.sqrt(),
        skipped_entries: skipped,
    })
}

/// Largest absolute coordinate difference between two congruent parameter
/// sets; exactly zero only for bit-identical parameters.
pub fn param_distance_linf(a: &impl ParamTensors, b: &impl ParamTensors) -> f64 {
    let ta = a.tensors();
    let tb = b.tensors();
    let mut max = 0.0f64;
    for (x, y) in ta.iter().zip(&tb) {
        for (&u, &v) in x.data.iter().zip(y.data) {
            max = max.max((u - v).abs());
        }
    }
    max
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::PersonalizationParams;
    use crate::nn::Activation;
    use crate::rng::derive_stream;
    use ndarray::{Array1, Array2};

    fn constant_reduction(value: f64) -> ReductionParams {
        ReductionParams {
            layers: vec![super::super::params::Dense {
                weight: Array2::from_elem((3, 4), value),
                bias: Some(Array1::from_elem(3, value)),
            }],
            activation: Activation::Relu,
        }
    }

    fn constant_personalization(value: f64) -> PersonalizationParams {
        PersonalizationParams {
            sage: vec![Array2::from_elem((3, 3), value); 2],
            classifier: super::super::params::Dense {
                weight: Array2::from_elem((2, 3), value),
                bias: Some(Array1::from_elem(2, value)),
            },
            activation: Activation::Relu,
        }
    }

    #[test]
    fn averaging_two_constants() {
        let avg = average_reduction(&[constant_reduction(1.0), constant_reduction(3.0)]).unwrap();
        for t in avg.tensors() {
            assert!(t.data.iter().all(|&v| (v - 2.0).abs() < 1e-12));
        }
    }

    #[test]
    fn averaging_identical_sets_is_identity() {
        let p = constant_reduction(0.7);
        let avg = average_reduction(&[p.clone(), p.clone(), p.clone()]).unwrap();
        for (t, u) in avg.tensors().iter().zip(p.tensors().iter()) {
            for (&a, &b) in t.data.iter().zip(u.data) {
                assert!((a - b).abs() < 1e-15);
            }
        }
        let single = average_reduction(&[p.clone()]).unwrap();
        assert_eq!(single, p);
    }

    #[test]
    fn averaging_rejects_empty_and_mismatched() {
        assert!(average_reduction(&[]).is_err());
        let mut other = constant_reduction(1.0);
        other.layers[0].weight = Array2::zeros((2, 4));
        assert!(average_reduction(&[constant_reduction(1.0), other]).is_err());
    }

    #[test]
    fn mixing_endpoints_and_midpoint() {
        let local = constant_personalization(2.0);
        let global = constant_personalization(4.0);
        let at0 = mix_personalization(&local, &global, 0.0).unwrap();
        assert_eq!(at0, local);
        let at1 = mix_personalization(&local, &global, 1.0).unwrap();
        assert_eq!(at1, global);
        let mid = mix_personalization(&local, &global, 0.5).unwrap();
        for t in mid.tensors() {
            assert!(t.data.iter().all(|&v| (v - 3.0).abs() < 1e-12));
        }
        assert!(mix_personalization(&local, &global, 1.5).is_err());
    }

    #[test]
    fn mixing_is_affine_in_lambda() {
        let mut rng = derive_stream(31, "mix", 0);
        let local = PersonalizationParams::init(4, 3, 2, 2, Activation::Relu, &mut rng);
        let global = PersonalizationParams::init(4, 3, 2, 2, Activation::Relu, &mut rng);
        let a = mix_personalization(&local, &global, 0.2).unwrap();
        let b = mix_personalization(&local, &global, 0.6).unwrap();
        let mid = mix_personalization(&local, &global, 0.4).unwrap();
        for ((ta, tb), tm) in a.tensors().iter().zip(b.tensors().iter()).zip(mid.tensors().iter()) {
            for ((&x, &y), &m) in ta.data.iter().zip(tb.data).zip(tm.data) {
                assert!((x + y - 2.0 * m).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn divergence_examples() {
        let local = constant_personalization(2.0);
        let global = constant_personalization(1.0);
        let n = crate::nn::param_count(&local) as f64;

        let zero = weight_divergence(&local, &local, DivergenceMode::Relative).unwrap();
        assert_eq!(zero.value, 0.0);
        let zero = weight_divergence(&local, &local, DivergenceMode::Absolute).unwrap();
        assert_eq!(zero.value, 0.0);

        // all-ones global, all-twos local: both modes give sqrt(P)
        let rel = weight_divergence(&local, &global, DivergenceMode::Relative).unwrap();
        assert!((rel.value - n.sqrt()).abs() < 1e-9);
        assert_eq!(rel.skipped_entries, 0);
        let abs = weight_divergence(&local, &global, DivergenceMode::Absolute).unwrap();
        assert!((abs.value - n.sqrt()).abs() < 1e-9);

        // single-entry perturbation in absolute mode
        let mut bumped = global.clone();
        bumped.sage[0][[0, 0]] += 0.25;
        let abs = weight_divergence(&bumped, &global, DivergenceMode::Absolute).unwrap();
        assert!((abs.value - 0.25).abs() < 1e-12);
    }

    #[test]
    fn relative_mode_skips_zero_global_entries() {
        let local = constant_personalization(1.0);
        let mut global = constant_personalization(1.0);
        global.sage[0][[0, 0]] = 0.0;
        let rel = weight_divergence(&local, &global, DivergenceMode::Relative).unwrap();
        assert_eq!(rel.skipped_entries, 1);
        assert_eq!(rel.value, 0.0);
    }
}
