//! Activation functions used by the reduction and personalization stacks.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// No nonlinearity; the linear stack the alignment-invariance result
    /// applies to.
    Identity,
    Relu,
}

impl Activation {
    pub fn apply_inplace(&self, x: &mut Array2<f64>) {
        if let Activation::Relu = self {
            x.mapv_inplace(|v| v.max(0.0));
        }
    }

    /// Multiply `grad` elementwise by the derivative at `pre` (the
    /// pre-activation values).
    pub fn backprop_inplace(&self, pre: &Array2<f64>, grad: &mut Array2<f64>) {
        if let Activation::Relu = self {
            grad.zip_mut_with(pre, |g, &z| {
                if z <= 0.0 {
                    *g = 0.0;
                }
            });
        }
    }
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "identity" | "linear" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            other => Err(format!("unknown activation `{other}`")),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Activation::Identity => write!(f, "identity"),
            Activation::Relu => write!(f, "relu"),
        }
    }
}
