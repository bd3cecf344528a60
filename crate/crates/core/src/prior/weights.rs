use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{bone_lengths, Skeleton};

const W1_JSON: &str = include_str!("../../data/w1_weights.json");

#[derive(Deserialize)]
struct W1File {
    weights: Vec<W1Entry>,
}

#[derive(Deserialize)]
struct W1Entry {
    joint: String,
    w1: f64,
}

/// Static per-joint weights, looked up by joint name.
pub fn static_weights(skeleton: &Skeleton) -> Result<Vec<f64>> {
    let file: W1File = serde_json::from_str(W1_JSON)?;
    (0..skeleton.len())
        .map(|j| {
            let name = &skeleton.joint(j).name;
            file.weights
                .iter()
                .find(|e| &e.joint == name)
                .map(|e| e.w1)
                .ok_or_else(|| Error::Skeleton(format!("no static weight for joint {name:?}")))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointWeights {
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    /// `w1 * w2`, zero for unpredicted joints.
    pub effective: Vec<f64>,
}

/// Data-driven weights from the deviation of predicted bone lengths from the
/// model's: `w2 = min(1, 1 / deviation)` for the bone ending at each joint.
/// `predicted` flags which joints the detector produced; `None` means all.
pub fn compute_weights(
    skeleton: &Skeleton,
    joints: &[Vector3<f64>],
    predicted: Option<&[bool]>,
    model_lengths: &[f64],
) -> Result<JointWeights> {
    let n = skeleton.len();
    if model_lengths.len() != n - 1 {
        return Err(Error::Dimension {
            expected: n - 1,
            got: model_lengths.len(),
            context: "model bone lengths",
        });
    }
    if let Some(&bad) = model_lengths.iter().find(|&&l| !(l > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "model bone length {bad} must be positive"
        )));
    }
    let all = vec![true; n];
    let flags = predicted.unwrap_or(&all);
    if flags.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: flags.len(),
            context: "predicted flags",
        });
    }
    let measured = bone_lengths(skeleton, joints)?;
    let w1 = static_weights(skeleton)?;
    let mut w2 = vec![1.0; n];
    for j in 1..n {
        let p = skeleton.parent(j).expect("non-root");
        if !(flags[j] && flags[p]) {
            continue;
        }
        let l = model_lengths[j - 1];
        let deviation = (l - measured[j - 1]).abs() / l;
        w2[j] = if deviation > 0.0 {
            (1.0 / deviation).min(1.0)
        } else {
            1.0
        };
    }
    let effective = (0..n).map(|j| if flags[j] { w1[j] * w2[j] } else { 0.0 }).collect();
    Ok(JointWeights { w1, w2, effective })
}
