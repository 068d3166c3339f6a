use jokerank_tensor::{Graph, Tensor, Var};

use crate::error::{Error, Result};

use super::config::DLConfig;
use super::data::DlExample;

/// Pulls a one-hot 2-vector towards `(0.5, 0.5)`: `y(1-eps) + eps/2`.
pub fn smooth_labels(y: [f64; 2], epsilon: f64) -> [f64; 2] {
    [y[0] * (1.0 - epsilon) + epsilon / 2.0, y[1] * (1.0 - epsilon) + epsilon / 2.0]
}

/// One-hot vector for a binary label; index 1 is the positive class.
pub fn one_hot(label: u8) -> [f64; 2] {
    if label == 1 {
        [0.0, 1.0]
    } else {
        [1.0, 0.0]
    }
}

/// Per-instance labels and weights of a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTargets {
    pub labels_reuse: Vec<u8>,
    pub labels_return: Vec<u8>,
    pub sample_weights: Vec<f64>,
    /// Class weight of each instance's own reuse label.
    pub class_weights_reuse: Vec<f64>,
    pub class_weights_return: Vec<f64>,
}

impl LossTargets {
    pub fn from_examples(examples: &[&DlExample]) -> Self {
        Self {
            labels_reuse: examples.iter().map(|e| e.label_reuse).collect(),
            labels_return: examples.iter().map(|e| e.label_return).collect(),
            sample_weights: examples.iter().map(|e| e.sample_weight).collect(),
            class_weights_reuse: examples.iter().map(|e| e.class_weight_reuse).collect(),
            class_weights_return: examples.iter().map(|e| e.class_weight_return).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels_reuse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels_reuse.is_empty()
    }

    /// `[batch, 2]` coefficients `s_i c_i y~_i / batch` for one head.
    fn coefficients(&self, labels: &[u8], class_weights: &[f64], epsilon: f64) -> Tensor {
        let n = labels.len() as f64;
        let data = labels
            .iter()
            .zip(&self.sample_weights)
            .zip(class_weights)
            .flat_map(|((&y, s), c)| smooth_labels(one_hot(y), epsilon).map(|t| t * s * c / n))
            .collect();
        Tensor::new(vec![labels.len(), 2], data).expect("consistent shape")
    }
}

/// Weighted, smoothed two-head cross-entropy from probabilities.
pub fn total_loss(p_reuse: &[[f64; 2]], p_return: &[[f64; 2]], targets: &LossTargets, cfg: &DLConfig) -> Result<f64> {
    let n = targets.len();
    if n == 0 || p_reuse.len() != n || p_return.len() != n {
        return Err(Error::Invalid(format!(
            "total_loss: {} reuse outputs, {} return outputs, {n} targets",
            p_reuse.len(),
            p_return.len()
        )));
    }
    let head = |p: &[[f64; 2]], labels: &[u8], cw: &[f64]| -> f64 {
        let mut sum = 0.0;
        for i in 0..n {
            let t = smooth_labels(one_hot(labels[i]), cfg.epsilon_smooth);
            let ce = -(t[0] * p[i][0].ln() + t[1] * p[i][1].ln());
            sum += targets.sample_weights[i] * cw[i] * ce;
        }
        sum / n as f64
    };
    let (wr, wt) = cfg.loss_weights;
    let l = wr * head(p_reuse, &targets.labels_reuse, &targets.class_weights_reuse)
        + wt * head(p_return, &targets.labels_return, &targets.class_weights_return);
    if !l.is_finite() {
        return Err(Error::Invalid(format!("total_loss is not finite ({l})")));
    }
    Ok(l)
}

/// The same loss built on the tape from the two log-softmax outputs.
pub fn total_loss_graph(g: &mut Graph, log_reuse: Var, log_return: Var, targets: &LossTargets, cfg: &DLConfig) -> Result<Var> {
    let (wr, wt) = cfg.loss_weights;
    let mut head = |logp: Var, labels: &[u8], cw: &[f64], w: f64| -> Result<Var> {
        let coef = targets.coefficients(labels, cw, cfg.epsilon_smooth);
        let coef = g.constant(coef);
        let prod = g.mul(logp, coef)?;
        let s = g.sum(prod)?;
        Ok(g.scale(s, -w)?)
    };
    let lr = head(log_reuse, &targets.labels_reuse, &targets.class_weights_reuse, wr)?;
    let lt = head(log_return, &targets.labels_return, &targets.class_weights_return, wt)?;
    Ok(g.add(lr, lt)?)
}
