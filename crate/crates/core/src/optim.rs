//! Weighted cross-entropy, Adam, and reduce-on-plateau scheduling.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err, Result};
use crate::nn::NUM_CLASSES;
use crate::tensor::{Scalar, Tensor};

/// Probability floor inside the log.
pub const PROB_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights(pub [f64; NUM_CLASSES]);

impl ClassWeights {
    pub fn uniform() -> Self {
        Self([1.0; NUM_CLASSES])
    }

    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }
}

#[derive(Debug, Clone)]
pub struct LossOutput<T> {
    pub loss: f64,
    /// Gradient with respect to the logits feeding the softmax.
    pub grad_logits: Tensor<T>,
}

/// Class index of each one-hot target row.
pub fn target_classes<T: Scalar>(targets: &Tensor<T>) -> Result<Vec<usize>> {
    if targets.rank() != 2 {
        return shape_err(format!(
            "targets must be (N, classes), got {:?}",
            targets.shape()
        ));
    }
    let k = targets.shape()[1];
    targets
        .data()
        .chunks(k)
        .enumerate()
        .map(|(i, row)| {
            let ones = row.iter().filter(|&&v| v == T::one()).count();
            let zeros = row.iter().filter(|&&v| v == T::zero()).count();
            if ones != 1 || zeros != k - 1 {
                return arg_err(format!("target row {i} is not one-hot"));
            }
            Ok(row.iter().position(|&v| v == T::one()).unwrap())
        })
        .collect()
}

pub fn one_hot<T: Scalar>(labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    if labels.is_empty() {
        return arg_err("one_hot of an empty label list");
    }
    let mut t = Tensor::zeros(&[labels.len(), classes]);
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return arg_err(format!("label {l} out of range"));
        }
        t.data_mut()[i * classes + l] = T::one();
    }
    Ok(t)
}

/// Class-weighted categorical cross-entropy, normalized by the summed sample
/// weights of the batch, with the fused softmax gradient
/// `w_i (p_i - y_i) / sum(w)`.
pub fn weighted_cce<T: Scalar>(
    probs: &Tensor<T>,
    targets: &Tensor<T>,
    weights: &ClassWeights,
) -> Result<LossOutput<T>> {
    if probs.shape() != targets.shape() {
        return shape_err(format!(
            "probs {:?} vs targets {:?}",
            probs.shape(),
            targets.shape()
        ));
    }
    let classes = target_classes(targets)?;
    weighted_cce_labels(probs, &classes, weights)
}

pub fn weighted_cce_labels<T: Scalar>(
    probs: &Tensor<T>,
    labels: &[usize],
    weights: &ClassWeights,
) -> Result<LossOutput<T>> {
    if probs.rank() != 2 || probs.shape()[0] != labels.len() {
        return shape_err(format!(
            "{} labels for probabilities of shape {:?}",
            labels.len(),
            probs.shape()
        ));
    }
    let k = probs.shape()[1];
    let mut numer = 0.0;
    let mut denom = 0.0;
    for (row, &c) in probs.data().chunks(k).zip(labels) {
        if c >= k || c >= NUM_CLASSES {
            return arg_err(format!("label {c} out of range"));
        }
        let w = weights.get(c);
        numer += w * row[c].to_f64().max(PROB_FLOOR).ln();
        denom += w;
    }
    if denom <= 0.0 {
        return arg_err("batch has zero total class weight");
    }
    let mut grad = probs.clone();
    for (row, &c) in grad.data_mut().chunks_mut(k).zip(labels) {
        let scale = T::from_f64(weights.get(c) / denom);
        row[c] -= T::one();
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    Ok(LossOutput {
        loss: -numer / denom,
        grad_logits: grad,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[&Tensor<T>], config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    /// One bias-corrected Adam update at learning rate `lr`.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor<T>],
        grads: &[&Tensor<T>],
        lr: f64,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return shape_err(format!(
                "adam tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            ));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return shape_err(format!(
                    "adam shape mismatch: param {:?}, grad {:?}",
                    p.shape(),
                    g.shape()
                ));
            }
        }
        self.step += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let (b1, b2) = (T::from_f64(beta1), T::from_f64(beta2));
        let (k1, k2) = (T::one() - b1, T::one() - b2);
        let (bc1, bc2) = (T::from_f64(bc1), T::from_f64(bc2));
        let (lr, eps) = (T::from_f64(lr), T::from_f64(epsilon));
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + k1 * gi;
                *vi = b2 * *vi + k2 * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *pi -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    pub initial_lr: f64,
    pub decay_factor: f64,
    pub patience: usize,
    pub min_delta: f64,
    pub min_lr: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            initial_lr: 0.001,
            decay_factor: 10.0,
            patience: 3,
            min_delta: 1e-4,
            min_lr: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub config: PlateauConfig,
    decays: i32,
    best: f64,
    since_improvement: usize,
    exhausted: bool,
}

impl PlateauScheduler {
    pub fn new(config: PlateauConfig) -> Self {
        Self {
            config,
            decays: 0,
            best: f64::INFINITY,
            since_improvement: 0,
            exhausted: false,
        }
    }

    /// `initial_lr / decay_factor^k`.
    pub fn current_lr(&self) -> f64 {
        self.config.initial_lr / self.config.decay_factor.powi(self.decays)
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// True once a plateau was hit while the rate could not decay further.
    pub fn exhausted(&self) -> bool {
        self.exhausted
    }

    /// Feeds one epoch's validation loss and returns the rate for the next epoch.
    pub fn update(&mut self, val_loss: f64) -> f64 {
        if self.best - val_loss > self.config.min_delta {
            self.best = val_loss;
            self.since_improvement = 0;
        } else {
            self.since_improvement += 1;
            if self.since_improvement >= self.config.patience {
                self.since_improvement = 0;
                let next = self.config.initial_lr / self.config.decay_factor.powi(self.decays + 1);
                if next >= self.config.min_lr * (1.0 - 1e-9) {
                    self.decays += 1;
                } else {
                    self.exhausted = true;
                }
            }
        }
        self.current_lr()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probs(rows: &[[f64; 7]]) -> Tensor<f64> {
        Tensor::from_vec(&[rows.len(), 7], rows.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn perfect_prediction_is_zero_loss() {
        let mut row = [0.0; 7];
        row[3] = 1.0;
        let out = weighted_cce(
            &probs(&[row, row]),
            &one_hot(&[3, 3], 7).unwrap(),
            &ClassWeights::uniform(),
        )
        .unwrap();
        assert_eq!(out.loss, 0.0);
    }

    #[test]
    fn uniform_prediction_is_ln7() {
        let p = probs(&[[1.0 / 7.0; 7]; 3]);
        let out = weighted_cce(
            &p,
            &one_hot(&[0, 4, 6], 7).unwrap(),
            &ClassWeights::uniform(),
        )
        .unwrap();
        assert!((out.loss - 7f64.ln()).abs() < 1e-12);
        assert!((out.loss - 1.9459).abs() < 1e-4);
    }

    #[test]
    fn rejects_non_one_hot() {
        let p = probs(&[[1.0 / 7.0; 7]]);
        let t = Tensor::from_vec(&[1, 7], vec![0.5, 0.5, 0., 0., 0., 0., 0.]).unwrap();
        assert!(weighted_cce(&p, &t, &ClassWeights::uniform()).is_err());
    }

    #[test]
    fn floor_keeps_loss_finite() {
        let mut row = [0.0; 7];
        row[0] = 1.0;
        let out = weighted_cce(
            &probs(&[row]),
            &one_hot(&[1], 7).unwrap(),
            &ClassWeights::uniform(),
        )
        .unwrap();
        assert!((out.loss + PROB_FLOOR.ln()).abs() < 1e-12);
    }

    #[test]
    fn adam_zero_gradient_fixed_point() {
        let mut p = Tensor::from_vec(&[3], vec![1.0f64, -2.0, 0.5]).unwrap();
        let before = p.clone();
        let g = Tensor::zeros(&[3]);
        let mut st = AdamState::new(&[&p], AdamConfig::default());
        st.step(&mut [&mut p], &[&g], 0.001).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn adam_first_step_magnitude() {
        for g0 in [0.3f64, -4.0, 1e-3] {
            let mut p = Tensor::from_vec(&[1], vec![0.0]).unwrap();
            let g = Tensor::from_vec(&[1], vec![g0]).unwrap();
            let mut st = AdamState::new(&[&p], AdamConfig::default());
            st.step(&mut [&mut p], &[&g], 0.001).unwrap();
            let expect = 0.001 * g0.abs() / (g0.abs() + 1e-7);
            assert!((p.data()[0].abs() - expect).abs() < 1e-12);
            assert_eq!(p.data()[0].signum(), -g0.signum());
        }
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut p = Tensor::<f32>::zeros(&[2]);
        let g = Tensor::zeros(&[3]);
        let mut st = AdamState::new(&[&p], AdamConfig::default());
        assert!(st.step(&mut [&mut p], &[&g], 0.001).is_err());
    }

    #[test]
    fn plateau_trace() {
        let mut s = PlateauScheduler::new(PlateauConfig::default());
        let lrs: Vec<f64> = [1.0, 1.0, 1.0, 1.0].iter().map(|&l| s.update(l)).collect();
        assert_eq!(lrs[..3], [0.001; 3]);
        assert!((lrs[3] - 0.0001).abs() < 1e-15);
    }

    #[test]
    fn plateau_never_decays_on_improvement() {
        let mut s = PlateauScheduler::new(PlateauConfig::default());
        for i in 0..100 {
            assert_eq!(s.update(10.0 - i as f64 * 0.01), 0.001);
        }
    }

    #[test]
    fn plateau_respects_min_lr() {
        let mut s = PlateauScheduler::new(PlateauConfig::default());
        let mut lr = 0.0;
        for _ in 0..40 {
            lr = s.update(1.0);
        }
        assert!((lr - 1e-5).abs() < 1e-18);
        assert!(s.exhausted());
    }
}
