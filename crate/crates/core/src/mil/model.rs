//! Attention-MIL model with hand-written backpropagation.
//!
//! Attention pooling: `e_k = wᵀ tanh(V h_k)`, `a = softmax(e)`,
//! `z = Σ_k a_k h_k`; the bag score is the affine map `coefᵀ z + bias`.
//! Mean and max pooling replace the attention weights with the arithmetic
//! mean or the coordinate-wise maximum.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::Bag;
use super::effect::Aggregator;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MilModel {
    pub d: usize,
    pub h: usize,
    /// `h × d`, row-major.
    pub v: Vec<f64>,
    pub w: Vec<f64>,
    pub coef: Vec<f64>,
    pub bias: f64,
}

impl MilModel {
    pub fn zeros(d: usize, h: usize) -> Self {
        MilModel {
            d,
            h,
            v: vec![0.0; h * d],
            w: vec![0.0; h],
            coef: vec![0.0; d],
            bias: 0.0,
        }
    }

    /// Every parameter uniform in `[-1/√d, 1/√d]`.
    pub fn init<R: Rng + ?Sized>(d: usize, h: usize, rng: &mut R) -> Self {
        let bound = 1.0 / libm::sqrt(d as f64);
        let mut m = MilModel::zeros(d, h.max(1));
        for p in m.params_mut() {
            *p = rng.random_range(-bound..=bound);
        }
        m
    }

    pub fn param_count(&self) -> usize {
        self.v.len() + self.w.len() + self.coef.len() + 1
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.v
            .iter()
            .chain(self.w.iter())
            .chain(self.coef.iter())
            .chain(core::iter::once(&self.bias))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.v
            .iter_mut()
            .chain(self.w.iter_mut())
            .chain(self.coef.iter_mut())
            .chain(core::iter::once(&mut self.bias))
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }

    /// Squared L2 norm of the decayed weights (everything except the bias).
    fn decay_norm(&self) -> f64 {
        self.v
            .iter()
            .chain(&self.w)
            .chain(&self.coef)
            .map(|x| x * x)
            .sum()
    }
}

/// Attention pooling of `instances` (`n × d`, row-major). Returns the pooled
/// vector and the attention weights.
pub fn attention_forward(instances: &[f64], n: usize, model: &MilModel) -> (Vec<f64>, Vec<f64>) {
    let fwd = attention_pass(instances, n, model);
    (fwd.z, fwd.a)
}

struct AttentionPass {
    z: Vec<f64>,
    a: Vec<f64>,
    /// `n × h` activations `tanh(V h_k)`.
    t: Vec<f64>,
}

fn attention_pass(instances: &[f64], n: usize, model: &MilModel) -> AttentionPass {
    let (d, h) = (model.d, model.h);
    let mut t = vec![0.0; n * h];
    let mut e = vec![0.0; n];
    for k in 0..n {
        let hk = &instances[k * d..(k + 1) * d];
        let mut score = 0.0;
        for r in 0..h {
            let row = &model.v[r * d..(r + 1) * d];
            let u: f64 = row.iter().zip(hk).map(|(a, b)| a * b).sum();
            let tk = libm::tanh(u);
            t[k * h + r] = tk;
            score += model.w[r] * tk;
        }
        e[k] = score;
    }
    let max = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut a: Vec<f64> = e.iter().map(|x| libm::exp(x - max)).collect();
    let total: f64 = a.iter().sum();
    for ak in &mut a {
        *ak /= total;
    }
    let mut z = vec![0.0; d];
    for k in 0..n {
        for j in 0..d {
            z[j] += a[k] * instances[k * d + j];
        }
    }
    AttentionPass { z, a, t }
}

fn mean_pool(bag: &Bag) -> Vec<f64> {
    let mut z = vec![0.0; bag.d];
    for k in 0..bag.n {
        for (zj, x) in z.iter_mut().zip(bag.instance(k)) {
            *zj += x;
        }
    }
    for zj in &mut z {
        *zj /= bag.n as f64;
    }
    z
}

fn max_pool(bag: &Bag) -> Vec<f64> {
    let mut z = bag.instance(0).to_vec();
    for k in 1..bag.n {
        for (zj, x) in z.iter_mut().zip(bag.instance(k)) {
            *zj = zj.max(*x);
        }
    }
    z
}

/// Pooled bag representation under `aggregator`.
pub fn pool(bag: &Bag, aggregator: Aggregator, model: &MilModel) -> Vec<f64> {
    match aggregator {
        Aggregator::Mean => mean_pool(bag),
        Aggregator::Max => max_pool(bag),
        Aggregator::Attention => attention_pass(&bag.instances, bag.n, model).z,
    }
}

fn affine(model: &MilModel, z: &[f64]) -> f64 {
    model.coef.iter().zip(z).map(|(c, x)| c * x).sum::<f64>() + model.bias
}

/// Bag-level score (logit for classification, prediction for regression).
pub fn predict(bag: &Bag, aggregator: Aggregator, model: &MilModel) -> f64 {
    affine(model, &pool(bag, aggregator, model))
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Per-bag loss and its derivative with respect to the score.
fn loss_and_slope(score: f64, label: f64, task: Task) -> (f64, f64) {
    match task {
        Task::Classification => (softplus(score) - label * score, sigmoid(score) - label),
        Task::Regression => {
            let r = score - label;
            (r * r, 2.0 * r)
        }
    }
}

/// Mean bag loss plus `weight_decay / 2 · ‖θ‖²` (bias excluded).
pub fn objective(model: &MilModel, bags: &[Bag], aggregator: Aggregator, task: Task, weight_decay: f64) -> f64 {
    let data: f64 = bags
        .iter()
        .map(|b| loss_and_slope(predict(b, aggregator, model), b.label, task).0)
        .sum::<f64>()
        / bags.len() as f64;
    data + 0.5 * weight_decay * model.decay_norm()
}

/// Objective value and its exact gradient.
pub fn gradient(
    model: &MilModel,
    bags: &[Bag],
    aggregator: Aggregator,
    task: Task,
    weight_decay: f64,
) -> (f64, MilModel) {
    let (d, h) = (model.d, model.h);
    let mut grad = MilModel::zeros(d, h);
    let mut total = 0.0;
    let scale = 1.0 / bags.len() as f64;

    for bag in bags {
        match aggregator {
            Aggregator::Mean | Aggregator::Max => {
                let z = pool(bag, aggregator, model);
                let (loss, slope) = loss_and_slope(affine(model, &z), bag.label, task);
                total += loss;
                for (g, x) in grad.coef.iter_mut().zip(&z) {
                    *g += scale * slope * x;
                }
                grad.bias += scale * slope;
            }
            Aggregator::Attention => {
                let fwd = attention_pass(&bag.instances, bag.n, model);
                let (loss, slope) = loss_and_slope(affine(model, &fwd.z), bag.label, task);
                total += loss;
                for (g, x) in grad.coef.iter_mut().zip(&fwd.z) {
                    *g += scale * slope * x;
                }
                grad.bias += scale * slope;

                // dL/da_k = slope · coefᵀ h_k
                let da: Vec<f64> = (0..bag.n)
                    .map(|k| slope * bag.instance(k).iter().zip(&model.coef).map(|(x, c)| x * c).sum::<f64>())
                    .collect();
                let mean_da: f64 = fwd.a.iter().zip(&da).map(|(a, g)| a * g).sum();
                for k in 0..bag.n {
                    let de = fwd.a[k] * (da[k] - mean_da);
                    let hk = bag.instance(k);
                    for r in 0..h {
                        let tk = fwd.t[k * h + r];
                        grad.w[r] += scale * de * tk;
                        let du = de * model.w[r] * (1.0 - tk * tk);
                        let row = &mut grad.v[r * d..(r + 1) * d];
                        for (g, x) in row.iter_mut().zip(hk) {
                            *g += scale * du * x;
                        }
                    }
                }
            }
        }
    }

    if weight_decay != 0.0 {
        for (g, p) in grad.v.iter_mut().zip(&model.v) {
            *g += weight_decay * p;
        }
        for (g, p) in grad.w.iter_mut().zip(&model.w) {
            *g += weight_decay * p;
        }
        for (g, p) in grad.coef.iter_mut().zip(&model.coef) {
            *g += weight_decay * p;
        }
    }
    (total * scale + 0.5 * weight_decay * model.decay_norm(), grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model_2x3() -> MilModel {
        MilModel {
            d: 3,
            h: 2,
            v: vec![0.1, -0.2, 0.3, 0.0, 0.5, -0.4],
            w: vec![1.0, -0.5],
            coef: vec![0.2, 0.1, -0.3],
            bias: 0.05,
        }
    }

    #[test]
    fn singleton_bag_gets_full_weight() {
        let h = [0.3, -1.0, 2.0];
        let (z, a) = attention_forward(&h, 1, &model_2x3());
        assert_eq!(a, vec![1.0]);
        assert_eq!(z, h.to_vec());
    }

    #[test]
    fn identical_instances_get_uniform_weight() {
        let row = [0.7, 0.1, -0.2];
        let inst: Vec<f64> = row.iter().cycle().take(12).copied().collect();
        let (_, a) = attention_forward(&inst, 4, &model_2x3());
        for ak in a {
            assert!((ak - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_computed_two_instance_mixture() {
        // h1 = [1, 0, 0], h2 = [0, 1, 0]
        // V h1 = [0.1, 0.0], V h2 = [-0.2, 0.5]
        // e1 = 1.0 * tanh(0.1) - 0.5 * tanh(0.0) = 0.0996679946249559
        // e2 = 1.0 * tanh(-0.2) - 0.5 * tanh(0.5)
        //    = -0.197375320224904 - 0.231058578630005 = -0.428433898854909
        // a1 = 1 / (1 + exp(e2 - e1)) = 1 / (1 + exp(-0.528101893479865))
        let inst = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let (z, a) = attention_forward(&inst, 2, &model_2x3());
        let a1 = 1.0 / (1.0 + (-0.528101893479865f64).exp());
        assert!((a[0] - a1).abs() < 1e-12);
        assert!((a[1] - (1.0 - a1)).abs() < 1e-12);
        assert!((z[0] - a1).abs() < 1e-12);
        assert!((z[1] - (1.0 - a1)).abs() < 1e-12);
        assert_eq!(z[2], 0.0);
    }

    #[test]
    fn stable_loss_at_extreme_scores() {
        let (l, s) = loss_and_slope(800.0, 1.0, Task::Classification);
        assert!(l.is_finite() && l.abs() < 1e-12);
        assert!(s.abs() < 1e-12);
        let (l, _) = loss_and_slope(-800.0, 1.0, Task::Classification);
        assert!((l - 800.0).abs() < 1e-9);
    }
}
