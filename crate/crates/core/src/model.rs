//! Dense feed-forward binary classifier trained with mini-batch SGD on
//! binary cross-entropy.
//!
//! All accumulation happens in a fixed order so training is bit-for-bit
//! reproducible for a given seed.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::encoder::WeightManifest;
use crate::error::{Error, Result};
use crate::random::RandomSource;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

/// Fully connected layer; `weights` is `inputs x outputs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn forward(&self, x: &[f64], z: &mut Vec<f64>, a: &mut Vec<f64>) {
        z.clear();
        z.extend_from_slice(&self.bias);
        for (i, &xi) in x.iter().enumerate() {
            let row = &self.weights[i * self.outputs..(i + 1) * self.outputs];
            for (zj, &w) in z.iter_mut().zip(row) {
                *zj += xi * w;
            }
        }
        a.clear();
        a.extend(z.iter().map(|&v| match self.activation {
            Activation::Relu => v.max(0.0),
            Activation::Sigmoid => sigmoid(v),
        }));
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + libm::log1p(libm::exp(-z))
    } else {
        libm::log1p(libm::exp(z))
    }
}

/// Row-major features with 0/1 labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    width: usize,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(features: Vec<f64>, width: usize, labels: Vec<u8>) -> Result<Self> {
        if width == 0 || features.len() != width * labels.len() {
            return Err(Error::Shape(format!(
                "{} feature values do not form {} rows of width {}",
                features.len(),
                labels.len(),
                width
            )));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::Domain("labels must be 0 or 1"));
        }
        Ok(Dataset {
            features,
            width,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.width..(i + 1) * self.width]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Rows picked by index, in the given order.
    pub fn select(&self, rows: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(rows.len() * self.width);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            features.extend_from_slice(self.row(r));
            labels.push(self.labels[r]);
        }
        Dataset {
            features,
            width: self.width,
            labels,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Domain("learning_rate must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::Domain("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::Domain("batch_size must be at least 1"));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            epochs: 5,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Multilayer perceptron: ReLU hidden layers, one sigmoid output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

impl Mlp {
    /// Layer widths `[input, hidden..., 1]`, weights uniform in
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero.
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self> {
        let mut r = RandomSource::new(seed);
        Self::build(sizes, |fan_in| {
            let bound = 1.0 / libm::sqrt(fan_in as f64);
            r.uniform_f64(-bound, bound)
        })
    }

    /// Same architecture with every parameter zero.
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        Self::build(sizes, |_| 0.0)
    }

    fn build(sizes: &[usize], mut init: impl FnMut(usize) -> f64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Shape(String::from(
                "need at least input and output widths",
            )));
        }
        if *sizes.last().unwrap() != 1 {
            return Err(Error::Shape(String::from(
                "binary classifier needs one output",
            )));
        }
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense {
                inputs: w[0],
                outputs: w[1],
                weights: (0..w[0] * w[1]).map(|_| init(w[0])).collect(),
                bias: vec![0.0; w[1]],
                activation: if i == last {
                    Activation::Sigmoid
                } else {
                    Activation::Relu
                },
            })
            .collect();
        Ok(Mlp { layers })
    }

    /// Checks dimensions chain and parameters are finite.
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape(String::from("no layers")));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::Shape(format!("layer {i} tensor sizes")));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::Domain("non-finite parameter"));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::Shape(format!(
                    "layer {i} output does not match layer {}",
                    i + 1
                )));
            }
        }
        if layers.last().unwrap().outputs != 1 {
            return Err(Error::Shape(String::from(
                "binary classifier needs one output",
            )));
        }
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    /// Layer widths, `[input, hidden..., 1]`.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    fn check_width(&self, width: usize) -> Result<()> {
        if width != self.input_width() {
            return Err(Error::Shape(format!(
                "feature width {width} does not match model input {}",
                self.input_width()
            )));
        }
        Ok(())
    }

    /// Output logit for one row.
    fn logit(&self, x: &[f64]) -> f64 {
        let mut z = Vec::new();
        let mut a = x.to_vec();
        let mut next = Vec::new();
        for l in &self.layers {
            l.forward(&a, &mut z, &mut next);
            core::mem::swap(&mut a, &mut next);
        }
        z[0]
    }

    /// Sigmoid output per row.
    pub fn predict_proba(&self, features: &[f64], width: usize) -> Result<Vec<f64>> {
        self.check_width(width)?;
        if !features.len().is_multiple_of(width) {
            return Err(Error::Shape(String::from("ragged feature matrix")));
        }
        Ok(features
            .chunks_exact(width)
            .map(|row| sigmoid(self.logit(row)))
            .collect())
    }

    /// Labels thresholded at 0.5; a tie maps to 1.
    pub fn predict(&self, features: &[f64], width: usize) -> Result<Vec<u8>> {
        Ok(self
            .predict_proba(features, width)?
            .into_iter()
            .map(|p| (p >= 0.5) as u8)
            .collect())
    }

    /// Mean binary cross-entropy over `rows` and its gradient, laid out in
    /// [`Mlp::flatten`] order.
    pub fn loss_and_gradient(&self, data: &Dataset, rows: &[usize]) -> Result<(f64, Vec<f64>)> {
        self.check_width(data.width())?;
        if rows.is_empty() {
            return Err(Error::Domain("empty batch"));
        }
        let mut grad = vec![0.0; self.param_count()];
        let mut loss = 0.0;
        let depth = self.layers.len();
        let mut zs: Vec<Vec<f64>> = vec![Vec::new(); depth];
        let mut acts: Vec<Vec<f64>> = vec![Vec::new(); depth + 1];
        let mut delta = Vec::new();
        let mut prev_delta = Vec::new();
        let offsets = self.param_offsets();
        for &r in rows {
            acts[0].clear();
            acts[0].extend_from_slice(data.row(r));
            for (i, l) in self.layers.iter().enumerate() {
                let (head, tail) = acts.split_at_mut(i + 1);
                l.forward(&head[i], &mut zs[i], &mut tail[0]);
            }
            let y = data.labels()[r] as f64;
            let z = zs[depth - 1][0];
            loss += softplus(z) - y * z;
            delta.clear();
            delta.push(sigmoid(z) - y);
            for i in (0..depth).rev() {
                let l = &self.layers[i];
                let (w_off, b_off) = offsets[i];
                let input = &acts[i];
                for (k, &xk) in input.iter().enumerate() {
                    let g = &mut grad[w_off + k * l.outputs..w_off + (k + 1) * l.outputs];
                    for (gj, &dj) in g.iter_mut().zip(&delta) {
                        *gj += xk * dj;
                    }
                }
                for (gb, &dj) in grad[b_off..b_off + l.outputs].iter_mut().zip(&delta) {
                    *gb += dj;
                }
                if i > 0 {
                    let below = &self.layers[i - 1];
                    prev_delta.clear();
                    for (row, &zk) in l.weights.chunks_exact(l.outputs).zip(&zs[i - 1]) {
                        let back: f64 = row.iter().zip(&delta).map(|(w, d)| w * d).sum();
                        let active = match below.activation {
                            Activation::Relu => (zk > 0.0) as u8 as f64,
                            Activation::Sigmoid => {
                                let s = sigmoid(zk);
                                s * (1.0 - s)
                            }
                        };
                        prev_delta.push(back * active);
                    }
                    core::mem::swap(&mut delta, &mut prev_delta);
                }
            }
        }
        let inv = 1.0 / rows.len() as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        Ok((loss * inv, grad))
    }

    /// `(weight offset, bias offset)` of each layer in the flat vector.
    fn param_offsets(&self) -> Vec<(usize, usize)> {
        let mut off = 0;
        self.layers
            .iter()
            .map(|l| {
                let w = off;
                let b = w + l.weights.len();
                off = b + l.bias.len();
                (w, b)
            })
            .collect()
    }

    /// Layer order, weights (row-major) then bias per layer.
    pub fn flatten(&self) -> (Vec<f64>, WeightManifest) {
        let mut values = Vec::with_capacity(self.param_count());
        let mut shapes = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            values.extend_from_slice(&l.weights);
            values.extend_from_slice(&l.bias);
            shapes.push((
                format!("layer{i}.weight"),
                vec![l.inputs as u32, l.outputs as u32],
            ));
            shapes.push((format!("layer{i}.bias"), vec![l.outputs as u32]));
        }
        (values, WeightManifest::from_shapes(shapes))
    }

    /// Inverse of [`Mlp::flatten`]; the manifest must describe this
    /// architecture.
    pub fn load_weights(&self, values: &[f64], manifest: &WeightManifest) -> Result<Mlp> {
        let (_, expected) = self.flatten();
        if expected.entries != manifest.entries {
            return Err(Error::Shape(String::from(
                "manifest does not match architecture",
            )));
        }
        if values.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                values.len(),
                self.param_count()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite parameter"));
        }
        let mut out = self.clone();
        let mut rest = values;
        for l in out.layers.iter_mut() {
            let (w, tail) = rest.split_at(l.weights.len());
            let (b, tail) = tail.split_at(l.bias.len());
            l.weights.copy_from_slice(w);
            l.bias.copy_from_slice(b);
            rest = tail;
        }
        Ok(out)
    }

    /// Applies `params -= lr * grad` in flatten order.
    fn step(&mut self, grad: &[f64], lr: f64) {
        let mut g = grad.iter();
        for l in self.layers.iter_mut() {
            for p in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *p -= lr * g.next().unwrap();
            }
        }
    }
}

/// Mini-batch SGD. The input model is left untouched.
pub fn train_local(model: &Mlp, data: &Dataset, cfg: &TrainConfig) -> Result<Mlp> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Domain("empty dataset"));
    }
    model.check_width(data.width())?;
    let mut out = model.clone();
    let mut r = RandomSource::new(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.epochs {
        r.shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size) {
            let (_, grad) = out.loss_and_gradient(data, batch)?;
            out.step(&grad, cfg.learning_rate);
        }
    }
    Ok(out)
}

/// Support-weighted classification metrics.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// One-vs-rest metrics for a single class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall and F1 treating `class` as positive. Undefined ratios
/// (no predictions or no support) are reported as 0.
pub fn class_metrics(predicted: &[u8], actual: &[u8], class: u8) -> ClassMetrics {
    let mut tp = 0;
    let mut fp = 0;
    let mut fneg = 0;
    for (&p, &a) in predicted.iter().zip(actual) {
        match (p == class, a == class) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    ClassMetrics {
        precision,
        recall,
        f1,
        support: tp + fneg,
    }
}

/// Accuracy plus precision/recall/F1 averaged over both classes, weighted
/// by each class's support in `actual`.
pub fn compute_metrics(predicted: &[u8], actual: &[u8]) -> Result<MetricsReport> {
    if predicted.is_empty() {
        return Err(Error::Domain("no predictions"));
    }
    if predicted.len() != actual.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predicted.len(),
            actual.len()
        )));
    }
    let total = actual.len() as f64;
    let correct = predicted.iter().zip(actual).filter(|(p, a)| p == a).count();
    let mut report = MetricsReport {
        accuracy: correct as f64 / total,
        ..Default::default()
    };
    for class in [0u8, 1] {
        let m = class_metrics(predicted, actual, class);
        let w = m.support as f64 / total;
        report.precision += w * m.precision;
        report.recall += w * m.recall;
        report.f1 += w * m.f1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_model_ties_to_one() {
        let m = Mlp::zeros(&[3, 4, 1]).unwrap();
        let p = m.predict_proba(&[1.0, -2.0, 0.5], 3).unwrap();
        assert_eq!(p, vec![0.5]);
        assert_eq!(
            m.predict(&[1.0, -2.0, 0.5, 0.0, 0.0, 0.0], 3).unwrap(),
            vec![1, 1]
        );
    }

    #[test]
    fn hand_built_single_layer() {
        let m = Mlp::from_layers(vec![Dense {
            inputs: 1,
            outputs: 1,
            weights: vec![10.0],
            bias: vec![0.0],
            activation: Activation::Sigmoid,
        }])
        .unwrap();
        assert_eq!(m.predict(&[1.0, -1.0], 1).unwrap(), vec![1, 0]);
        let p = m.predict_proba(&[1.0], 1).unwrap()[0];
        assert!((p - 1.0 / (1.0 + libm::exp(-10.0))).abs() < 1e-15);
    }

    #[test]
    fn shape_errors() {
        let m = Mlp::zeros(&[2, 3, 1]).unwrap();
        assert!(matches!(
            m.predict(&[1.0, 2.0, 3.0], 3),
            Err(Error::Shape(_))
        ));
        let d = Dataset::new(vec![0.0; 6], 3, vec![0, 1]).unwrap();
        let cfg = TrainConfig::default();
        assert!(matches!(train_local(&m, &d, &cfg), Err(Error::Shape(_))));
        assert!(Dataset::new(vec![0.0; 5], 3, vec![0, 1]).is_err());
        assert!(Mlp::from_layers(vec![
            Dense {
                inputs: 2,
                outputs: 3,
                weights: vec![0.0; 6],
                bias: vec![0.0; 3],
                activation: Activation::Relu
            },
            Dense {
                inputs: 2,
                outputs: 1,
                weights: vec![0.0; 2],
                bias: vec![0.0],
                activation: Activation::Sigmoid
            },
        ])
        .is_err());
    }

    #[test]
    fn zero_epochs_rejected() {
        let m = Mlp::zeros(&[1, 1]).unwrap();
        let d = Dataset::new(vec![1.0], 1, vec![1]).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(matches!(train_local(&m, &d, &cfg), Err(Error::Domain(_))));
    }

    #[test]
    fn flatten_length_matches_declared_shapes() {
        let m = Mlp::new(&[2, 3, 1], 1).unwrap();
        let (v, manifest) = m.flatten();
        assert_eq!(v.len(), 6 + 3 + 3 + 1);
        assert_eq!(manifest.total_len(), 13);
        assert_eq!(manifest.entries[0].shape, vec![2, 3]);
        assert_eq!(manifest.entries[3].shape, vec![1]);
    }

    #[test]
    fn load_rejects_foreign_manifest() {
        let m = Mlp::new(&[2, 3, 1], 1).unwrap();
        let other = Mlp::new(&[3, 2, 1], 1).unwrap();
        let (v, manifest) = other.flatten();
        assert!(matches!(
            m.load_weights(&v, &manifest),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn confusion_example() {
        // TP=3, FP=1, FN=1, TN=5
        let actual = [1, 1, 1, 1, 0, 0, 0, 0, 0, 0];
        let predicted = [1, 1, 1, 0, 1, 0, 0, 0, 0, 0];
        let c1 = class_metrics(&predicted, &actual, 1);
        assert_eq!(c1.precision, 0.75);
        assert_eq!(c1.recall, 0.75);
        assert_eq!(c1.f1, 0.75);
        let r = compute_metrics(&predicted, &actual).unwrap();
        assert_eq!(r.accuracy, 0.8);
        assert!((r.recall - r.accuracy).abs() < 1e-12);
    }

    #[test]
    fn metrics_errors() {
        assert!(matches!(compute_metrics(&[], &[]), Err(Error::Domain(_))));
        assert!(compute_metrics(&[1], &[1, 0]).is_err());
        let r = compute_metrics(&[1, 0, 1], &[1, 0, 1]).unwrap();
        assert_eq!(
            (r.accuracy, r.precision, r.recall, r.f1),
            (1.0, 1.0, 1.0, 1.0)
        );
    }
}
