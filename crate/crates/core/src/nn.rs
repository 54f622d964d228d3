//! Small fully connected networks with ReLU hidden layers and a softmax
//! output, trained on soft-label cross-entropy. Shared by the data
//! classifier and the neural label aggregator.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::de::Error as _;
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::Stream;

/// Floor applied to probabilities inside logarithms.
pub const LOG_FLOOR: f64 = 1e-12;

/// Affine layer; `weights` is `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        (0..self.outputs)
            .map(|o| {
                let w = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                self.bias[o] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn new(input: usize, hidden: &[usize], output: usize, rng: &mut Stream) -> Self {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(output);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let scale = 1.0 / (fan_in.max(1) as f64).sqrt();
                let weights = (0..fan_in * fan_out).map(|_| rng.gen_range(-scale..scale)).collect();
                Dense { inputs: fan_in, outputs: fan_out, weights, bias: vec![0.0; fan_out] }
            })
            .collect();
        Mlp { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Mlp { layers: self.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect() }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn hidden_dims(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(|l| l.outputs).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "flat parameter length");
        let mut pos = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[pos..pos + nw]);
            pos += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[pos..pos + nb]);
            pos += nb;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// Output logits.
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            a = l.affine(&a);
            if i < last {
                a.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        a
    }

    /// Softmax probabilities.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    pub fn predict(&self, xs: &Matrix) -> Result<Matrix> {
        if xs.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} features, network expects {}",
                xs.cols(),
                self.input_dim()
            )));
        }
        let mut out = Matrix::zeros(xs.rows(), self.output_dim());
        for (i, x) in xs.iter_rows().enumerate() {
            out.row_mut(i).copy_from_slice(&self.forward(x));
        }
        Ok(out)
    }

    /// Weighted mean soft cross-entropy over `idx` and its gradient.
    pub fn loss_and_grad(&self, xs: &Matrix, targets: &Matrix, weights: Option<&[f64]>, idx: &[usize]) -> (f64, Mlp) {
        let mut grad = self.zeros_like();
        let total_w: f64 = idx.iter().map(|&i| weights.map_or(1.0, |w| w[i])).sum();
        if total_w <= 0.0 {
            return (0.0, grad);
        }
        let mut loss = 0.0;
        let last = self.layers.len() - 1;
        for &i in idx {
            let w = weights.map_or(1.0, |w| w[i]) / total_w;
            if w == 0.0 {
                continue;
            }
            // forward, keeping every layer's input
            let mut acts: Vec<Vec<f64>> = vec![xs.row(i).to_vec()];
            for (li, l) in self.layers.iter().enumerate() {
                let mut z = l.affine(acts.last().expect("input"));
                if li < last {
                    z.iter_mut().for_each(|v| *v = v.max(0.0));
                }
                acts.push(z);
            }
            let logits = acts.pop().expect("logits");
            let p = softmax(&logits);
            let t = targets.row(i);
            loss += w * soft_cross_entropy(&p, t);

            // d(-sum_k t_k log max(p_k, floor)) / dz_j over the unfloored terms
            let live_mass: f64 = t.iter().zip(&p).filter(|(_, &pk)| pk >= LOG_FLOOR).map(|(tk, _)| tk).sum();
            let mut delta: Vec<f64> = p
                .iter()
                .zip(t)
                .map(|(&pj, &tj)| w * (pj * live_mass - if pj >= LOG_FLOOR { tj } else { 0.0 }))
                .collect();

            for li in (0..self.layers.len()).rev() {
                let layer = &self.layers[li];
                let input = &acts[li];
                let g = &mut grad.layers[li];
                for o in 0..layer.outputs {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    g.bias[o] += d;
                    let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    row.iter_mut().zip(input).for_each(|(gw, a)| *gw += d * a);
                }
                if li == 0 {
                    break;
                }
                let mut prev = vec![0.0; layer.inputs];
                for o in 0..layer.outputs {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    let wrow = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    prev.iter_mut().zip(wrow).for_each(|(p, wv)| *p += d * wv);
                }
                // ReLU gate: the stored activation is positive iff the unit was active
                prev.iter_mut().zip(input).for_each(|(p, &a)| {
                    if a <= 0.0 {
                        *p = 0.0
                    }
                });
                delta = prev;
            }
        }
        (loss, grad)
    }

    /// Weighted mean soft cross-entropy over every row.
    pub fn loss(&self, xs: &Matrix, targets: &Matrix, weights: Option<&[f64]>) -> f64 {
        let mut total = 0.0;
        let mut total_w = 0.0;
        for i in 0..xs.rows() {
            let w = weights.map_or(1.0, |w| w[i]);
            total += w * soft_cross_entropy(&self.forward(xs.row(i)), targets.row(i));
            total_w += w;
        }
        if total_w > 0.0 {
            total / total_w
        } else {
            0.0
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    crate::matrix::softmax_from_logs(logits)
}

/// `-sum_k target_k * log(max(pred_k, 1e-12))`.
pub fn soft_cross_entropy(pred: &[f64], target: &[f64]) -> f64 {
    -pred.iter().zip(target).map(|(&p, &t)| if t == 0.0 { 0.0 } else { t * p.max(LOG_FLOOR).ln() }).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    /// SGD with heavy-ball momentum: `v = mu * v + g; w -= lr * v`.
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub step_size: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// `(epoch, multiplier)`: from `epoch` on the step size is scaled by
    /// the product of every multiplier whose epoch has been reached.
    pub schedule: Vec<(usize, f64)>,
    pub method: Method,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            step_size: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 128,
            epochs: 1,
            schedule: Vec::new(),
            method: Method::Sgd,
        }
    }
}

impl OptimizerConfig {
    pub fn adam(step_size: f64) -> Self {
        OptimizerConfig {
            step_size,
            momentum: 0.0,
            weight_decay: 0.0,
            method: Method::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 },
            ..Default::default()
        }
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 || self.batch_size == 0 {
            return Err(Error::Config(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }

    pub fn step_size_at(&self, epoch: usize) -> f64 {
        self.schedule.iter().filter(|(e, _)| epoch >= *e).fold(self.step_size, |lr, (_, m)| lr * m)
    }
}

/// Optimizer state that persists across calls to [`train_epochs`].
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    /// Epochs completed so far; drives the step-size schedule.
    pub epoch: usize,
    first: Option<Vec<f64>>,
    second: Option<Vec<f64>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Optimizer { config, epoch: 0, first: None, second: None, steps: 0 }
    }

    fn step(&mut self, net: &mut Mlp, grad: &Mlp) {
        let lr = self.config.step_size_at(self.epoch);
        let wd = self.config.weight_decay;
        let mut params = net.params();
        let g = grad.params();
        let first = self.first.get_or_insert_with(|| vec![0.0; params.len()]);
        self.steps += 1;
        match self.config.method {
            Method::Sgd => {
                let mu = self.config.momentum;
                for ((w, gi), v) in params.iter_mut().zip(&g).zip(first.iter_mut()) {
                    let gi = gi + wd * *w;
                    *v = mu * *v + gi;
                    *w -= lr * *v;
                }
            }
            Method::Adam { beta1, beta2, eps } => {
                let second = self.second.get_or_insert_with(|| vec![0.0; params.len()]);
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for i in 0..params.len() {
                    let gi = g[i] + wd * params[i];
                    first[i] = beta1 * first[i] + (1.0 - beta1) * gi;
                    second[i] = beta2 * second[i] + (1.0 - beta2) * gi * gi;
                    params[i] -= lr * (first[i] / c1) / ((second[i] / c2).sqrt() + eps);
                }
            }
        }
        net.set_params(&params);
    }
}

/// Mini-batch training on soft targets. Returns the mean training loss of
/// each epoch (averaged over batches, weighted by batch weight).
pub fn train_epochs(
    net: &mut Mlp,
    opt: &mut Optimizer,
    xs: &Matrix,
    targets: &Matrix,
    weights: Option<&[f64]>,
    epochs: usize,
    rng: &mut Stream,
) -> Result<Vec<f64>> {
    if xs.rows() != targets.rows() || targets.cols() != net.output_dim() || xs.cols() != net.input_dim() {
        return Err(Error::Shape(format!(
            "training on {}x{} inputs and {}x{} targets with a {}->{} network",
            xs.rows(),
            xs.cols(),
            targets.rows(),
            targets.cols(),
            net.input_dim(),
            net.output_dim()
        )));
    }
    if let Some(w) = weights {
        if w.len() != xs.rows() {
            return Err(Error::Shape("sample weights length".into()));
        }
    }
    let mut trace = Vec::with_capacity(epochs);
    if xs.rows() == 0 {
        return Ok(trace);
    }
    let mut order: Vec<usize> = (0..xs.rows()).collect();
    for _ in 0..epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        let mut epoch_w = 0.0;
        for batch in order.chunks(opt.config.batch_size) {
            let (loss, grad) = net.loss_and_grad(xs, targets, weights, batch);
            let bw: f64 = batch.iter().map(|&i| weights.map_or(1.0, |w| w[i])).sum();
            epoch_loss += loss * bw;
            epoch_w += bw;
            opt.step(net, &grad);
        }
        let mean = if epoch_w > 0.0 { epoch_loss / epoch_w } else { 0.0 };
        if !mean.is_finite() || !net.is_finite() {
            return Err(Error::NonFiniteLoss { epoch: opt.epoch, loss: mean });
        }
        trace.push(mean);
        opt.epoch += 1;
    }
    Ok(trace)
}

// Checkpoint layout: {"layer_0": {"w": [[..]..], "b": [..]}, "layer_1": ...}
impl Serialize for Mlp {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Layer<'a> {
            w: Vec<&'a [f64]>,
            b: &'a [f64],
        }
        let mut map = s.serialize_map(Some(self.layers.len()))?;
        for (i, l) in self.layers.iter().enumerate() {
            let w: Vec<&[f64]> = l.weights.chunks(l.inputs.max(1)).collect();
            map.serialize_entry(&format!("layer_{i}"), &Layer { w, b: &l.bias })?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for Mlp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Layer {
            w: Vec<Vec<f64>>,
            b: Vec<f64>,
        }
        let mut raw: std::collections::HashMap<String, Layer> = Deserialize::deserialize(d)?;
        let mut layers = Vec::new();
        for i in 0.. {
            let Some(l) = raw.remove(&format!("layer_{i}")) else { break };
            let outputs = l.w.len();
            let inputs = l.w.first().map_or(0, Vec::len);
            if l.b.len() != outputs || l.w.iter().any(|r| r.len() != inputs) {
                return Err(D::Error::custom(format!("layer_{i} has inconsistent shapes")));
            }
            if let Some(prev) = layers.last() {
                let prev: &Dense = prev;
                if prev.outputs != inputs {
                    return Err(D::Error::custom(format!("layer_{i} input does not match previous output")));
                }
            }
            layers.push(Dense { inputs, outputs, weights: l.w.concat(), bias: l.b });
        }
        if layers.is_empty() || !raw.is_empty() {
            return Err(D::Error::custom("checkpoint needs consecutive layer_0.. entries"));
        }
        Ok(Mlp { layers })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Seed;

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(soft_cross_entropy(&[0.0, 1.0], &[0.0, 1.0]), 0.0);
        let u = vec![0.1; 10];
        let mut t = vec![0.0; 10];
        t[3] = 1.0;
        assert!((soft_cross_entropy(&u, &t) - 10f64.ln()).abs() < 1e-12);
        let v = soft_cross_entropy(&[0.7, 0.3], &[0.5, 0.5]);
        assert!((v - 0.780_323_874_1).abs() < 1e-9, "{v}");
    }

    #[test]
    fn cross_entropy_of_self_is_entropy() {
        let p: [f64; 3] = [0.2, 0.3, 0.5];
        let h: f64 = -p.iter().map(|x| x * x.ln()).sum::<f64>();
        assert!((soft_cross_entropy(&p, &p) - h).abs() < 1e-12);
    }

    #[test]
    fn schedule_multiplies() {
        let c = OptimizerConfig { step_size: 0.1, schedule: vec![(40, 0.1), (50, 0.1)], ..Default::default() };
        assert_eq!(c.step_size_at(0), 0.1);
        assert!((c.step_size_at(45) - 0.01).abs() < 1e-15);
        assert!((c.step_size_at(55) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn checkpoint_json_roundtrip() {
        let net = Mlp::new(3, &[4, 2], 3, &mut Seed(1).stream("n"));
        let json = serde_json::to_string(&net).unwrap();
        assert!(json.starts_with("{\"layer_0\":{\"w\":[["));
        let back: Mlp = serde_json::from_str(&json).unwrap();
        assert_eq!(back, net);
        assert!(serde_json::from_str::<Mlp>(r#"{"layer_1":{"w":[[1.0]],"b":[0.0]}}"#).is_err());
    }

    #[test]
    fn adam_reduces_loss() {
        let mut rng = Seed(2).stream("n");
        let mut net = Mlp::new(2, &[8], 2, &mut rng);
        let xs = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], 2).unwrap();
        let ts = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], 2).unwrap();
        let mut opt = Optimizer::new(OptimizerConfig::adam(0.05));
        let trace = train_epochs(&mut net, &mut opt, &xs, &ts, None, 100, &mut rng).unwrap();
        assert!(trace.last().unwrap() < &0.05);
    }
}
