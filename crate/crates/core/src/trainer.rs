//! Minimal minibatch SGD for ReLU MLPs, so experiments can produce their own
//! models. Loss is `1/(2B) Σ ||x_L - onehot||²` with ReLU on the output layer.

use nalgebra::{DMatrix, DVector};
use rand::distr::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data_io::LabeledDataset;
use crate::error::{Error, Result};
use crate::network::{LayerParams, Network};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 10, learning_rate: 0.05, batch_size: 32, seed: 0 }
    }
}

/// Weights uniform in `±1/√fan_in`, biases zero.
pub fn init_network(dims: &[usize], rng: &mut ChaCha8Rng) -> Result<Network> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::Value(format!("invalid layer widths {dims:?}")));
    }
    let layers = dims
        .windows(2)
        .map(|d| {
            let bound = 1.0 / (d[0] as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            let weights = DMatrix::from_fn(d[1], d[0], |_, _| dist.sample(rng));
            LayerParams::new(weights, DVector::zeros(d[1]))
        })
        .collect::<Result<Vec<_>>>()?;
    Network::new(layers)
}

pub fn train(data: &LabeledDataset, dims: &[usize], config: &TrainConfig) -> Result<Network> {
    if data.is_empty() {
        return Err(Error::Value("training set is empty".into()));
    }
    if config.epochs == 0 || config.batch_size == 0 || !(config.learning_rate > 0.0) {
        return Err(Error::Value(format!(
            "epochs, batch size and learning rate must be positive (got {}, {}, {})",
            config.epochs, config.batch_size, config.learning_rate
        )));
    }
    if dims.len() < 2 {
        return Err(Error::Value(format!("invalid layer widths {dims:?}")));
    }
    let (d_in, classes) = (dims[0], dims[dims.len() - 1]);
    if let Some(v) = data.vectors.iter().find(|v| v.len() != d_in) {
        return Err(Error::shape(format!("training vector has length {} but the input width is {d_in}", v.len())));
    }
    if let Some(l) = data.labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Value(format!("label {l} exceeds the {classes} output classes")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = init_network(dims, &mut rng)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            sgd_step(&mut net, data, batch, config.learning_rate);
        }
        let finite = net.layers().iter().all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()));
        if !finite {
            return Err(Error::Numeric(format!("training diverged to non-finite weights in epoch {}", epoch + 1)));
        }
    }
    Ok(net)
}

fn sgd_step(net: &mut Network, data: &LabeledDataset, batch: &[usize], lr: f64) {
    let b = batch.len();
    let d_in = net.input_dim();
    let classes = net.output_dim();
    let x = DMatrix::from_fn(d_in, b, |i, k| data.vectors[batch[k]][i]);
    let mut target = DMatrix::zeros(classes, b);
    for (k, &idx) in batch.iter().enumerate() {
        target[(data.labels[idx], k)] = 1.0;
    }

    let mut acts = vec![x];
    for layer in net.layers() {
        let mut z = &layer.weights * acts.last().expect("nonempty");
        for mut col in z.column_iter_mut() {
            col += &layer.bias;
        }
        z.apply(|v| *v = if *v > 0.0 { *v } else { 0.0 });
        acts.push(z);
    }

    let depth = net.depth();
    let mut delta = &acts[depth] - &target;
    mask_inactive(&mut delta, &acts[depth]);
    let scale = lr / b as f64;
    for l in (1..=depth).rev() {
        let grad_w = &delta * acts[l - 1].transpose();
        let grad_b = delta.column_sum();
        let next_delta = if l > 1 {
            let mut d = net.layer(l).weights.transpose() * &delta;
            mask_inactive(&mut d, &acts[l - 1]);
            Some(d)
        } else {
            None
        };
        let layer = &mut net.layers_mut()[l - 1];
        layer.weights -= grad_w * scale;
        layer.bias -= grad_b * scale;
        if let Some(d) = next_delta {
            delta = d;
        }
    }
}

fn mask_inactive(delta: &mut DMatrix<f64>, activation: &DMatrix<f64>) {
    delta.zip_apply(activation, |d, a| {
        if !(a > 0.0) {
            *d = 0.0;
        }
    });
}

/// Index of the largest component; the first one on ties.
pub fn argmax(v: &DVector<f64>) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Fraction of inputs whose argmax output equals the label.
pub fn evaluate_accuracy(net: &Network, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Value("cannot evaluate accuracy on an empty dataset".into()));
    }
    let mut correct = 0usize;
    for (x, &label) in data.vectors.iter().zip(&data.labels) {
        if argmax(&net.predict(x)?) == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}
