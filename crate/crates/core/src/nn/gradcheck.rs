use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::net::Network;
use super::spec::NetworkSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Minimum number of parameters probed; spread evenly over all blocks.
    pub probes: usize,
    pub batch: usize,
    /// Gradients at or below this magnitude are not compared.
    pub magnitude_floor: f64,
    /// Negative control: scale the analytic gradient of this layer by 2.
    pub corrupt_layer: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-5,
            tolerance: 1e-4,
            probes: 240,
            batch: 2,
            magnitude_floor: 1e-8,
            corrupt_layer: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Largest relative error per layer.
    pub per_layer: Vec<f64>,
    pub compared: usize,
    pub below_floor: usize,
    /// Probes redrawn because the perturbation crossed a ReLU or pooling kink.
    pub redrawn: usize,
    pub passed: bool,
}

fn mean_loss(net: &Network<f64>, inputs: &[Vec<f64>], labels: &[f64]) -> f64 {
    inputs
        .iter()
        .zip(labels)
        .map(|(x, l)| {
            let e = net.forward(x).expect("shape checked") - l;
            e * e
        })
        .sum::<f64>()
        / inputs.len() as f64
}

/// Compares backpropagated gradients with central finite differences on a
/// seeded random network and batch, in double precision.
pub fn grad_check(spec: &NetworkSpec, seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    if !(1e-6..=1e-4).contains(&opts.epsilon) {
        return Err(Error::InvalidConfig("epsilon must lie in [1e-6, 1e-4]".into()));
    }
    if opts.batch == 0 {
        return Err(Error::InvalidConfig("batch must be >= 1".into()));
    }
    let mut net = Network::<f64>::init(spec.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let layout = net.layout().clone();
    // Non-zero biases so their paths are exercised.
    for b in layout.blocks.iter().filter(|b| b.name.ends_with(".bias")) {
        for p in &mut net.params[b.range()] {
            *p = rng.random_range(-0.1..0.1);
        }
    }
    let inputs: Vec<Vec<f64>> = (0..opts.batch)
        .map(|_| (0..net.input_size()).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let labels: Vec<f64> = (0..opts.batch).map(|_| rng.random_range(-0.9..0.9)).collect();
    let refs: Vec<&[f64]> = inputs.iter().map(|v| v.as_slice()).collect();
    let (_, mut grad) = net.loss_and_grad(&refs, &labels, crate::Execution::Sequential)?;
    if let Some(layer) = opts.corrupt_layer {
        for b in layout.blocks.iter().filter(|b| b.layer == layer) {
            grad[b.range()].iter_mut().for_each(|g| *g *= 2.0);
        }
    }

    let base_sig: Vec<u64> = inputs.iter().map(|x| net.signature(x)).collect();
    // Small blocks are probed exhaustively; the rest share what remains.
    let mut quota = vec![0; layout.blocks.len()];
    let mut order: Vec<usize> = (0..layout.blocks.len()).collect();
    order.sort_by_key(|&i| layout.blocks[i].len());
    let mut remaining = opts.probes.max(layout.blocks.len());
    for (k, &i) in order.iter().enumerate() {
        let share = remaining.div_ceil(order.len() - k);
        quota[i] = share.min(layout.blocks[i].len());
        remaining -= quota[i].min(remaining);
    }
    let mut per_layer = vec![0.0f64; layout.layers];
    let (mut compared, mut below_floor, mut redrawn) = (0, 0, 0);
    for (b, &want) in layout.blocks.iter().zip(&quota) {
        let mut done = 0;
        let mut attempts = 0;
        while done < want && attempts < 20 * want {
            attempts += 1;
            let idx = b.offset + rng.random_range(0..b.len());
            let w0 = net.params[idx];
            net.params[idx] = w0 + opts.epsilon;
            let smooth_plus = inputs.iter().zip(&base_sig).all(|(x, s)| net.signature(x) == *s);
            let lp = mean_loss(&net, &inputs, &labels);
            net.params[idx] = w0 - opts.epsilon;
            let smooth_minus = inputs.iter().zip(&base_sig).all(|(x, s)| net.signature(x) == *s);
            let lm = mean_loss(&net, &inputs, &labels);
            net.params[idx] = w0;
            if !(smooth_plus && smooth_minus) {
                redrawn += 1;
                continue;
            }
            done += 1;
            let numeric = (lp - lm) / (2.0 * opts.epsilon);
            let analytic = grad[idx];
            let scale = numeric.abs().max(analytic.abs());
            if scale <= opts.magnitude_floor {
                below_floor += 1;
                continue;
            }
            compared += 1;
            let rel = (analytic - numeric).abs() / scale;
            per_layer[b.layer] = per_layer[b.layer].max(rel);
        }
    }
    let max_relative_error = per_layer.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_relative_error,
        per_layer,
        compared,
        below_floor,
        redrawn,
        passed: compared > 0 && max_relative_error < opts.tolerance,
    })
}
