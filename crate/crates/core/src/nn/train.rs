use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamHyper, AdamState};
use super::checkpoint::{Checkpoint, TrainMeta};
use super::net::Network;
use super::spec::NetworkSpec;
use crate::dataset::{split, Dataset, DatasetRecord};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::signal::{ComplexBaseband, EchoDetector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Divide by the RMS complex magnitude over the detected window.
    WindowRms,
}

/// How a baseband record becomes a network input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Preprocess {
    pub input_len: usize,
    pub detector: EchoDetector,
    pub normalization: Normalization,
}

impl Default for Preprocess {
    fn default() -> Self {
        Preprocess {
            input_len: NetworkSpec::default().input_len,
            detector: EchoDetector::for_estimators(),
            normalization: Normalization::WindowRms,
        }
    }
}

impl Preprocess {
    pub fn for_spec(spec: &NetworkSpec) -> Self {
        Preprocess {
            input_len: spec.input_len,
            ..Preprocess::default()
        }
    }

    /// Crops `input_len` samples centred on the detected echo (zero-padded
    /// past the record edges) and lays them out as rows
    /// `[ch0.re, ch0.im, ch1.re, ch1.im, ...]`. `None` when no echo is found.
    pub fn prepare(&self, base: &ComplexBaseband) -> Result<Option<Vec<f64>>> {
        base.check()?;
        let window = match self.detector.detect(base) {
            Ok(w) => w,
            Err(Error::NoEchoFound) => return Ok(None),
            Err(e) => return Err(e),
        };
        let t = self.input_len;
        let n = base.samples_per_channel;
        let start = window.centre() as isize - (t / 2) as isize;
        let mut power = 0.0;
        for m in 0..base.channels {
            power += base.channel(m)[window.start..window.end].iter().map(|z| z.norm_sqr()).sum::<f64>();
        }
        let rms = (power / (base.channels * window.len().max(1)) as f64).sqrt();
        if !(rms > 0.0 && rms.is_finite()) {
            return Ok(None);
        }
        let mut out = vec![0.0; 2 * base.channels * t];
        for m in 0..base.channels {
            let ch = base.channel(m);
            let (re, im) = out[2 * m * t..(2 * m + 2) * t].split_at_mut(t);
            for k in 0..t {
                let idx = start + k as isize;
                if idx >= 0 && (idx as usize) < n {
                    let z = ch[idx as usize] / rms;
                    re[k] = z.re;
                    im[k] = z.im;
                }
            }
        }
        Ok(Some(out))
    }
}

/// Training labels are angles scaled to `[-1, 1]` by 90 degrees.
pub fn label_from_degrees(doa_deg: f64) -> f64 {
    doa_deg / 90.0
}

pub fn degrees_from_output(y: f64) -> f64 {
    y * 90.0
}

/// Swaps the channel order of a prepared input. For a symmetric linear
/// array this is the input of the mirrored angle.
pub fn mirror_input<T: Copy>(input: &[T], channels: usize) -> Vec<T> {
    let t = input.len() / (2 * channels);
    (0..channels).rev().flat_map(|m| input[2 * m * t..(2 * m + 2) * t].iter().copied()).collect()
}

/// Multiplies every channel of a prepared input by `exp(i phi)`.
pub fn rotate_phase(input: &mut [f32], channels: usize, phi: f64) {
    let t = input.len() / (2 * channels);
    let (s, c) = (phi.sin() as f32, phi.cos() as f32);
    for m in 0..channels {
        let (re, im) = input[2 * m * t..(2 * m + 2) * t].split_at_mut(t);
        for (a, b) in re.iter_mut().zip(im) {
            (*a, *b) = (*a * c - *b * s, *a * s + *b * c);
        }
    }
}

/// A prepared input with its scaled label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Vec<f32>,
    pub label: f32,
    /// Position of the source record in its dataset.
    pub record: usize,
}

/// Prepares every record whose echo is detected, in order.
pub fn prepare_samples(records: &[DatasetRecord], indices: &[usize], pre: &Preprocess, exec: Execution) -> Result<Vec<Sample>> {
    let out = exec.map(indices, |&i| -> Result<Option<Sample>> {
        let r = &records[i];
        Ok(pre.prepare(&r.base)?.map(|x| Sample {
            input: x.into_iter().map(|v| v as f32).collect(),
            label: label_from_degrees(r.doa_deg) as f32,
            record: i,
        }))
    });
    Ok(out.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub train_fraction: f64,
    pub shuffle_seed: u64,
    /// Stop after this many epochs without held-out improvement.
    pub patience: Option<usize>,
    /// Mirror each training sample with probability one half per epoch.
    pub mirror_augment: bool,
    /// Rotate all channels of each training sample by a common random
    /// carrier phase every epoch. The inter-channel phase, and hence the
    /// label, is unchanged.
    pub phase_augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 64,
            train_fraction: 0.8,
            shuffle_seed: 0,
            patience: None,
            mirror_augment: true,
            phase_augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidConfig("train_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean batch loss over the epoch.
    pub train_loss: f64,
    /// Loss on the held-out records after the epoch; NaN without any.
    pub heldout_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochStats>,
    pub train_records: Vec<usize>,
    pub heldout_records: Vec<usize>,
}

/// Training-time copy of a sample, or `None` when no augmentation is on.
fn augment(s: &Sample, channels: usize, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Option<(Vec<f32>, f32)> {
    if !cfg.mirror_augment && !cfg.phase_augment {
        return None;
    }
    let (mut x, mut label) = (s.input.clone(), s.label);
    if cfg.mirror_augment && rng.random::<bool>() {
        x = mirror_input(&x, channels);
        label = -label;
    }
    if cfg.phase_augment {
        rotate_phase(&mut x, channels, rng.random_range(0.0..std::f64::consts::TAU));
    }
    Some((x, label))
}

fn mean_loss(net: &Network<f32>, samples: &[Sample], exec: Execution) -> Result<f64> {
    let refs: Vec<&[f32]> = samples.iter().map(|s| s.input.as_slice()).collect();
    let out = net.forward_batch(&refs, exec)?;
    Ok(out
        .iter()
        .zip(samples)
        .map(|(&y, s)| ((y - s.label) as f64).powi(2))
        .sum::<f64>()
        / samples.len() as f64)
}

/// Splits the dataset, prepares inputs and trains.
pub fn train(
    dataset: &Dataset,
    spec: &NetworkSpec,
    cfg: &TrainConfig,
    hyper: &AdamHyper,
    seed: u64,
    exec: Execution,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (channels, _) = dataset.payload_shape();
    if spec.input_rows != 2 * channels {
        return Err(Error::ShapeMismatch(format!(
            "network takes {} rows, records have {channels} channels",
            spec.input_rows
        )));
    }
    let parts = split(dataset, cfg.train_fraction, cfg.shuffle_seed)?;
    let pre = Preprocess::for_spec(spec);
    let train_set = prepare_samples(&dataset.records, &parts.train, &pre, exec)?;
    let heldout = prepare_samples(&dataset.records, &parts.test, &pre, exec)?;
    log::info!(
        "training on {} of {} records, {} of {} held out (rest had no detectable echo)",
        train_set.len(),
        parts.train.len(),
        heldout.len(),
        parts.test.len()
    );
    let mut out = train_samples(&train_set, &heldout, spec, &pre, cfg, hyper, seed, exec)?;
    out.checkpoint.meta.spacing_wavelengths = dataset.geometry.spacing_wavelengths(crate::signal::wavelength(&dataset.sim))[0];
    out.train_records = parts.train;
    out.heldout_records = parts.test;
    Ok(out)
}

/// Trains on prepared samples. The checkpoint keeps the parameters of the
/// epoch with the lowest held-out loss (lowest train loss when there is no
/// held-out set).
#[allow(clippy::too_many_arguments)]
pub fn train_samples(
    train_set: &[Sample],
    heldout: &[Sample],
    spec: &NetworkSpec,
    pre: &Preprocess,
    cfg: &TrainConfig,
    hyper: &AdamHyper,
    seed: u64,
    exec: Execution,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    hyper.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut net = Network::<f32>::init(spec.clone(), seed)?;
    let channels = spec.input_rows / 2;
    let mut state = AdamState::new(net.params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Vec<f32>)> = None;
    let mut since_best = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let augmented: Vec<Option<(Vec<f32>, f32)>> = batch
                .iter()
                .map(|&i| augment(&train_set[i], channels, cfg, &mut rng))
                .collect();
            let inputs: Vec<&[f32]> = batch
                .iter()
                .zip(&augmented)
                .map(|(&i, a)| a.as_ref().map_or(train_set[i].input.as_slice(), |(x, _)| x.as_slice()))
                .collect();
            let labels: Vec<f32> = batch
                .iter()
                .zip(&augmented)
                .map(|(&i, a)| a.as_ref().map_or(train_set[i].label, |(_, l)| *l))
                .collect();
            let (loss, grad) = net.loss_and_grad(&inputs, &labels, exec)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            loss_sum += loss * batch.len() as f64;
            adam_step(&mut net.params, &grad, hyper, &mut state)?;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let heldout_loss = if heldout.is_empty() {
            f64::NAN
        } else {
            mean_loss(&net, heldout, exec)?
        };
        if !train_loss.is_finite() || net.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence { epoch });
        }
        log::info!("epoch {epoch}: train {train_loss:.6e} held-out {heldout_loss:.6e}");
        history.push(EpochStats {
            epoch,
            train_loss,
            heldout_loss,
        });
        let score = if heldout.is_empty() { train_loss } else { heldout_loss };
        if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
            best = Some((score, epoch, net.params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience.is_some_and(|p| since_best >= p) {
                break;
            }
        }
    }

    let (best_epoch, params) = match best {
        Some((_, e, p)) => (e, p),
        None => (0, net.params.clone()),
    };
    let last = history.last().copied();
    let checkpoint = Checkpoint {
        spec: spec.clone(),
        preprocess: pre.clone(),
        params: params.iter().map(|&p| p as f64).collect(),
        meta: TrainMeta {
            seed,
            epochs_run: history.len(),
            best_epoch,
            final_train_loss: last.map_or(f64::NAN, |h| h.train_loss),
            final_heldout_loss: last.map_or(f64::NAN, |h| h.heldout_loss),
            train_fraction: cfg.train_fraction,
            split_seed: cfg.shuffle_seed,
            spacing_wavelengths: f64::NAN,
        },
    };
    Ok(TrainOutcome {
        checkpoint,
        history,
        train_records: Vec::new(),
        heldout_records: Vec::new(),
    })
}
