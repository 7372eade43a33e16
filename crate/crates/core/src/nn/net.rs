use std::hash::{DefaultHasher, Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::real::{bounded_tanh, gemm_acc, Real, View};
use super::spec::{Activation, NetworkSpec, ParamLayout, StageGeom};
use crate::error::{Error, Result};
use crate::exec::Execution;

/// Records per gradient partial sum. Fixed so the reduction order never
/// depends on the worker count.
pub const GRAD_CHUNK: usize = 4;

/// A network instance: spec plus a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Network<R> {
    spec: NetworkSpec,
    geom: Vec<StageGeom>,
    dims: Vec<usize>,
    layout: ParamLayout,
    pub params: Vec<R>,
}

struct StageTrace<R> {
    /// Time-padded input, `[rows][len + kt - 1][cin]`.
    xin: Vec<R>,
    /// Post-activation conv output, `[rows][len][cout]`.
    z: Vec<R>,
    /// Pooled output and, per pooled cell, the index of its maximum in `z`.
    pooled: Vec<R>,
    arg: Vec<u32>,
}

/// Forward activations of one record, reused across records.
pub(crate) struct Trace<R> {
    stages: Vec<StageTrace<R>>,
    /// Input of every dense layer, then the network output.
    dense: Vec<Vec<R>>,
}

/// Backward scratch buffers.
struct Scratch<R> {
    dz: Vec<R>,
    dzpad: Vec<R>,
    dx: Vec<R>,
    dvec: Vec<R>,
    dvec_next: Vec<R>,
}

impl<R: Real> Network<R> {
    pub fn new(spec: NetworkSpec, params: Vec<R>) -> Result<Self> {
        let geom = spec.geometry()?;
        let dims = spec.dense_dims()?;
        let layout = spec.layout()?;
        if params.len() != layout.total {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        Ok(Network {
            spec,
            geom,
            dims,
            layout,
            params,
        })
    }

    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        let n = spec.param_count()?;
        Self::new(spec, vec![R::zero(); n])
    }

    /// Fan-in scaled uniform initialisation: `sqrt(6 / fan_in)` bounds for
    /// hidden layers, `sqrt(1 / fan_in)` for the output layer; zero biases.
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = net.layout.layers - 1;
        for b in net.layout.blocks.clone() {
            if b.name.ends_with(".bias") {
                continue;
            }
            let fan_in: usize = b.shape[..b.shape.len() - 1].iter().product();
            let gain = if b.layer == last { 1.0 } else { 6.0 };
            let bound = (gain / fan_in as f64).sqrt();
            for p in &mut net.params[b.range()] {
                *p = R::of(rng.random_range(-bound..bound));
            }
        }
        Ok(net)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn input_size(&self) -> usize {
        self.spec.input_rows * self.spec.input_len
    }

    fn check_input(&self, input: &[R]) -> Result<()> {
        if input.len() != self.input_size() {
            return Err(Error::ShapeMismatch(format!(
                "input has {} values, network expects {}",
                input.len(),
                self.input_size()
            )));
        }
        Ok(())
    }

    fn conv_w(&self, s: usize) -> &[R] {
        &self.params[self.layout.blocks[2 * s].range()]
    }
    fn conv_b(&self, s: usize) -> &[R] {
        &self.params[self.layout.blocks[2 * s + 1].range()]
    }
    fn dense_block(&self, j: usize) -> (&[R], &[R]) {
        let base = 2 * self.geom.len() + 2 * j;
        (
            &self.params[self.layout.blocks[base].range()],
            &self.params[self.layout.blocks[base + 1].range()],
        )
    }

    fn act(&self, layer_is_output: bool) -> Activation {
        if layer_is_output {
            self.spec.output_activation
        } else {
            self.spec.hidden_activation
        }
    }

    pub(crate) fn new_trace(&self) -> Trace<R> {
        let stages = self
            .geom
            .iter()
            .map(|g| StageTrace {
                xin: vec![R::zero(); g.rows * g.padded_len() * g.cin],
                z: vec![R::zero(); g.rows * g.len * g.cout],
                pooled: vec![R::zero(); g.out_rows() * g.out_len() * g.cout],
                arg: vec![0; g.out_rows() * g.out_len() * g.cout],
            })
            .collect();
        let dense = self.dims.iter().map(|&d| vec![R::zero(); d]).collect();
        Trace { stages, dense }
    }

    fn new_scratch(&self) -> Scratch<R> {
        let big = self
            .geom
            .iter()
            .map(|g| g.rows * g.padded_len() * g.cin.max(g.cout))
            .max()
            .unwrap_or(0);
        let wide = self.dims.iter().copied().max().unwrap_or(1);
        Scratch {
            dz: Vec::with_capacity(big),
            dzpad: Vec::with_capacity(big),
            dx: Vec::with_capacity(big),
            dvec: Vec::with_capacity(wide),
            dvec_next: Vec::with_capacity(wide),
        }
    }

    /// Runs one record through the network, filling `trace`.
    pub(crate) fn forward_traced(&self, input: &[R], trace: &mut Trace<R>) -> R {
        for (s, g) in self.geom.iter().enumerate() {
            let (done, rest) = trace.stages.split_at_mut(s);
            let prev: &[R] = if s == 0 { input } else { &done[s - 1].pooled };
            let st = &mut rest[0];
            let lp = g.padded_len();
            st.xin.fill(R::zero());
            for q in 0..g.rows {
                let dst = q * lp * g.cin + g.pad_left * g.cin;
                st.xin[dst..dst + g.len * g.cin].copy_from_slice(&prev[q * g.len * g.cin..(q + 1) * g.len * g.cin]);
            }
            let bias = self.conv_b(s);
            for cell in st.z.chunks_exact_mut(g.cout) {
                cell.copy_from_slice(bias);
            }
            let w = self.conv_w(s);
            let wk = g.kt * g.cin * g.cout;
            for r in 0..g.rows {
                for i in 0..g.kr {
                    let Some(q) = g.input_row(r, i) else { continue };
                    gemm_acc(
                        g.len,
                        g.kt * g.cin,
                        g.cout,
                        View { data: &st.xin[q * lp * g.cin..], rs: g.cin, cs: 1 },
                        View { data: &w[i * wk..(i + 1) * wk], rs: g.cout, cs: 1 },
                        &mut st.z[r * g.len * g.cout..(r + 1) * g.len * g.cout],
                        g.cout,
                    );
                }
            }
            if self.spec.hidden_activation == Activation::Relu {
                st.z.iter_mut().for_each(|v| *v = v.max(R::zero()));
            } else if self.spec.hidden_activation == Activation::Tanh {
                st.z.iter_mut().for_each(|v| *v = v.tanh());
            }
            max_pool(g, &st.z, &mut st.pooled, &mut st.arg);
        }
        let prev: &[R] = trace.stages.last().map_or(input, |st| &st.pooled);

        trace.dense[0].copy_from_slice(prev);
        let n_dense = self.dims.len() - 1;
        for j in 0..n_dense {
            let (w, b) = self.dense_block(j);
            let (left, right) = trace.dense.split_at_mut(j + 1);
            let x = &left[j];
            let y = &mut right[0];
            y.copy_from_slice(b);
            let n_out = self.dims[j + 1];
            for (i, &xi) in x.iter().enumerate() {
                if xi == R::zero() {
                    continue;
                }
                for (yo, &wo) in y.iter_mut().zip(&w[i * n_out..(i + 1) * n_out]) {
                    *yo += xi * wo;
                }
            }
            match self.act(j + 1 == n_dense) {
                Activation::Relu => y.iter_mut().for_each(|v| *v = v.max(R::zero())),
                Activation::Tanh => y.iter_mut().for_each(|v| *v = bounded_tanh(*v)),
                Activation::Identity => {}
            }
        }
        trace.dense[n_dense][0]
    }

    /// Network output for a single record.
    pub fn forward(&self, input: &[R]) -> Result<R> {
        self.check_input(input)?;
        let mut t = self.new_trace();
        Ok(self.forward_traced(input, &mut t))
    }

    /// Outputs for a batch of records, in order.
    pub fn forward_batch(&self, inputs: &[&[R]], exec: Execution) -> Result<Vec<R>> {
        for x in inputs {
            self.check_input(x)?;
        }
        let parts = exec.map_chunks(inputs, GRAD_CHUNK * 4, |chunk| {
            let mut t = self.new_trace();
            chunk.iter().map(|x| self.forward_traced(x, &mut t)).collect::<Vec<_>>()
        });
        Ok(parts.into_iter().flatten().collect())
    }

    /// Kernel `W[i][k][ci][co]` re-indexed as `[i][kt-1-k][co][ci]`, the
    /// operand for propagating gradients to a stage input.
    fn flipped_kernels(&self) -> Vec<Vec<R>> {
        self.geom
            .iter()
            .enumerate()
            .map(|(s, g)| {
                if s == 0 {
                    return Vec::new();
                }
                let w = self.conv_w(s);
                let mut f = vec![R::zero(); w.len()];
                for i in 0..g.kr {
                    for k in 0..g.kt {
                        let kf = g.kt - 1 - k;
                        for ci in 0..g.cin {
                            for co in 0..g.cout {
                                f[((i * g.kt + kf) * g.cout + co) * g.cin + ci] =
                                    w[((i * g.kt + k) * g.cin + ci) * g.cout + co];
                            }
                        }
                    }
                }
                f
            })
            .collect()
    }

    /// Adds `d_output * d(output)/d(params)` for the traced record into `grad`.
    fn backward(&self, trace: &Trace<R>, d_output: R, wflip: &[Vec<R>], scratch: &mut Scratch<R>, grad: &mut [R]) {
        let n_dense = self.dims.len() - 1;
        let Scratch {
            dz,
            dzpad,
            dx,
            dvec,
            dvec_next,
        } = scratch;
        dvec.clear();
        dvec.push(d_output);
        for j in (0..n_dense).rev() {
            let y = &trace.dense[j + 1];
            match self.act(j + 1 == n_dense) {
                Activation::Relu => {
                    for (d, &v) in dvec.iter_mut().zip(y) {
                        if v <= R::zero() {
                            *d = R::zero();
                        }
                    }
                }
                Activation::Tanh => {
                    for (d, &v) in dvec.iter_mut().zip(y) {
                        *d *= R::one() - v * v;
                    }
                }
                Activation::Identity => {}
            }
            let x = &trace.dense[j];
            let n_out = self.dims[j + 1];
            let base = 2 * self.geom.len() + 2 * j;
            let wr = self.layout.blocks[base].range();
            let br = self.layout.blocks[base + 1].range();
            for (g, &d) in grad[br].iter_mut().zip(dvec.iter()) {
                *g += d;
            }
            let gw = &mut grad[wr.clone()];
            for (i, &xi) in x.iter().enumerate() {
                if xi == R::zero() {
                    continue;
                }
                for (g, &d) in gw[i * n_out..(i + 1) * n_out].iter_mut().zip(dvec.iter()) {
                    *g += xi * d;
                }
            }
            if j == 0 && self.geom.is_empty() {
                return;
            }
            let w = &self.params[wr];
            dvec_next.clear();
            dvec_next.extend(
                (0..x.len()).map(|i| w[i * n_out..(i + 1) * n_out].iter().zip(dvec.iter()).map(|(&a, &b)| a * b).sum::<R>()),
            );
            std::mem::swap(dvec, dvec_next);
        }

        // dvec now holds the gradient w.r.t. the last stage's pooled output.
        for s in (0..self.geom.len()).rev() {
            let g = &self.geom[s];
            let st = &trace.stages[s];
            dz.clear();
            dz.resize(st.z.len(), R::zero());
            for (&a, &d) in st.arg.iter().zip(dvec.iter()) {
                dz[a as usize] += d;
            }
            match self.spec.hidden_activation {
                Activation::Relu => {
                    for (d, &v) in dz.iter_mut().zip(&st.z) {
                        if v <= R::zero() {
                            *d = R::zero();
                        }
                    }
                }
                Activation::Tanh => {
                    for (d, &v) in dz.iter_mut().zip(&st.z) {
                        *d *= R::one() - v * v;
                    }
                }
                Activation::Identity => {}
            }
            let wr = self.layout.blocks[2 * s].range();
            let br = self.layout.blocks[2 * s + 1].range();
            {
                let gb = &mut grad[br];
                for cell in dz.chunks_exact(g.cout) {
                    for (b, &d) in gb.iter_mut().zip(cell) {
                        *b += d;
                    }
                }
            }
            let lp = g.padded_len();
            let wk = g.kt * g.cin * g.cout;
            {
                let gw = &mut grad[wr];
                for r in 0..g.rows {
                    for i in 0..g.kr {
                        let Some(q) = g.input_row(r, i) else { continue };
                        gemm_acc(
                            g.kt * g.cin,
                            g.len,
                            g.cout,
                            View { data: &st.xin[q * lp * g.cin..], rs: 1, cs: g.cin },
                            View { data: &dz[r * g.len * g.cout..(r + 1) * g.len * g.cout], rs: g.cout, cs: 1 },
                            &mut gw[i * wk..(i + 1) * wk],
                            g.cout,
                        );
                    }
                }
            }
            if s == 0 {
                break;
            }
            // Correlate the time-padded output gradient with the flipped kernel.
            let left = g.kt - 1 - g.pad_left;
            dzpad.clear();
            dzpad.resize(g.rows * lp * g.cout, R::zero());
            for r in 0..g.rows {
                let dst = r * lp * g.cout + left * g.cout;
                dzpad[dst..dst + g.len * g.cout].copy_from_slice(&dz[r * g.len * g.cout..(r + 1) * g.len * g.cout]);
            }
            dx.clear();
            dx.resize(g.rows * g.len * g.cin, R::zero());
            let wf = &wflip[s];
            for r in 0..g.rows {
                for i in 0..g.kr {
                    let Some(q) = g.input_row(r, i) else { continue };
                    gemm_acc(
                        g.len,
                        g.kt * g.cout,
                        g.cin,
                        View { data: &dzpad[r * lp * g.cout..], rs: g.cout, cs: 1 },
                        View { data: &wf[i * wk..(i + 1) * wk], rs: g.cin, cs: 1 },
                        &mut dx[q * g.len * g.cin..(q + 1) * g.len * g.cin],
                        g.cin,
                    );
                }
            }
            std::mem::swap(dvec, dx);
        }
    }

    /// Mean squared error over the batch and its exact gradient.
    ///
    /// Partial sums are formed over fixed chunks of [`GRAD_CHUNK`] records
    /// and combined in order, so the result is bit-identical for any worker
    /// count.
    pub fn loss_and_grad(&self, inputs: &[&[R]], labels: &[R], exec: Execution) -> Result<(f64, Vec<R>)> {
        if inputs.len() != labels.len() {
            return Err(Error::ShapeMismatch("inputs and labels differ in length".into()));
        }
        if inputs.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for x in inputs {
            self.check_input(x)?;
        }
        let scale = R::of(1.0 / inputs.len() as f64);
        let wflip = self.flipped_kernels();
        let idx: Vec<usize> = (0..inputs.len()).collect();
        let parts = exec.map_chunks(&idx, GRAD_CHUNK, |chunk| {
            let mut trace = self.new_trace();
            let mut scratch = self.new_scratch();
            let mut grad = vec![R::zero(); self.params.len()];
            let mut loss = 0.0;
            for &k in chunk {
                let y = self.forward_traced(inputs[k], &mut trace);
                let e = y - labels[k];
                loss += (e * e).as_f64();
                self.backward(&trace, R::of(2.0) * e * scale, &wflip, &mut scratch, &mut grad);
            }
            (loss, grad)
        });
        let mut it = parts.into_iter();
        let (mut loss, mut grad) = it.next().unwrap();
        for (l, g) in it {
            loss += l;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += *b;
            }
        }
        Ok((loss / inputs.len() as f64, grad))
    }

    /// Hash of every activation-pattern decision (ReLU gates, pooling
    /// winners) for one record. Equal signatures mean the loss is smooth
    /// between the two parameter settings along a short segment.
    pub(crate) fn signature(&self, input: &[R]) -> u64 {
        let mut t = self.new_trace();
        self.forward_traced(input, &mut t);
        let mut h = DefaultHasher::new();
        for st in &t.stages {
            st.arg.hash(&mut h);
            for v in &st.z {
                (*v > R::zero()).hash(&mut h);
            }
        }
        for d in &t.dense[1..] {
            for v in d {
                (*v > R::zero()).hash(&mut h);
            }
        }
        h.finish()
    }

    pub fn convert<S: Real>(&self) -> Network<S> {
        Network {
            spec: self.spec.clone(),
            geom: self.geom.clone(),
            dims: self.dims.clone(),
            layout: self.layout.clone(),
            params: self.params.iter().map(|v| S::of(v.as_f64())).collect(),
        }
    }
}

fn max_pool<R: Real>(g: &StageGeom, z: &[R], out: &mut [R], arg: &mut [u32]) {
    let (orows, olen, c) = (g.out_rows(), g.out_len(), g.cout);
    for orow in 0..orows {
        for ot in 0..olen {
            let o = (orow * olen + ot) * c;
            for ch in 0..c {
                let mut best = usize::MAX;
                let mut val = R::neg_infinity();
                for dr in 0..g.pool_rows {
                    for dt in 0..g.pool_time {
                        let idx = ((orow * g.pool_rows + dr) * g.len + ot * g.pool_time + dt) * c + ch;
                        if best == usize::MAX || z[idx] > val {
                            best = idx;
                            val = z[idx];
                        }
                    }
                }
                out[o + ch] = val;
                arg[o + ch] = best as u32;
            }
        }
    }
}
