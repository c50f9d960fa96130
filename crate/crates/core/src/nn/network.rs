//! Layer-wise forward pass with a recorded tape and reverse-mode backward.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::nn::loss::{softmax_row, LossKind};
use crate::nn::params::{BatchStat, BnBuffers, ParamSet, RunningStats, Section};
use crate::nn::spec::{Layer, NetworkSpec};
use crate::nn::tensor::Tensor;
use crate::par::{self, Execution};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, batch norm normalizes with the batch statistics.
    Train,
    /// Dropout off, batch norm uses the running statistics.
    Eval,
}

/// Settings for one forward/backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pass {
    pub mode: Mode,
    pub dropout_seed: u64,
}

impl Pass {
    pub fn eval() -> Self {
        Self {
            mode: Mode::Eval,
            dropout_seed: 0,
        }
    }

    pub fn train(dropout_seed: u64) -> Self {
        Self {
            mode: Mode::Train,
            dropout_seed,
        }
    }
}

/// Mean loss over a batch and its gradient.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// Batch statistics seen by each batch-norm layer (train mode only).
    pub batch_stats: Vec<BatchStat>,
}

#[derive(Debug, Clone)]
enum Op {
    Linear {
        input: usize,
        output: usize,
        w: usize,
        b: usize,
    },
    Conv {
        ic: usize,
        oc: usize,
        k: usize,
        pad: usize,
        stride: usize,
        ih: usize,
        iw: usize,
        oh: usize,
        ow: usize,
        w: usize,
        b: usize,
    },
    Pool {
        c: usize,
        k: usize,
        pad: usize,
        stride: usize,
        ih: usize,
        iw: usize,
        oh: usize,
        ow: usize,
    },
    Relu,
    Bn {
        c: usize,
        spatial: usize,
        eps: f64,
        gamma: usize,
        beta: usize,
        slot: usize,
    },
    Dropout {
        p: f64,
    },
    Softmax,
}

enum Cache {
    None,
    Input(Vec<f64>),
    Cols(Vec<f64>),
    Argmax(Vec<usize>),
    Output(Vec<f64>),
    Bn {
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        through_stats: bool,
    },
    Mask(Vec<f64>),
}

/// Recorded forward pass.
pub(crate) struct Tape {
    caches: Vec<Cache>,
    n: usize,
    pub(crate) logits: Vec<f64>,
    pub(crate) probs: Vec<f64>,
    pub(crate) batch_stats: Vec<BatchStat>,
}

enum BnSource<'a> {
    Batch,
    Frozen(&'a [BatchStat]),
    Running(&'a RunningStats),
}

/// A validated network ready to evaluate.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    ops: Vec<Op>,
    input_len: usize,
    classes: usize,
    total_dim: usize,
    template: Vec<(String, Vec<usize>, Section, ParamInit)>,
    bn_layers: Vec<(usize, Section, f64)>,
}

#[derive(Debug, Clone, Copy)]
enum ParamInit {
    HeUniform { fan_in: usize },
    BiasUniform { fan_in: usize },
    Const(f64),
}

impl Network {
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        let shapes = spec.infer_shapes()?;
        let mut ops = Vec::with_capacity(spec.layers.len());
        let mut template = Vec::new();
        let mut bn_layers = Vec::new();
        let mut offset = 0usize;
        let mut prev = spec.input_shape.clone();
        let mut push = |template: &mut Vec<_>, name: String, shape: Vec<usize>, s, init| {
            let start = offset;
            offset += shape.iter().product::<usize>();
            template.push((name, shape, s, init));
            start
        };
        for (i, layer) in spec.layers.iter().enumerate() {
            let section = if i < spec.latter_from {
                Section::Former
            } else {
                Section::Latter
            };
            let out = &shapes[i];
            let op = match *layer {
                Layer::Linear { input, output } => {
                    let w = push(
                        &mut template,
                        format!("layers.{i}.weight"),
                        vec![output, input],
                        section,
                        ParamInit::HeUniform { fan_in: input },
                    );
                    let b = push(
                        &mut template,
                        format!("layers.{i}.bias"),
                        vec![output],
                        section,
                        ParamInit::BiasUniform { fan_in: input },
                    );
                    Op::Linear {
                        input,
                        output,
                        w,
                        b,
                    }
                }
                Layer::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    padding,
                    stride,
                } => {
                    let fan_in = in_channels * kernel * kernel;
                    let w = push(
                        &mut template,
                        format!("layers.{i}.weight"),
                        vec![out_channels, in_channels, kernel, kernel],
                        section,
                        ParamInit::HeUniform { fan_in },
                    );
                    let b = push(
                        &mut template,
                        format!("layers.{i}.bias"),
                        vec![out_channels],
                        section,
                        ParamInit::BiasUniform { fan_in },
                    );
                    Op::Conv {
                        ic: in_channels,
                        oc: out_channels,
                        k: kernel,
                        pad: padding,
                        stride,
                        ih: prev[1],
                        iw: prev[2],
                        oh: out[1],
                        ow: out[2],
                        w,
                        b,
                    }
                }
                Layer::MaxPool2d {
                    kernel,
                    padding,
                    stride,
                } => Op::Pool {
                    c: prev[0],
                    k: kernel,
                    pad: padding,
                    stride,
                    ih: prev[1],
                    iw: prev[2],
                    oh: out[1],
                    ow: out[2],
                },
                Layer::Relu => Op::Relu,
                Layer::BatchNorm {
                    features,
                    epsilon,
                    momentum,
                } => {
                    let gamma = push(
                        &mut template,
                        format!("layers.{i}.weight"),
                        vec![features],
                        section,
                        ParamInit::Const(1.0),
                    );
                    let beta = push(
                        &mut template,
                        format!("layers.{i}.bias"),
                        vec![features],
                        section,
                        ParamInit::Const(0.0),
                    );
                    let slot = bn_layers.len();
                    bn_layers.push((features, section, momentum));
                    Op::Bn {
                        c: features,
                        spatial: prev[1..].iter().product(),
                        eps: epsilon,
                        gamma,
                        beta,
                        slot,
                    }
                }
                Layer::Dropout { p } => Op::Dropout { p },
                Layer::Softmax => Op::Softmax,
            };
            ops.push(op);
            prev = out.clone();
        }
        Ok(Self {
            input_len: spec.input_shape.iter().product(),
            classes: prev[0],
            total_dim: offset,
            spec,
            ops,
            template,
            bn_layers,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn has_batch_norm(&self) -> bool {
        !self.bn_layers.is_empty()
    }

    /// Momentum of each batch-norm layer, in layer order.
    pub fn bn_momenta(&self) -> Vec<f64> {
        self.bn_layers.iter().map(|l| l.2).collect()
    }

    /// Uniform He-style fan-in initialization.
    ///
    /// Weights are drawn from `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, biases
    /// from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`; batch-norm scale 1, shift 0.
    pub fn init_params(&self, seed: u64) -> ParamSet {
        let items = self
            .template
            .iter()
            .enumerate()
            .map(|(i, (name, shape, section, init))| {
                let n: usize = shape.iter().product();
                let mut rng = stream_rng(seed, Stream::Init, i as u64);
                let data: Vec<f64> = match *init {
                    ParamInit::HeUniform { fan_in } => {
                        let a = (6.0 / fan_in as f64).sqrt();
                        let d = Uniform::new(-a, a).expect("finite bound");
                        (0..n).map(|_| d.sample(&mut rng)).collect()
                    }
                    ParamInit::BiasUniform { fan_in } => {
                        let a = 1.0 / (fan_in as f64).sqrt();
                        let d = Uniform::new(-a, a).expect("finite bound");
                        (0..n).map(|_| d.sample(&mut rng)).collect()
                    }
                    ParamInit::Const(c) => vec![c; n],
                };
                (
                    name.clone(),
                    Tensor::new(shape.clone(), data).expect("template shape"),
                    *section,
                )
            })
            .collect();
        ParamSet::from_tensors(items)
    }

    /// Running statistics at their initial values (mean 0, variance 1).
    pub fn init_running_stats(&self) -> RunningStats {
        RunningStats {
            layers: self
                .bn_layers
                .iter()
                .map(|&(c, section, _)| BnBuffers {
                    mean: vec![0.0; c],
                    var: vec![1.0; c],
                    section,
                })
                .collect(),
        }
    }

    fn check_inputs(&self, params: &ParamSet, x: &Tensor) -> Result<()> {
        if params.total_dim() != self.total_dim {
            return Err(Error::dim(format!(
                "parameters have {} values, network needs {}",
                params.total_dim(),
                self.total_dim
            )));
        }
        if x.shape().len() < 2 || x.row_len() != self.input_len {
            return Err(Error::dim(format!(
                "batch shape {:?} does not match input {:?}",
                x.shape(),
                self.spec.input_shape
            )));
        }
        if !x.is_finite() {
            return Err(Error::Input("non-finite value in batch".into()));
        }
        Ok(())
    }

    fn check_labels(&self, x: &Tensor, labels: &[usize]) -> Result<()> {
        if labels.is_empty() {
            return Err(Error::arg("empty batch"));
        }
        if labels.len() != x.rows() {
            return Err(Error::dim(format!(
                "{} labels for {} rows",
                labels.len(),
                x.rows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.classes) {
            return Err(Error::arg(format!("label {bad} outside [0, {})", self.classes)));
        }
        Ok(())
    }

    /// Class probabilities, one row per sample.
    pub fn forward(
        &self,
        params: &ParamSet,
        stats: &RunningStats,
        x: &Tensor,
        pass: Pass,
    ) -> Result<Tensor> {
        self.check_inputs(params, x)?;
        let tape = self.run(params.values(), stats, x, pass, None, false);
        Tensor::new(vec![x.rows(), self.classes], tape.probs)
    }

    /// Mean loss over the batch and its gradient with respect to every
    /// parameter coordinate.
    pub fn loss_and_grad(
        &self,
        params: &ParamSet,
        stats: &RunningStats,
        x: &Tensor,
        labels: &[usize],
        loss: LossKind,
        pass: Pass,
    ) -> Result<LossGrad> {
        self.check_inputs(params, x)?;
        self.check_labels(x, labels)?;
        Ok(self.loss_grad_unchecked(params.values(), stats, x, labels, loss, pass, None))
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn loss_grad_unchecked(
        &self,
        params: &[f64],
        stats: &RunningStats,
        x: &Tensor,
        labels: &[usize],
        loss: LossKind,
        pass: Pass,
        frozen: Option<&[BatchStat]>,
    ) -> LossGrad {
        let tape = self.run(params, stats, x, pass, frozen, true);
        let (value, dlogits) = self.loss_seed(&tape, labels, loss);
        let mut grad = vec![0.0; self.total_dim];
        self.backward(params, &tape, dlogits, &mut grad);
        LossGrad {
            loss: value,
            grad,
            batch_stats: tape.batch_stats,
        }
    }

    /// Mean loss plus the on/off pattern of every ReLU and the winning
    /// index of every max-pool window, used to detect kink crossings.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn loss_and_pattern(
        &self,
        params: &[f64],
        stats: &RunningStats,
        x: &Tensor,
        labels: &[usize],
        loss: LossKind,
        pass: Pass,
        frozen: Option<&[BatchStat]>,
    ) -> (f64, Vec<usize>) {
        let tape = self.run(params, stats, x, pass, frozen, true);
        let mut pattern = Vec::new();
        for cache in &tape.caches {
            match cache {
                Cache::Output(out) => pattern.extend(out.iter().map(|&v| usize::from(v > 0.0))),
                Cache::Argmax(idx) => pattern.extend_from_slice(idx),
                _ => {}
            }
        }
        (self.loss_seed(&tape, labels, loss).0, pattern)
    }

    fn loss_seed(&self, tape: &Tape, labels: &[usize], loss: LossKind) -> (f64, Vec<f64>) {
        let c = self.classes;
        let n = tape.n;
        let scale = 1.0 / n as f64;
        let mut total = 0.0;
        let mut d = vec![0.0; n * c];
        for (i, &y) in labels.iter().enumerate() {
            let z = &tape.logits[i * c..(i + 1) * c];
            let p = &tape.probs[i * c..(i + 1) * c];
            total += loss.value(z, p, y);
            loss.logit_grad(p, y, scale, &mut d[i * c..(i + 1) * c]);
        }
        (total * scale, d)
    }

    /// Gradient of each sample's own loss term.
    ///
    /// In eval mode samples are independent and each one is run on its own.
    /// In train mode the batch is run once and every row's loss term is
    /// differentiated through the shared batch statistics and dropout masks,
    /// so the element-wise mean equals the batch gradient.
    #[allow(clippy::too_many_arguments)]
    pub fn per_sample_grads(
        &self,
        params: &ParamSet,
        stats: &RunningStats,
        x: &Tensor,
        labels: &[usize],
        loss: LossKind,
        pass: Pass,
        exec: Execution,
    ) -> Result<Vec<Vec<f64>>> {
        self.check_inputs(params, x)?;
        self.check_labels(x, labels)?;
        let p = params.values();
        let n = x.rows();
        match pass.mode {
            Mode::Eval => Ok(par::map_range(exec, n, |i| {
                let xi = x.select_rows(&[i]).expect("row in range");
                self.loss_grad_unchecked(p, stats, &xi, &labels[i..=i], loss, pass, None)
                    .grad
            })),
            Mode::Train => {
                let tape = self.run(p, stats, x, pass, None, true);
                let c = self.classes;
                Ok(par::map_range(exec, n, |i| {
                    let mut d = vec![0.0; n * c];
                    let row = i * c..(i + 1) * c;
                    loss.logit_grad(&tape.probs[row.clone()], labels[i], 1.0, &mut d[row]);
                    let mut g = vec![0.0; self.total_dim];
                    self.backward(p, &tape, d, &mut g);
                    g
                }))
            }
        }
    }

    /// Mean loss and accuracy against `labels`, evaluated in chunks.
    pub fn evaluate(
        &self,
        params: &ParamSet,
        stats: &RunningStats,
        x: &Tensor,
        labels: &[usize],
        loss: LossKind,
        chunk: usize,
    ) -> Result<(f64, f64)> {
        self.check_inputs(params, x)?;
        self.check_labels(x, labels)?;
        let (probs, logits) = self.eval_chunks(params, stats, x, chunk);
        let c = self.classes;
        let mut total = 0.0;
        let mut correct = 0usize;
        for (i, &y) in labels.iter().enumerate() {
            let z = &logits[i * c..(i + 1) * c];
            let p = &probs[i * c..(i + 1) * c];
            total += loss.value(z, p, y);
            if argmax(p) == y {
                correct += 1;
            }
        }
        let n = labels.len() as f64;
        Ok((total / n, correct as f64 / n))
    }

    /// Arg-max class per row in eval mode.
    pub fn predict(
        &self,
        params: &ParamSet,
        stats: &RunningStats,
        x: &Tensor,
        chunk: usize,
    ) -> Result<Vec<usize>> {
        self.check_inputs(params, x)?;
        let (probs, _) = self.eval_chunks(params, stats, x, chunk);
        Ok(probs.chunks(self.classes).map(argmax).collect())
    }

    fn eval_chunks(
        &self,
        params: &ParamSet,
        stats: &RunningStats,
        x: &Tensor,
        chunk: usize,
    ) -> (Vec<f64>, Vec<f64>) {
        let chunk = chunk.max(1);
        let mut probs = Vec::with_capacity(x.rows() * self.classes);
        let mut logits = Vec::with_capacity(x.rows() * self.classes);
        let w = x.row_len();
        let mut start = 0;
        while start < x.rows() {
            let end = (start + chunk).min(x.rows());
            let mut shape = x.shape().to_vec();
            shape[0] = end - start;
            let part = Tensor::new(shape, x.data()[start * w..end * w].to_vec())
                .expect("chunk shape");
            let tape = self.run(params.values(), stats, &part, Pass::eval(), None, false);
            probs.extend_from_slice(&tape.probs);
            logits.extend_from_slice(&tape.logits);
            start = end;
        }
        (probs, logits)
    }

    fn run(
        &self,
        params: &[f64],
        stats: &RunningStats,
        x: &Tensor,
        pass: Pass,
        frozen: Option<&[BatchStat]>,
        record: bool,
    ) -> Tape {
        let n = x.rows();
        let bn_source = match (pass.mode, frozen) {
            (_, Some(f)) => BnSource::Frozen(f),
            (Mode::Train, None) => BnSource::Batch,
            (Mode::Eval, None) => BnSource::Running(stats),
        };
        let mut caches = Vec::with_capacity(self.ops.len());
        let mut batch_stats = Vec::new();
        let mut a = x.data().to_vec();
        let mut logits = Vec::new();
        let mut probs = Vec::new();
        for (li, op) in self.ops.iter().enumerate() {
            let cache = match *op {
                Op::Linear {
                    input,
                    output,
                    w,
                    b,
                } => {
                    let wt = &params[w..w + input * output];
                    let bias = &params[b..b + output];
                    let mut out = vec![0.0; n * output];
                    for s in 0..n {
                        let xs = &a[s * input..(s + 1) * input];
                        let ys = &mut out[s * output..(s + 1) * output];
                        for o in 0..output {
                            ys[o] = bias[o] + dot(xs, &wt[o * input..(o + 1) * input]);
                        }
                    }
                    let prev = std::mem::replace(&mut a, out);
                    if record {
                        Cache::Input(prev)
                    } else {
                        Cache::None
                    }
                }
                Op::Conv {
                    ic,
                    oc,
                    k,
                    pad,
                    stride,
                    ih,
                    iw,
                    oh,
                    ow,
                    w,
                    b,
                } => {
                    let rows = ic * k * k;
                    let p = oh * ow;
                    let wt = &params[w..w + oc * rows];
                    let bias = &params[b..b + oc];
                    let mut out = vec![0.0; n * oc * p];
                    let mut all_cols = if record {
                        Vec::with_capacity(n * rows * p)
                    } else {
                        Vec::new()
                    };
                    let mut cols = vec![0.0; rows * p];
                    for s in 0..n {
                        let xs = &a[s * ic * ih * iw..(s + 1) * ic * ih * iw];
                        im2col(xs, ic, ih, iw, k, pad, stride, oh, ow, &mut cols);
                        let ys = &mut out[s * oc * p..(s + 1) * oc * p];
                        for o in 0..oc {
                            let yo = &mut ys[o * p..(o + 1) * p];
                            yo.fill(bias[o]);
                            for r in 0..rows {
                                axpy(yo, wt[o * rows + r], &cols[r * p..(r + 1) * p]);
                            }
                        }
                        if record {
                            all_cols.extend_from_slice(&cols);
                        }
                    }
                    a = out;
                    if record {
                        Cache::Cols(all_cols)
                    } else {
                        Cache::None
                    }
                }
                Op::Pool {
                    c,
                    k,
                    pad,
                    stride,
                    ih,
                    iw,
                    oh,
                    ow,
                } => {
                    let mut out = vec![0.0; n * c * oh * ow];
                    let mut arg = vec![usize::MAX; out.len()];
                    for s in 0..n {
                        for ch in 0..c {
                            let base = (s * c + ch) * ih * iw;
                            for y in 0..oh {
                                for xo in 0..ow {
                                    let mut best = f64::NEG_INFINITY;
                                    let mut best_i = usize::MAX;
                                    for ky in 0..k {
                                        let yy = (y * stride + ky) as isize - pad as isize;
                                        if yy < 0 || yy >= ih as isize {
                                            continue;
                                        }
                                        for kx in 0..k {
                                            let xx = (xo * stride + kx) as isize - pad as isize;
                                            if xx < 0 || xx >= iw as isize {
                                                continue;
                                            }
                                            let idx = base + yy as usize * iw + xx as usize;
                                            if a[idx] > best || best_i == usize::MAX {
                                                best = a[idx];
                                                best_i = idx;
                                            }
                                        }
                                    }
                                    let o = ((s * c + ch) * oh + y) * ow + xo;
                                    out[o] = best;
                                    arg[o] = best_i;
                                }
                            }
                        }
                    }
                    a = out;
                    if record {
                        Cache::Argmax(arg)
                    } else {
                        Cache::None
                    }
                }
                Op::Relu => {
                    for v in a.iter_mut() {
                        if *v < 0.0 {
                            *v = 0.0;
                        }
                    }
                    if record {
                        Cache::Output(a.clone())
                    } else {
                        Cache::None
                    }
                }
                Op::Bn {
                    c,
                    spatial,
                    eps,
                    gamma,
                    beta,
                    slot,
                } => {
                    let m = n * spatial;
                    let (mean, var, through_stats) = match bn_source {
                        BnSource::Batch => {
                            let mut mean = vec![0.0; c];
                            let mut var = vec![0.0; c];
                            for ch in 0..c {
                                let mut sum = 0.0;
                                for s in 0..n {
                                    let off = (s * c + ch) * spatial;
                                    sum += a[off..off + spatial].iter().sum::<f64>();
                                }
                                let mu = sum / m as f64;
                                let mut sq = 0.0;
                                for s in 0..n {
                                    let off = (s * c + ch) * spatial;
                                    sq += a[off..off + spatial]
                                        .iter()
                                        .map(|v| (v - mu) * (v - mu))
                                        .sum::<f64>();
                                }
                                mean[ch] = mu;
                                var[ch] = sq / m as f64;
                            }
                            batch_stats.push(BatchStat {
                                mean: mean.clone(),
                                var: var.clone(),
                                count: m,
                            });
                            (mean, var, true)
                        }
                        BnSource::Frozen(f) => (f[slot].mean.clone(), f[slot].var.clone(), false),
                        BnSource::Running(r) => {
                            (r.layers[slot].mean.clone(), r.layers[slot].var.clone(), false)
                        }
                    };
                    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
                    let g = &params[gamma..gamma + c];
                    let bt = &params[beta..beta + c];
                    let mut xhat = if record { vec![0.0; a.len()] } else { Vec::new() };
                    for s in 0..n {
                        for ch in 0..c {
                            let off = (s * c + ch) * spatial;
                            for j in off..off + spatial {
                                let h = (a[j] - mean[ch]) * inv_std[ch];
                                if record {
                                    xhat[j] = h;
                                }
                                a[j] = g[ch] * h + bt[ch];
                            }
                        }
                    }
                    if record {
                        Cache::Bn {
                            xhat,
                            inv_std,
                            through_stats,
                        }
                    } else {
                        Cache::None
                    }
                }
                Op::Dropout { p } => {
                    if pass.mode == Mode::Train && p > 0.0 {
                        let mut rng = stream_rng(pass.dropout_seed, Stream::Dropout, li as u64);
                        let keep = 1.0 / (1.0 - p);
                        let mask: Vec<f64> = (0..a.len())
                            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                            .collect();
                        for (v, m) in a.iter_mut().zip(&mask) {
                            *v *= m;
                        }
                        if record {
                            Cache::Mask(mask)
                        } else {
                            Cache::None
                        }
                    } else {
                        Cache::None
                    }
                }
                Op::Softmax => {
                    let c = self.classes;
                    probs = vec![0.0; a.len()];
                    for s in 0..n {
                        softmax_row(&a[s * c..(s + 1) * c], &mut probs[s * c..(s + 1) * c]);
                    }
                    logits = std::mem::take(&mut a);
                    Cache::None
                }
            };
            caches.push(cache);
        }
        Tape {
            caches,
            n,
            logits,
            probs,
            batch_stats,
        }
    }

    /// Accumulates parameter gradients given `dL/dlogits`.
    pub(crate) fn backward(&self, params: &[f64], tape: &Tape, dlogits: Vec<f64>, grad: &mut [f64]) {
        let n = tape.n;
        let mut d = dlogits;
        // The last op is softmax; the loss seed is already w.r.t. its input.
        for li in (0..self.ops.len() - 1).rev() {
            let need_dx = li > 0;
            match (&self.ops[li], &tape.caches[li]) {
                (
                    &Op::Linear {
                        input,
                        output,
                        w,
                        b,
                    },
                    Cache::Input(x),
                ) => {
                    let wt = &params[w..w + input * output];
                    let mut dx = if need_dx { vec![0.0; n * input] } else { Vec::new() };
                    for s in 0..n {
                        let xs = &x[s * input..(s + 1) * input];
                        for o in 0..output {
                            let g = d[s * output + o];
                            if g == 0.0 {
                                continue;
                            }
                            axpy(&mut grad[w + o * input..w + (o + 1) * input], g, xs);
                            grad[b + o] += g;
                            if need_dx {
                                axpy(
                                    &mut dx[s * input..(s + 1) * input],
                                    g,
                                    &wt[o * input..(o + 1) * input],
                                );
                            }
                        }
                    }
                    d = dx;
                }
                (
                    &Op::Conv {
                        ic,
                        oc,
                        k,
                        pad,
                        stride,
                        ih,
                        iw,
                        oh,
                        ow,
                        w,
                        b,
                    },
                    Cache::Cols(all_cols),
                ) => {
                    let rows = ic * k * k;
                    let p = oh * ow;
                    let wt = &params[w..w + oc * rows];
                    let mut dx = if need_dx { vec![0.0; n * ic * ih * iw] } else { Vec::new() };
                    let mut dcols = vec![0.0; rows * p];
                    for s in 0..n {
                        let cols = &all_cols[s * rows * p..(s + 1) * rows * p];
                        let ds = &d[s * oc * p..(s + 1) * oc * p];
                        if need_dx {
                            dcols.fill(0.0);
                        }
                        for o in 0..oc {
                            let dso = &ds[o * p..(o + 1) * p];
                            grad[b + o] += dso.iter().sum::<f64>();
                            for r in 0..rows {
                                grad[w + o * rows + r] += dot(dso, &cols[r * p..(r + 1) * p]);
                                if need_dx {
                                    axpy(&mut dcols[r * p..(r + 1) * p], wt[o * rows + r], dso);
                                }
                            }
                        }
                        if need_dx {
                            col2im(
                                &dcols,
                                ic,
                                ih,
                                iw,
                                k,
                                pad,
                                stride,
                                oh,
                                ow,
                                &mut dx[s * ic * ih * iw..(s + 1) * ic * ih * iw],
                            );
                        }
                    }
                    d = dx;
                }
                (&Op::Pool { c, ih, iw, .. }, Cache::Argmax(arg)) => {
                    let mut dx = vec![0.0; n * c * ih * iw];
                    for (o, &i) in arg.iter().enumerate() {
                        if i != usize::MAX {
                            dx[i] += d[o];
                        }
                    }
                    d = dx;
                }
                (Op::Relu, Cache::Output(out)) => {
                    for (g, o) in d.iter_mut().zip(out) {
                        if *o <= 0.0 {
                            *g = 0.0;
                        }
                    }
                }
                (
                    &Op::Bn {
                        c,
                        spatial,
                        gamma,
                        beta,
                        ..
                    },
                    Cache::Bn {
                        xhat,
                        inv_std,
                        through_stats,
                    },
                ) => {
                    let g = &params[gamma..gamma + c];
                    let m = (n * spatial) as f64;
                    for ch in 0..c {
                        let mut sum_d = 0.0;
                        let mut sum_dx = 0.0;
                        for s in 0..n {
                            let off = (s * c + ch) * spatial;
                            for j in off..off + spatial {
                                sum_d += d[j];
                                sum_dx += d[j] * xhat[j];
                            }
                        }
                        grad[gamma + ch] += sum_dx;
                        grad[beta + ch] += sum_d;
                        if !need_dx {
                            continue;
                        }
                        let gi = g[ch] * inv_std[ch];
                        for s in 0..n {
                            let off = (s * c + ch) * spatial;
                            for j in off..off + spatial {
                                d[j] = if *through_stats {
                                    gi * (d[j] - sum_d / m - xhat[j] * sum_dx / m)
                                } else {
                                    gi * d[j]
                                };
                            }
                        }
                    }
                }
                (Op::Dropout { .. }, Cache::Mask(mask)) => {
                    for (g, m) in d.iter_mut().zip(mask) {
                        *g *= m;
                    }
                }
                (Op::Dropout { .. }, Cache::None) => {}
                _ => unreachable!("tape recorded without caches"),
            }
        }
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f64],
    ic: usize,
    ih: usize,
    iw: usize,
    k: usize,
    pad: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    cols: &mut [f64],
) {
    let p = oh * ow;
    for c in 0..ic {
        for ky in 0..k {
            for kx in 0..k {
                let r = (c * k + ky) * k + kx;
                let row = &mut cols[r * p..(r + 1) * p];
                for y in 0..oh {
                    let yy = (y * stride + ky) as isize - pad as isize;
                    for xo in 0..ow {
                        let xx = (xo * stride + kx) as isize - pad as isize;
                        row[y * ow + xo] =
                            if yy < 0 || yy >= ih as isize || xx < 0 || xx >= iw as isize {
                                0.0
                            } else {
                                x[(c * ih + yy as usize) * iw + xx as usize]
                            };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &[f64],
    ic: usize,
    ih: usize,
    iw: usize,
    k: usize,
    pad: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    dx: &mut [f64],
) {
    let p = oh * ow;
    for c in 0..ic {
        for ky in 0..k {
            for kx in 0..k {
                let r = (c * k + ky) * k + kx;
                let row = &cols[r * p..(r + 1) * p];
                for y in 0..oh {
                    let yy = (y * stride + ky) as isize - pad as isize;
                    if yy < 0 || yy >= ih as isize {
                        continue;
                    }
                    for xo in 0..ow {
                        let xx = (xo * stride + kx) as isize - pad as isize;
                        if xx < 0 || xx >= iw as isize {
                            continue;
                        }
                        dx[(c * ih + yy as usize) * iw + xx as usize] += row[y * ow + xo];
                    }
                }
            }
        }
    }
}
