use serde::{Deserialize, Serialize};

use super::kernels::{self, ConvShape, BN_EPS, BN_MOMENTUM};
use super::spec::{InitScheme, Layer, Layout, ModelSpec};
use super::ModelError;
use crate::data::Dataset;
use crate::numerics::{init, RngStream, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Batch statistics in BatchNorm; running statistics are updated.
    Train,
    /// Frozen running statistics; a pure function of the state.
    Eval,
}

/// Running mean / variance of one BatchNorm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BnStats<F: Scalar> {
    pub mean: Vec<F>,
    pub var: Vec<F>,
}

/// Architecture plus flat parameter vector, gradient buffer and BatchNorm
/// running statistics.
#[derive(Clone, Debug)]
pub struct ModelState<F: Scalar> {
    spec: ModelSpec,
    layout: Layout,
    pub theta: Tensor<F>,
    pub grad: Tensor<F>,
    pub bn: Vec<BnStats<F>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    #[serde(with = "crate::numerics::float_serde")]
    pub mean_loss: f64,
    pub correct: usize,
    pub count: usize,
}

struct Tape<F: Scalar> {
    batch: usize,
    mode: Mode,
    /// `acts[l]` is the input of layer `l`; the last entry holds the logits.
    acts: Vec<Vec<F>>,
    argmax: Vec<Vec<u32>>,
    invstd: Vec<Vec<F>>,
}

/// Batch statistics observed by each BatchNorm slot during a train-mode pass.
type BatchStats = Vec<(Vec<f64>, Vec<f64>, usize)>;

const EVAL_CHUNK: usize = 500;

impl<F: Scalar> ModelState<F> {
    /// Fresh model: Kaiming-uniform linear weights, Xavier-uniform conv
    /// weights, zero biases, BatchNorm statistics at (0, 1).
    pub fn build(spec: &ModelSpec, rng: &mut RngStream) -> Result<Self, ModelError> {
        let layout = spec.layout()?;
        let mut theta = vec![F::zero(); layout.param_count];
        for p in &layout.params {
            let dst = &mut theta[p.range.clone()];
            let n = dst.len();
            let values: Vec<F> = match p.init {
                InitScheme::KaimingUniform { fan_in } => init::kaiming_uniform(rng, fan_in, &[n])?.into_vec(),
                InitScheme::XavierUniform { fan_in, fan_out } => {
                    init::xavier_uniform(rng, fan_in, fan_out, &[n])?.into_vec()
                }
                InitScheme::Zero => vec![F::zero(); n],
            };
            dst.copy_from_slice(&values);
        }
        Self::from_parts(spec.clone(), theta, None)
    }

    /// Assemble a state from an explicit parameter vector.
    pub fn from_parts(spec: ModelSpec, theta: Vec<F>, bn: Option<Vec<BnStats<F>>>) -> Result<Self, ModelError> {
        let layout = spec.layout()?;
        if theta.len() != layout.param_count {
            return Err(ModelError::ParamLength { expected: layout.param_count, got: theta.len() });
        }
        let bn = match bn {
            Some(bn) => {
                let ok = bn.len() == layout.bn_channels.len()
                    && bn.iter().zip(&layout.bn_channels).all(|(s, &c)| s.mean.len() == c && s.var.len() == c);
                if !ok {
                    return Err(ModelError::InvalidSpec("batch-norm statistics do not match layout".into()));
                }
                bn
            }
            None => layout
                .bn_channels
                .iter()
                .map(|&c| BnStats { mean: vec![F::zero(); c], var: vec![F::one(); c] })
                .collect(),
        };
        let n = theta.len();
        Ok(Self { spec, layout, theta: Tensor::from_vec(theta), grad: Tensor::zeros(&[n]), bn })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.layout.param_count
    }

    pub fn theta(&self) -> &[F] {
        self.theta.data()
    }

    pub fn theta_mut(&mut self) -> &mut [F] {
        self.theta.data_mut()
    }

    /// Same architecture and statistics with a different element type.
    pub fn cast<G: Scalar>(&self) -> ModelState<G> {
        let conv = |v: &[F]| v.iter().map(|x| G::from_f64(x.as_f64())).collect::<Vec<G>>();
        ModelState {
            spec: self.spec.clone(),
            layout: self.layout.clone(),
            theta: self.theta.cast(),
            grad: self.grad.cast(),
            bn: self.bn.iter().map(|s| BnStats { mean: conv(&s.mean), var: conv(&s.var) }).collect(),
        }
    }

    fn check_input(&self, x: &[F], labels: Option<&[u8]>) -> Result<usize, ModelError> {
        let per = self.spec.input_len();
        if x.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        if x.len() % per != 0 {
            return Err(ModelError::InputShape { per_sample: per, got: x.len() });
        }
        let batch = x.len() / per;
        if let Some(labels) = labels {
            if labels.len() != batch {
                return Err(ModelError::LabelCount { batch, labels: labels.len() });
            }
            if let Some(&bad) = labels.iter().find(|&&l| l as usize >= self.spec.classes) {
                return Err(ModelError::LabelRange { label: bad, classes: self.spec.classes });
            }
        }
        Ok(batch)
    }

    fn run_forward(&self, x: &[F], batch: usize, mode: Mode) -> (Tape<F>, BatchStats) {
        let theta = self.theta.data();
        let nl = self.layout.layers.len();
        let mut acts = Vec::with_capacity(nl + 1);
        acts.push(x.to_vec());
        let mut argmax = vec![Vec::new(); nl];
        let mut invstd = vec![Vec::new(); nl];
        let mut stats = Vec::new();
        for (l, layer) in self.layout.layers.iter().enumerate() {
            let input = &acts[l];
            let mut out = vec![F::zero(); batch * layer.out_len()];
            match layer {
                Layer::Linear { inp, out: o, weight, bias } => kernels::linear_forward(
                    input,
                    batch,
                    *inp,
                    *o,
                    &theta[weight.clone()],
                    Some(&theta[bias.clone()]),
                    F::zero(),
                    &mut out,
                ),
                Layer::Conv { cin, cout, h, w, weight, bias } => kernels::conv_forward(
                    &ConvShape { cin: *cin, cout: *cout, h: *h, w: *w },
                    input,
                    batch,
                    &theta[weight.clone()],
                    Some(&theta[bias.clone()]),
                    F::zero(),
                    &mut out,
                ),
                Layer::BatchNorm { channels, plane, slot } => {
                    let mut inv = vec![F::zero(); *channels];
                    match mode {
                        Mode::Train => {
                            let (m, v) =
                                kernels::batch_norm_train(input, batch, *channels, *plane, &mut out, &mut inv);
                            stats.push((m, v, batch * plane));
                        }
                        Mode::Eval => {
                            let s = &self.bn[*slot];
                            for (i, &var) in inv.iter_mut().zip(&s.var) {
                                *i = F::from_f64(1.0 / (var.as_f64() + BN_EPS).sqrt());
                            }
                            kernels::channel_affine(input, batch, *channels, *plane, Some(&s.mean), &inv, &mut out);
                        }
                    }
                    invstd[l] = inv;
                }
                Layer::Relu { .. } => {
                    for (o, &v) in out.iter_mut().zip(input) {
                        *o = if v > F::zero() { v } else { F::zero() };
                    }
                }
                Layer::MaxPool { channels, h, w } => {
                    let mut idx = vec![0u32; out.len()];
                    kernels::max_pool_forward(input, batch, *channels, *h, *w, &mut out, &mut idx);
                    argmax[l] = idx;
                }
            }
            acts.push(out);
        }
        (Tape { batch, mode, acts, argmax, invstd }, stats)
    }

    fn apply_batch_stats(&mut self, stats: BatchStats) {
        for (slot, (means, vars, n)) in stats.into_iter().enumerate() {
            let s = &mut self.bn[slot];
            let unbias = if n > 1 { n as f64 / (n as f64 - 1.0) } else { 1.0 };
            for c in 0..means.len() {
                s.mean[c] = F::from_f64((1.0 - BN_MOMENTUM) * s.mean[c].as_f64() + BN_MOMENTUM * means[c]);
                s.var[c] = F::from_f64((1.0 - BN_MOMENTUM) * s.var[c].as_f64() + BN_MOMENTUM * vars[c] * unbias);
            }
        }
    }

    /// Logits `[batch, classes]`. Train mode updates BatchNorm running statistics.
    pub fn forward(&mut self, x: &[F], mode: Mode) -> Result<Tensor<F>, ModelError> {
        let batch = self.check_input(x, None)?;
        let (mut tape, stats) = self.run_forward(x, batch, mode);
        if mode == Mode::Train {
            self.apply_batch_stats(stats);
        }
        let logits = tape.acts.pop().unwrap_or_default();
        Ok(Tensor::new(vec![batch, self.spec.classes], logits)?)
    }

    /// Eval-mode logits without touching the state.
    pub fn logits(&self, x: &[F]) -> Result<Tensor<F>, ModelError> {
        let batch = self.check_input(x, None)?;
        let (mut tape, _) = self.run_forward(x, batch, Mode::Eval);
        let logits = tape.acts.pop().unwrap_or_default();
        Ok(Tensor::new(vec![batch, self.spec.classes], logits)?)
    }

    fn backward(&self, tape: &Tape<F>, g_logits: Vec<F>, grad: &mut [F]) {
        let theta = self.theta.data();
        let batch = tape.batch;
        let mut g = g_logits;
        for (l, layer) in self.layout.layers.iter().enumerate().rev() {
            let x = &tape.acts[l];
            let need_input_grad = l > 0;
            let mut gx = if need_input_grad { vec![F::zero(); batch * layer.in_len()] } else { Vec::new() };
            match layer {
                Layer::Linear { inp, out, weight, bias } => {
                    let (gw, gb) = split_weight_bias(grad, weight, bias);
                    kernels::linear_param_grad(&g, x, batch, *inp, *out, F::zero(), gw, Some(gb));
                    if need_input_grad {
                        kernels::linear_input_grad(&g, batch, *inp, *out, &theta[weight.clone()], F::zero(), &mut gx);
                    }
                }
                Layer::Conv { cin, cout, h, w, weight, bias } => {
                    let s = ConvShape { cin: *cin, cout: *cout, h: *h, w: *w };
                    let (gw, gb) = split_weight_bias(grad, weight, bias);
                    gw.iter_mut().for_each(|v| *v = F::zero());
                    gb.iter_mut().for_each(|v| *v = F::zero());
                    kernels::conv_param_grad_add(&s, &g, x, batch, gw, Some(gb));
                    if need_input_grad {
                        kernels::conv_input_grad_add(&s, &g, batch, &theta[weight.clone()], &mut gx);
                    }
                }
                Layer::BatchNorm { channels, plane, .. } => {
                    if need_input_grad {
                        match tape.mode {
                            Mode::Train => kernels::batch_norm_train_backward(
                                &g,
                                &tape.acts[l + 1],
                                batch,
                                *channels,
                                *plane,
                                &tape.invstd[l],
                                &mut gx,
                            ),
                            Mode::Eval => {
                                kernels::channel_affine(&g, batch, *channels, *plane, None, &tape.invstd[l], &mut gx)
                            }
                        }
                    }
                }
                Layer::Relu { .. } => {
                    if need_input_grad {
                        kernels::relu_mask(x, &g, &mut gx);
                    }
                }
                Layer::MaxPool { .. } => {
                    if need_input_grad {
                        kernels::scatter(&g, &tape.argmax[l], &mut gx);
                    }
                }
            }
            g = gx;
        }
    }

    /// Mean softmax cross-entropy and its gradient; the gradient is also left
    /// in `self.grad`. Train mode updates BatchNorm running statistics.
    pub fn loss_and_grad(&mut self, x: &[F], labels: &[u8], mode: Mode) -> Result<(f64, Tensor<F>), ModelError> {
        let loss = self.compute_grad(x, labels, mode)?;
        Ok((loss, self.grad.clone()))
    }

    /// Like [`loss_and_grad`](Self::loss_and_grad) but only fills `self.grad`.
    pub fn compute_grad(&mut self, x: &[F], labels: &[u8], mode: Mode) -> Result<f64, ModelError> {
        let batch = self.check_input(x, Some(labels))?;
        let (tape, stats) = self.run_forward(x, batch, mode);
        let k = self.spec.classes;
        let mut g = vec![F::zero(); batch * k];
        let mut probs = vec![0.0; batch * k];
        let loss = kernels::softmax_cross_entropy(&tape.acts[tape.acts.len() - 1], labels, k, &mut g, &mut probs);
        if !loss.is_finite() {
            return Err(ModelError::Diverged { loss });
        }
        let mut grad = std::mem::replace(&mut self.grad, Tensor::zeros(&[0]));
        self.backward(&tape, g, grad.data_mut());
        self.grad = grad;
        if let Some(i) = self.grad.data().iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteGradient { index: i });
        }
        if mode == Mode::Train {
            self.apply_batch_stats(stats);
        }
        Ok(loss)
    }

    /// Eval-mode mean cross-entropy.
    pub fn loss(&self, x: &[F], labels: &[u8]) -> Result<f64, ModelError> {
        self.loss_with(x, labels, Mode::Eval)
    }

    /// Mean cross-entropy in either mode without updating any state.
    pub fn loss_with(&self, x: &[F], labels: &[u8], mode: Mode) -> Result<f64, ModelError> {
        let batch = self.check_input(x, Some(labels))?;
        let (tape, _) = self.run_forward(x, batch, mode);
        let k = self.spec.classes;
        let mut g = vec![F::zero(); batch * k];
        let mut probs = vec![0.0; batch * k];
        Ok(kernels::softmax_cross_entropy(&tape.acts[tape.acts.len() - 1], labels, k, &mut g, &mut probs))
    }

    /// Exact Hessian-vector product of the eval-mode mean loss, computed by
    /// forward-mode differentiation of the reverse pass. BatchNorm running
    /// statistics are constants.
    pub fn hvp(&self, x: &[F], labels: &[u8], v: &[F]) -> Result<Tensor<F>, ModelError> {
        if v.len() != self.num_params() {
            return Err(ModelError::ParamLength { expected: self.num_params(), got: v.len() });
        }
        let batch = self.check_input(x, Some(labels))?;
        let (tape, _) = self.run_forward(x, batch, Mode::Eval);
        let dacts = self.tangent_forward(&tape, v);
        let k = self.spec.classes;
        let mut g = vec![F::zero(); batch * k];
        let mut probs = vec![0.0; batch * k];
        kernels::softmax_cross_entropy(&tape.acts[tape.acts.len() - 1], labels, k, &mut g, &mut probs);
        let dlogits = dacts.last().and_then(|d| d.as_ref()).cloned().unwrap_or_else(|| vec![F::zero(); batch * k]);
        let mut dg = vec![F::zero(); batch * k];
        kernels::softmax_cross_entropy_tangent(&probs, &dlogits, batch, k, &mut dg);
        let mut hv = vec![F::zero(); self.num_params()];
        self.tangent_backward(&tape, &dacts, v, g, dg, &mut hv);
        Ok(Tensor::from_vec(hv))
    }

    /// Directional derivatives of every activation along parameter direction `v`.
    fn tangent_forward(&self, tape: &Tape<F>, v: &[F]) -> Vec<Option<Vec<F>>> {
        debug_assert_eq!(tape.mode, Mode::Eval);
        let theta = self.theta.data();
        let batch = tape.batch;
        let mut dacts: Vec<Option<Vec<F>>> = vec![None];
        for (l, layer) in self.layout.layers.iter().enumerate() {
            let x = &tape.acts[l];
            let dx = dacts[l].as_deref();
            let out_len = batch * layer.out_len();
            let dy = match layer {
                Layer::Linear { inp, out, weight, bias } => {
                    let mut dy = vec![F::zero(); out_len];
                    kernels::linear_forward(x, batch, *inp, *out, &v[weight.clone()], Some(&v[bias.clone()]), F::zero(), &mut dy);
                    if let Some(dx) = dx {
                        kernels::linear_forward(dx, batch, *inp, *out, &theta[weight.clone()], None, F::one(), &mut dy);
                    }
                    Some(dy)
                }
                Layer::Conv { cin, cout, h, w, weight, bias } => {
                    let s = ConvShape { cin: *cin, cout: *cout, h: *h, w: *w };
                    let mut dy = vec![F::zero(); out_len];
                    kernels::conv_forward(&s, x, batch, &v[weight.clone()], Some(&v[bias.clone()]), F::zero(), &mut dy);
                    if let Some(dx) = dx {
                        kernels::conv_forward(&s, dx, batch, &theta[weight.clone()], None, F::one(), &mut dy);
                    }
                    Some(dy)
                }
                Layer::BatchNorm { channels, plane, .. } => dx.map(|dx| {
                    let mut dy = vec![F::zero(); out_len];
                    kernels::channel_affine(dx, batch, *channels, *plane, None, &tape.invstd[l], &mut dy);
                    dy
                }),
                Layer::Relu { .. } => dx.map(|dx| {
                    let mut dy = vec![F::zero(); out_len];
                    kernels::relu_mask(x, dx, &mut dy);
                    dy
                }),
                Layer::MaxPool { .. } => dx.map(|dx| {
                    let mut dy = vec![F::zero(); out_len];
                    kernels::gather(dx, &tape.argmax[l], &mut dy);
                    dy
                }),
            };
            dacts.push(dy);
        }
        dacts
    }

    fn tangent_backward(
        &self,
        tape: &Tape<F>,
        dacts: &[Option<Vec<F>>],
        v: &[F],
        g_logits: Vec<F>,
        dg_logits: Vec<F>,
        hv: &mut [F],
    ) {
        let theta = self.theta.data();
        let batch = tape.batch;
        let (mut g, mut dg) = (g_logits, dg_logits);
        for (l, layer) in self.layout.layers.iter().enumerate().rev() {
            let x = &tape.acts[l];
            let dx = dacts[l].as_deref();
            let need = l > 0;
            let n_in = batch * layer.in_len();
            let (mut gx, mut dgx) = if need { (vec![F::zero(); n_in], vec![F::zero(); n_in]) } else { (Vec::new(), Vec::new()) };
            match layer {
                Layer::Linear { inp, out, weight, bias } => {
                    let (hw, hb) = split_weight_bias(hv, weight, bias);
                    kernels::linear_param_grad(&dg, x, batch, *inp, *out, F::zero(), hw, Some(hb));
                    if let Some(dx) = dx {
                        kernels::linear_param_grad(&g, dx, batch, *inp, *out, F::one(), hw, None);
                    }
                    if need {
                        let w = &theta[weight.clone()];
                        kernels::linear_input_grad(&g, batch, *inp, *out, w, F::zero(), &mut gx);
                        kernels::linear_input_grad(&dg, batch, *inp, *out, w, F::zero(), &mut dgx);
                        kernels::linear_input_grad(&g, batch, *inp, *out, &v[weight.clone()], F::one(), &mut dgx);
                    }
                }
                Layer::Conv { cin, cout, h, w, weight, bias } => {
                    let s = ConvShape { cin: *cin, cout: *cout, h: *h, w: *w };
                    let (hw, hb) = split_weight_bias(hv, weight, bias);
                    hw.iter_mut().for_each(|v| *v = F::zero());
                    hb.iter_mut().for_each(|v| *v = F::zero());
                    kernels::conv_param_grad_add(&s, &dg, x, batch, hw, Some(hb));
                    if let Some(dx) = dx {
                        kernels::conv_param_grad_add(&s, &g, dx, batch, hw, None);
                    }
                    if need {
                        let wt = &theta[weight.clone()];
                        kernels::conv_input_grad_add(&s, &g, batch, wt, &mut gx);
                        kernels::conv_input_grad_add(&s, &dg, batch, wt, &mut dgx);
                        kernels::conv_input_grad_add(&s, &g, batch, &v[weight.clone()], &mut dgx);
                    }
                }
                Layer::BatchNorm { channels, plane, .. } => {
                    if need {
                        let inv = &tape.invstd[l];
                        kernels::channel_affine(&g, batch, *channels, *plane, None, inv, &mut gx);
                        kernels::channel_affine(&dg, batch, *channels, *plane, None, inv, &mut dgx);
                    }
                }
                Layer::Relu { .. } => {
                    if need {
                        kernels::relu_mask(x, &g, &mut gx);
                        kernels::relu_mask(x, &dg, &mut dgx);
                    }
                }
                Layer::MaxPool { .. } => {
                    if need {
                        kernels::scatter(&g, &tape.argmax[l], &mut gx);
                        kernels::scatter(&dg, &tape.argmax[l], &mut dgx);
                    }
                }
            }
            g = gx;
            dg = dgx;
        }
    }

    /// Gradient of logit `class` of a single eval-mode input with respect to theta.
    pub fn output_gradient(&self, x: &[F], class: usize) -> Result<Vec<F>, ModelError> {
        let batch = self.check_input(x, None)?;
        if batch != 1 {
            return Err(ModelError::InputShape { per_sample: self.spec.input_len(), got: x.len() });
        }
        if class >= self.spec.classes {
            return Err(ModelError::LabelRange { label: class.min(255) as u8, classes: self.spec.classes });
        }
        let (tape, _) = self.run_forward(x, 1, Mode::Eval);
        let mut seed = vec![F::zero(); self.spec.classes];
        seed[class] = F::one();
        let mut grad = vec![F::zero(); self.num_params()];
        self.backward(&tape, seed, &mut grad);
        Ok(grad)
    }

    /// Accuracy (argmax, ties to the lowest class index) and mean loss in eval mode.
    pub fn evaluate(&self, data: &Dataset) -> Result<Evaluation, ModelError> {
        let n = data.len();
        if n == 0 {
            return Ok(Evaluation { accuracy: 0.0, mean_loss: 0.0, correct: 0, count: 0 });
        }
        let k = self.spec.classes;
        let mut correct = 0usize;
        let mut loss_sum = 0.0;
        let mut start = 0;
        while start < n {
            let end = (start + EVAL_CHUNK).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let (x, labels) = data.gather::<F>(&idx);
            let batch = self.check_input(&x, Some(&labels))?;
            let (tape, _) = self.run_forward(&x, batch, Mode::Eval);
            let logits = &tape.acts[tape.acts.len() - 1];
            let mut g = vec![F::zero(); batch * k];
            let mut probs = vec![0.0; batch * k];
            loss_sum += kernels::softmax_cross_entropy(logits, &labels, k, &mut g, &mut probs) * batch as f64;
            for (row, &label) in logits.chunks_exact(k).zip(&labels) {
                if argmax(row) == label as usize {
                    correct += 1;
                }
            }
            start = end;
        }
        Ok(Evaluation { accuracy: correct as f64 / n as f64, mean_loss: loss_sum / n as f64, correct, count: n })
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax<F: Scalar>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn split_weight_bias<'a, F>(
    buf: &'a mut [F],
    weight: &std::ops::Range<usize>,
    bias: &std::ops::Range<usize>,
) -> (&'a mut [F], &'a mut [F]) {
    debug_assert_eq!(weight.end, bias.start);
    let (head, tail) = buf.split_at_mut(bias.start);
    (&mut head[weight.clone()], &mut tail[..bias.len()])
}
