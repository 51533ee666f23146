//! Training with stochastically quantized weights.
//!
//! Real weights live in [−1, 1]. Every minibatch draws binary conv and
//! ternary FC weights whose expectation is the real weight, runs the
//! quantized network, and applies the gradient with respect to the drawn
//! weights straight to the real ones.

mod layers;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::kernels::{ConvFilter, TernaryFcWeights, NEURONS};
use crate::netplan::{NetworkSpec, Preset, QuantizedWeights, Summation, SHRINK_BITS, SHRINK_RANGE};
use crate::oracle::OracleConfig;
use layers::ConvShape;

/// FC weights with |w| at or below this export as 0.
pub const TERNARY_THRESHOLD: f32 = 1.0 / 3.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("image has {got} pixels, expected {want}")]
    Shape { got: usize, want: usize },
    #[error("{images} images but {labels} labels")]
    LabelCount { images: usize, labels: usize },
    #[error("empty dataset")]
    Empty,
    #[error("{0}")]
    Config(String),
}

/// +1 with probability (w + 1)/2, else −1.
pub fn stochastic_binarize(w: f32, rng: &mut impl Rng) -> f32 {
    if rng.random::<f32>() < (w + 1.0) / 2.0 {
        1.0
    } else {
        -1.0
    }
}

/// sign(w) with probability |w|, else 0.
pub fn stochastic_ternarize(w: f32, rng: &mut impl Rng) -> f32 {
    if rng.random::<f32>() < w.abs() {
        w.signum()
    } else {
        0.0
    }
}

/// Deterministic conv bit: set for w ≥ 0.
pub fn binarize(w: f32) -> bool {
    w >= 0.0
}

/// Deterministic ternary level, ties toward 0.
pub fn ternarize(w: f32) -> i8 {
    if w.abs() <= TERNARY_THRESHOLD {
        0
    } else if w > 0.0 {
        1
    } else {
        -1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Stochastic,
    Deterministic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd { momentum: f32 },
    Adam { beta1: f32, beta2: f32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub optimizer: Optimizer,
    /// Fraction of the epochs after which the rate drops by `lr_decay`.
    pub decay_at: f64,
    pub lr_decay: f32,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 12,
            batch_size: 100,
            lr: 0.02,
            optimizer: Optimizer::Adam {
                beta1: 0.9,
                beta2: 0.999,
            },
            decay_at: 2.0 / 3.0,
            lr_decay: 0.1,
        }
    }
}

impl FitConfig {
    fn rate(&self, epoch: usize) -> f32 {
        if epoch as f64 >= self.decay_at * self.epochs as f64 {
            self.lr * self.lr_decay
        } else {
            self.lr
        }
    }
}

/// Per-epoch record returned by [`RealValuedNet::fit`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f32,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct Params {
    conv: Vec<Vec<f32>>,
    fc: Vec<f32>,
    log_scale: f32,
}

impl Params {
    fn zeros_like(p: &Params) -> Self {
        Self {
            conv: p.conv.iter().map(|c| vec![0.0; c.len()]).collect(),
            fc: vec![0.0; p.fc.len()],
            log_scale: 0.0,
        }
    }

    fn fill(&mut self, v: f32) {
        self.conv.iter_mut().for_each(|c| c.fill(v));
        self.fc.fill(v);
        self.log_scale = v;
    }

    fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f32]> {
        self.conv
            .iter_mut()
            .map(Vec::as_mut_slice)
            .chain(std::iter::once(self.fc.as_mut_slice()))
            .chain(std::iter::once(std::slice::from_mut(&mut self.log_scale)))
    }
}

/// Intermediate tensors of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
struct Tape {
    input: Vec<f32>,
    conv1: Vec<f32>,
    pooled: Vec<f32>,
    arg: Vec<usize>,
    /// Second conv input after the shrink quantizer.
    shrunk: Vec<f32>,
    conv2: Vec<f32>,
    /// FC input, channels-last.
    features: Vec<f32>,
    activations: [f32; NEURONS],
}

/// Real-valued weights plus optimizer state.
#[derive(Debug, Clone)]
pub struct RealValuedNet {
    spec: NetworkSpec,
    shapes: Vec<ConvShape>,
    /// Canonical FC index → channels-last feature index.
    order: Vec<usize>,
    params: Params,
    moment1: Params,
    moment2: Params,
    steps: u64,
    rng: ChaCha8Rng,
}

impl RealValuedNet {
    /// Uniform weights in [−`init`, `init`].
    pub fn new(spec: &NetworkSpec, init: f32, seed: u64) -> Result<Self, TrainError> {
        if spec.maps.is_empty() || spec.maps.len() > 2 {
            return Err(TrainError::Config(format!("{} conv layers", spec.maps.len())));
        }
        let mut shapes = vec![ConvShape {
            side: spec.input_side,
            cin: 1,
            cout: spec.maps[0],
            k: spec.k,
        }];
        if let Some(&m2) = spec.maps.get(1) {
            shapes.push(ConvShape {
                side: spec.input_side / 4,
                cin: spec.maps[0],
                cout: m2,
                k: spec.k,
            });
        }
        let (p, c) = match spec.maps.len() {
            1 => (spec.input_side / 4, spec.maps[0]),
            _ => (spec.input_side / 4, spec.maps[1]),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |n: usize| -> Vec<f32> { (0..n).map(|_| rng.random_range(-init..=init)).collect() };
        let conv = shapes.iter().map(|s| uniform(s.weights())).collect();
        let fc = uniform(NEURONS * p * p * c);
        let params = Params {
            conv,
            fc,
            log_scale: 0.0,
        };
        Ok(Self {
            spec: spec.clone(),
            shapes,
            order: layers::canonical_to_channels_last(p, c),
            moment1: Params::zeros_like(&params),
            moment2: Params::zeros_like(&params),
            params,
            steps: 0,
            rng,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Every real weight, conv layers first.
    pub fn weights(&self) -> impl Iterator<Item = f32> + '_ {
        self.params.conv.iter().flatten().chain(&self.params.fc).copied()
    }

    fn fc_inputs(&self) -> usize {
        self.order.len()
    }

    fn draw(&mut self, mode: Mode) -> Params {
        match mode {
            Mode::Stochastic => {
                let mut q = self.params.clone();
                for c in &mut q.conv {
                    c.iter_mut().for_each(|w| *w = stochastic_binarize(*w, &mut self.rng));
                }
                q.fc.iter_mut().for_each(|w| *w = stochastic_ternarize(*w, &mut self.rng));
                q
            }
            Mode::Deterministic => self.exported(),
        }
    }

    fn exported(&self) -> Params {
        let mut q = self.params.clone();
        for c in &mut q.conv {
            c.iter_mut().for_each(|w| *w = if binarize(*w) { 1.0 } else { -1.0 });
        }
        q.fc.iter_mut().for_each(|w| *w = f32::from(ternarize(*w)));
        q
    }

    fn tape(&self) -> Tape {
        let s0 = self.shapes[0];
        let pooled = s0.outputs() / 16;
        let s1 = self.shapes.get(1);
        Tape {
            input: vec![0.0; s0.inputs()],
            conv1: vec![0.0; s0.outputs()],
            pooled: vec![0.0; pooled],
            arg: vec![0; pooled],
            shrunk: vec![0.0; s1.map_or(0, ConvShape::inputs)],
            conv2: vec![0.0; s1.map_or(0, ConvShape::outputs)],
            features: vec![0.0; self.fc_inputs()],
            activations: [0.0; NEURONS],
        }
    }

    fn check_image(&self, image: &[u8]) -> Result<(), TrainError> {
        let want = self.shapes[0].inputs();
        if image.len() != want {
            return Err(TrainError::Shape {
                got: image.len(),
                want,
            });
        }
        Ok(())
    }

    fn fc_quantization(&self) -> Option<(u32, f32)> {
        match self.spec.summation {
            Summation::DigitalStack { bits, range_max } => Some((bits as u32, range_max as f32)),
            Summation::AnalogAvg { .. } => None,
        }
    }

    fn run(&self, q: &Params, image: &[u8], t: &mut Tape) {
        for (a, &b) in t.input.iter_mut().zip(image) {
            *a = f32::from(b);
        }
        let s0 = self.shapes[0];
        layers::conv_forward(&s0, &t.input, &q.conv[0], &mut t.conv1);
        layers::relu_pool4(s0.side, s0.cout, &t.conv1, &mut t.pooled, &mut t.arg);
        if let Some(s1) = self.shapes.get(1) {
            for (a, &b) in t.shrunk.iter_mut().zip(&t.pooled) {
                *a = round_trip(b, SHRINK_BITS as u32, SHRINK_RANGE as f32);
            }
            layers::conv_forward(s1, &t.shrunk, &q.conv[1], &mut t.conv2);
            for (a, &b) in t.features.iter_mut().zip(&t.conv2) {
                *a = b.max(0.0);
            }
        } else {
            t.features.copy_from_slice(&t.pooled);
        }
        if let Some((bits, range)) = self.fc_quantization() {
            t.features.iter_mut().for_each(|v| *v = round_trip(*v, bits, range));
        }
        let n_in = self.fc_inputs();
        for (n, act) in t.activations.iter_mut().enumerate() {
            let row = &q.fc[n * n_in..(n + 1) * n_in];
            *act = row
                .iter()
                .zip(&self.order)
                .map(|(w, &i)| w * t.features[i])
                .sum();
        }
    }

    /// Activations of every image under freshly drawn (stochastic) or
    /// exported (deterministic) weights.
    pub fn forward(&mut self, images: &[&[u8]], mode: Mode) -> Result<Vec<[f32; NEURONS]>, TrainError> {
        for im in images {
            self.check_image(im)?;
        }
        let q = self.draw(mode);
        let mut t = self.tape();
        Ok(images
            .iter()
            .map(|im| {
                self.run(&q, im, &mut t);
                t.activations
            })
            .collect())
    }

    /// Mean cross-entropy of the deterministic network.
    pub fn loss(&self, images: &[Vec<u8>], labels: &[u8]) -> Result<f64, TrainError> {
        check_data(images, labels)?;
        let q = self.exported();
        let mut t = self.tape();
        let mut total = 0.0;
        for (im, &l) in images.iter().zip(labels) {
            self.check_image(im)?;
            self.run(&q, im, &mut t);
            total += f64::from(softmax_loss(&t.activations, q.log_scale.exp(), l).0);
        }
        Ok(total / images.len() as f64)
    }

    /// Deterministic accuracy, ties to the lowest class.
    pub fn accuracy(&self, images: &[Vec<u8>], labels: &[u8]) -> Result<f64, TrainError> {
        check_data(images, labels)?;
        let q = self.exported();
        let mut t = self.tape();
        let mut correct = 0usize;
        for (im, &l) in images.iter().zip(labels) {
            self.check_image(im)?;
            self.run(&q, im, &mut t);
            let a = &t.activations;
            let class = (0..NEURONS).fold(0, |b, i| if a[i] > a[b] { i } else { b });
            correct += usize::from(class == usize::from(l));
        }
        Ok(correct as f64 / images.len() as f64)
    }

    /// Adds the gradient of one sample's loss with respect to the drawn
    /// weights `q` into `g`; returns the loss.
    fn backprop(&self, q: &Params, image: &[u8], label: u8, t: &mut Tape, g: &mut Params) -> f32 {
        self.run(q, image, t);
        let scale = q.log_scale.exp();
        let (loss, dz) = softmax_loss(&t.activations, scale, label);
        let n_in = self.fc_inputs();
        g.log_scale += dz.iter().zip(&t.activations).map(|(d, a)| d * a * scale).sum::<f32>();
        let mut dfeat = vec![0.0f32; n_in];
        for n in 0..NEURONS {
            let da = dz[n] * scale;
            if da == 0.0 {
                continue;
            }
            let row = &q.fc[n * n_in..(n + 1) * n_in];
            let grow = &mut g.fc[n * n_in..(n + 1) * n_in];
            for ((gw, w), &i) in grow.iter_mut().zip(row).zip(&self.order) {
                *gw += da * t.features[i];
                dfeat[i] += da * w;
            }
        }
        if let Some((_, range)) = self.fc_quantization() {
            let pre = if self.shapes.len() > 1 { &t.conv2 } else { &t.pooled };
            pass_through(&mut dfeat, pre, range);
        }
        let s0 = self.shapes[0];
        let mut dpooled = match self.shapes.get(1) {
            Some(s1) => {
                // ReLU gate on the second conv output.
                for (d, &v) in dfeat.iter_mut().zip(&t.conv2) {
                    if v <= 0.0 {
                        *d = 0.0;
                    }
                }
                let mut dx = vec![0.0; s1.inputs()];
                layers::conv_backward(s1, &t.shrunk, &q.conv[1], &dfeat, &mut g.conv[1], Some(&mut dx));
                pass_through(&mut dx, &t.pooled, SHRINK_RANGE as f32);
                dx
            }
            None => dfeat,
        };
        let mut dconv = vec![0.0; s0.outputs()];
        layers::relu_pool4_backward(&t.pooled, &t.arg, &dpooled, &mut dconv);
        dpooled.clear();
        layers::conv_backward(&s0, &t.input, &q.conv[0], &dconv, &mut g.conv[0], None);
        loss
    }

    /// Sets the logit scale so deterministic activations over `images`
    /// have unit standard deviation.
    fn init_scale(&mut self, images: &[&[u8]]) {
        let q = self.exported();
        let mut t = self.tape();
        let (mut s, mut s2, mut n) = (0.0f64, 0.0f64, 0.0f64);
        for im in images {
            self.run(&q, im, &mut t);
            for &a in &t.activations {
                s += f64::from(a);
                s2 += f64::from(a) * f64::from(a);
                n += 1.0;
            }
        }
        let var = (s2 / n - (s / n).powi(2)).max(1e-6);
        self.params.log_scale = (-0.5 * var.ln()) as f32;
    }

    /// Minibatch training. Deterministic given the construction seed.
    pub fn fit(
        &mut self,
        images: &[Vec<u8>],
        labels: &[u8],
        config: &FitConfig,
        mut progress: impl FnMut(EpochStats, &RealValuedNet),
    ) -> Result<Vec<EpochStats>, TrainError> {
        check_data(images, labels)?;
        for im in images {
            self.check_image(im)?;
        }
        if config.batch_size == 0 {
            return Err(TrainError::Config("batch size 0".into()));
        }
        if self.steps == 0 {
            let probe: Vec<&[u8]> = images.iter().take(config.batch_size).map(Vec::as_slice).collect();
            self.init_scale(&probe);
        }
        let mut order: Vec<usize> = (0..images.len()).collect();
        let mut t = self.tape();
        let mut grad = Params::zeros_like(&self.params);
        let mut history = Vec::with_capacity(config.epochs);
        for epoch in 0..config.epochs {
            order.shuffle(&mut self.rng);
            let lr = config.rate(epoch);
            let mut total = 0.0f64;
            for batch in order.chunks(config.batch_size) {
                let q = self.draw(Mode::Stochastic);
                grad.fill(0.0);
                for &i in batch {
                    total += f64::from(self.backprop(&q, &images[i], labels[i], &mut t, &mut grad));
                }
                let inv = 1.0 / batch.len() as f32;
                grad.slices_mut().flatten().for_each(|g| *g *= inv);
                self.step(&grad, lr, config.optimizer);
            }
            let stats = EpochStats {
                epoch,
                lr,
                mean_loss: total / images.len() as f64,
            };
            progress(stats, self);
            history.push(stats);
        }
        Ok(history)
    }

    fn step(&mut self, grad: &Params, lr: f32, optimizer: Optimizer) {
        self.steps += 1;
        let count = self.params_len();
        let grads = grad
            .conv
            .iter()
            .map(Vec::as_slice)
            .chain([grad.fc.as_slice(), std::slice::from_ref(&grad.log_scale)]);
        let slots = self
            .params
            .slices_mut()
            .zip(self.moment1.slices_mut())
            .zip(self.moment2.slices_mut())
            .zip(grads);
        for (idx, (((w, m), v), g)) in slots.enumerate() {
            // The last slot is the logit scale, which is not clipped.
            let clip = idx + 1 < count;
            match optimizer {
                Optimizer::Sgd { momentum } => {
                    for (((w, m), _), g) in w.iter_mut().zip(m.iter_mut()).zip(v.iter()).zip(g) {
                        *m = momentum * *m + g;
                        *w -= lr * *m;
                    }
                }
                Optimizer::Adam { beta1, beta2 } => {
                    let t = self.steps as i32;
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    for (((w, m), v), g) in w.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        *w -= lr * (*m / c1) / ((*v / c2).sqrt() + 1e-8);
                    }
                }
            }
            if clip {
                w.iter_mut().for_each(|w| *w = w.clamp(-1.0, 1.0));
            }
        }
    }

    fn params_len(&self) -> usize {
        self.params.conv.len() + 2
    }

    /// Deterministic endpoint: sign bits for conv, thresholded ternary FC.
    pub fn export_quantized(&self) -> QuantizedWeights {
        let conv = self
            .shapes
            .iter()
            .zip(&self.params.conv)
            .map(|(s, w)| {
                // Canonical filter index is in·cout + out.
                (0..s.cin * s.cout)
                    .map(|f| {
                        let (ci, co) = (f / s.cout, f % s.cout);
                        ConvFilter::from_fn(s.k, |i, j| {
                            binarize(w[((i * s.k + j) * s.cin + ci) * s.cout + co])
                        })
                    })
                    .collect()
            })
            .collect();
        let n_in = self.fc_inputs();
        let fc = TernaryFcWeights::from_fn(n_in, |n, i| ternarize(self.params.fc[n * n_in + i]))
            .expect("ternary levels");
        QuantizedWeights {
            preset: self.spec.preset,
            conv,
            fc,
        }
    }

    /// Oracle configuration matching this network's forward pass.
    pub fn oracle_config(&self) -> OracleConfig {
        OracleConfig::for_spec(&self.spec)
    }

    pub fn preset(&self) -> Preset {
        self.spec.preset
    }
}

fn check_data(images: &[Vec<u8>], labels: &[u8]) -> Result<(), TrainError> {
    if images.is_empty() {
        return Err(TrainError::Empty);
    }
    if images.len() != labels.len() {
        return Err(TrainError::LabelCount {
            images: images.len(),
            labels: labels.len(),
        });
    }
    Ok(())
}

/// Same grid as the array's converters.
fn round_trip(v: f32, bits: u32, range: f32) -> f32 {
    crate::quant::round_trip(f64::from(v), bits, f64::from(range)) as f32
}

/// Straight-through gradient of a quantizer over [0, range].
fn pass_through(grad: &mut [f32], input: &[f32], range: f32) {
    for (g, &v) in grad.iter_mut().zip(input) {
        if !(0.0..=range).contains(&v) {
            *g = 0.0;
        }
    }
}

/// Cross-entropy of `scale · activations` and its gradient with respect
/// to the logits.
fn softmax_loss(act: &[f32; NEURONS], scale: f32, label: u8) -> (f32, [f32; NEURONS]) {
    let z: Vec<f32> = act.iter().map(|a| a * scale).collect();
    let max = z.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let e: Vec<f32> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f32 = e.iter().sum();
    let mut d = [0.0; NEURONS];
    for n in 0..NEURONS {
        d[n] = e[n] / sum;
    }
    let l = usize::from(label);
    let loss = -(d[l].max(1e-30)).ln();
    d[l] -= 1.0;
    (loss, d)
}
