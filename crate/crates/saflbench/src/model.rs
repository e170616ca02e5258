//! Desk-scale differentiable classifiers with exact analytic gradients.
//!
//! Two architectures: a softmax-linear classifier and a one-hidden-layer ReLU
//! MLP. Parameters live in a flat `f64` vector ([`ParamVector`]) so aggregation
//! arithmetic is plain elementwise work with explicit summation order, which is
//! what the bit-reproducibility guarantees elsewhere in the crate rest on.
//!
//! Layouts (row-major):
//! - SoftmaxLinear: `[W (c x d), b (c)]`, parameter count `c*d + c`.
//! - Mlp(h):        `[W1 (h x d), b1 (h), W2 (c x h), b2 (c)]`,
//!   parameter count `h*d + h + c*h + c`.
//!
//! Loss is mean cross-entropy over the batch (log-sum-exp stabilized); argmax
//! ties break toward the lowest class index. All arithmetic is `f64`.

use crate::error::{Error, Result};
use crate::rng::{SeededRng, Stream};

/// Architecture selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Architecture {
    /// Single linear layer followed by softmax cross-entropy.
    SoftmaxLinear,
    /// One hidden ReLU layer of the given width, then a linear output layer.
    Mlp { hidden_width: usize },
}

/// Shape descriptor for a model; equal specs yield identical layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub input_dim: usize,
    pub num_classes: usize,
}

impl ModelSpec {
    pub fn softmax_linear(input_dim: usize, num_classes: usize) -> Self {
        ModelSpec {
            architecture: Architecture::SoftmaxLinear,
            input_dim,
            num_classes,
        }
    }

    pub fn mlp(input_dim: usize, hidden_width: usize, num_classes: usize) -> Self {
        ModelSpec {
            architecture: Architecture::Mlp { hidden_width },
            input_dim,
            num_classes,
        }
    }

    /// Total number of parameters; pure function of the fields.
    pub fn parameter_count(&self) -> usize {
        let d = self.input_dim;
        let c = self.num_classes;
        match self.architecture {
            Architecture::SoftmaxLinear => c * d + c,
            Architecture::Mlp { hidden_width: h } => h * d + h + c * h + c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid_config("model.input_dim", "must be >= 1"));
        }
        if self.num_classes < 2 {
            return Err(Error::invalid_config("model.classes", "must be >= 2"));
        }
        if let Architecture::Mlp { hidden_width } = self.architecture {
            if hidden_width == 0 {
                return Err(Error::invalid_config("model.hidden", "must be >= 1"));
            }
        }
        Ok(())
    }
}

/// Flat parameter (or gradient) container tied to a [`ModelSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub spec: ModelSpec,
    pub values: Vec<f64>,
}

impl ParamVector {
    /// All-zero vector for the spec.
    pub fn zeros(spec: ModelSpec) -> Self {
        ParamVector {
            spec,
            values: vec![0.0; spec.parameter_count()],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// True if every entry is finite.
    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Euclidean norm.
    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `self += other`, in index order.
    pub fn add_assign(&mut self, other: &ParamVector) -> Result<()> {
        check_same_spec(self, other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += *b;
        }
        Ok(())
    }

    /// `self += scale * other`, in index order.
    pub fn add_scaled(&mut self, other: &ParamVector, scale: f64) -> Result<()> {
        check_same_spec(self, other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * *b;
        }
        Ok(())
    }

    /// `self *= scale`.
    pub fn scale(&mut self, scale: f64) {
        for a in self.values.iter_mut() {
            *a *= scale;
        }
    }
}

/// A labeled mini-batch view: `features` is row-major `[n x input_dim]`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub input_dim: usize,
}

impl Batch {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, input_dim: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::DimensionMismatch("batch must be non-empty".into()));
        }
        if features.len() != labels.len() * input_dim {
            return Err(Error::DimensionMismatch(format!(
                "feature buffer holds {} values, expected {} rows x {} dims",
                features.len(),
                labels.len(),
                input_dim
            )));
        }
        Ok(Batch {
            features,
            labels,
            input_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }
}

fn check_same_spec(a: &ParamVector, b: &ParamVector) -> Result<()> {
    if a.spec != b.spec {
        return Err(Error::DimensionMismatch(format!(
            "param vectors have different specs: {:?} vs {:?}",
            a.spec, b.spec
        )));
    }
    Ok(())
}

fn check_batch(params: &ParamVector, batch: &Batch) -> Result<()> {
    if batch.input_dim != params.spec.input_dim {
        return Err(Error::DimensionMismatch(format!(
            "batch dim {} vs model input dim {}",
            batch.input_dim, params.spec.input_dim
        )));
    }
    if let Some(&l) = batch.labels.iter().find(|&&l| l >= params.spec.num_classes) {
        return Err(Error::DimensionMismatch(format!(
            "label {} out of range for {} classes",
            l, params.spec.num_classes
        )));
    }
    if batch.is_empty() {
        return Err(Error::DimensionMismatch("batch must be non-empty".into()));
    }
    Ok(())
}

/// Deterministic initialization: weights from a zero-mean scaled uniform
/// (bound `sqrt(6 / (fan_in + fan_out))` per layer), biases exactly zero.
pub fn init_model(spec: ModelSpec, seed: u64) -> ParamVector {
    let mut rng = SeededRng::derive(seed, Stream::Init, 0, 0);
    let mut params = ParamVector::zeros(spec);
    let d = spec.input_dim;
    let c = spec.num_classes;
    match spec.architecture {
        Architecture::SoftmaxLinear => {
            let bound = (6.0 / (d + c) as f64).sqrt();
            for v in params.values[..c * d].iter_mut() {
                *v = rng.uniform(-bound, bound);
            }
        }
        Architecture::Mlp { hidden_width: h } => {
            let b1 = (6.0 / (d + h) as f64).sqrt();
            for v in params.values[..h * d].iter_mut() {
                *v = rng.uniform(-b1, b1);
            }
            let off = h * d + h;
            let b2 = (6.0 / (h + c) as f64).sqrt();
            for v in params.values[off..off + c * h].iter_mut() {
                *v = rng.uniform(-b2, b2);
            }
        }
    }
    params
}

/// Per-sample logits plus (for the MLP) hidden pre-activations, reused by the
/// backward pass.
struct ForwardScratch {
    logits: Vec<f64>,
    hidden_pre: Vec<f64>,
}

fn forward_logits(params: &ParamVector, x: &[f64], scratch: &mut ForwardScratch) {
    let d = params.spec.input_dim;
    let c = params.spec.num_classes;
    let v = &params.values;
    match params.spec.architecture {
        Architecture::SoftmaxLinear => {
            for j in 0..c {
                let row = &v[j * d..(j + 1) * d];
                let mut z = v[c * d + j];
                for k in 0..d {
                    z += row[k] * x[k];
                }
                scratch.logits[j] = z;
            }
        }
        Architecture::Mlp { hidden_width: h } => {
            let w1 = &v[0..h * d];
            let b1 = &v[h * d..h * d + h];
            let w2 = &v[h * d + h..h * d + h + c * h];
            let b2 = &v[h * d + h + c * h..];
            for u in 0..h {
                let row = &w1[u * d..(u + 1) * d];
                let mut z = b1[u];
                for k in 0..d {
                    z += row[k] * x[k];
                }
                scratch.hidden_pre[u] = z;
            }
            for j in 0..c {
                let row = &w2[j * h..(j + 1) * h];
                let mut z = b2[j];
                for (&r, &a) in row.iter().zip(&scratch.hidden_pre) {
                    if a > 0.0 {
                        z += r * a;
                    }
                }
                scratch.logits[j] = z;
            }
        }
    }
}

/// Log-sum-exp of the logits; stable under large magnitudes.
fn log_sum_exp(logits: &[f64]) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for &z in logits {
        if z > m {
            m = z;
        }
    }
    if !m.is_finite() {
        // All -inf (or a NaN snuck in): the sum is degenerate; let the
        // non-finite value propagate to the caller's loss.
        return m;
    }
    let mut s = 0.0;
    for &z in logits {
        s += (z - m).exp();
    }
    m + s.ln()
}

/// Argmax with ties broken toward the lowest class index. NaN logits never
/// win, so a fully non-finite row predicts class 0.
fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    let mut best_z = logits[0];
    for (j, &z) in logits.iter().enumerate().skip(1) {
        if z > best_z {
            best = j;
            best_z = z;
        }
    }
    if best_z.is_nan() {
        0
    } else {
        best
    }
}

/// Mean cross-entropy loss and correct-prediction count over the batch.
///
/// Pure function; loss may be non-finite if the parameters are (callers in the
/// metrics layer map that to the -1 sentinel).
pub fn forward_eval(params: &ParamVector, batch: &Batch) -> Result<(f64, usize)> {
    check_batch(params, batch)?;
    let c = params.spec.num_classes;
    let mut scratch = ForwardScratch {
        logits: vec![0.0; c],
        hidden_pre: vec![0.0; hidden_width(params.spec)],
    };
    let n = batch.len();
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for i in 0..n {
        forward_logits(params, batch.row(i), &mut scratch);
        let lse = log_sum_exp(&scratch.logits);
        loss_sum += lse - scratch.logits[batch.labels[i]];
        if argmax(&scratch.logits) == batch.labels[i] {
            correct += 1;
        }
    }
    Ok((loss_sum / n as f64, correct))
}

fn hidden_width(spec: ModelSpec) -> usize {
    match spec.architecture {
        Architecture::SoftmaxLinear => 0,
        Architecture::Mlp { hidden_width } => hidden_width,
    }
}

/// Analytic gradient of the mean cross-entropy loss over the batch.
pub fn backward(params: &ParamVector, batch: &Batch) -> Result<ParamVector> {
    check_batch(params, batch)?;
    let d = params.spec.input_dim;
    let c = params.spec.num_classes;
    let n = batch.len();
    let inv_n = 1.0 / n as f64;
    let mut grad = ParamVector::zeros(params.spec);
    let mut scratch = ForwardScratch {
        logits: vec![0.0; c],
        hidden_pre: vec![0.0; hidden_width(params.spec)],
    };
    let mut probs = vec![0.0; c];

    for i in 0..n {
        let x = batch.row(i);
        forward_logits(params, x, &mut scratch);
        let lse = log_sum_exp(&scratch.logits);
        for (p, &logit) in probs.iter_mut().zip(&scratch.logits) {
            *p = (logit - lse).exp();
        }
        probs[batch.labels[i]] -= 1.0;
        // probs now holds d(loss_i)/d(logit_j); scale by 1/n for the mean.
        match params.spec.architecture {
            Architecture::SoftmaxLinear => {
                let (gw, gb) = grad.values.split_at_mut(c * d);
                for j in 0..c {
                    let dz = probs[j] * inv_n;
                    let grow = &mut gw[j * d..(j + 1) * d];
                    for k in 0..d {
                        grow[k] += dz * x[k];
                    }
                    gb[j] += dz;
                }
            }
            Architecture::Mlp { hidden_width: h } => {
                let w2 = &params.values[h * d + h..h * d + h + c * h];
                let (g1, rest) = grad.values.split_at_mut(h * d);
                let (gb1, rest) = rest.split_at_mut(h);
                let (g2, gb2) = rest.split_at_mut(c * h);
                let mut d_hidden = vec![0.0; h];
                for j in 0..c {
                    let dz = probs[j] * inv_n;
                    let grow = &mut g2[j * h..(j + 1) * h];
                    let wrow = &w2[j * h..(j + 1) * h];
                    for u in 0..h {
                        let a = scratch.hidden_pre[u];
                        if a > 0.0 {
                            grow[u] += dz * a;
                            d_hidden[u] += dz * wrow[u];
                        }
                    }
                    gb2[j] += dz;
                }
                for u in 0..h {
                    let dh = d_hidden[u];
                    if dh != 0.0 {
                        let grow = &mut g1[u * d..(u + 1) * d];
                        for k in 0..d {
                            grow[k] += dh * x[k];
                        }
                        gb1[u] += dh;
                    }
                }
            }
        }
    }
    Ok(grad)
}

/// One gradient-descent step: `out[k] = params[k] - eta * grad[k]`.
pub fn sgd_step(params: &ParamVector, grad: &ParamVector, eta: f64) -> Result<ParamVector> {
    check_same_spec(params, grad)?;
    let mut out = params.clone();
    for (p, g) in out.values.iter_mut().zip(&grad.values) {
        *p -= eta * *g;
    }
    Ok(out)
}

/// Central-difference gradient of the [`forward_eval`] loss; the test oracle
/// for [`backward`].
pub fn numerical_gradient(params: &ParamVector, batch: &Batch, epsilon: f64) -> Result<ParamVector> {
    check_batch(params, batch)?;
    assert!(
        (1e-7..=1e-3).contains(&epsilon),
        "epsilon {epsilon} outside supported range [1e-7, 1e-3]"
    );
    let mut grad = ParamVector::zeros(params.spec);
    let mut probe = params.clone();
    for k in 0..probe.values.len() {
        let orig = probe.values[k];
        probe.values[k] = orig + epsilon;
        let (lp, _) = forward_eval(&probe, batch)?;
        probe.values[k] = orig - epsilon;
        let (lm, _) = forward_eval(&probe, batch)?;
        probe.values[k] = orig;
        grad.values[k] = (lp - lm) / (2.0 * epsilon);
    }
    Ok(grad)
}

/// Scale the gradient down to `max_norm` if its L2 norm exceeds it.
pub fn clip_gradient(grad: &ParamVector, max_norm: f64) -> ParamVector {
    assert!(max_norm > 0.0, "max_norm must be positive");
    let norm = grad.l2_norm();
    if norm <= max_norm {
        grad.clone()
    } else {
        let mut out = grad.clone();
        out.scale(max_norm / norm);
        out
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
