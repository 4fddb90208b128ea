use rand::Rng as _;

use super::{Features, Gradients, ValueNet, LAYER_NORM_EPS};
use crate::error::{Error, Result};
use crate::rng::Rng;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    cdf + x * FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Normalize `row` into `out` (zero mean, unit variance up to the epsilon);
/// returns the inverse standard deviation.
fn layer_norm(row: &[f64], out: &mut [f64]) -> f64 {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    for (o, v) in out.iter_mut().zip(row) {
        *o = (v - mean) * inv_std;
    }
    inv_std
}

/// Dropout is applied only in training mode.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut Rng),
}

/// One labelled (state, case) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Features,
    pub label: bool,
}

/// How the value scores of the current candidate set feed the retrieval
/// distribution, so the entropy bonus can push gradients into the network.
///
/// The min and max of the candidate value scores are frozen at the values
/// observed when the distribution was built, and the normalized semantic
/// scores are constants; only each candidate's own value score carries
/// gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyPathway {
    pub features: Vec<Features>,
    pub sem_norm: Vec<f64>,
    pub alpha: f64,
    pub tau: f64,
    pub val_min: f64,
    pub val_max: f64,
}

/// The retrieval distribution whose entropy is rewarded in the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEntropy {
    pub probs: Vec<f64>,
    pub pathway: Option<EntropyPathway>,
}

impl PolicyEntropy {
    /// A fixed distribution: contributes to the loss value but not to gradients.
    pub fn fixed(probs: Vec<f64>) -> Self {
        Self { probs, pathway: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Loss {
    pub total: f64,
    pub bce: f64,
    pub entropy: f64,
}

fn shannon(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// Per-layer activations kept for the backward pass. Matrices are row-major
/// with one row per sample.
struct LayerCache {
    input: Vec<f64>,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    /// Layer-norm output after gain and offset, i.e. the GELU input.
    pre_gelu: Vec<f64>,
    /// Inverted-dropout multipliers (0 or 1/(1-p)); empty when dropout is off.
    mask: Vec<f64>,
}

struct Cache {
    layers: Vec<LayerCache>,
    last: Vec<f64>,
    logits: Vec<f64>,
}

impl ValueNet {
    fn check_features(&self, z: &Features) -> Result<()> {
        if z.len() == 4 * self.dim {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "feature vector has length {}, network expects {}",
                z.len(),
                4 * self.dim
            )))
        }
    }

    fn forward_cached(&self, inputs: &[&Features], mut mode: Mode<'_>) -> Result<Cache> {
        for z in inputs {
            self.check_features(z)?;
        }
        let n = inputs.len();
        let mut x: Vec<f64> = Vec::with_capacity(n * 4 * self.dim);
        for z in inputs {
            x.extend_from_slice(z.as_slice());
        }
        let theta = &self.theta;
        let mut layers = Vec::with_capacity(self.layout.hidden.len());
        for slots in &self.layout.hidden {
            let (n_in, n_out) = (slots.n_in, slots.n_out);
            let w = &theta[slots.w.clone()];
            let b = &theta[slots.b.clone()];
            let gain = &theta[slots.gain.clone()];
            let offset = &theta[slots.offset.clone()];

            let mut a = vec![0.0; n * n_out];
            for (j, row) in w.chunks_exact(n_in).enumerate() {
                for s in 0..n {
                    let xs = &x[s * n_in..(s + 1) * n_in];
                    a[s * n_out + j] = b[j] + dot(row, xs);
                }
            }

            let mut xhat = vec![0.0; n * n_out];
            let mut inv_std = vec![0.0; n];
            let mut pre_gelu = vec![0.0; n * n_out];
            let mut h = vec![0.0; n * n_out];
            for s in 0..n {
                let r = s * n_out..(s + 1) * n_out;
                inv_std[s] = layer_norm(&a[r.clone()], &mut xhat[r.clone()]);
                for j in 0..n_out {
                    let y = gain[j] * xhat[r.start + j] + offset[j];
                    pre_gelu[r.start + j] = y;
                    h[r.start + j] = gelu(y);
                }
            }

            let mut mask = Vec::new();
            if let Mode::Train(rng) = &mut mode {
                if self.p_drop > 0.0 {
                    let keep = 1.0 - self.p_drop;
                    mask = (0..n * n_out)
                        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    for (v, m) in h.iter_mut().zip(&mask) {
                        *v *= m;
                    }
                }
            }

            layers.push(LayerCache {
                input: std::mem::replace(&mut x, h),
                xhat,
                inv_std,
                pre_gelu,
                mask,
            });
        }
        let out_w = &theta[self.layout.out_w.clone()];
        let out_b = theta[self.layout.out_b];
        let width = out_w.len();
        let logits = (0..n)
            .map(|s| out_b + dot(out_w, &x[s * width..(s + 1) * width]))
            .collect();
        Ok(Cache {
            layers,
            last: x,
            logits,
        })
    }

    /// Accumulate into `grad` the gradient of `Σ_s dlogit[s] · logit_s`.
    fn backward(&self, cache: &Cache, dlogit: &[f64], grad: &mut [f64]) {
        let n = dlogit.len();
        let theta = &self.theta;
        let out_w = &theta[self.layout.out_w.clone()];
        let width = out_w.len();
        {
            let gw = &mut grad[self.layout.out_w.clone()];
            for s in 0..n {
                axpy(dlogit[s], &cache.last[s * width..(s + 1) * width], gw);
            }
        }
        grad[self.layout.out_b] += dlogit.iter().sum::<f64>();

        let mut dh: Vec<f64> = Vec::with_capacity(n * width);
        for &g in dlogit {
            dh.extend(out_w.iter().map(|w| g * w));
        }

        for (li, (slots, lc)) in self.layout.hidden.iter().zip(&cache.layers).enumerate().rev() {
            let (n_in, n_out) = (slots.n_in, slots.n_out);
            if !lc.mask.is_empty() {
                for (d, m) in dh.iter_mut().zip(&lc.mask) {
                    *d *= m;
                }
            }
            let gain = &theta[slots.gain.clone()];
            let mut da = vec![0.0; n * n_out];
            for s in 0..n {
                let r = s * n_out..(s + 1) * n_out;
                let mut dxhat = vec![0.0; n_out];
                for j in 0..n_out {
                    let dy = dh[r.start + j] * gelu_grad(lc.pre_gelu[r.start + j]);
                    let xh = lc.xhat[r.start + j];
                    grad[slots.gain.start + j] += dy * xh;
                    grad[slots.offset.start + j] += dy;
                    dxhat[j] = dy * gain[j];
                }
                let xh = &lc.xhat[r.clone()];
                let mean_d = dxhat.iter().sum::<f64>() / n_out as f64;
                let mean_dx = dxhat.iter().zip(xh).map(|(d, x)| d * x).sum::<f64>() / n_out as f64;
                let is = lc.inv_std[s];
                for j in 0..n_out {
                    da[r.start + j] = is * (dxhat[j] - mean_d - xh[j] * mean_dx);
                }
            }

            for s in 0..n {
                let xs = &lc.input[s * n_in..(s + 1) * n_in];
                for j in 0..n_out {
                    let g = da[s * n_out + j];
                    if g != 0.0 {
                        let start = slots.w.start + j * n_in;
                        axpy(g, xs, &mut grad[start..start + n_in]);
                    }
                    grad[slots.b.start + j] += g;
                }
            }

            if li > 0 {
                let w = &theta[slots.w.clone()];
                let mut dx = vec![0.0; n * n_in];
                for s in 0..n {
                    let dxs = &mut dx[s * n_in..(s + 1) * n_in];
                    for (j, row) in w.chunks_exact(n_in).enumerate() {
                        let g = da[s * n_out + j];
                        if g != 0.0 {
                            axpy(g, row, dxs);
                        }
                    }
                }
                dh = dx;
            }
        }
    }

    /// Value score in (0, 1) of one feature vector.
    pub fn forward(&self, z: &Features, mode: Mode<'_>) -> Result<f64> {
        let cache = self.forward_cached(&[z], mode)?;
        Ok(sigmoid(cache.logits[0]))
    }

    /// Eval-mode value scores of several feature vectors.
    pub fn score_batch(&self, zs: &[&Features]) -> Result<Vec<f64>> {
        if zs.is_empty() {
            return Ok(Vec::new());
        }
        let cache = self.forward_cached(zs, Mode::Eval)?;
        Ok(cache.logits.into_iter().map(sigmoid).collect())
    }

    /// Summed binary cross-entropy over `batch` minus `beta` times the entropy
    /// of the retrieval distribution, with its gradient.
    ///
    /// The BCE term is backpropagated through the whole network in `mode`
    /// (pass [`Mode::Eval`] to disable dropout for gradient checks). The
    /// entropy term reaches the parameters only through `policy.pathway`.
    pub fn loss_and_grads(
        &self,
        batch: &[Sample],
        policy: Option<&PolicyEntropy>,
        beta: f64,
        mode: Mode<'_>,
    ) -> Result<(Loss, Gradients)> {
        if batch.is_empty() {
            return Err(Error::invalid("training batch is empty"));
        }
        if !(beta >= 0.0) {
            return Err(Error::invalid("beta must be non-negative"));
        }
        let mut grad = vec![0.0; self.num_params()];

        let inputs: Vec<&Features> = batch.iter().map(|s| &s.features).collect();
        let cache = self.forward_cached(&inputs, mode)?;
        let mut bce = 0.0;
        let mut dlogit = Vec::with_capacity(batch.len());
        for (sample, &logit) in batch.iter().zip(&cache.logits) {
            let y = if sample.label { 1.0 } else { 0.0 };
            bce += softplus(logit) - y * logit;
            dlogit.push(sigmoid(logit) - y);
        }
        self.backward(&cache, &dlogit, &mut grad);

        let mut entropy = 0.0;
        if let Some(policy) = policy {
            entropy = match &policy.pathway {
                None => {
                    check_distribution(&policy.probs)?;
                    shannon(&policy.probs)
                }
                Some(path) => {
                    let (h, pathway_grad) = self.entropy_through_pathway(path, beta)?;
                    for (g, pg) in grad.iter_mut().zip(pathway_grad) {
                        *g += pg;
                    }
                    h
                }
            };
        }

        let loss = Loss {
            total: bce - beta * entropy,
            bce,
            entropy,
        };
        Ok((loss, Gradients(grad)))
    }

    /// Entropy of the pathway's distribution and the gradient of `-beta * H`.
    fn entropy_through_pathway(&self, path: &EntropyPathway, beta: f64) -> Result<(f64, Vec<f64>)> {
        let n = path.features.len();
        if n == 0 || path.sem_norm.len() != n {
            return Err(Error::invalid("entropy pathway needs one semantic score per candidate"));
        }
        if !(path.tau > 0.0) {
            return Err(Error::invalid("temperature must be positive"));
        }
        let inputs: Vec<&Features> = path.features.iter().collect();
        let cache = self.forward_cached(&inputs, Mode::Eval)?;
        let vals: Vec<f64> = cache.logits.iter().map(|&l| sigmoid(l)).collect();
        let span = path.val_max - path.val_min;
        let degenerate = !(span > 0.0);
        let fused: Vec<f64> = vals
            .iter()
            .zip(&path.sem_norm)
            .map(|(&v, &sem)| {
                let vn = if degenerate { 0.5 } else { (v - path.val_min) / span };
                path.alpha * sem + (1.0 - path.alpha) * vn
            })
            .collect();
        let probs = softmax(&fused, path.tau);
        let h = shannon(&probs);
        let mut grad = vec![0.0; self.num_params()];
        if !degenerate && beta > 0.0 && path.alpha < 1.0 {
            let scale = beta * (1.0 - path.alpha) / (span * path.tau);
            let dlogit: Vec<f64> = probs
                .iter()
                .zip(&vals)
                .map(|(&p, &v)| {
                    let dh_dfused = if p > 0.0 { p * (p.ln() + h) } else { 0.0 };
                    scale * dh_dfused * v * (1.0 - v)
                })
                .collect();
            self.backward(&cache, &dlogit, &mut grad);
        }
        Ok((h, grad))
    }
}

/// Temperature softmax with max-subtraction.
pub fn softmax(scores: &[f64], tau: f64) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| ((s - max) / tau).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn check_distribution(probs: &[f64]) -> Result<()> {
    if probs.is_empty() || probs.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::invalid("policy probabilities must be non-negative"));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("policy probabilities sum to {total}")));
    }
    Ok(())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators let the compiler vectorize the reduction.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::super::build_features;
    use super::*;
    use crate::embedding::Embedding;
    use crate::rng;

    fn features(d: usize, seed: u64) -> Features {
        let mut r = rng::stream(seed, "features");
        let mut v = |_| Embedding::new((0..d).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap();
        let (a, b) = (v(0), v(1));
        build_features(&a, &b).unwrap()
    }

    #[test]
    fn zero_network_outputs_one_half() {
        let net = ValueNet::zeros(3, &[8, 4], 0.1).unwrap();
        let out = net.forward(&features(3, 1), Mode::Eval).unwrap();
        assert_eq!(out, 0.5);
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let net = ValueNet::new(4, &[16, 8], 0.1, &mut rng::stream(2, rng::INIT)).unwrap();
        let z = features(4, 3);
        let a = net.forward(&z, Mode::Eval).unwrap();
        let b = net.forward(&z, Mode::Eval).unwrap();
        assert_eq!(a, b);
        assert!(a > 0.0 && a < 1.0);
    }

    #[test]
    fn train_mode_uses_dropout_stream() {
        let net = ValueNet::new(4, &[16, 8], 0.5, &mut rng::stream(2, rng::INIT)).unwrap();
        let z = features(4, 3);
        let mut r1 = rng::stream(9, rng::DROPOUT);
        let mut r2 = rng::stream(9, rng::DROPOUT);
        let a = net.forward(&z, Mode::Train(&mut r1)).unwrap();
        let b = net.forward(&z, Mode::Train(&mut r2)).unwrap();
        assert_eq!(a, b);
        let c = net.forward(&z, Mode::Train(&mut r1)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let net = ValueNet::zeros(3, &[4], 0.0).unwrap();
        assert!(net.forward(&features(2, 1), Mode::Eval).is_err());
    }

    #[test]
    fn bce_of_one_half() {
        let net = ValueNet::zeros(2, &[4], 0.0).unwrap();
        let batch = [Sample {
            features: features(2, 1),
            label: true,
        }];
        let (loss, _) = net.loss_and_grads(&batch, None, 0.0, Mode::Eval).unwrap();
        assert!((loss.total - std::f64::consts::LN_2).abs() < 1e-15);

        let policy = PolicyEntropy::fixed(vec![0.5, 0.5]);
        let (loss, _) = net.loss_and_grads(&batch, Some(&policy), 0.03, Mode::Eval).unwrap();
        let expected = std::f64::consts::LN_2 - 0.03 * std::f64::consts::LN_2;
        assert!((loss.total - expected).abs() < 1e-15);
        assert!((loss.total - 0.672_353).abs() < 1e-6);
    }

    #[test]
    fn empty_batch_and_bad_policy_are_rejected() {
        let net = ValueNet::zeros(2, &[4], 0.0).unwrap();
        assert!(net.loss_and_grads(&[], None, 0.0, Mode::Eval).is_err());
        let batch = [Sample {
            features: features(2, 1),
            label: false,
        }];
        let bad = PolicyEntropy::fixed(vec![0.5, 0.6]);
        assert!(net.loss_and_grads(&batch, Some(&bad), 0.1, Mode::Eval).is_err());
    }

    proptest::proptest! {
        #[test]
        fn layer_norm_centres_and_scales(row in proptest::collection::vec(-100.0f64..100.0, 2..64)) {
            let n = row.len() as f64;
            let mean_in = row.iter().sum::<f64>() / n;
            let raw_var = row.iter().map(|v| (v - mean_in).powi(2)).sum::<f64>() / n;
            proptest::prop_assume!(raw_var > 10.0);
            let mut out = vec![0.0; row.len()];
            layer_norm(&row, &mut out);
            let mean = out.iter().sum::<f64>() / n;
            let var = out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            proptest::prop_assert!(mean.abs() <= 1e-9);
            proptest::prop_assert!((var - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn constant_row_normalizes_to_zero() {
        let mut out = [1.0; 4];
        layer_norm(&[3.0; 4], &mut out);
        assert_eq!(out, [0.0; 4]);
    }

    #[test]
    fn softmax_is_normalized_and_stable() {
        let p = softmax(&[1000.0, 999.0], 1.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[0] > p[1]);
        assert_eq!(softmax(&[0.3], 0.8), vec![1.0]);
    }
}
