//! The case value network: a small MLP scoring (state, case) feature vectors.
//!
//! Architecture: for each hidden width, affine → layer norm (with gain and
//! offset) → GELU → inverted dropout, then a single-logit affine output
//! squashed by a logistic sigmoid. Parameters live in one flat vector so that
//! gradients and optimizer state share its layout.

mod adam;
mod net;

use std::ops::Range;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::rng::Rng;

pub use adam::Adam;
pub use net::{softmax, EntropyPathway, Loss, Mode, PolicyEntropy, Sample};

pub const LAYER_NORM_EPS: f64 = 1e-5;
const PARAMS_VERSION: u32 = 1;

/// `[e_s ; e_m ; |e_s - e_m| ; e_s ⊙ e_m]`, length `4d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Features(Vec<f64>);

impl Features {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn build_features(state: &Embedding, memory: &Embedding) -> Result<Features> {
    let (s, m) = (state.as_slice(), memory.as_slice());
    if s.len() != m.len() {
        return Err(Error::invalid(format!(
            "feature inputs have dimensions {} and {}",
            s.len(),
            m.len()
        )));
    }
    let mut z = Vec::with_capacity(4 * s.len());
    z.extend_from_slice(s);
    z.extend_from_slice(m);
    z.extend(s.iter().zip(m).map(|(a, b)| (a - b).abs()));
    z.extend(s.iter().zip(m).map(|(a, b)| a * b));
    Ok(Features(z))
}

#[derive(Debug, Clone, PartialEq)]
struct HiddenSlots {
    n_in: usize,
    n_out: usize,
    w: Range<usize>,
    b: Range<usize>,
    gain: Range<usize>,
    offset: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    hidden: Vec<HiddenSlots>,
    out_w: Range<usize>,
    out_b: usize,
    len: usize,
}

impl Layout {
    fn new(input: usize, hidden: &[usize]) -> Self {
        let mut cursor = 0;
        let mut take = |n: usize| {
            let r = cursor..cursor + n;
            cursor += n;
            r
        };
        let mut slots = Vec::with_capacity(hidden.len());
        let mut n_in = input;
        for &n_out in hidden {
            slots.push(HiddenSlots {
                n_in,
                n_out,
                w: take(n_in * n_out),
                b: take(n_out),
                gain: take(n_out),
                offset: take(n_out),
            });
            n_in = n_out;
        }
        let out_w = take(n_in);
        let out_b = take(1).start;
        Self {
            hidden: slots,
            out_w,
            out_b,
            len: cursor,
        }
    }
}

/// Parameters of the value network.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueNet {
    dim: usize,
    p_drop: f64,
    layout: Layout,
    theta: Vec<f64>,
}

/// Gradient of a scalar loss with respect to every entry of a [`ValueNet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<f64>);

impl Gradients {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl ValueNet {
    /// Uniform Glorot initialization of weights, zero biases, unit gain.
    pub fn new(dim: usize, hidden: &[usize], p_drop: f64, rng: &mut Rng) -> Result<Self> {
        let mut net = Self::zeros(dim, hidden, p_drop)?;
        let layout = net.layout.clone();
        for slots in &layout.hidden {
            let bound = (6.0 / (slots.n_in + slots.n_out) as f64).sqrt();
            for w in &mut net.theta[slots.w.clone()] {
                *w = rng.gen_range(-bound..=bound);
            }
        }
        let last = layout.hidden.last().map_or(4 * dim, |s| s.n_out);
        let bound = (6.0 / (last + 1) as f64).sqrt();
        for w in &mut net.theta[layout.out_w.clone()] {
            *w = rng.gen_range(-bound..=bound);
        }
        Ok(net)
    }

    /// All weights and biases zero, layer-norm gain one and offset zero.
    pub fn zeros(dim: usize, hidden: &[usize], p_drop: f64) -> Result<Self> {
        if dim == 0 || hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::invalid("value net needs d >= 1 and non-empty positive hidden widths"));
        }
        if !(0.0..1.0).contains(&p_drop) {
            return Err(Error::invalid(format!("dropout rate {p_drop} outside [0, 1)")));
        }
        let layout = Layout::new(4 * dim, hidden);
        let mut theta = vec![0.0; layout.len];
        for slots in &layout.hidden {
            theta[slots.gain.clone()].fill(1.0);
        }
        Ok(Self {
            dim,
            p_drop,
            layout,
            theta,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn p_drop(&self) -> f64 {
        self.p_drop
    }

    pub fn hidden(&self) -> Vec<usize> {
        self.layout.hidden.iter().map(|s| s.n_out).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layout.len
    }

    pub fn params(&self) -> &[f64] {
        &self.theta
    }

    /// Mutable access to the flat parameter vector (finite-difference checks, tests).
    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(&self.to_file())?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ParamsFile = serde_json::from_str(&text)?;
        Self::from_file(file)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_file())?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(json)?)
    }

    fn to_file(&self) -> ParamsFile {
        let rows = |r: &Range<usize>, n_in: usize| -> Vec<Vec<f64>> {
            self.theta[r.clone()].chunks(n_in).map(<[f64]>::to_vec).collect()
        };
        let layers = self
            .layout
            .hidden
            .iter()
            .map(|s| LayerFile {
                w: rows(&s.w, s.n_in),
                b: self.theta[s.b.clone()].to_vec(),
                ln_gain: self.theta[s.gain.clone()].to_vec(),
                ln_offset: self.theta[s.offset.clone()].to_vec(),
            })
            .collect();
        ParamsFile {
            version: PARAMS_VERSION,
            d: self.dim,
            p_drop: self.p_drop,
            layers,
            out: OutFile {
                w: vec![self.theta[self.layout.out_w.clone()].to_vec()],
                b: vec![self.theta[self.layout.out_b]],
            },
        }
    }

    fn from_file(file: ParamsFile) -> Result<Self> {
        if file.version != PARAMS_VERSION {
            return Err(Error::invalid(format!("unsupported params version {}", file.version)));
        }
        let hidden: Vec<usize> = file.layers.iter().map(|l| l.b.len()).collect();
        let mut net = Self::zeros(file.d, &hidden, file.p_drop)?;
        let layout = net.layout.clone();
        let shape_err = |what: &str| Error::invalid(format!("params file: {what} has the wrong shape"));
        for (slots, layer) in layout.hidden.iter().zip(&file.layers) {
            if layer.w.len() != slots.n_out || layer.w.iter().any(|r| r.len() != slots.n_in) {
                return Err(shape_err("w"));
            }
            if layer.ln_gain.len() != slots.n_out || layer.ln_offset.len() != slots.n_out {
                return Err(shape_err("layer norm"));
            }
            let flat: Vec<f64> = layer.w.iter().flatten().copied().collect();
            net.theta[slots.w.clone()].copy_from_slice(&flat);
            net.theta[slots.b.clone()].copy_from_slice(&layer.b);
            net.theta[slots.gain.clone()].copy_from_slice(&layer.ln_gain);
            net.theta[slots.offset.clone()].copy_from_slice(&layer.ln_offset);
        }
        if file.out.w.len() != 1 || file.out.w[0].len() != layout.out_w.len() || file.out.b.len() != 1 {
            return Err(shape_err("out"));
        }
        net.theta[layout.out_w.clone()].copy_from_slice(&file.out.w[0]);
        net.theta[layout.out_b] = file.out.b[0];
        if net.theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("params file contains non-finite values"));
        }
        Ok(net)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerFile {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
    ln_gain: Vec<f64>,
    ln_offset: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct OutFile {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamsFile {
    version: u32,
    d: usize,
    p_drop: f64,
    layers: Vec<LayerFile>,
    out: OutFile,
}
