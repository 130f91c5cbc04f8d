//! Fixed 2-10-10-1 tanh value network.
//!
//! The network maps a state `x` to a scalar cost-to-go estimate
//!
//! ```text
//! J(x) = W3 · tanh(W2 · tanh(W1 · x + b1) + b2) + b3
//! ```
//!
//! Besides the forward pass it provides the exact input gradient (the costate)
//! and a reverse pass for losses that depend on both `J(x)` and `∇ₓJ(x)`.
//! The latter needs the second derivative of `tanh`, which is taken from the
//! recorded activations: `d/dz (1 - tanh²z) = -2 tanh z (1 - tanh²z)`.

use std::path::Path;
use std::str::FromStr;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::State;

pub const INPUT_DIM: usize = 2;
pub const HIDDEN: usize = 10;
pub const ARCHITECTURE: [usize; 4] = [INPUT_DIM, HIDDEN, HIDDEN, 1];
pub const PARAM_COUNT: usize = HIDDEN * INPUT_DIM + HIDDEN + HIDDEN * HIDDEN + HIDDEN + HIDDEN + 1;

pub const WEIGHT_FORMAT_VERSION: u32 = 1;

/// Weights and biases of the value network. Matrices are stored row-major as
/// `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub w1: [[f64; INPUT_DIM]; HIDDEN],
    pub b1: [f64; HIDDEN],
    pub w2: [[f64; HIDDEN]; HIDDEN],
    pub b2: [f64; HIDDEN],
    pub w3: [f64; HIDDEN],
    pub b3: f64,
}

/// Intermediates of one forward evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTape {
    pub x: State,
    pub z1: [f64; HIDDEN],
    pub a1: [f64; HIDDEN],
    pub z2: [f64; HIDDEN],
    pub a2: [f64; HIDDEN],
    pub value: f64,
}

/// Upstream sensitivities of a per-sample loss `L(J, ∇ₓJ)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Sensitivities {
    pub value: f64,
    pub costate: State,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    #[default]
    GlorotUniform,
    Zeros,
}

impl FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "glorot_uniform" | "glorot" | "xavier" => Ok(InitScheme::GlorotUniform),
            "zeros" => Ok(InitScheme::Zeros),
            other => Err(Error::UnknownInitScheme(other.to_string())),
        }
    }
}

impl NetworkParams {
    pub fn zeros() -> Self {
        Self {
            w1: [[0.0; INPUT_DIM]; HIDDEN],
            b1: [0.0; HIDDEN],
            w2: [[0.0; HIDDEN]; HIDDEN],
            b2: [0.0; HIDDEN],
            w3: [0.0; HIDDEN],
            b3: 0.0,
        }
    }

    /// Deterministic initialization for a given seed.
    pub fn init(seed: u64, scheme: InitScheme) -> Self {
        let mut params = Self::zeros();
        if scheme == InitScheme::Zeros {
            return params;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |row: &mut [f64], fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
            for w in row {
                *w = dist.sample(&mut rng);
            }
        };
        fill(params.w1.as_flattened_mut(), INPUT_DIM, HIDDEN);
        fill(params.w2.as_flattened_mut(), HIDDEN, HIDDEN);
        fill(&mut params.w3, HIDDEN, 1);
        params
    }

    /// All parameters in the fixed order `w1, b1, w2, b2, w3, b3`.
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.w1
            .as_flattened()
            .iter()
            .chain(&self.b1)
            .chain(self.w2.as_flattened())
            .chain(&self.b2)
            .chain(&self.w3)
            .chain(std::iter::once(&self.b3))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w1
            .as_flattened_mut()
            .iter_mut()
            .chain(&mut self.b1)
            .chain(self.w2.as_flattened_mut())
            .chain(&mut self.b2)
            .chain(&mut self.w3)
            .chain(std::iter::once(&mut self.b3))
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.iter().copied().collect()
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        if values.len() != PARAM_COUNT {
            return Err(Error::WeightFormat(format!(
                "expected {PARAM_COUNT} parameters, got {}",
                values.len()
            )));
        }
        let mut params = Self::zeros();
        for (dst, src) in params.iter_mut().zip(values) {
            *dst = *src;
        }
        Ok(params)
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    pub fn forward(&self, x: &State) -> ForwardTape {
        let mut z1 = [0.0; HIDDEN];
        let mut a1 = [0.0; HIDDEN];
        for i in 0..HIDDEN {
            z1[i] = self.w1[i][0] * x[0] + self.w1[i][1] * x[1] + self.b1[i];
            a1[i] = z1[i].tanh();
        }
        let mut z2 = [0.0; HIDDEN];
        let mut a2 = [0.0; HIDDEN];
        for i in 0..HIDDEN {
            let mut acc = self.b2[i];
            for k in 0..HIDDEN {
                acc += self.w2[i][k] * a1[k];
            }
            z2[i] = acc;
            a2[i] = acc.tanh();
        }
        let mut value = self.b3;
        for i in 0..HIDDEN {
            value += self.w3[i] * a2[i];
        }
        ForwardTape {
            x: *x,
            z1,
            a1,
            z2,
            a2,
            value,
        }
    }

    pub fn value(&self, x: &State) -> f64 {
        self.forward(x).value
    }

    /// Exact gradient of the output with respect to the input.
    pub fn costate(&self, tape: &ForwardTape) -> State {
        let mut delta2 = [0.0; HIDDEN];
        for i in 0..HIDDEN {
            delta2[i] = self.w3[i] * (1.0 - tape.a2[i] * tape.a2[i]);
        }
        let mut out = [0.0; INPUT_DIM];
        for k in 0..HIDDEN {
            let mut back = 0.0;
            for i in 0..HIDDEN {
                back += self.w2[i][k] * delta2[i];
            }
            let delta1 = back * (1.0 - tape.a1[k] * tape.a1[k]);
            out[0] += self.w1[k][0] * delta1;
            out[1] += self.w1[k][1] * delta1;
        }
        out
    }

    /// Accumulates `dL/dθ` into `grad` for
    /// `L = sens.value · J(x) + sens.costate · ∇ₓJ(x)`.
    ///
    /// The costate term is handled as a directional derivative of `J` along
    /// `sens.costate`: the tangent is pushed forward through the tape and the
    /// reverse pass then runs over both the primal and the tangent values.
    pub fn backward(&self, tape: &ForwardTape, sens: &Sensitivities, grad: &mut NetworkParams) {
        let v = sens.costate;
        let c = sens.value;
        let x = tape.x;

        let mut s1 = [0.0; HIDDEN];
        let mut s2 = [0.0; HIDDEN];
        for i in 0..HIDDEN {
            s1[i] = 1.0 - tape.a1[i] * tape.a1[i];
            s2[i] = 1.0 - tape.a2[i] * tape.a2[i];
        }

        // tangent pass
        let mut zd1 = [0.0; HIDDEN];
        let mut ad1 = [0.0; HIDDEN];
        for i in 0..HIDDEN {
            zd1[i] = self.w1[i][0] * v[0] + self.w1[i][1] * v[1];
            ad1[i] = s1[i] * zd1[i];
        }
        let mut zd2 = [0.0; HIDDEN];
        for i in 0..HIDDEN {
            let mut acc = 0.0;
            for k in 0..HIDDEN {
                acc += self.w2[i][k] * ad1[k];
            }
            zd2[i] = acc;
        }

        // output layer
        grad.b3 += c;
        let mut adj_zd2 = [0.0; HIDDEN];
        let mut adj_z2 = [0.0; HIDDEN];
        for i in 0..HIDDEN {
            let ad2 = s2[i] * zd2[i];
            grad.w3[i] += c * tape.a2[i] + ad2;
            adj_zd2[i] = self.w3[i] * s2[i];
            let ds2 = -2.0 * tape.a2[i] * s2[i];
            adj_z2[i] = c * self.w3[i] * s2[i] + self.w3[i] * zd2[i] * ds2;
        }

        // second hidden layer
        let mut adj_ad1 = [0.0; HIDDEN];
        let mut adj_a1 = [0.0; HIDDEN];
        for i in 0..HIDDEN {
            grad.b2[i] += adj_z2[i];
            for k in 0..HIDDEN {
                grad.w2[i][k] += adj_zd2[i] * ad1[k] + adj_z2[i] * tape.a1[k];
                adj_ad1[k] += self.w2[i][k] * adj_zd2[i];
                adj_a1[k] += self.w2[i][k] * adj_z2[i];
            }
        }

        // first hidden layer
        for k in 0..HIDDEN {
            let adj_zd1 = adj_ad1[k] * s1[k];
            let ds1 = -2.0 * tape.a1[k] * s1[k];
            let adj_z1 = adj_a1[k] * s1[k] + adj_ad1[k] * zd1[k] * ds1;
            grad.b1[k] += adj_z1;
            for j in 0..INPUT_DIM {
                grad.w1[k][j] += adj_zd1 * v[j] + adj_z1 * x[j];
            }
        }
    }
}

/// Anything that yields a cost-to-go and its state gradient.
pub trait CostToGo: Sync {
    fn value_and_costate(&self, x: &State) -> (f64, State);
}

impl CostToGo for NetworkParams {
    fn value_and_costate(&self, x: &State) -> (f64, State) {
        let tape = self.forward(x);
        let lam = self.costate(&tape);
        (tape.value, lam)
    }
}

/// On-disk representation of a set of weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightFile {
    pub format_version: u32,
    pub architecture: Vec<usize>,
    pub activation: String,
    pub seed: Option<u64>,
    pub layers: WeightLayers,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct WeightLayers {
    pub W1: Vec<f64>,
    pub b1: Vec<f64>,
    pub W2: Vec<f64>,
    pub b2: Vec<f64>,
    pub W3: Vec<f64>,
    pub b3: Vec<f64>,
}

impl WeightFile {
    pub fn from_params(params: &NetworkParams, seed: Option<u64>) -> Self {
        Self {
            format_version: WEIGHT_FORMAT_VERSION,
            architecture: ARCHITECTURE.to_vec(),
            activation: "tanh".to_string(),
            seed,
            layers: WeightLayers {
                W1: params.w1.as_flattened().to_vec(),
                b1: params.b1.to_vec(),
                W2: params.w2.as_flattened().to_vec(),
                b2: params.b2.to_vec(),
                W3: params.w3.to_vec(),
                b3: vec![params.b3],
            },
        }
    }

    pub fn to_params(&self) -> Result<NetworkParams> {
        if self.format_version != WEIGHT_FORMAT_VERSION {
            return Err(Error::WeightFormat(format!(
                "unsupported format_version {}",
                self.format_version
            )));
        }
        if self.architecture != ARCHITECTURE {
            return Err(Error::WeightFormat(format!(
                "architecture {:?} is not {:?}",
                self.architecture, ARCHITECTURE
            )));
        }
        if self.activation != "tanh" {
            return Err(Error::WeightFormat(format!(
                "activation `{}` is not tanh",
                self.activation
            )));
        }
        let l = &self.layers;
        let mut flat = Vec::with_capacity(PARAM_COUNT);
        for (name, values, len) in [
            ("W1", &l.W1, HIDDEN * INPUT_DIM),
            ("b1", &l.b1, HIDDEN),
            ("W2", &l.W2, HIDDEN * HIDDEN),
            ("b2", &l.b2, HIDDEN),
            ("W3", &l.W3, HIDDEN),
            ("b3", &l.b3, 1),
        ] {
            if values.len() != len {
                return Err(Error::WeightFormat(format!(
                    "layer {name} has {} entries, expected {len}",
                    values.len()
                )));
            }
            flat.extend_from_slice(values);
        }
        NetworkParams::from_slice(&flat)
    }
}

/// Writes weights as pretty JSON. Floats use the shortest representation that
/// parses back to the same bits.
pub fn save_weights(path: &Path, params: &NetworkParams, seed: Option<u64>) -> Result<()> {
    let doc = WeightFile::from_params(params, seed);
    let text = serde_json::to_string_pretty(&doc)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<(NetworkParams, Option<u64>)> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: WeightFile = serde_json::from_str(&text)?;
    Ok((doc.to_params()?, doc.seed))
}
