//! Fully connected networks for the four players and batch power
//! normalization.
//!
//! | role          | map     | hidden | output   | linear skip |
//! |---------------|---------|--------|----------|-------------|
//! | compressor f  | n → k   | relu   | identity | no          |
//! | reconstructor r | k → n | relu   | sigmoid  | no          |
//! | transmitter g | k → k   | relu   | identity | yes         |
//! | receiver h    | k → k   | relu   | identity | yes         |

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Graph, Tensor, Var};

/// Stabilizer inside the batch standard deviation.
pub const POWER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "identity" => Some(Activation::Identity),
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            "sigmoid" => Some(Activation::Sigmoid),
            _ => None,
        }
    }

    fn apply(self, g: &mut Graph, x: Var) -> Result<Var> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Relu => g.relu(x),
            Activation::Tanh => g.tanh(x),
            Activation::Sigmoid => g.sigmoid(x),
        }
    }
}

/// Weights of one MLP. Layer `i` maps `d_i → d_{i+1}` with a
/// `d_{i+1} × d_i` weight matrix and a `d_{i+1}` bias. An optional
/// `d_L × d_0` skip matrix adds a linear map from input to output.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub layer_dims: Vec<usize>,
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub skip: Option<Tensor>,
}

fn glorot(rng: &mut Rng, fan_out: usize, fan_in: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.uniform_range(-bound, bound))
        .collect();
    Tensor::from_parts(vec![fan_out, fan_in], data)
}

impl MlpParams {
    /// Glorot-uniform weights, zero biases, deterministic in `seed`.
    pub fn init(
        layer_dims: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
        linear_skip: bool,
        seed: u64,
    ) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(Error::Config(format!(
                "layer dims must list at least input and output sizes, all positive; got {layer_dims:?}"
            )));
        }
        let mut rng = Rng::derive(seed, "mlp-init");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_dims.windows(2) {
            weights.push(glorot(&mut rng, w[1], w[0]));
            biases.push(Tensor::zeros(&[w[1]]));
        }
        let skip = linear_skip.then(|| {
            glorot(&mut rng, *layer_dims.last().unwrap(), layer_dims[0])
        });
        Ok(MlpParams {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            hidden_activation,
            output_activation,
            skip,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn linear_skip(&self) -> bool {
        self.skip.is_some()
    }

    /// Checks weight, bias and skip shapes against `layer_dims`.
    pub fn validate(&self) -> Result<()> {
        let layers = self.layer_dims.len().saturating_sub(1);
        if layers == 0 || self.weights.len() != layers || self.biases.len() != layers {
            return Err(Error::Config(format!(
                "{} weights and {} biases for layer dims {:?}",
                self.weights.len(),
                self.biases.len(),
                self.layer_dims
            )));
        }
        for (i, w) in self.layer_dims.windows(2).enumerate() {
            if self.weights[i].shape() != [w[1], w[0]] || self.biases[i].len() != w[1] {
                return Err(Error::Shape {
                    op: "mlp_params",
                    shapes: vec![self.weights[i].shape().to_vec(), self.biases[i].shape().to_vec()],
                });
            }
        }
        if let Some(s) = &self.skip {
            if s.shape() != [self.output_dim(), self.input_dim()] {
                return Err(Error::Shape {
                    op: "mlp_params",
                    shapes: vec![s.shape().to_vec()],
                });
            }
        }
        Ok(())
    }

    /// Parameter tensors in declaration order: `w0, b0, w1, b1, …, skip`.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::with_capacity(2 * self.weights.len() + 1);
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w);
            out.push(b);
        }
        out.extend(self.skip.as_ref());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::with_capacity(2 * self.weights.len() + 1);
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        out.extend(self.skip.as_mut());
        out
    }

    /// Puts the parameters on `graph`, trainable or frozen.
    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> BoundMlp {
        let mut leaf = |t: &Tensor| {
            if trainable {
                graph.param(t.clone())
            } else {
                graph.constant(t.clone())
            }
        };
        let weights = self.weights.iter().map(&mut leaf).collect();
        let biases = self.biases.iter().map(&mut leaf).collect();
        let skip = self.skip.as_ref().map(leaf);
        BoundMlp {
            input_dim: self.input_dim(),
            weights,
            biases,
            skip,
            hidden_activation: self.hidden_activation,
            output_activation: self.output_activation,
        }
    }

    /// Evaluates the network on a batch outside any caller graph.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let y = bound.forward(&mut g, xv)?;
        Ok(g.value(y).clone())
    }
}

/// An [`MlpParams`] whose tensors live on a graph.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    input_dim: usize,
    weights: Vec<Var>,
    biases: Vec<Var>,
    skip: Option<Var>,
    hidden_activation: Activation,
    output_activation: Activation,
}

impl BoundMlp {
    /// Graph handles in the same order as [`MlpParams::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::with_capacity(2 * self.weights.len() + 1);
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(*w);
            out.push(*b);
        }
        out.extend(self.skip);
        out
    }

    /// Affine + activation stack on a `[batch, d_0]` input.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let shape = g.shape(x);
        if shape.len() != 2 || shape[1] != self.input_dim {
            return Err(Error::Shape {
                op: "mlp_forward",
                shapes: vec![shape.to_vec(), vec![self.input_dim]],
            });
        }
        let last = self.weights.len() - 1;
        let mut h = x;
        for (i, (&w, &b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let a = g.matmul_t(h, w)?;
            let a = g.add(a, b)?;
            h = if i == last {
                a
            } else {
                self.hidden_activation.apply(g, a)?
            };
        }
        if let Some(s) = self.skip {
            let lin = g.matmul_t(x, s)?;
            h = g.add(h, lin)?;
        }
        self.output_activation.apply(g, h)
    }
}

/// Per-coordinate batch standardization to power `p`:
/// `sqrt(p) · (z − mean) / sqrt(var + ε)`, with the (biased) batch
/// statistics taking part in the graph.
pub fn power_normalize(g: &mut Graph, z: Var, p: f64) -> Result<Var> {
    let shape = g.shape(z);
    if shape.len() != 2 || shape[0] < 2 {
        return Err(Error::Contract(format!(
            "power normalization needs a [batch >= 2, k] input, got {shape:?}"
        )));
    }
    let mean = g.mean_rows(z)?;
    let centered = g.sub(z, mean)?;
    let sq = g.square(centered)?;
    let var = g.mean_rows(sq)?;
    let var = g.add_scalar(var, POWER_NORM_EPS)?;
    let sd = g.sqrt(var)?;
    let unit = g.div(centered, sd)?;
    if p == 1.0 {
        Ok(unit)
    } else {
        g.scale(unit, p.sqrt())
    }
}

/// [`power_normalize`] on a plain tensor.
pub fn power_normalize_tensor(z: &Tensor, p: f64) -> Result<Tensor> {
    let mut g = Graph::new();
    let v = g.constant(z.clone());
    let out = power_normalize(&mut g, v, p)?;
    Ok(g.value(out).clone())
}

/// The four networks of the jamming game.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkRoles {
    pub compressor: MlpParams,
    pub reconstructor: MlpParams,
    pub transmitter: MlpParams,
    pub receiver: MlpParams,
}

impl NetworkRoles {
    /// Default architecture: f and r with one hidden layer of `data_hidden`,
    /// g and h with one hidden layer of `jscc_hidden` plus a linear skip.
    pub fn init(n: usize, k: usize, data_hidden: usize, jscc_hidden: usize, seed: u64) -> Result<Self> {
        let roles = NetworkRoles {
            compressor: MlpParams::init(
                &[n, data_hidden, k],
                Activation::Relu,
                Activation::Identity,
                false,
                crate::rng::derive_seed(seed, "compressor"),
            )?,
            reconstructor: MlpParams::init(
                &[k, data_hidden, n],
                Activation::Relu,
                Activation::Sigmoid,
                false,
                crate::rng::derive_seed(seed, "reconstructor"),
            )?,
            transmitter: MlpParams::init(
                &[k, jscc_hidden, k],
                Activation::Relu,
                Activation::Identity,
                true,
                crate::rng::derive_seed(seed, "transmitter"),
            )?,
            receiver: MlpParams::init(
                &[k, jscc_hidden, k],
                Activation::Relu,
                Activation::Identity,
                true,
                crate::rng::derive_seed(seed, "receiver"),
            )?,
        };
        roles.validate()?;
        Ok(roles)
    }

    pub fn validate(&self) -> Result<()> {
        for net in [&self.compressor, &self.reconstructor, &self.transmitter, &self.receiver] {
            net.validate()?;
        }
        let k = self.compressor.output_dim();
        let dims_ok = self.transmitter.input_dim() == k
            && self.transmitter.output_dim() == k
            && self.receiver.input_dim() == k
            && self.receiver.output_dim() == k
            && self.reconstructor.input_dim() == k
            && self.reconstructor.output_dim() == self.compressor.input_dim();
        if !dims_ok {
            return Err(Error::Config(format!(
                "inconsistent role dimensions: f {:?}, r {:?}, g {:?}, h {:?}",
                self.compressor.layer_dims,
                self.reconstructor.layer_dims,
                self.transmitter.layer_dims,
                self.receiver.layer_dims
            )));
        }
        Ok(())
    }
}
