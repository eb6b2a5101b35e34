//! The adversarial-jamming minimax game.
//!
//! The compressor `f` maps data `d` to a power-normalized latent `z`, which
//! doubles as additive jamming noise on the channel of an auxiliary JSCC
//! autoencoder `(g, h)` that transmits a fresh standard Gaussian source `x`:
//!
//! ```text
//! y = P_t-normalize(g(x)),  ŷ = y + z + n,  x̂ = h(ŷ)
//! L_jscc = mean (x − x̂)²
//! L_data = mean (d − r(z))² − η · L_jscc
//! ```
//!
//! One [`train_step`] first updates `(g, h)` on `L_jscc` with `z` detached,
//! then updates `(f, r)` on `L_data` with gradients flowing through the
//! frozen `(g, h)` into `z`.

use crate::baselines;
use crate::data::{batches, BatchPlan, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{mse_metric, MetricsReport};
use crate::nets::{power_normalize, power_normalize_tensor, BoundMlp, MlpParams, NetworkRoles};
use crate::rng::{derive_seed, Rng};
use crate::tensor::{AdamConfig, AdamState, Graph, Tensor, Var};

/// Latent regularizer used by a training run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegularizerKind {
    /// Adversarial jamming against the JSCC autoencoder.
    Aj,
    /// VAE: analytic KL to `N(0, I)`.
    Kl,
    /// WAE: IMQ-kernel MMD to `N(0, I)`.
    Mmd,
    /// Plain autoencoder.
    None,
}

impl RegularizerKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "aj" => Ok(RegularizerKind::Aj),
            "kl" => Ok(RegularizerKind::Kl),
            "mmd" => Ok(RegularizerKind::Mmd),
            "none" => Ok(RegularizerKind::None),
            other => Err(Error::Config(format!(
                "unknown regularizer `{other}` (expected aj, kl, mmd or none)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RegularizerKind::Aj => "aj",
            RegularizerKind::Kl => "kl",
            RegularizerKind::Mmd => "mmd",
            RegularizerKind::None => "none",
        }
    }
}

/// Game and training hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GameConfig {
    /// Latent dimension.
    pub k: usize,
    /// Data dimension.
    pub n: usize,
    /// Per-dimension transmitter power.
    pub p_t: f64,
    /// Per-dimension jammer (latent) power.
    pub p_a: f64,
    /// Variance of the fixed channel noise.
    pub sigma_n_sq: f64,
    /// Weight of the jamming term in the data objective.
    pub eta: f64,
    pub regularizer: RegularizerKind,
    /// Baseline regularizer weight; defaults to 1 for KL and 10 for MMD.
    pub lambda: Option<f64>,
    /// IMQ kernel constant; defaults to `2k`.
    pub mmd_scale: Option<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub jscc_steps_per_data_step: usize,
    pub seed: u64,
    pub jscc_hidden: usize,
    pub data_hidden: usize,
}

impl GameConfig {
    pub fn new(k: usize, n: usize) -> Self {
        GameConfig {
            k,
            n,
            p_t: 1.0,
            p_a: 1.0,
            sigma_n_sq: 0.0,
            eta: 1.0,
            regularizer: RegularizerKind::Aj,
            lambda: None,
            mmd_scale: None,
            batch_size: 128,
            epochs: 20,
            lr: 1e-3,
            jscc_steps_per_data_step: 1,
            seed: 0,
            jscc_hidden: 64,
            data_hidden: 512,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.k < 1 || self.n < 1 {
            return fail("k and n must be at least 1");
        }
        if !(self.p_t > 0.0 && self.p_a > 0.0) {
            return fail("P_t and P_a must be positive");
        }
        if !(self.sigma_n_sq >= 0.0) {
            return fail("sigma_n_sq must be non-negative");
        }
        if !(self.eta >= 0.0) {
            return fail("eta must be non-negative");
        }
        if self.batch_size < 2 {
            return fail("batch_size must be at least 2");
        }
        if !(self.lr >= 0.0) {
            return fail("lr must be non-negative");
        }
        if self.jscc_steps_per_data_step < 1 {
            return fail("jscc_steps_per_data_step must be at least 1");
        }
        if self.jscc_hidden < 1 || self.data_hidden < 1 {
            return fail("hidden sizes must be at least 1");
        }
        if self.lambda.is_some_and(|l| !(l >= 0.0)) {
            return fail("lambda must be non-negative");
        }
        if self.mmd_scale.is_some_and(|c| !(c > 0.0)) {
            return fail("mmd_scale must be positive");
        }
        Ok(())
    }

    pub fn reg_weight(&self) -> f64 {
        self.lambda.unwrap_or(match self.regularizer {
            RegularizerKind::Kl => 1.0,
            RegularizerKind::Mmd => 10.0,
            _ => 0.0,
        })
    }

    pub fn imq_scale(&self) -> f64 {
        self.mmd_scale.unwrap_or(2.0 * self.k as f64)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }

    /// Width of the compressor output: `2k` for the VAE head, else `k`.
    pub fn compressor_out(&self) -> usize {
        if self.regularizer == RegularizerKind::Kl {
            2 * self.k
        } else {
            self.k
        }
    }
}

/// Transmitter and receiver with their optimizers.
#[derive(Clone, Debug)]
pub struct JsccPlayers {
    pub transmitter: MlpParams,
    pub receiver: MlpParams,
    pub opt_transmitter: AdamState,
    pub opt_receiver: AdamState,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub compressor: MlpParams,
    pub reconstructor: MlpParams,
    pub opt_compressor: AdamState,
    pub opt_reconstructor: AdamState,
    /// Present only for adversarial-jamming runs.
    pub jscc: Option<JsccPlayers>,
    pub epoch: usize,
    pub step: u64,
    pub rng: Rng,
    pub history: Vec<MetricsReport>,
}

impl TrainState {
    pub fn init(config: &GameConfig) -> Result<Self> {
        config.validate()?;
        let roles = NetworkRoles::init(config.n, config.k, config.data_hidden, config.jscc_hidden, config.seed)?;
        let mut compressor = roles.compressor;
        if config.regularizer == RegularizerKind::Kl {
            compressor = MlpParams::init(
                &[config.n, config.data_hidden, 2 * config.k],
                compressor.hidden_activation,
                compressor.output_activation,
                false,
                derive_seed(config.seed, "compressor"),
            )?;
        }
        let adam = config.adam();
        let jscc = (config.regularizer == RegularizerKind::Aj).then(|| JsccPlayers {
            opt_transmitter: AdamState::new(adam, roles.transmitter.tensors()),
            opt_receiver: AdamState::new(adam, roles.receiver.tensors()),
            transmitter: roles.transmitter,
            receiver: roles.receiver,
        });
        Ok(TrainState {
            opt_compressor: AdamState::new(adam, compressor.tensors()),
            opt_reconstructor: AdamState::new(adam, roles.reconstructor.tensors()),
            compressor,
            reconstructor: roles.reconstructor,
            jscc,
            epoch: 0,
            step: 0,
            rng: Rng::derive(config.seed, "train"),
            history: Vec::new(),
        })
    }

    /// All four networks, for adversarial-jamming runs.
    pub fn roles(&self) -> Option<NetworkRoles> {
        self.jscc.as_ref().map(|j| NetworkRoles {
            compressor: self.compressor.clone(),
            reconstructor: self.reconstructor.clone(),
            transmitter: j.transmitter.clone(),
            receiver: j.receiver.clone(),
        })
    }
}

/// `ŷ = y + z + n` with fresh `n ~ N(0, σ_n² I)`; exactly `y + z` when
/// `σ_n² = 0`.
pub fn channel_output(g: &mut Graph, y: Var, z: Var, sigma_n_sq: f64, rng: &mut Rng) -> Result<Var> {
    if g.shape(y) != g.shape(z) {
        return Err(Error::Shape {
            op: "channel_output",
            shapes: vec![g.shape(y).to_vec(), g.shape(z).to_vec()],
        });
    }
    let s = g.add(y, z)?;
    if sigma_n_sq == 0.0 {
        return Ok(s);
    }
    let shape = g.shape(y).to_vec();
    let sd = sigma_n_sq.sqrt();
    let noise = rng.normal_tensor(&shape).map(|v| sd * v);
    let nv = g.constant(noise);
    g.add(s, nv)
}

/// Channel geometry shared by both objectives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelParams {
    pub p_t: f64,
    pub sigma_n_sq: f64,
}

impl From<&GameConfig> for ChannelParams {
    fn from(c: &GameConfig) -> Self {
        ChannelParams {
            p_t: c.p_t,
            sigma_n_sq: c.sigma_n_sq,
        }
    }
}

/// Intermediate handles of one pass through the JSCC autoencoder.
#[derive(Clone, Copy, Debug)]
pub struct JsccPass {
    pub y: Var,
    pub x_hat: Var,
    pub loss: Var,
}

/// `mean (x − h(P_t-normalize(g(x)) + z + n))²`, with no constraint on
/// how gradients reach `z`.
pub fn jscc_distortion(
    g: &mut Graph,
    transmitter: &BoundMlp,
    receiver: &BoundMlp,
    x: Var,
    z: Var,
    channel: ChannelParams,
    rng: &mut Rng,
) -> Result<JsccPass> {
    let raw = transmitter.forward(g, x)?;
    let y = power_normalize(g, raw, channel.p_t)?;
    let y_hat = channel_output(g, y, z, channel.sigma_n_sq, rng)?;
    let x_hat = receiver.forward(g, y_hat)?;
    let err = g.sub(x, x_hat)?;
    let sq = g.square(err)?;
    let loss = g.mean(sq)?;
    Ok(JsccPass { y, x_hat, loss })
}

/// The JSCC objective minimized by `(g, h)`. `z` must carry no gradient
/// path back to the compressor.
pub fn jscc_loss(
    g: &mut Graph,
    transmitter: &BoundMlp,
    receiver: &BoundMlp,
    x: Var,
    z_detached: Var,
    channel: ChannelParams,
    rng: &mut Rng,
) -> Result<JsccPass> {
    if !g.is_detached(z_detached) {
        return Err(Error::Contract(
            "jammer output entering the JSCC objective must be detached".into(),
        ));
    }
    jscc_distortion(g, transmitter, receiver, x, z_detached, channel, rng)
}

/// `z = P_a-normalize(f(d))`.
pub fn encode(g: &mut Graph, compressor: &BoundMlp, d: Var, p_a: f64) -> Result<Var> {
    let raw = compressor.forward(g, d)?;
    power_normalize(g, raw, p_a)
}

#[derive(Clone, Copy, Debug)]
pub struct DataLoss {
    pub loss: Var,
    pub mse: Var,
}

/// `mean (d − r(z))² − η · jscc_term`.
pub fn data_loss(
    g: &mut Graph,
    reconstructor: &BoundMlp,
    d: Var,
    z: Var,
    jscc_term: Var,
    eta: f64,
) -> Result<DataLoss> {
    if !(eta >= 0.0) {
        return Err(Error::Config(format!("eta must be non-negative, got {eta}")));
    }
    let mse = reconstruction_mse(g, reconstructor, d, z)?;
    let weighted = g.scale(jscc_term, eta)?;
    let loss = g.sub(mse, weighted)?;
    Ok(DataLoss { loss, mse })
}

pub fn reconstruction_mse(g: &mut Graph, reconstructor: &BoundMlp, d: Var, z: Var) -> Result<Var> {
    let d_hat = reconstructor.forward(g, z)?;
    let err = g.sub(d, d_hat)?;
    let sq = g.square(err)?;
    g.mean(sq)
}

/// Diagnostics of one [`train_step`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepReport {
    /// JSCC objective of the last `(g, h)` sub-step.
    pub jscc_loss: f64,
    /// Jamming term seen by the compressor update.
    pub jscc_term: f64,
    pub data_mse: f64,
    pub data_loss: f64,
    /// Largest compressor gradient entry during the `(g, h)` updates.
    pub compressor_grad_phase_a: f64,
    /// Largest transmitter / receiver gradient entries during the `(f, r)`
    /// update.
    pub transmitter_grad_phase_b: f64,
    pub receiver_grad_phase_b: f64,
    /// Largest `|batch variance − target|` over the coordinates of every
    /// `y` and `z` that entered the channel.
    pub max_power_deviation: f64,
}

fn power_deviation(t: &Tensor, target: f64) -> f64 {
    (0..t.cols())
        .map(|j| {
            let c = t.column(j);
            let m = c.len() as f64;
            let mean = c.iter().sum::<f64>() / m;
            let var = c.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
            (var - target).abs()
        })
        .fold(0.0, f64::max)
}

fn step_params(
    opt: &mut AdamState,
    net: &mut MlpParams,
    grads: &crate::tensor::Gradients,
    vars: &[Var],
) -> Result<()> {
    let gs: Vec<Option<&Tensor>> = vars.iter().map(|&v| grads.get(v)).collect();
    opt.step(&mut net.tensors_mut(), &gs)
}

/// One round of the game on a data batch: `jscc_steps_per_data_step`
/// updates of `(g, h)` against the detached jammer, then one update of
/// `(f, r)` through the frozen `(g, h)`.
pub fn train_step(state: &mut TrainState, d_batch: &Tensor, config: &GameConfig) -> Result<StepReport> {
    if config.regularizer != RegularizerKind::Aj {
        return Err(Error::Contract(format!(
            "train_step plays the jamming game; regularizer `{}` uses its own step",
            config.regularizer.name()
        )));
    }
    if d_batch.cols() != config.n || d_batch.rows() < 2 {
        return Err(Error::Shape {
            op: "train_step",
            shapes: vec![d_batch.shape().to_vec(), vec![config.batch_size, config.n]],
        });
    }
    let TrainState {
        compressor,
        reconstructor,
        opt_compressor,
        opt_reconstructor,
        jscc,
        rng,
        step,
        ..
    } = state;
    let players = jscc
        .as_mut()
        .ok_or_else(|| Error::Contract("jamming run without transmitter/receiver".into()))?;
    let channel = ChannelParams::from(config);
    let batch = d_batch.rows();
    let mut report = StepReport::default();

    let mut g = Graph::new();
    let d = g.constant(d_batch.clone());
    let f = compressor.bind(&mut g, true);
    let z = encode(&mut g, &f, d, config.p_a)?;
    let z_detached = g.detach(z)?;
    report.max_power_deviation = power_deviation(g.value(z), config.p_a);
    let f_vars = f.vars();

    // (a) transmitter/receiver descend on L_jscc against the detached jammer
    for _ in 0..config.jscc_steps_per_data_step {
        let tx = players.transmitter.bind(&mut g, true);
        let rx = players.receiver.bind(&mut g, true);
        let x = g.constant(rng.normal_tensor(&[batch, config.k]));
        let pass = jscc_loss(&mut g, &tx, &rx, x, z_detached, channel, rng)?;
        report.max_power_deviation = report
            .max_power_deviation
            .max(power_deviation(g.value(pass.y), config.p_t));
        let (tx_vars, rx_vars) = (tx.vars(), rx.vars());
        let wrt: Vec<Var> = f_vars.iter().chain(&tx_vars).chain(&rx_vars).copied().collect();
        let grads = g.backward(pass.loss, &wrt)?;
        report.compressor_grad_phase_a = report.compressor_grad_phase_a.max(grads.max_abs(&f_vars));
        report.jscc_loss = g.value(pass.loss).item();
        step_params(&mut players.opt_transmitter, &mut players.transmitter, &grads, &tx_vars)?;
        step_params(&mut players.opt_receiver, &mut players.receiver, &grads, &rx_vars)?;
    }

    // (b) compressor/reconstructor descend on L_data = MSE − η L_jscc, with
    // the updated transmitter/receiver frozen
    let tx = players.transmitter.bind(&mut g, false);
    let rx = players.receiver.bind(&mut g, false);
    let x = g.constant(rng.normal_tensor(&[batch, config.k]));
    let pass = jscc_distortion(&mut g, &tx, &rx, x, z, channel, rng)?;
    report.max_power_deviation = report
        .max_power_deviation
        .max(power_deviation(g.value(pass.y), config.p_t));
    let r = reconstructor.bind(&mut g, true);
    let loss = data_loss(&mut g, &r, d, z, pass.loss, config.eta)?;
    let (tx_vars, rx_vars, r_vars) = (tx.vars(), rx.vars(), r.vars());
    let wrt: Vec<Var> = f_vars
        .iter()
        .chain(&r_vars)
        .chain(&tx_vars)
        .chain(&rx_vars)
        .copied()
        .collect();
    let grads = g.backward(loss.loss, &wrt)?;
    report.transmitter_grad_phase_b = grads.max_abs(&tx_vars);
    report.receiver_grad_phase_b = grads.max_abs(&rx_vars);
    report.jscc_term = g.value(pass.loss).item();
    report.data_mse = g.value(loss.mse).item();
    report.data_loss = g.value(loss.loss).item();
    step_params(opt_compressor, compressor, &grads, &f_vars)?;
    step_params(opt_reconstructor, reconstructor, &grads, &r_vars)?;
    *step += 1;
    Ok(report)
}

/// Plain autoencoder step on `mean (d − r(P_a-normalize(f(d))))²`.
pub fn plain_train_step(state: &mut TrainState, d_batch: &Tensor, config: &GameConfig) -> Result<StepReport> {
    let mut g = Graph::new();
    let d = g.constant(d_batch.clone());
    let f = state.compressor.bind(&mut g, true);
    let z = encode(&mut g, &f, d, config.p_a)?;
    let r = state.reconstructor.bind(&mut g, true);
    let mse = reconstruction_mse(&mut g, &r, d, z)?;
    let (f_vars, r_vars) = (f.vars(), r.vars());
    let wrt: Vec<Var> = f_vars.iter().chain(&r_vars).copied().collect();
    let grads = g.backward(mse, &wrt)?;
    step_params(&mut state.opt_compressor, &mut state.compressor, &grads, &f_vars)?;
    step_params(&mut state.opt_reconstructor, &mut state.reconstructor, &grads, &r_vars)?;
    state.step += 1;
    let v = g.value(mse).item();
    Ok(StepReport {
        data_mse: v,
        data_loss: v,
        max_power_deviation: power_deviation(g.value(z), config.p_a),
        ..StepReport::default()
    })
}

/// Dispatches one optimization step on the configured regularizer.
pub fn any_train_step(state: &mut TrainState, d_batch: &Tensor, config: &GameConfig) -> Result<StepReport> {
    match config.regularizer {
        RegularizerKind::Aj => train_step(state, d_batch, config),
        RegularizerKind::Kl | RegularizerKind::Mmd => {
            baselines::baseline_train_step(state, d_batch, &baselines::Regularizer::from_config(config)?, config)
        }
        RegularizerKind::None => plain_train_step(state, d_batch, config),
    }
}

const EVAL_CHUNK: usize = 2048;

fn forward_chunked(net: &MlpParams, x: &Tensor) -> Result<Tensor> {
    let mut data = Vec::with_capacity(x.rows() * net.output_dim());
    let mut start = 0;
    while start < x.rows() {
        let end = (start + EVAL_CHUNK).min(x.rows());
        data.extend(net.forward(&x.slice_rows(start, end))?.into_data());
        start = end;
    }
    Tensor::matrix(x.rows(), net.output_dim(), data)
}

/// Latent codes of a whole evaluation set. Normalization statistics come
/// from the set itself; the VAE uses its posterior means.
pub fn latents(state: &TrainState, config: &GameConfig, images: &Tensor) -> Result<Tensor> {
    let raw = forward_chunked(&state.compressor, images)?;
    if config.regularizer == RegularizerKind::Kl {
        let k = config.k;
        let mut mu = Vec::with_capacity(raw.rows() * k);
        for i in 0..raw.rows() {
            mu.extend_from_slice(&raw.row(i)[..k]);
        }
        Tensor::matrix(raw.rows(), k, mu)
    } else {
        power_normalize_tensor(&raw, config.p_a)
    }
}

/// Decodes latent codes through the reconstructor.
pub fn decode(state: &TrainState, z: &Tensor) -> Result<Tensor> {
    forward_chunked(&state.reconstructor, z)
}

/// JSCC distortion of the current `(g, h)` when jammed by `z`, with a
/// fresh source of the same size.
pub fn jscc_eval(players: &JsccPlayers, config: &GameConfig, z: &Tensor, rng: &mut Rng) -> Result<f64> {
    let mut g = Graph::new();
    let tx = players.transmitter.bind(&mut g, false);
    let rx = players.receiver.bind(&mut g, false);
    let x = g.constant(rng.normal_tensor(&[z.rows(), config.k]));
    let zv = g.constant(z.clone());
    let pass = jscc_distortion(&mut g, &tx, &rx, x, zv, ChannelParams::from(config), rng)?;
    Ok(g.value(pass.loss).item())
}

/// Metrics of the current state on a held-out set.
pub fn evaluate(state: &TrainState, config: &GameConfig, eval: &Dataset, epoch: usize) -> Result<MetricsReport> {
    let z = latents(state, config, &eval.images)?;
    let d_hat = decode(state, &z)?;
    let data_mse = mse_metric(&eval.images, &d_hat)?;
    let jscc_mse = match &state.jscc {
        Some(players) => {
            let mut rng = Rng::derive(config.seed, &format!("eval/{epoch}"));
            Some(jscc_eval(players, config, &z, &mut rng)?)
        }
        None => None,
    };
    MetricsReport::from_latents(epoch, data_mse, jscc_mse, &z)
}

/// Trains for `config.epochs` epochs of shuffled full batches (a trailing
/// short batch is dropped), evaluating on `eval` after every epoch.
pub fn train(config: &GameConfig, train_set: &Dataset, eval: &Dataset) -> Result<TrainState> {
    train_with(config, train_set, eval, 1, |_, _| {})
}

/// [`train`] evaluating every `eval_every` epochs and after the last one,
/// with a callback after each evaluation.
pub fn train_with(
    config: &GameConfig,
    train_set: &Dataset,
    eval: &Dataset,
    eval_every: usize,
    mut on_eval: impl FnMut(&TrainState, &MetricsReport),
) -> Result<TrainState> {
    config.validate()?;
    if eval_every < 1 {
        return Err(Error::Config("eval_every must be at least 1".into()));
    }
    if train_set.count() == 0 || eval.count() == 0 {
        return Err(Error::Config("training and evaluation sets must be non-empty".into()));
    }
    if train_set.dim() != config.n || eval.dim() != config.n {
        return Err(Error::Config(format!(
            "dataset dimension {} differs from n = {}",
            train_set.dim(),
            config.n
        )));
    }
    let mut state = TrainState::init(config)?;
    let plan = BatchPlan {
        batch_size: config.batch_size,
        drop_last: true,
    };
    for epoch in 1..=config.epochs {
        for batch in batches(train_set, &plan, epoch, config.seed)? {
            any_train_step(&mut state, &batch, config).map_err(|e| Error::AtStep {
                epoch,
                step: state.step,
                source: Box::new(e),
            })?;
        }
        state.epoch = epoch;
        if epoch % eval_every != 0 && epoch != config.epochs {
            continue;
        }
        let report = evaluate(&state, config, eval, epoch).map_err(|e| Error::AtStep {
            epoch,
            step: state.step,
            source: Box::new(e),
        })?;
        on_eval(&state, &report);
        state.history.push(report);
    }
    Ok(state)
}
