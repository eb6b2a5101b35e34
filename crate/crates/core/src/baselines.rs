//! VAE and WAE latent regularizers sharing the compressor/reconstructor
//! pair and training harness with the jamming game.

use crate::error::{Error, Result};
use crate::game::{encode, reconstruction_mse, GameConfig, RegularizerKind, StepReport, TrainState};
use crate::nets::BoundMlp;
use crate::rng::Rng;
use crate::tensor::{Graph, Tensor, Var};

/// Bounds applied to the VAE log-variance before exponentiation.
pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineKind {
    Kl,
    Mmd,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Regularizer {
    pub kind: BaselineKind,
    pub weight: f64,
    pub mmd_scale: f64,
}

impl Regularizer {
    pub fn new(kind: BaselineKind, weight: f64, mmd_scale: f64) -> Result<Self> {
        if !(weight >= 0.0) {
            return Err(Error::Config(format!("regularizer weight must be >= 0, got {weight}")));
        }
        if !(mmd_scale > 0.0) {
            return Err(Error::Config(format!("IMQ scale must be > 0, got {mmd_scale}")));
        }
        Ok(Regularizer {
            kind,
            weight,
            mmd_scale,
        })
    }

    pub fn from_config(config: &GameConfig) -> Result<Self> {
        let kind = match config.regularizer {
            RegularizerKind::Kl => BaselineKind::Kl,
            RegularizerKind::Mmd => BaselineKind::Mmd,
            other => {
                return Err(Error::Config(format!(
                    "`{}` is not a baseline regularizer",
                    other.name()
                )))
            }
        };
        Regularizer::new(kind, config.reg_weight(), config.imq_scale())
    }
}

/// `mean_batch ½ Σ_j (μ² + σ² − log σ² − 1)`.
pub fn kl_diag_gaussian(g: &mut Graph, mu: Var, log_var: Var) -> Result<Var> {
    if g.shape(mu) != g.shape(log_var) {
        return Err(Error::Shape {
            op: "kl_diag_gaussian",
            shapes: vec![g.shape(mu).to_vec(), g.shape(log_var).to_vec()],
        });
    }
    let mu2 = g.square(mu)?;
    let var = g.exp(log_var)?;
    let s = g.add(mu2, var)?;
    let s = g.sub(s, log_var)?;
    let s = g.add_scalar(s, -1.0)?;
    let batch = g.shape(mu)[0] as f64;
    let total = g.sum(s)?;
    g.scale(total, 0.5 / batch)
}

/// `μ + exp(½ log σ²) ⊙ ε` with fresh `ε ~ N(0, I)`.
pub fn reparameterize(g: &mut Graph, mu: Var, log_var: Var, rng: &mut Rng) -> Result<Var> {
    if g.shape(mu) != g.shape(log_var) {
        return Err(Error::Shape {
            op: "reparameterize",
            shapes: vec![g.shape(mu).to_vec(), g.shape(log_var).to_vec()],
        });
    }
    let half = g.scale(log_var, 0.5)?;
    let sd = g.exp(half)?;
    let shape = g.shape(mu).to_vec();
    let eps = g.constant(rng.normal_tensor(&shape));
    let noise = g.mul(sd, eps)?;
    g.add(mu, noise)
}

/// Splits a `2k`-wide compressor output into `(μ, clamped log σ²)`.
pub fn vae_head(g: &mut Graph, raw: Var, k: usize) -> Result<(Var, Var)> {
    let shape = g.shape(raw).to_vec();
    if shape.len() != 2 || shape[1] != 2 * k {
        return Err(Error::Config(format!(
            "VAE head expects {} compressor outputs, found shape {shape:?}",
            2 * k
        )));
    }
    let mu = g.slice_cols(raw, 0, k)?;
    let lv = g.slice_cols(raw, k, 2 * k)?;
    let lv = g.clamp(lv, LOG_VAR_MIN, LOG_VAR_MAX)?;
    Ok((mu, lv))
}

fn off_diagonal_mean(g: &mut Graph, kernel: Var, m: usize) -> Result<Var> {
    // the diagonal of a self-kernel is exactly 1
    let total = g.sum(kernel)?;
    let off = g.add_scalar(total, -(m as f64))?;
    g.scale(off, 1.0 / (m * (m - 1)) as f64)
}

fn imq_kernel(g: &mut Graph, a: Var, b: Var, c: f64) -> Result<Var> {
    let d2 = g.pairwise_sq_dist(a, b)?;
    let shifted = g.add_scalar(d2, c)?;
    let inv = g.recip(shifted)?;
    g.scale(inv, c)
}

/// Unbiased MMD² under `κ(u, v) = C / (C + ‖u − v‖²)`.
pub fn mmd_imq(g: &mut Graph, a: Var, b: Var, c: f64) -> Result<Var> {
    let (sa, sb) = (g.shape(a).to_vec(), g.shape(b).to_vec());
    if sa.len() != 2 || sa != sb {
        return Err(Error::Shape {
            op: "mmd_imq",
            shapes: vec![sa, sb],
        });
    }
    let m = sa[0];
    if m < 2 {
        return Err(Error::Contract(format!("mmd_imq needs at least 2 samples, got {m}")));
    }
    if !(c > 0.0) {
        return Err(Error::Config(format!("IMQ scale must be > 0, got {c}")));
    }
    let kaa = imq_kernel(g, a, a, c)?;
    let kbb = imq_kernel(g, b, b, c)?;
    let kab = imq_kernel(g, a, b, c)?;
    let xa = off_diagonal_mean(g, kaa, m)?;
    let xb = off_diagonal_mean(g, kbb, m)?;
    let cross = g.mean(kab)?;
    let cross = g.scale(cross, 2.0)?;
    let s = g.add(xa, xb)?;
    g.sub(s, cross)
}

/// Latent `z` and regularization term for one batch.
pub fn regularized_latent(
    g: &mut Graph,
    compressor: &BoundMlp,
    d: Var,
    reg: &Regularizer,
    config: &GameConfig,
    rng: &mut Rng,
) -> Result<(Var, Var)> {
    match reg.kind {
        BaselineKind::Kl => {
            let raw = compressor.forward(g, d)?;
            let (mu, lv) = vae_head(g, raw, config.k)?;
            let z = reparameterize(g, mu, lv, rng)?;
            let term = kl_diag_gaussian(g, mu, lv)?;
            Ok((z, term))
        }
        BaselineKind::Mmd => {
            let z = encode(g, compressor, d, config.p_a)?;
            let shape = g.shape(z).to_vec();
            let prior = g.constant(rng.normal_tensor(&shape));
            let term = mmd_imq(g, z, prior, reg.mmd_scale)?;
            Ok((z, term))
        }
    }
}

/// One Adam update of `(f, r)` on `MSE(d, r(z)) + λ · reg`.
pub fn baseline_train_step(
    state: &mut TrainState,
    d_batch: &Tensor,
    reg: &Regularizer,
    config: &GameConfig,
) -> Result<StepReport> {
    let expected = match reg.kind {
        BaselineKind::Kl => 2 * config.k,
        BaselineKind::Mmd => config.k,
    };
    if state.compressor.output_dim() != expected {
        return Err(Error::Config(format!(
            "{:?} regularizer needs a {expected}-wide compressor, found {}",
            reg.kind,
            state.compressor.output_dim()
        )));
    }
    let mut g = Graph::new();
    let d = g.constant(d_batch.clone());
    let f = state.compressor.bind(&mut g, true);
    let (z, term) = regularized_latent(&mut g, &f, d, reg, config, &mut state.rng)?;
    let r = state.reconstructor.bind(&mut g, true);
    let mse = reconstruction_mse(&mut g, &r, d, z)?;
    let weighted = g.scale(term, reg.weight)?;
    let loss = g.add(mse, weighted)?;
    let (f_vars, r_vars) = (f.vars(), r.vars());
    let wrt: Vec<Var> = f_vars.iter().chain(&r_vars).copied().collect();
    let grads = g.backward(loss, &wrt)?;
    let gf: Vec<Option<&Tensor>> = f_vars.iter().map(|&v| grads.get(v)).collect();
    state.opt_compressor.step(&mut state.compressor.tensors_mut(), &gf)?;
    let gr: Vec<Option<&Tensor>> = r_vars.iter().map(|&v| grads.get(v)).collect();
    state.opt_reconstructor.step(&mut state.reconstructor.tensors_mut(), &gr)?;
    state.step += 1;
    Ok(StepReport {
        data_mse: g.value(mse).item(),
        data_loss: g.value(loss).item(),
        jscc_term: g.value(term).item(),
        ..StepReport::default()
    })
}
