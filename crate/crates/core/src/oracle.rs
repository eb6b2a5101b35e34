//! Ground truth for the linear-Gaussian jamming game in the isotropic case.
//!
//! The transmitter sends `αx`, the channel adds `n + z`, the receiver
//! outputs `γ(αx + n + z)`. All quantities are per dimension.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Minimum Monte-Carlo sample count accepted by the estimators.
pub const MIN_GAME_SAMPLES: usize = 10_000;
pub const MIN_MATCHING_SAMPLES: usize = 10_000;
/// Central-difference step for log characteristic function derivatives.
pub const CF_STEP: f64 = 0.05;
/// Smallest characteristic-function modulus trusted on the grid.
pub const CF_FLOOR: f64 = 0.1;

const FEASIBILITY_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleSpec {
    pub sigma_x_sq: f64,
    pub p_t: f64,
    pub p_a: f64,
    pub sigma_n_sq: f64,
    pub k: usize,
    /// Coefficient of the `β(N − X)` jammer; solved from the power
    /// constraint when absent.
    pub beta: Option<f64>,
    /// Variance of the Gaussian saddle jammer; `P_a` when absent.
    pub kappa: Option<f64>,
}

impl OracleSpec {
    pub fn new(sigma_x_sq: f64, p_t: f64, p_a: f64, sigma_n_sq: f64, k: usize) -> Self {
        OracleSpec {
            sigma_x_sq,
            p_t,
            p_a,
            sigma_n_sq,
            k,
            beta: None,
            kappa: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.sigma_x_sq, self.p_t, self.p_a, self.sigma_n_sq];
        if vals.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(format!(
                "oracle variances and powers must be finite and non-negative: {vals:?}"
            )));
        }
        if self.k < 1 {
            return Err(Error::Config("oracle dimension k must be at least 1".into()));
        }
        if self.p_t == 0.0 {
            return Err(Error::DegenerateGame("transmit power is zero".into()));
        }
        Ok(())
    }

    /// `β = √(P_a / (σ_n² + σ_x²))`.
    pub fn beta(&self) -> f64 {
        self.beta.unwrap_or_else(|| {
            let d = self.sigma_n_sq + self.sigma_x_sq;
            if d > 0.0 {
                (self.p_a / d).sqrt()
            } else {
                0.0
            }
        })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa.unwrap_or(self.p_a)
    }

    /// Full-power encoder gain `√(P_t / σ_x²)`.
    pub fn saddle_alpha(&self) -> f64 {
        if self.sigma_x_sq > 0.0 {
            (self.p_t / self.sigma_x_sq).sqrt()
        } else {
            0.0
        }
    }

    pub fn saddle_strategy(&self) -> LinearStrategy {
        LinearStrategy {
            alpha: self.saddle_alpha(),
            gamma: Gain::Optimal,
            jammer: JammerFamily::Gaussian(self.kappa()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum JammerFamily {
    /// `N(0, var)` per dimension.
    Gaussian(f64),
    /// Uniform on `[−√(3 var), √(3 var)]` per dimension.
    Uniform(f64),
    /// `β(N' − X')` from the jammer's own draws of noise and source.
    ScaledSource(f64),
}

impl JammerFamily {
    pub fn variance(&self, spec: &OracleSpec) -> f64 {
        match *self {
            JammerFamily::Gaussian(v) | JammerFamily::Uniform(v) => v,
            JammerFamily::ScaledSource(b) => b * b * (spec.sigma_n_sq + spec.sigma_x_sq),
        }
    }

    pub fn label(&self) -> String {
        match self {
            JammerFamily::Gaussian(v) => format!("gaussian(var={v})"),
            JammerFamily::Uniform(v) => format!("uniform(var={v})"),
            JammerFamily::ScaledSource(b) => format!("scaled_source(beta={b})"),
        }
    }

    fn sample(&self, spec: &OracleSpec, rng: &mut Rng) -> f64 {
        match *self {
            JammerFamily::Gaussian(v) => v.sqrt() * rng.normal(),
            JammerFamily::Uniform(v) => (3.0 * v).sqrt() * (2.0 * rng.uniform() - 1.0),
            JammerFamily::ScaledSource(b) => {
                let n = spec.sigma_n_sq.sqrt() * rng.normal();
                let x = spec.sigma_x_sq.sqrt() * rng.normal();
                b * (n - x)
            }
        }
    }
}

/// Decoder gain: a fixed value or the linear-MMSE response.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Gain {
    Fixed(f64),
    Optimal,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearStrategy {
    pub alpha: f64,
    pub gamma: Gain,
    pub jammer: JammerFamily,
}

impl LinearStrategy {
    pub fn check_feasible(&self, spec: &OracleSpec) -> Result<()> {
        if self.alpha * self.alpha * spec.sigma_x_sq > spec.p_t + FEASIBILITY_SLACK {
            return Err(Error::Contract(format!(
                "encoder gain {} exceeds the transmit power {}",
                self.alpha, spec.p_t
            )));
        }
        let v = self.jammer.variance(spec);
        if !(v >= 0.0) || v > spec.p_a + FEASIBILITY_SLACK {
            return Err(Error::Contract(format!(
                "jammer {} has variance {v} above the power budget {}",
                self.jammer.label(),
                spec.p_a
            )));
        }
        Ok(())
    }

    /// `Cov(x, ŷ) / Var(ŷ)` for optimal gains, else the fixed value.
    pub fn resolved_gamma(&self, spec: &OracleSpec) -> f64 {
        match self.gamma {
            Gain::Fixed(g) => g,
            Gain::Optimal => optimal_gamma(spec, self.alpha, &self.jammer),
        }
    }
}

fn optimal_gamma(spec: &OracleSpec, alpha: f64, jammer: &JammerFamily) -> f64 {
    let var_y = alpha * alpha * spec.sigma_x_sq + spec.sigma_n_sq + jammer.variance(spec);
    if var_y > 0.0 {
        alpha * spec.sigma_x_sq / var_y
    } else {
        0.0
    }
}

/// `D* = σ_x² (σ_n² + P_a) / (P_t + σ_n² + P_a)`.
pub fn scalar_saddle_distortion(spec: &OracleSpec) -> Result<f64> {
    spec.validate()?;
    let noise = spec.sigma_n_sq + spec.p_a;
    Ok(spec.sigma_x_sq * noise / (spec.p_t + noise))
}

/// Monte-Carlo estimate of the per-dimension game value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GameValue {
    pub mean: f64,
    pub std_err: f64,
    pub samples: usize,
}

/// Estimates `E[(x − γ(αx + n + z))²]` per dimension. Source and channel
/// noise come from seed-derived streams shared by every strategy, so
/// estimates for different strategies at one seed use common random
/// numbers.
pub fn mc_game_value(spec: &OracleSpec, strategy: &LinearStrategy, samples: usize, seed: u64) -> Result<GameValue> {
    spec.validate()?;
    strategy.check_feasible(spec)?;
    if samples < MIN_GAME_SAMPLES {
        return Err(Error::Contract(format!(
            "mc_game_value needs at least {MIN_GAME_SAMPLES} samples, got {samples}"
        )));
    }
    let gamma = strategy.resolved_gamma(spec);
    let (sx, sn) = (spec.sigma_x_sq.sqrt(), spec.sigma_n_sq.sqrt());
    let mut rx = Rng::derive(seed, "oracle/x");
    let mut rn = Rng::derive(seed, "oracle/n");
    let mut rz = Rng::derive(seed, "oracle/z");
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        let mut e = 0.0;
        for _ in 0..spec.k {
            let x = sx * rx.normal();
            let n = sn * rn.normal();
            let z = strategy.jammer.sample(spec, &mut rz);
            let err = x - gamma * (strategy.alpha * x + n + z);
            e += err * err;
        }
        e /= spec.k as f64;
        sum += e;
        sum_sq += e * e;
    }
    let m = samples as f64;
    let mean = sum / m;
    let var = ((sum_sq - m * mean * mean) / (m - 1.0)).max(0.0);
    Ok(GameValue {
        mean,
        std_err: (var / m).sqrt(),
        samples,
    })
}

/// A codec deviation from the saddle: encoder and decoder gains.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CodecPerturbation {
    pub alpha: f64,
    pub gamma: Gain,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationGrid {
    pub jammers: Vec<(String, JammerFamily)>,
    pub codecs: Vec<(String, CodecPerturbation)>,
}

impl PerturbationGrid {
    pub fn is_empty(&self) -> bool {
        self.jammers.is_empty() && self.codecs.is_empty()
    }

    /// Jammer deviations: Gaussian at `{¼, ½, ¾, 1}·P_a`, uniform at `P_a`
    /// and `½ P_a`, scaled-source at `β` and `½ β`. Codec deviations:
    /// encoder gains `{½, ¾}·α*` with the saddle decoder and with a
    /// re-optimized decoder, decoder gains `{½, ¾, 5/4, 3/2}·γ*`, and `γ = 0`.
    /// Encoder gains above `α*` violate the power constraint.
    pub fn default_for(spec: &OracleSpec) -> Self {
        let pa = spec.p_a;
        let beta = spec.beta();
        let mut jammers: Vec<(String, JammerFamily)> = [0.25, 0.5, 0.75, 1.0]
            .iter()
            .map(|&s| (format!("gaussian {s}*P_a"), JammerFamily::Gaussian(s * pa)))
            .collect();
        jammers.push(("uniform P_a".into(), JammerFamily::Uniform(pa)));
        jammers.push(("uniform 0.5*P_a".into(), JammerFamily::Uniform(0.5 * pa)));
        jammers.push(("scaled_source beta".into(), JammerFamily::ScaledSource(beta)));
        jammers.push(("scaled_source 0.5*beta".into(), JammerFamily::ScaledSource(0.5 * beta)));

        let a = spec.saddle_alpha();
        let g = optimal_gamma(spec, a, &JammerFamily::Gaussian(spec.kappa()));
        let mut codecs = Vec::new();
        for s in [0.5, 0.75] {
            codecs.push((
                format!("alpha {s}*a*"),
                CodecPerturbation {
                    alpha: s * a,
                    gamma: Gain::Fixed(g),
                },
            ));
            codecs.push((
                format!("alpha {s}*a*, best gamma"),
                CodecPerturbation {
                    alpha: s * a,
                    gamma: Gain::Optimal,
                },
            ));
        }
        for s in [0.5, 0.75, 1.25, 1.5] {
            codecs.push((
                format!("gamma {s}*g*"),
                CodecPerturbation {
                    alpha: a,
                    gamma: Gain::Fixed(s * g),
                },
            ));
        }
        codecs.push((
            "gamma 0".into(),
            CodecPerturbation {
                alpha: a,
                gamma: Gain::Fixed(0.0),
            },
        ));
        PerturbationGrid { jammers, codecs }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Jammer,
    Codec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationResult {
    pub side: Side,
    pub label: String,
    pub value: GameValue,
    /// Whether this deviation respects its saddle inequality.
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaddleReport {
    pub saddle: GameValue,
    pub closed_form: f64,
    pub results: Vec<PerturbationResult>,
    /// Largest `J − J*` over jammer deviations.
    pub max_jammer_gain: f64,
    /// Largest `J* − J` over codec deviations.
    pub max_codec_loss: f64,
    pub pass: bool,
}

impl SaddleReport {
    pub const CSV_HEADER: &'static str = "side,perturbation,j,std_err,ok";

    pub fn csv_rows(&self) -> Vec<String> {
        let mut rows = vec![format!(
            "saddle,closed form {},{},{},true",
            self.closed_form, self.saddle.mean, self.saddle.std_err
        )];
        for r in &self.results {
            let side = match r.side {
                Side::Jammer => "jammer",
                Side::Codec => "codec",
            };
            rows.push(format!(
                "{side},{},{},{},{}",
                r.label, r.value.mean, r.value.std_err, r.ok
            ));
        }
        rows
    }
}

/// Checks `J(f, g*, h*) ≤ J* ≤ J(f*, g, h)` on every grid deviation, with a
/// margin of three combined standard errors. Jammer deviations face the
/// saddle codec; codec deviations face the saddle jammer.
pub fn saddle_verify(spec: &OracleSpec, grid: &PerturbationGrid, samples: usize, seed: u64) -> Result<SaddleReport> {
    if grid.is_empty() {
        return Err(Error::Config("saddle_verify needs a non-empty perturbation grid".into()));
    }
    let closed_form = scalar_saddle_distortion(spec)?;
    let star = spec.saddle_strategy();
    let gamma_star = star.resolved_gamma(spec);
    let saddle = mc_game_value(spec, &star, samples, seed)?;
    let margin = |v: &GameValue| 3.0 * (saddle.std_err.powi(2) + v.std_err.powi(2)).sqrt();

    let mut results = Vec::new();
    let mut max_jammer_gain = f64::NEG_INFINITY;
    let mut max_codec_loss = f64::NEG_INFINITY;
    for (label, jammer) in &grid.jammers {
        let s = LinearStrategy {
            alpha: star.alpha,
            gamma: Gain::Fixed(gamma_star),
            jammer: *jammer,
        };
        let v = mc_game_value(spec, &s, samples, seed)?;
        max_jammer_gain = max_jammer_gain.max(v.mean - saddle.mean);
        results.push(PerturbationResult {
            side: Side::Jammer,
            label: label.clone(),
            ok: v.mean <= saddle.mean + margin(&v),
            value: v,
        });
    }
    for (label, codec) in &grid.codecs {
        let s = LinearStrategy {
            alpha: codec.alpha,
            gamma: codec.gamma,
            jammer: star.jammer,
        };
        let v = mc_game_value(spec, &s, samples, seed)?;
        max_codec_loss = max_codec_loss.max(saddle.mean - v.mean);
        results.push(PerturbationResult {
            side: Side::Codec,
            label: label.clone(),
            ok: v.mean >= saddle.mean - margin(&v),
            value: v,
        });
    }
    let pass = results.iter().all(|r| r.ok);
    Ok(SaddleReport {
        saddle,
        closed_form,
        results,
        max_jammer_gain,
        max_codec_loss,
        pass,
    })
}

/// Diagonal power allocation, eigen-decompositions and the CF grid.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchingSpec {
    pub sigma: Vec<f64>,
    pub lambda_x: Vec<f64>,
    pub lambda_z: Vec<f64>,
    pub q_x: Tensor,
    pub q_z: Tensor,
    pub omega_grid: Vec<Vec<f64>>,
}

impl MatchingSpec {
    /// Isotropic setup: `Σ = √P_t I`, `Λ_X = σ_x² I`, `Λ_Z = λ_z I`,
    /// identity eigenvectors and [`MatchingSpec::default_grid`].
    pub fn isotropic(k: usize, p_t: f64, sigma_x_sq: f64, lambda_z: f64) -> Self {
        MatchingSpec {
            sigma: vec![p_t.sqrt(); k],
            lambda_x: vec![sigma_x_sq; k],
            lambda_z: vec![lambda_z; k],
            q_x: Tensor::eye(k),
            q_z: Tensor::eye(k),
            omega_grid: Self::default_grid(k),
        }
    }

    /// The origin, points at radius `{¼, ½, ¾, 1}` along every axis (both
    /// signs), and the unit diagonal.
    pub fn default_grid(k: usize) -> Vec<Vec<f64>> {
        let mut grid = vec![vec![0.0; k]];
        for i in 0..k {
            for r in [0.25, 0.5, 0.75, 1.0, -1.0] {
                let mut w = vec![0.0; k];
                w[i] = r;
                grid.push(w);
            }
        }
        if k > 1 {
            grid.push(vec![1.0 / (k as f64).sqrt(); k]);
        }
        grid
    }

    pub fn k(&self) -> usize {
        self.sigma.len()
    }

    /// `S = Σ Λ_X Σ Λ_Z⁻¹` (diagonal).
    pub fn s(&self) -> Vec<f64> {
        (0..self.k())
            .map(|i| self.sigma[i] * self.lambda_x[i] * self.sigma[i] / self.lambda_z[i])
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if k == 0 {
            return Err(Error::Config("matching spec needs at least one dimension".into()));
        }
        if self.lambda_x.len() != k || self.lambda_z.len() != k {
            return Err(Error::Config("Sigma, Lambda_X and Lambda_Z must have equal length".into()));
        }
        if self
            .sigma
            .iter()
            .chain(&self.lambda_x)
            .chain(&self.lambda_z)
            .any(|v| !(*v > 0.0 && v.is_finite()))
        {
            return Err(Error::Config("Sigma and Lambda entries must be positive".into()));
        }
        for (name, q) in [("Q_X", &self.q_x), ("Q_Z", &self.q_z)] {
            if q.shape() != [k, k] {
                return Err(Error::Config(format!("{name} must be {k}x{k}")));
            }
            for i in 0..k {
                for j in 0..k {
                    let dot: f64 = (0..k).map(|r| q.get(r, i) * q.get(r, j)).sum();
                    let target = if i == j { 1.0 } else { 0.0 };
                    if (dot - target).abs() > 1e-10 {
                        return Err(Error::Config(format!("{name} is not orthonormal")));
                    }
                }
            }
        }
        if self.omega_grid.is_empty() {
            return Err(Error::Config("omega grid is empty".into()));
        }
        for w in &self.omega_grid {
            if w.len() != k {
                return Err(Error::Config(format!("omega point {w:?} is not {k}-dimensional")));
            }
            if w.iter().map(|v| v * v).sum::<f64>().sqrt() > 1.0 + 1e-12 {
                return Err(Error::Config(format!("omega point {w:?} lies outside the unit ball")));
            }
        }
        Ok(())
    }
}

/// `a_s = diag(scale) · Qᵀ v_s` for every sample row.
fn project(samples: &Tensor, q: &Tensor, scale: &[f64]) -> Vec<f64> {
    let (m, k) = (samples.rows(), samples.cols());
    let mut out = vec![0.0; m * k];
    for s in 0..m {
        let v = samples.row(s);
        for i in 0..k {
            let dot: f64 = (0..k).map(|r| q.get(r, i) * v[r]).sum();
            out[s * k + i] = scale[i] * dot;
        }
    }
    out
}

/// Empirical characteristic function `mean exp(i ω·a)` as `(re, im)`.
fn empirical_cf(a: &[f64], k: usize, omega: &[f64]) -> (f64, f64) {
    let m = a.len() / k;
    let (mut re, mut im) = (0.0, 0.0);
    for s in 0..m {
        let t: f64 = a[s * k..(s + 1) * k].iter().zip(omega).map(|(x, w)| x * w).sum();
        let (sn, cs) = t.sin_cos();
        re += cs;
        im += sn;
    }
    (re / m as f64, im / m as f64)
}

/// Central-difference gradient of `log F` at `omega`, as complex pairs.
fn log_cf_gradient(a: &[f64], k: usize, omega: &[f64]) -> Result<Vec<(f64, f64)>> {
    let log_cf = |w: &[f64]| -> Result<(f64, f64)> {
        let (re, im) = empirical_cf(a, k, w);
        let modulus = re.hypot(im);
        if modulus < CF_FLOOR {
            return Err(Error::IllPosed(format!(
                "characteristic function estimate {modulus:.3} at {w:?} is below {CF_FLOOR}; the omega grid is too wide"
            )));
        }
        Ok((modulus.ln(), im.atan2(re)))
    };
    let mut grad = Vec::with_capacity(k);
    let mut w = omega.to_vec();
    for i in 0..k {
        w[i] = omega[i] + CF_STEP;
        let up = log_cf(&w)?;
        w[i] = omega[i] - CF_STEP;
        let down = log_cf(&w)?;
        w[i] = omega[i];
        let mut dphase = up.1 - down.1;
        if dphase > std::f64::consts::PI {
            dphase -= 2.0 * std::f64::consts::PI;
        } else if dphase < -std::f64::consts::PI {
            dphase += 2.0 * std::f64::consts::PI;
        }
        grad.push(((up.0 - down.0) / (2.0 * CF_STEP), dphase / (2.0 * CF_STEP)));
    }
    Ok(grad)
}

/// Largest `|∂_i log F_{ΣQ_XᵀX}(ω) − S_i ∂_i log F_{Q_Zᵀ(N+Z)}(ω)|` over the
/// grid and the `k` coordinates.
pub fn matching_residual(samples_x: &Tensor, samples_zn: &Tensor, matching: &MatchingSpec) -> Result<f64> {
    matching.validate()?;
    let k = matching.k();
    for (name, t) in [("source", samples_x), ("jammer-plus-noise", samples_zn)] {
        if !t.is_matrix() || t.cols() != k {
            return Err(Error::Shape {
                op: "matching_residual",
                shapes: vec![t.shape().to_vec(), vec![t.rows(), k]],
            });
        }
        if t.rows() < MIN_MATCHING_SAMPLES {
            return Err(Error::Contract(format!(
                "{name} needs at least {MIN_MATCHING_SAMPLES} samples, got {}",
                t.rows()
            )));
        }
    }
    let ax = project(samples_x, &matching.q_x, &matching.sigma);
    let az = project(samples_zn, &matching.q_z, &vec![1.0; k]);
    let s = matching.s();
    let mut worst: f64 = 0.0;
    for omega in &matching.omega_grid {
        let lhs = log_cf_gradient(&ax, k, omega)?;
        let rhs = log_cf_gradient(&az, k, omega)?;
        for i in 0..k {
            let re = lhs[i].0 - s[i] * rhs[i].0;
            let im = lhs[i].1 - s[i] * rhs[i].1;
            worst = worst.max(re.hypot(im));
        }
    }
    Ok(worst)
}
