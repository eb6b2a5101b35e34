//! The three verbs: `train`, `oracle`, `generate`.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use aj_core::data::{load_idx, synth_source, Dataset, SynthKind};
use aj_core::game::{train_with, TrainState};
use aj_core::metrics::CSV_HEADER;
use aj_core::nets::MlpParams;
use aj_core::oracle::{
    matching_residual, mc_game_value, saddle_verify, scalar_saddle_distortion, MatchingSpec, PerturbationGrid,
    SaddleReport, Side,
};
use aj_core::rng::{derive_seed, Rng};
use aj_core::tensor::Tensor;
use log::{info, warn};

use crate::checkpoint;
use crate::config::{DataSource, ExperimentConfig, OracleBlock};
use crate::pgm;
use crate::CliError;

pub const CHECKPOINT_FILE: &str = "checkpoint.ajlk";
pub const METRICS_FILE: &str = "metrics.csv";
pub const RESOLVED_CONFIG_FILE: &str = "resolved-config.txt";
pub const ORACLE_REPORT_FILE: &str = "oracle-report.csv";
pub const SADDLE_DETAIL_FILE: &str = "oracle-saddle.csv";

/// Relative tolerance between the closed-form and Monte-Carlo saddle value.
pub const SADDLE_REL_TOL: f64 = 0.01;
pub const MATCHING_GAUSSIAN_MAX: f64 = 0.02;
pub const MATCHING_UNIFORM_MIN: f64 = 0.05;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Config(format!("output directory {} is not writable: {e}", dir.display())))
}

fn load_data(source: &DataSource, seed: u64) -> Result<(Dataset, Dataset), CliError> {
    match source {
        DataSource::Idx {
            train_images,
            train_labels,
            eval_images,
            eval_labels,
            train_limit,
        } => {
            let load = |img: &PathBuf, lbl: &Option<PathBuf>| {
                load_idx(img, lbl.as_deref()).map_err(|e| CliError::Data(format!("{}: {e}", img.display())))
            };
            let mut train = load(train_images, train_labels)?;
            if let Some(limit) = train_limit {
                train = train.head(*limit);
            }
            Ok((train, load(eval_images, eval_labels)?))
        }
        DataSource::Synth {
            kind,
            n,
            train_count,
            eval_count,
        } => {
            let kind = SynthKind::parse(kind).map_err(|e| CliError::Config(e.to_string()))?;
            let make = |count: usize, label: &str| {
                synth_source(&kind, count, *n, derive_seed(seed, label)).map_err(|e| CliError::Data(e.to_string()))
            };
            Ok((make(*train_count, "synth/train")?, make(*eval_count, "synth/eval")?))
        }
    }
}

fn named_networks(state: &TrainState) -> Vec<(&str, &MlpParams)> {
    let mut nets = vec![("compressor", &state.compressor), ("reconstructor", &state.reconstructor)];
    if let Some(j) = &state.jscc {
        nets.push(("transmitter", &j.transmitter));
        nets.push(("receiver", &j.receiver));
    }
    nets
}

/// Trains per the config and writes the resolved config, metrics, the
/// final checkpoint and prior samples to the output directory.
pub fn run_experiment(config_path: &Path) -> Result<ExperimentConfig, CliError> {
    let cfg = ExperimentConfig::load(config_path)?;
    let source = cfg
        .data
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("{}: no data.* section", config_path.display())))?;
    let (train_set, eval_set) = load_data(source, cfg.game.seed)?;
    if train_set.dim() != cfg.game.n || eval_set.dim() != cfg.game.n {
        return Err(CliError::Config(format!(
            "game.n = {} but the data has dimension {} (train) / {} (eval)",
            cfg.game.n,
            train_set.dim(),
            eval_set.dim()
        )));
    }
    prepare_dir(&cfg.output_dir)?;
    let resolved = cfg.output_dir.join(RESOLVED_CONFIG_FILE);
    fs::write(&resolved, cfg.resolved_text()).map_err(|e| io_err(&resolved, e))?;

    let metrics_path = cfg.output_dir.join(METRICS_FILE);
    let mut metrics = File::create(&metrics_path).map_err(|e| io_err(&metrics_path, e))?;
    writeln!(metrics, "{CSV_HEADER}").map_err(|e| io_err(&metrics_path, e))?;
    let mut write_err = None;
    info!(
        "training {} k={} on {} samples for {} epochs",
        cfg.game.regularizer.name(),
        cfg.game.k,
        train_set.count(),
        cfg.game.epochs
    );
    let state = train_with(&cfg.game, &train_set, &eval_set, cfg.eval_every, |_, report| {
        info!(
            "epoch {}: mse {:.5} dpc {:.4} |exkurt| {:.4} ks {:.4}",
            report.epoch,
            report.data_mse,
            report.dpc,
            report.gaussianity.mean_abs_excess_kurtosis().unwrap_or(f64::NAN),
            report.gaussianity.mean_ks().unwrap_or(f64::NAN)
        );
        if let Err(e) = writeln!(metrics, "{}", report.csv_row()) {
            write_err.get_or_insert(e);
        }
    })
    .map_err(CliError::from_core)?;
    if let Some(e) = write_err {
        return Err(io_err(&metrics_path, e));
    }

    checkpoint::save(&cfg.output_dir.join(CHECKPOINT_FILE), &named_networks(&state))?;
    let samples = cfg.output_dir.join("samples");
    write_samples(
        &state.reconstructor,
        cfg.sample_count,
        derive_seed(cfg.game.seed, "samples"),
        &samples,
    )?;
    Ok(cfg)
}

fn write_samples(reconstructor: &MlpParams, count: usize, seed: u64, out_dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    if count == 0 {
        return Ok(());
    }
    let k = reconstructor.input_dim();
    let z = Rng::derive(seed, "generate").normal_tensor(&[count, k]);
    let images = reconstructor.forward(&z).map_err(CliError::from_core)?;
    let (w, h) = pgm::image_dims(reconstructor.output_dim());
    for i in 0..count {
        let path = out_dir.join(format!("sample_{i:04}.pgm"));
        fs::write(&path, pgm::encode(w, h, images.row(i))).map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}

/// Decodes `count` prior draws through a checkpoint's reconstructor.
pub fn generate(checkpoint_path: &Path, count: usize, seed: u64, out_dir: &Path) -> Result<(), CliError> {
    let nets = checkpoint::load(checkpoint_path)?;
    let (_, r) = nets
        .iter()
        .find(|(n, _)| n == "reconstructor")
        .ok_or_else(|| CliError::Checkpoint("checkpoint has no reconstructor".into()))?;
    write_samples(r, count, seed, out_dir)
}

/// One row of the oracle report.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleCheck {
    pub name: String,
    pub value: f64,
    pub threshold: String,
    pub pass: bool,
}

impl OracleCheck {
    fn row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.name,
            self.value,
            self.threshold,
            if self.pass { "pass" } else { "fail" }
        )
    }
}

fn gaussian(m: usize, k: usize, var: f64, rng: &mut Rng) -> Tensor {
    let sd = var.sqrt();
    rng.normal_tensor(&[m, k]).map(|v| sd * v)
}

/// Runs the oracle checks; returns the report rows and the saddle grid.
pub fn oracle_checks(block: &OracleBlock) -> Result<(Vec<OracleCheck>, SaddleReport), CliError> {
    let spec = &block.spec;
    let d_star = scalar_saddle_distortion(spec).map_err(CliError::from_core)?;
    let mut checks = vec![OracleCheck {
        name: "D_star".into(),
        value: d_star,
        threshold: "closed-form".into(),
        pass: d_star.is_finite(),
    }];

    let mc = mc_game_value(spec, &spec.saddle_strategy(), block.samples, block.seed).map_err(CliError::from_core)?;
    let gap = if d_star > 0.0 {
        (mc.mean - d_star).abs() / d_star
    } else {
        (mc.mean - d_star).abs()
    };
    checks.push(OracleCheck {
        name: "mc_saddle_rel_err".into(),
        value: gap,
        threshold: SADDLE_REL_TOL.to_string(),
        pass: gap <= SADDLE_REL_TOL,
    });

    let saddle = saddle_verify(spec, &PerturbationGrid::default_for(spec), block.samples, block.seed)
        .map_err(CliError::from_core)?;
    let side_ok = |side: Side| saddle.results.iter().filter(|r| r.side == side).all(|r| r.ok);
    checks.push(OracleCheck {
        name: "saddle_max_jammer_gain".into(),
        value: saddle.max_jammer_gain,
        threshold: "3se".into(),
        pass: side_ok(Side::Jammer),
    });
    checks.push(OracleCheck {
        name: "saddle_max_codec_loss".into(),
        value: saddle.max_codec_loss,
        threshold: "3se".into(),
        pass: side_ok(Side::Codec),
    });

    let noise_var = spec.sigma_n_sq + spec.kappa();
    if noise_var > 0.0 && spec.sigma_x_sq > 0.0 {
        let (m, k) = (block.matching_samples, spec.k);
        let mut rng = Rng::derive(block.seed, "oracle/matching");
        let x = gaussian(m, k, spec.sigma_x_sq, &mut rng);
        let n = gaussian(m, k, spec.sigma_n_sq, &mut rng);
        let mut ms = MatchingSpec::isotropic(k, spec.p_t, spec.sigma_x_sq, noise_var);
        ms.sigma = vec![spec.saddle_alpha(); k];
        let z_gauss = gaussian(m, k, spec.kappa(), &mut rng);
        let half_width = (3.0 * spec.kappa()).sqrt();
        let z_unif: Vec<f64> = (0..m * k).map(|_| half_width * (2.0 * rng.uniform() - 1.0)).collect();
        let sum = |z: &[f64]| {
            Tensor::matrix(m, k, n.data().iter().zip(z).map(|(a, b)| a + b).collect())
                .map_err(CliError::from_core)
        };
        let g = matching_residual(&x, &sum(z_gauss.data())?, &ms).map_err(CliError::from_core)?;
        checks.push(OracleCheck {
            name: "matching_gaussian".into(),
            value: g,
            threshold: format!("<={MATCHING_GAUSSIAN_MAX}"),
            pass: g <= MATCHING_GAUSSIAN_MAX,
        });
        let u = matching_residual(&x, &sum(&z_unif)?, &ms).map_err(CliError::from_core)?;
        checks.push(OracleCheck {
            name: "matching_uniform".into(),
            value: u,
            threshold: format!(">={MATCHING_UNIFORM_MIN}"),
            pass: u >= MATCHING_UNIFORM_MIN,
        });
    } else {
        warn!("matching checks skipped: jammer-plus-noise has zero variance");
    }
    Ok((checks, saddle))
}

/// Writes `oracle-report.csv` (and the per-perturbation grid) for the
/// config's oracle block. Fails when any check fails.
pub fn run_oracle(config_path: &Path) -> Result<Vec<OracleCheck>, CliError> {
    let cfg = ExperimentConfig::load(config_path)?;
    let block = cfg
        .oracle
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("{}: no oracle.* section", config_path.display())))?;
    prepare_dir(&cfg.output_dir)?;
    let (checks, saddle) = oracle_checks(block)?;

    let report = cfg.output_dir.join(ORACLE_REPORT_FILE);
    let mut text = String::from("check_name,value,threshold,pass\n");
    for c in &checks {
        text.push_str(&c.row());
        text.push('\n');
        info!("{}", c.row());
    }
    fs::write(&report, text).map_err(|e| io_err(&report, e))?;
    let detail = cfg.output_dir.join(SADDLE_DETAIL_FILE);
    let mut text = format!("{}\n", SaddleReport::CSV_HEADER);
    for row in saddle.csv_rows() {
        text.push_str(&row);
        text.push('\n');
    }
    fs::write(&detail, text).map_err(|e| io_err(&detail, e))?;

    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        Ok(checks)
    } else {
        Err(CliError::Internal(format!("oracle checks failed: {}", failed.join(", "))))
    }
}
