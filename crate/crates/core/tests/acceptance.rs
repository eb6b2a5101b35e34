//! End-to-end acceptance checks, one line per criterion.
//!
//! Runs as a plain binary so the MNIST trainings go one after another on
//! a quiet CPU and their wall-clock times are meaningful. MNIST is read
//! from `data/mnist` (or `AJ_MNIST_DIR`); see `scripts/fetch_mnist.sh`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use aj_core::baselines::{kl_diag_gaussian, mmd_imq};
use aj_core::data::{batches, BatchPlan, Dataset};
use aj_core::game::{
    any_train_step, data_loss, encode, jscc_distortion, train_with, ChannelParams, GameConfig, RegularizerKind,
    TrainState,
};
use aj_core::metrics::{pearson_dpc, MetricsReport};
use aj_core::nets::{Activation, MlpParams};
use aj_core::oracle::{
    matching_residual, mc_game_value, saddle_verify, scalar_saddle_distortion, MatchingSpec, OracleSpec,
    PerturbationGrid,
};
use aj_core::rng::Rng;
use aj_core::{Graph, Tensor};
use common::grad_check;

/// The single seed behind every MNIST run below.
const MNIST_SEED: u64 = 0;
const MNIST_EPOCHS: usize = 20;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let spec = OracleSpec::new(1.0, 1.0, 1.0, 0.0, 1);
    let d = scalar_saddle_distortion(&spec).map_err(|e| e.to_string())?;
    let mc = mc_game_value(&spec, &spec.saddle_strategy(), 1_000_000, 0).map_err(|e| e.to_string())?;
    let rel = (mc.mean - d).abs() / d;
    let secs = start.elapsed().as_secs_f64();
    check(
        d == 0.5 && rel <= 0.01 && secs < 10.0,
        format!("D* = {d}, Monte-Carlo {:.5} (rel err {rel:.2e}), {secs:.2} s", mc.mean),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut ok = true;
    for k in [1, 2, 8] {
        let spec = OracleSpec::new(1.0, 1.0, 1.0, 0.0, k);
        let grid = PerturbationGrid::default_for(&spec);
        let r = saddle_verify(&spec, &grid, 100_000, 0).map_err(|e| e.to_string())?;
        let failed: Vec<&str> = r.results.iter().filter(|p| !p.ok).map(|p| p.label.as_str()).collect();
        ok &= r.pass && failed.is_empty();
        parts.push(format!(
            "k={k}: {} deviations, max jammer gain {:+.2e}, max codec loss {:+.2e}{}",
            r.results.len(),
            r.max_jammer_gain,
            r.max_codec_loss,
            if failed.is_empty() { String::new() } else { format!(", failed {failed:?}") }
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    check(ok && secs < 60.0, format!("{}; {secs:.1} s", parts.join("; ")))
}

fn criterion_3() -> Outcome {
    let m = 1_000_000;
    let ms = MatchingSpec::isotropic(1, 1.0, 1.0, 1.0);
    let mut rng = Rng::new(0);
    let x = rng.normal_tensor(&[m, 1]);
    let gauss = rng.normal_tensor(&[m, 1]);
    let h = 3f64.sqrt();
    let unif = Tensor::matrix(m, 1, (0..m).map(|_| rng.uniform_range(-h, h)).collect()).unwrap();
    let rg = matching_residual(&x, &gauss, &ms).map_err(|e| e.to_string())?;
    let ru = matching_residual(&x, &unif, &ms).map_err(|e| e.to_string())?;
    check(
        rg <= 0.02 && ru >= 0.05,
        format!("Gaussian saddle residual {rg:.4} (<= 0.02), uniform jammer residual {ru:.4} (>= 0.05)"),
    )
}

fn random_mlp(dims: &[usize], skip: bool, seed: u64) -> MlpParams {
    let mut p = MlpParams::init(dims, Activation::Tanh, Activation::Identity, skip, seed).unwrap();
    let mut rng = Rng::new(seed ^ 0xb1a5);
    for b in &mut p.biases {
        b.data_mut().iter_mut().for_each(|v| *v = rng.uniform_range(-0.5, 0.5));
    }
    p
}

fn criterion_4() -> Outcome {
    let mut rng = Rng::new(4);
    let mut worst: f64 = 0.0;
    let cases = 24;
    for case in 0..cases {
        let k = 1 + rng.below(4);
        let n = 1 + rng.below(8);
        let hidden = 2 + rng.below(7);
        let eta = 2.0 * rng.uniform();
        let sigma_n_sq = if case % 2 == 0 { 0.0 } else { 0.5 };
        let seed = rng.next_u64();
        let f = random_mlp(&[n, hidden, k], false, seed);
        let mut r = random_mlp(&[k, hidden, n], false, seed ^ 1);
        r.output_activation = Activation::Sigmoid;
        let tx = random_mlp(&[k, hidden, k], true, seed ^ 2);
        let rx = random_mlp(&[k, hidden, k], true, seed ^ 3);
        let d = rng.normal_tensor(&[8, n]).map(|v| 1.0 / (1.0 + (-v).exp()));
        let x = rng.normal_tensor(&[8, k]);
        let ch = ChannelParams { p_t: 1.0, sigma_n_sq };
        let noise_seed = rng.next_u64();
        let jscc = grad_check(&[f.clone(), tx.clone(), rx.clone()], |g, b| {
            let dv = g.constant(d.clone());
            let xv = g.constant(x.clone());
            let z = encode(g, &b[0], dv, 1.0)?;
            Ok(jscc_distortion(g, &b[1], &b[2], xv, z, ch, &mut Rng::new(noise_seed))?.loss)
        });
        let data = grad_check(&[f, r, tx, rx], |g, b| {
            let dv = g.constant(d.clone());
            let xv = g.constant(x.clone());
            let z = encode(g, &b[0], dv, 1.0)?;
            let pass = jscc_distortion(g, &b[2], &b[3], xv, z, ch, &mut Rng::new(noise_seed))?;
            Ok(data_loss(g, &b[1], dv, z, pass.loss, eta)?.loss)
        });
        worst = worst.max(jscc).max(data);
    }
    check(
        worst <= 1e-4,
        format!("{cases} random game instances, worst relative error {worst:.2e} (<= 1e-4)"),
    )
}

fn criterion_5(train: &Dataset) -> Outcome {
    let config = mnist_config(2, RegularizerKind::Aj);
    let mut state = TrainState::init(&config).map_err(|e| e.to_string())?;
    let plan = BatchPlan {
        batch_size: config.batch_size,
        drop_last: true,
    };
    let (mut steps, mut violations) = (0, 0);
    for b in batches(train, &plan, 1, config.seed).map_err(|e| e.to_string())?.take(100) {
        let r = any_train_step(&mut state, &b, &config).map_err(|e| e.to_string())?;
        if r.compressor_grad_phase_a != 0.0 || r.transmitter_grad_phase_b != 0.0 || r.receiver_grad_phase_b != 0.0 {
            violations += 1;
        }
        steps += 1;
    }
    check(
        steps == 100 && violations == 0,
        format!("{steps} MNIST steps, {violations} with a leaked gradient"),
    )
}

fn mnist_config(k: usize, regularizer: RegularizerKind) -> GameConfig {
    let mut c = GameConfig::new(k, 784);
    c.regularizer = regularizer;
    c.epochs = MNIST_EPOCHS;
    c.seed = MNIST_SEED;
    if regularizer == RegularizerKind::None {
        c.eta = 0.0;
    }
    c
}

struct RunResult {
    report: MetricsReport,
    elapsed: Duration,
}

impl RunResult {
    fn summary(&self) -> String {
        format!(
            "mse {:.4}, dpc {:.4}, {:.1} min",
            self.report.data_mse,
            self.report.dpc,
            self.elapsed.as_secs_f64() / 60.0
        )
    }
}

fn mnist() -> &'static Result<(Dataset, Dataset), String> {
    static DATA: OnceLock<Result<(Dataset, Dataset), String>> = OnceLock::new();
    DATA.get_or_init(|| catch_unwind(common::load_mnist).map_err(|e| panic_text(&e)))
}

fn mnist_run(config: &GameConfig) -> Result<RunResult, String> {
    let (train, test) = mnist().as_ref().map_err(Clone::clone)?;
    let start = Instant::now();
    let state = train_with(config, train, test, config.epochs, |_, _| {}).map_err(|e| e.to_string())?;
    let report = state.history.last().cloned().ok_or("no evaluation recorded")?;
    let r = RunResult {
        report,
        elapsed: start.elapsed(),
    };
    eprintln!(
        "    run k={} {} jscc_hidden={}: {}",
        config.k,
        config.regularizer.name(),
        config.jscc_hidden,
        r.summary()
    );
    Ok(r)
}

struct Runs {
    aj2: RunResult,
    vae2: RunResult,
    wae2: RunResult,
    control2: RunResult,
}

fn criterion_6(runs: &Runs) -> Outcome {
    let limit = 30.0 * 60.0;
    let times_ok = [&runs.aj2, &runs.vae2, &runs.wae2]
        .iter()
        .all(|r| r.elapsed.as_secs_f64() < limit);
    check(
        runs.aj2.report.data_mse <= 0.03
            && runs.aj2.report.dpc >= 0.9
            && runs.vae2.report.dpc >= 0.6
            && runs.wae2.report.dpc >= 0.9
            && times_ok,
        format!(
            "k=2 seed {MNIST_SEED}: AJ {} (mse <= 0.03, dpc >= 0.9); VAE {} (dpc >= 0.6); WAE {} (dpc >= 0.9)",
            runs.aj2.summary(),
            runs.vae2.summary(),
            runs.wae2.summary()
        ),
    )
}

fn criterion_7() -> Outcome {
    let aj = mnist_run(&mnist_config(8, RegularizerKind::Aj))?;
    let vae = mnist_run(&mnist_config(8, RegularizerKind::Kl))?;
    check(
        aj.report.dpc >= vae.report.dpc - 0.02,
        format!("k=8: AJ dpc {:.4} vs VAE dpc {:.4} (AJ >= VAE - 0.02)", aj.report.dpc, vae.report.dpc),
    )
}

fn criterion_8(runs: &Runs) -> Outcome {
    let (a, c) = (&runs.aj2.report, &runs.control2.report);
    let stats = |r: &MetricsReport, who: &str| {
        let g = &r.gaussianity;
        match (g.mean_abs_excess_kurtosis(), g.mean_ks()) {
            (Some(k), Some(ks)) if !g.degenerate() => Ok((k, ks)),
            _ => Err(format!("{who} latents are degenerate")),
        }
    };
    let ((ak, aks), (ck, cks)) = (stats(a, "AJ")?, stats(c, "control")?);
    check(
        ak < ck && aks < cks,
        format!("|excess kurtosis| AJ {ak:.4} vs control {ck:.4}; KS AJ {aks:.4} vs control {cks:.4}"),
    )
}

fn criterion_9() -> Outcome {
    let mut dpcs = Vec::new();
    for h in [8, 32, 128] {
        let mut c = mnist_config(2, RegularizerKind::Aj);
        c.jscc_hidden = h;
        dpcs.push((h, mnist_run(&c)?.report.dpc));
    }
    let ok = dpcs.windows(2).all(|w| w[1].1 >= w[0].1 - 0.02);
    let text: Vec<String> = dpcs.iter().map(|(h, d)| format!("h={h}: {d:.4}")).collect();
    check(ok, format!("final dpc {} (non-decreasing within 0.02)", text.join(", ")))
}

fn criterion_10() -> Outcome {
    let mu = [0.8, -1.2, 0.5];
    let lv = [0.6, -0.4, 0.2];
    let mut g = Graph::new();
    let m = g.constant(Tensor::matrix(1, 3, mu.to_vec()).unwrap());
    let l = g.constant(Tensor::matrix(1, 3, lv.to_vec()).unwrap());
    let kv = kl_diag_gaussian(&mut g, m, l).map_err(|e| e.to_string())?;
    let closed = g.value(kv).item();
    let mut rng = Rng::new(10);
    let samples = 1_000_000;
    let mut sum = 0.0;
    for _ in 0..samples {
        for i in 0..3 {
            let eps = rng.normal();
            let z = mu[i] + (0.5 * lv[i]).exp() * eps;
            // log N(z; μ, σ²) − log N(z; 0, 1)
            sum += 0.5 * (z * z - eps * eps - lv[i]);
        }
    }
    let mc = sum / samples as f64;
    let kl_rel = (mc - closed).abs() / closed;

    let mut g = Graph::new();
    let a = g.constant(Tensor::from_rows(&[&[0.0], &[1.0]]).unwrap());
    let b = g.constant(Tensor::from_rows(&[&[0.0], &[1.0]]).unwrap());
    let mv = mmd_imq(&mut g, a, b, 1.0).map_err(|e| e.to_string())?;
    let mmd = g.value(mv).item();

    // zero-mean, orthogonal, equal-norm u and v; second column 0.5u + √0.75 v
    let u = [1.0, -1.0, 1.0, -1.0];
    let v = [1.0, 1.0, -1.0, -1.0];
    let rows: Vec<f64> = (0..4).flat_map(|i| [u[i], 0.5 * u[i] + 0.75f64.sqrt() * v[i]]).collect();
    let dpc = pearson_dpc(&Tensor::matrix(4, 2, rows).unwrap()).map_err(|e| e.to_string())?;

    check(
        kl_rel <= 0.01 && mmd == -0.5 && (dpc - 0.75).abs() <= 1e-12,
        format!("KL {closed:.5} vs Monte-Carlo {mc:.5} (rel {kl_rel:.1e}); MMD hand example {mmd}; DPC rho=0.5 {dpc:.15}"),
    )
}

fn panic_text(e: &Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panicked".into())
}

fn report(n: usize, outcome: Outcome, failures: &mut usize) {
    match outcome {
        Ok(d) => println!("[PASS] criterion {n}: {d}"),
        Err(d) => {
            *failures += 1;
            println!("[FAIL] criterion {n}: {d}");
        }
    }
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| Err(panic_text(&e)))
}

fn main() -> ExitCode {
    std::panic::set_hook(Box::new(|_| {}));
    let mut failures = 0;
    report(1, guarded(criterion_1), &mut failures);
    report(2, guarded(criterion_2), &mut failures);
    report(3, guarded(criterion_3), &mut failures);
    report(4, guarded(criterion_4), &mut failures);
    report(
        5,
        guarded(|| criterion_5(&mnist().as_ref().map_err(Clone::clone)?.0)),
        &mut failures,
    );

    let runs: Result<Runs, String> = catch_unwind(|| {
        Ok(Runs {
            aj2: mnist_run(&mnist_config(2, RegularizerKind::Aj))?,
            vae2: mnist_run(&mnist_config(2, RegularizerKind::Kl))?,
            wae2: mnist_run(&mnist_config(2, RegularizerKind::Mmd))?,
            control2: mnist_run(&mnist_config(2, RegularizerKind::None))?,
        })
    })
    .unwrap_or_else(|e| Err(panic_text(&e)));
    let with_runs = |f: fn(&Runs) -> Outcome| match &runs {
        Ok(r) => guarded(|| f(r)),
        Err(e) => Err(e.clone()),
    };
    report(6, with_runs(criterion_6), &mut failures);
    report(7, guarded(criterion_7), &mut failures);
    report(8, with_runs(criterion_8), &mut failures);
    report(9, guarded(criterion_9), &mut failures);
    report(10, guarded(criterion_10), &mut failures);

    println!("acceptance: {} of 10 criteria passed", 10 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
