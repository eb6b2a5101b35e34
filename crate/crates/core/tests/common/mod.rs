#![allow(dead_code)]

use std::path::PathBuf;

use aj_core::data::{load_idx, Dataset};
use aj_core::nets::{BoundMlp, MlpParams};
use aj_core::{Graph, Result, Var};

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_FLOOR: f64 = 1e-4;

/// Worst elementwise relative error between backward and central finite
/// differences over every parameter of `nets`.
pub fn grad_check(nets: &[MlpParams], build: impl Fn(&mut Graph, &[BoundMlp]) -> Result<Var>) -> f64 {
    let eval = |nets: &[MlpParams]| -> f64 {
        let mut g = Graph::new();
        let bound: Vec<BoundMlp> = nets.iter().map(|n| n.bind(&mut g, true)).collect();
        let loss = build(&mut g, &bound).unwrap();
        g.value(loss).item()
    };
    let mut g = Graph::new();
    let bound: Vec<BoundMlp> = nets.iter().map(|n| n.bind(&mut g, true)).collect();
    let loss = build(&mut g, &bound).unwrap();
    let vars: Vec<Var> = bound.iter().flat_map(|b| b.vars()).collect();
    let grads = g.backward(loss, &vars).unwrap();

    let mut worst: f64 = 0.0;
    let mut var_idx = 0;
    for (ni, net) in nets.iter().enumerate() {
        for ti in 0..net.tensors().len() {
            let analytic = grads.get(vars[var_idx]).map(|t| t.data().to_vec());
            var_idx += 1;
            for ei in 0..net.tensors()[ti].len() {
                let mut plus = nets.to_vec();
                plus[ni].tensors_mut()[ti].data_mut()[ei] += FD_STEP;
                let mut minus = nets.to_vec();
                minus[ni].tensors_mut()[ti].data_mut()[ei] -= FD_STEP;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
                let a = analytic.as_ref().map_or(0.0, |v| v[ei]);
                let scale = a.abs().max(numeric.abs());
                // below 1e-4 the finite differences are dominated by rounding,
                // so tiny entries are held to an absolute 1e-8
                let err = (a - numeric).abs() / scale.max(GRAD_FLOOR);
                worst = worst.max(err);
            }
        }
    }
    worst
}

pub fn mnist_dir() -> PathBuf {
    std::env::var_os("AJ_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

/// `(train, test)` MNIST images; panics with a fetch hint when absent.
pub fn load_mnist() -> (Dataset, Dataset) {
    let dir = mnist_dir();
    let load = |img: &str, lbl: &str| {
        load_idx(&dir.join(img), Some(&dir.join(lbl))).unwrap_or_else(|e| {
            panic!(
                "MNIST not found under {} ({e}); run scripts/fetch_mnist.sh or set AJ_MNIST_DIR",
                dir.display()
            )
        })
    };
    (
        load("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        load("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    )
}
