mod common;

use aj_core::game::{data_loss, encode, jscc_distortion, ChannelParams};
use aj_core::nets::{Activation, MlpParams};
use aj_core::rng::Rng;
use aj_core::{Graph, Tensor};
use common::grad_check;
use proptest::prelude::*;

fn random_mlp(dims: &[usize], hidden: Activation, output: Activation, skip: bool, seed: u64) -> MlpParams {
    let mut p = MlpParams::init(dims, hidden, output, skip, seed).unwrap();
    let mut rng = Rng::new(seed ^ 0xb1a5);
    for b in &mut p.biases {
        for v in b.data_mut() {
            *v = rng.uniform_range(-0.5, 0.5);
        }
    }
    p
}

fn activation(i: usize) -> Activation {
    [Activation::Relu, Activation::Tanh, Activation::Sigmoid, Activation::Identity][i]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mlp_gradients_match_finite_differences(
        dims in prop::collection::vec(1usize..=8, 2..=4),
        hidden in 0usize..3,
        output in prop::sample::select(vec![2usize, 3]),
        skip in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let net = random_mlp(&dims, activation(hidden), activation(output), skip, seed);
        let mut rng = Rng::new(seed);
        let x = rng.normal_tensor(&[5, dims[0]]);
        let target = rng.normal_tensor(&[5, *dims.last().unwrap()]);
        let err = grad_check(&[net], |g, b| {
            let xv = g.constant(x.clone());
            let tv = g.constant(target.clone());
            let out = b[0].forward(g, xv)?;
            let d = g.sub(out, tv)?;
            let sq = g.square(d)?;
            g.mean(sq)
        });
        prop_assert!(err <= 1e-4, "relative error {err}");
    }

    #[test]
    fn game_losses_match_finite_differences(
        k in 1usize..=4,
        n in 1usize..=8,
        hidden in 2usize..=8,
        sigma_n_sq in prop::sample::select(vec![0.0, 0.5]),
        eta in 0.0f64..2.0,
        seed in any::<u64>(),
    ) {
        // smooth hidden units: a ReLU kink within one step of a sample
        // invalidates the finite difference itself
        let f = random_mlp(&[n, hidden, k], Activation::Tanh, Activation::Identity, false, seed);
        let r = random_mlp(&[k, hidden, n], Activation::Tanh, Activation::Sigmoid, false, seed ^ 1);
        let tx = random_mlp(&[k, hidden, k], Activation::Tanh, Activation::Identity, true, seed ^ 2);
        let rx = random_mlp(&[k, hidden, k], Activation::Tanh, Activation::Identity, true, seed ^ 3);
        let mut rng = Rng::new(seed);
        let d = rng.normal_tensor(&[8, n]).map(|v| 1.0 / (1.0 + (-v).exp()));
        let x = rng.normal_tensor(&[8, k]);
        let ch = ChannelParams { p_t: 1.0, sigma_n_sq };
        let noise_seed = rng.next_u64();

        // jamming objective with the jammer as a live input
        let jscc_err = grad_check(&[f.clone(), tx.clone(), rx.clone()], |g, b| {
            let dv = g.constant(d.clone());
            let xv = g.constant(x.clone());
            let z = encode(g, &b[0], dv, 1.0)?;
            let mut noise = Rng::new(noise_seed);
            Ok(jscc_distortion(g, &b[1], &b[2], xv, z, ch, &mut noise)?.loss)
        });
        prop_assert!(jscc_err <= 1e-4, "jscc relative error {jscc_err}");

        let data_err = grad_check(&[f, r, tx, rx], |g, b| {
            let dv = g.constant(d.clone());
            let xv = g.constant(x.clone());
            let z = encode(g, &b[0], dv, 1.0)?;
            let mut noise = Rng::new(noise_seed);
            let pass = jscc_distortion(g, &b[2], &b[3], xv, z, ch, &mut noise)?;
            Ok(data_loss(g, &b[1], dv, z, pass.loss, eta)?.loss)
        });
        prop_assert!(data_err <= 1e-4, "data relative error {data_err}");
    }

    #[test]
    fn backward_is_linear_in_the_loss(c in -5.0f64..5.0, seed in any::<u64>()) {
        let net = random_mlp(&[3, 4, 2], Activation::Tanh, Activation::Identity, true, seed);
        let x = Rng::new(seed).normal_tensor(&[4, 3]);
        let grads = |scale: f64| {
            let mut g = Graph::new();
            let b = net.bind(&mut g, true);
            let xv = g.constant(x.clone());
            let out = b.forward(&mut g, xv).unwrap();
            let sq = g.square(out).unwrap();
            let l = g.mean(sq).unwrap();
            let l = g.scale(l, scale).unwrap();
            let gr = g.backward(l, &b.vars()).unwrap();
            b.vars().iter().map(|&v| gr.get(v).unwrap().clone()).collect::<Vec<Tensor>>()
        };
        let base = grads(1.0);
        let scaled = grads(c);
        for (a, s) in base.iter().zip(&scaled) {
            for (u, v) in a.data().iter().zip(s.data()) {
                prop_assert!((c * u - v).abs() <= 1e-12 * (1.0 + v.abs()));
            }
        }
    }
}

#[test]
fn identical_programs_are_bitwise_identical() {
    let run = || {
        let net = random_mlp(&[6, 8, 3], Activation::Relu, Activation::Identity, false, 42);
        let mut rng = Rng::new(7);
        let mut g = Graph::new();
        let b = net.bind(&mut g, true);
        let x = g.constant(rng.normal_tensor(&[16, 6]));
        let out = b.forward(&mut g, x).unwrap();
        let z = aj_core::nets::power_normalize(&mut g, out, 1.0).unwrap();
        let sq = g.square(z).unwrap();
        let noise = g.constant(rng.normal_tensor(&[16, 3]));
        let l = g.mul(sq, noise).unwrap();
        let l = g.mean(l).unwrap();
        let gr = g.backward(l, &b.vars()).unwrap();
        let mut bits: Vec<u64> = vec![g.value(l).item().to_bits()];
        for v in b.vars() {
            bits.extend(gr.get(v).unwrap().data().iter().map(|x| x.to_bits()));
        }
        bits
    };
    assert_eq!(run(), run());
}

#[test]
fn detach_matches_frozen_constant() {
    // L(a) = sum(a * detach(a²)) against L(a) = sum(a * c) with c = a²
    let a0 = Tensor::from_rows(&[&[0.3, -1.2], &[2.0, 0.7]]).unwrap();
    let mut g = Graph::new();
    let a = g.param(a0.clone());
    let b = g.square(a).unwrap();
    let bd = g.detach(b).unwrap();
    let p = g.mul(a, bd).unwrap();
    let l = g.sum(p).unwrap();
    let gd = g.backward(l, &[a]).unwrap();

    let mut h = Graph::new();
    let a2 = h.param(a0.clone());
    let c = h.constant(a0.map(|v| v * v));
    let p2 = h.mul(a2, c).unwrap();
    let l2 = h.sum(p2).unwrap();
    let gc = h.backward(l2, &[a2]).unwrap();
    assert_eq!(gd.get(a).unwrap(), gc.get(a2).unwrap());
}
