//! Network evaluation against straight-line reimplementations.

use deepfem::autodiff::{Activation, SpatialJet, Tape};
use deepfem::network::{
    eval_network, eval_network_jet, init_network, Architecture, Network, NetworkConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(
    arch: Architecture,
    width: usize,
    depth: usize,
    dim: usize,
    act: Activation,
) -> NetworkConfig {
    NetworkConfig {
        arch,
        width,
        depth,
        activation: act,
        input_dim: dim,
        seed: 17,
    }
}

fn randomised(cfg: NetworkConfig, seed: u64) -> Network {
    let mut net = Network::init(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in net.params.as_mut_slice() {
        *p = rng.gen_range(-1.0..1.0);
    }
    net
}

fn matvec(w: &[f64], x: &[f64]) -> Vec<f64> {
    w.chunks(x.len())
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

#[test]
fn zero_output_layer_gives_zero_field() {
    let mut net = randomised(
        config(Architecture::Resnet, 5, 4, 2, Activation::ReluCubed),
        4,
    );
    net.params.block_mut("a").unwrap().fill(0.0);
    for x in [[0.1, 0.2], [0.9, 0.4]] {
        assert_eq!(net.eval(&x), 0.0);
        assert_eq!(net.eval_jet(&x), SpatialJet::ZERO);
    }
}

#[test]
fn single_relu_unit() {
    let cfg = config(Architecture::Fnn, 1, 1, 1, Activation::Relu);
    let mut net = Network::init(cfg).unwrap();
    net.params.block_mut("W1").unwrap()[0] = 1.0;
    net.params.block_mut("b1").unwrap()[0] = 0.0;
    net.params.block_mut("a").unwrap()[0] = 1.0;
    assert_eq!(net.eval(&[2.0]), 2.0);
    assert_eq!(net.eval(&[-2.0]), 0.0);
}

#[test]
fn two_layer_resnet_matches_hand_unrolled_recursion() {
    for seed in 0..10 {
        let act = Activation::ReluCubed;
        let net = randomised(config(Architecture::Resnet, 5, 2, 2, act), seed);
        let p = &net.params;
        let x = [0.3, 0.8];
        let sigma = |v: Vec<f64>| {
            v.into_iter()
                .map(|t| if t > 0.0 { t * t * t } else { 0.0 })
                .collect::<Vec<_>>()
        };
        let add = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + y).collect::<Vec<f64>>();
        let h0 = matvec(p.block("V").unwrap(), &x);
        let g1 = sigma(add(
            &matvec(p.block("W1").unwrap(), &h0),
            p.block("b1").unwrap(),
        ));
        let h1 = g1;
        let g2 = sigma(add(
            &matvec(p.block("W2").unwrap(), &h1),
            p.block("b2").unwrap(),
        ));
        let h2 = add(&h0, &g2);
        let phi: f64 = p
            .block("a")
            .unwrap()
            .iter()
            .zip(&h2)
            .map(|(a, h)| a * h)
            .sum();
        let got = net.eval(&x);
        assert!(
            (got - phi).abs() <= 1e-14 * phi.abs().max(1.0),
            "{got} vs {phi}"
        );
    }
}

#[test]
fn one_layer_resnet_is_a_shallow_network() {
    let net = randomised(config(Architecture::Resnet, 7, 1, 1, Activation::Tanh), 8);
    let p = &net.params;
    let (v, w, b, a) = (
        p.block("V").unwrap(),
        p.block("W1").unwrap(),
        p.block("b1").unwrap(),
        p.block("a").unwrap(),
    );
    for x in [-0.4, 0.0, 0.35, 1.2] {
        let direct: f64 = (0..7)
            .map(|i| {
                let pre: f64 = (0..7).map(|j| w[i * 7 + j] * v[j] * x).sum::<f64>() + b[i];
                a[i] * pre.tanh()
            })
            .sum();
        assert!((net.eval(&[x]) - direct).abs() <= 1e-14, "{x}");
    }
}

#[test]
fn parameter_count_formula() {
    for n in [10, 30, 50] {
        for l in [2, 4, 6] {
            for d in [1, 2] {
                let cfg = config(Architecture::Resnet, n, l, d, Activation::ReluCubed);
                let want = n * d + l * (n * n + n) + n;
                assert_eq!(cfg.param_count(), want);
                let params = init_network(&cfg).unwrap();
                assert_eq!(params.len(), want);
                let mut covered = vec![0u8; want];
                for e in params.layout() {
                    for i in e.range() {
                        covered[i] += 1;
                    }
                }
                assert!(covered.iter().all(|&c| c == 1), "layout must tile [0, P)");
                let fnn = config(Architecture::Fnn, n, l, d, Activation::ReluCubed);
                assert_eq!(fnn.param_count(), n * d + n + (l - 1) * (n * n + n) + n);
            }
        }
    }
}

#[test]
fn value_channel_equals_plain_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for arch in [Architecture::Resnet, Architecture::Fnn] {
        for act in [Activation::Relu, Activation::Tanh, Activation::ReluCubed] {
            let net = randomised(config(arch, 6, 3, 2, act), rng.gen());
            for _ in 0..100 {
                let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                let plain = eval_network(&net.params, &net.config, &x).unwrap();
                let jet = eval_network_jet(&net.params, &net.config, &x).unwrap();
                assert_eq!(jet.value, plain);
                let mut tape = Tape::<2>::new(net.params.as_slice(), true);
                let v = net.on_tape(&mut tape, 0, &x);
                assert_eq!(*tape.jet(v), jet);
            }
        }
    }
}

#[test]
fn initialisation_is_seeded_with_zero_biases() {
    let cfg = NetworkConfig::standard(2, 42);
    let a = init_network(&cfg).unwrap();
    let b = init_network(&cfg).unwrap();
    assert_eq!(a, b);
    for l in 1..=cfg.depth {
        assert!(a.block(&format!("b{l}")).unwrap().iter().all(|&v| v == 0.0));
    }
    let other = init_network(&NetworkConfig::standard(2, 43)).unwrap();
    assert_ne!(a, other);
    assert!(eval_network(&a, &cfg, &[0.5]).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let net = randomised(NetworkConfig::standard(1, 3), 5);
    let path = std::env::temp_dir().join(format!("deepfem-net-{}.json", std::process::id()));
    net.save(&path).unwrap();
    let back = Network::load(&path).unwrap();
    std::fs::remove_file(&path).ok();
    assert_eq!(back, net);

    let mut ck = net.checkpoint();
    ck.version += 1;
    assert!(ck.into_network().is_err());
}
