//! The reverse engine against the forward-mode engine, checkpointing
//! self-consistency, and the finite-difference oracle on small networks.

use spsnn::gradcheck::{gradcheck, small_network, small_sample, GradCheckOptions};
use spsnn::network::{Dimensionality, Network, NetworkConfig, Params, Topology};
use spsnn::neurons::{NeuronModel, NeuronParams};
use spsnn::objectives::{Objective, TtfsLoss};
use spsnn::simulator::{run_forward, run_with_gradients, tangent_gradients, InputSpike, Sample};

fn ttfs() -> Objective {
    Objective::Ttfs(TtfsLoss::default())
}

fn assert_close(a: &Params, b: &Params, rel: f64) {
    let (fa, fb) = (a.flatten(), b.flatten());
    assert_eq!(fa.len(), fb.len());
    let scale = fa.iter().chain(&fb).fold(1e-12f64, |m, x| m.max(x.abs()));
    for (k, (x, y)) in fa.iter().zip(&fb).enumerate() {
        assert!(
            (x - y).abs() <= rel * scale,
            "{:?}: {x} vs {y}",
            a.locate(k)
        );
    }
}

fn recurrent(seed: u64, dims: Dimensionality) -> Network {
    let cfg = NetworkConfig {
        topology: Topology::Recurrent,
        n_in: 3,
        n_hidden: 6,
        n_out: 2,
        dims,
        neuron: NeuronParams {
            tau_mem: 5.0,
            tau_syn: 2.5,
            ..NeuronParams::default()
        },
        dt: 0.05,
        n_steps: 400,
        checkpoint_interval: 37,
        init: spsnn::network::InitConfig {
            w_in_mean: 1.5,
            w_in_std: 0.5,
            w_hidden_mean: 0.2,
            w_hidden_std: 0.4,
            ..Default::default()
        },
        ..NetworkConfig::default()
    };
    Network::init(cfg, seed).unwrap()
}

fn burst() -> Sample {
    Sample {
        inputs: (0..12)
            .map(|k| InputSpike {
                neuron: k % 3,
                time: 0.5 + 1.3 * k as f64,
            })
            .collect(),
        label: 1,
    }
}

#[test]
fn reverse_matches_forward_mode() {
    let cases: Vec<(Network, Sample, Objective)> = vec![
        (small_network(NeuronModel::Lif, Dimensionality::Spatial(2), 0.01, 0).unwrap(), small_sample(), ttfs()),
        (small_network(NeuronModel::Lif, Dimensionality::Infinite, 0.01, 1).unwrap(), small_sample(), ttfs()),
        (small_network(NeuronModel::Lif, Dimensionality::Zero, 0.01, 2).unwrap(), small_sample(), ttfs()),
        (small_network(NeuronModel::Adex, Dimensionality::Spatial(3), 0.01, 3).unwrap(), small_sample(), ttfs()),
        (recurrent(4, Dimensionality::Spatial(2)), burst(), Objective::Readout),
        (recurrent(5, Dimensionality::Infinite), burst(), Objective::Readout),
    ];
    for (net, sample, obj) in cases {
        let comp = net.compile().unwrap();
        let rev = run_with_gradients(&net, &comp, &sample, &obj).unwrap();
        let fwd = tangent_gradients(&net, &comp, &sample, &obj).unwrap();
        assert!(rev.trace.spike_times.iter().any(|s| !s.is_empty()));
        assert_eq!(rev.trace.spike_times, fwd.trace.spike_times);
        assert_eq!(rev.loss, fwd.loss);
        assert_close(&rev.grad, &fwd.grad, 1e-9);
    }
}

#[test]
fn tortuous_reverse_matches_forward_mode() {
    let mut net = small_network(NeuronModel::Lif, Dimensionality::Spatial(2), 0.01, 6).unwrap();
    let mut cfg = net.config.clone();
    cfg.tortuosity_epsilon = Some(0.5);
    let mut params = net.params.clone();
    params.tortuosity = (0..net.layout.n_synapses()).map(|s| ((s * 7) % 5) as f64 * 0.3 - 0.6).collect();
    net = Network::from_params(cfg, params, None).unwrap();
    let comp = net.compile().unwrap();
    let rev = run_with_gradients(&net, &comp, &small_sample(), &ttfs()).unwrap();
    let fwd = tangent_gradients(&net, &comp, &small_sample(), &ttfs()).unwrap();
    assert!(rev.grad.tortuosity.iter().any(|g| *g != 0.0));
    assert_close(&rev.grad, &fwd.grad, 1e-9);
}

#[test]
fn checkpoint_interval_does_not_change_gradients() {
    for (net, sample, obj) in [
        (small_network(NeuronModel::Lif, Dimensionality::Spatial(2), 0.01, 0).unwrap(), small_sample(), ttfs()),
        (recurrent(7, Dimensionality::Spatial(2)), burst(), Objective::Readout),
    ] {
        let comp = net.compile().unwrap();
        let mut reference = None;
        for k in [1, 3, 100, 10_000] {
            let mut cfg = net.config.clone();
            cfg.checkpoint_interval = k;
            let n = Network::from_params(cfg, net.params.clone(), Some(net.capacity)).unwrap();
            let r = run_with_gradients(&n, &comp, &sample, &obj).unwrap();
            match &reference {
                None => reference = Some(r.grad),
                Some(g) => assert_close(g, &r.grad, 1e-12),
            }
        }
    }
}

#[test]
fn gradient_run_reproduces_forward_trace() {
    let net = recurrent(8, Dimensionality::Spatial(2));
    let comp = net.compile().unwrap();
    let fwd = run_forward(&net, &burst()).unwrap();
    let a = run_with_gradients(&net, &comp, &burst(), &Objective::Readout).unwrap();
    let b = run_with_gradients(&net, &comp, &burst(), &Objective::Readout).unwrap();
    assert_eq!(fwd.raster, a.trace.raster);
    assert_eq!(a.grad, b.grad);
}

#[test]
fn finite_differences_on_a_coarse_grid() {
    let net = small_network(NeuronModel::Lif, Dimensionality::Spatial(2), 1e-3, 0).unwrap();
    let report = gradcheck(&net, &[small_sample()], &ttfs(), &GradCheckOptions::default()).unwrap();
    let names: Vec<_> = report.blocks.iter().map(|b| b.name).collect();
    assert_eq!(names, ["weights", "positions"]);
    assert!(report.blocks.iter().all(|b| b.checked > 0));
    assert!(report.passes(5e-2), "{:?}", report.blocks);
}

#[test]
fn zero_dim_report_has_no_position_block() {
    let net = small_network(NeuronModel::Lif, Dimensionality::Zero, 1e-2, 0).unwrap();
    let report = gradcheck(&net, &[small_sample()], &ttfs(), &GradCheckOptions::default()).unwrap();
    let names: Vec<_> = report.blocks.iter().map(|b| b.name).collect();
    assert_eq!(names, ["weights"]);
}

#[test]
fn lif_gradcheck_holds_across_initializations() {
    for seed in 0..8 {
        let net = small_network(NeuronModel::Lif, Dimensionality::Spatial(2), 1e-4, seed).unwrap();
        let report = gradcheck(&net, &[small_sample()], &ttfs(), &GradCheckOptions::default()).unwrap();
        assert!(report.passes(1e-2), "seed {seed}: {:?}", report.blocks);
    }
}

#[test]
fn relative_error_floor_follows_the_block_scale() {
    let net = small_network(NeuronModel::Lif, Dimensionality::Spatial(2), 1e-3, 3).unwrap();
    let strict = GradCheckOptions {
        block_floor: 0.0,
        ..GradCheckOptions::default()
    };
    let a = gradcheck(&net, &[small_sample()], &ttfs(), &strict).unwrap();
    let b = gradcheck(&net, &[small_sample()], &ttfs(), &GradCheckOptions::default()).unwrap();
    assert_eq!(a.finite_diff, b.finite_diff);
    for (x, y) in a.blocks.iter().zip(&b.blocks) {
        assert!(y.max_rel_err <= x.max_rel_err);
    }
}
