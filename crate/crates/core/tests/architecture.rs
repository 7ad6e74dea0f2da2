use brunet::arch::{build_network, receptive_field, Arch, Init, NetConfig};
use brunet::{Mode, Tensor};

fn tiny(arch: Arch) -> NetConfig {
    NetConfig { depth: 3, base_filters: 4, filter_cap: 52, input_size: 32, ..NetConfig::desk(arch) }
}

#[test]
fn full_scale_counts_are_stable() {
    let count =
        |arch, depth| build_network::<f32>(&NetConfig::full_scale(arch, depth), Init::Zeros).unwrap().parameter_count();
    assert_eq!(count(Arch::BruNet, 5), 21_592_001);
    assert_eq!(count(Arch::BruNet, 6), 41_159_809);
    assert_eq!(count(Arch::UNet, 5), 44_014_721);
    assert_eq!(count(Arch::UNet, 6), 176_143_489);
}

#[test]
fn parameter_count_ignores_input_size() {
    for arch in [Arch::BruNet, Arch::UNet] {
        let counts: Vec<usize> = [32, 64, 96]
            .iter()
            .map(|&s| {
                build_network::<f32>(&NetConfig { input_size: s, ..tiny(arch) }, Init::Zeros).unwrap().parameter_count()
            })
            .collect();
        assert!(counts.windows(2).all(|w| w[0] == w[1]), "{arch}: {counts:?}");
    }
}

#[test]
fn static_shapes_match_runtime() {
    for arch in [Arch::BruNet, Arch::UNet] {
        let cfg = tiny(arch);
        let mut net = build_network::<f32>(&cfg, Init::Seeded(1)).unwrap();
        let shapes = net.graph.infer_shapes(&[vec![2, 1, 32, 32]]).unwrap();
        let x = Tensor::from_fn(&[2, 1, 32, 32], |i| (i % 17) as f32 / 17.0);
        let y = net.graph.forward_retained(&[&x], Mode::Infer).unwrap();
        let out = net.graph.output().unwrap();
        assert_eq!(shapes[out], y.shape());
        assert_eq!(y.shape(), &[2, 1, 32, 32]);
    }
}

#[test]
fn skipless_gradients_reach_every_descending_parameter() {
    let cfg = NetConfig { skips_enabled: false, ..tiny(Arch::BruNet) };
    let mut net = build_network::<f64>(&cfg, Init::Seeded(5)).unwrap();
    let x = Tensor::from_fn(&[2, 1, 32, 32], |i| ((i * 7919) % 101) as f64 / 101.0);
    net.graph.zero_grads();
    let y = net.graph.forward_retained(&[&x], Mode::Train).unwrap();
    net.graph.backward(&Tensor::full(y.shape(), 1.0)).unwrap();
    let mut seen = 0;
    for (_, p) in net.graph.params.iter().filter(|(_, p)| p.trainable && p.name.starts_with("down")) {
        let g = p.tensor.grad().expect("gradient allocated");
        assert!(g.iter().any(|v| *v != 0.0), "{} has no gradient", p.name);
        seen += 1;
    }
    assert!(seen > 0);
}

#[test]
fn receptive_field_grows_with_depth() {
    for arch in [Arch::BruNet, Arch::UNet] {
        let fields: Vec<_> = (1..=6).map(|d| receptive_field(&NetConfig::full_scale(arch, d)).unwrap()).collect();
        for w in fields.windows(2) {
            assert!(w[1].deepest > w[0].deepest && w[1].output > w[0].output, "{arch}: {fields:?}");
        }
    }
    let bru = receptive_field(&NetConfig::full_scale(Arch::BruNet, 5)).unwrap();
    let unet = receptive_field(&NetConfig::full_scale(Arch::UNet, 5)).unwrap();
    assert!(bru.deepest > unet.deepest);
}

#[test]
fn bad_input_extent_is_rejected() {
    let mut net = build_network::<f32>(&tiny(Arch::BruNet), Init::Zeros).unwrap();
    assert!(net.forward(&Tensor::zeros(&[1, 1, 48, 48]), Mode::Infer).is_err());
    assert!(net.forward(&Tensor::zeros(&[1, 2, 32, 32]), Mode::Infer).is_err());
}
