use ssanet_core::arch::{
    build_variant, forward, gradcheck_network, init_parameters, ArchConfig, ArchError, ConvSpec,
    LayerKind, LayerNode, NetworkSpec, VariantId,
};
use ssanet_core::engine::{GradCheckConfig, Mode, Shape, Tensor};
use ssanet_core::rng;

fn desk(id: VariantId) -> NetworkSpec {
    build_variant(id, &ArchConfig::desk()).unwrap()
}

fn conv_node(name: &str, input: usize, in_ch: usize, out_ch: usize) -> LayerNode {
    LayerNode {
        name: name.into(),
        kind: LayerKind::Conv2d(ConvSpec {
            in_ch,
            out_ch,
            kernel: 3,
            stride: 1,
            padding: 1,
            bias: true,
        }),
        inputs: vec![input],
    }
}

/// input -> n stacked 3x3 convs -> sigmoid, with the last conv as "fusion".
fn stacked_convs(n: usize) -> NetworkSpec {
    let mut nodes = vec![LayerNode {
        name: "input".into(),
        kind: LayerKind::Input { channels: 1 },
        inputs: vec![],
    }];
    for i in 0..n {
        nodes.push(conv_node(
            &format!("conv{i}"),
            i,
            if i == 0 { 1 } else { 16 },
            16,
        ));
    }
    nodes.push(LayerNode {
        name: "out".into(),
        kind: LayerKind::Sigmoid,
        inputs: vec![n],
    });
    NetworkSpec {
        variant: VariantId::DriuNoms,
        config: ArchConfig::desk(),
        nodes,
        side_outputs: vec![n],
        fusion: n,
        output: n + 1,
    }
}

#[test]
fn ssa2_has_two_ssa_stages() {
    let spec = desk(VariantId::MsresnetSsa2);
    assert_eq!(spec.strided_convs(), 2);
    assert_eq!(spec.upsamples(), 2);
    assert_eq!(spec.pools(), 0);
    // Each strided entry is followed (after its blocks) by exactly one upsample.
    for s in 1..=2 {
        let entry = spec.find(&format!("stage{s}.entry.conv")).unwrap();
        let up = spec.find(&format!("stage{s}.up")).unwrap();
        assert!(entry < up);
        let between = spec.nodes[entry..up]
            .iter()
            .filter(|n| matches!(n.kind, LayerKind::Upsample2d))
            .count();
        assert_eq!(between, 0);
    }
    let shapes = spec.infer_shapes(Shape::new(1, 1, 32, 32)).unwrap();
    for &s in &spec.side_outputs {
        assert_eq!((shapes[s].h, shapes[s].w), (32, 32));
    }
}

#[test]
fn noms_has_no_resampling() {
    let spec = desk(VariantId::ResnetNoms);
    assert_eq!(spec.strided_convs(), 0);
    assert_eq!(spec.pools(), 0);
    assert_eq!(spec.upsamples(), 0);
    let shapes = spec.infer_shapes(Shape::new(1, 1, 20, 12)).unwrap();
    assert!(shapes.iter().all(|s| (s.h, s.w) == (20, 12)));
    let driu = desk(VariantId::DriuNoms);
    let shapes = driu.infer_shapes(Shape::new(1, 1, 9, 7)).unwrap();
    assert!(shapes.iter().all(|s| (s.h, s.w) == (9, 7)));
}

#[test]
fn ssa3_adds_exactly_one_front_stage() {
    let ssa2 = desk(VariantId::MsresnetSsa2);
    let ssa3 = desk(VariantId::MsresnetSsa3);
    let pre: Vec<&LayerNode> = ssa3
        .nodes
        .iter()
        .filter(|n| n.name.starts_with("pre."))
        .collect();
    // The extra stage is the only structural difference besides the head.
    let extra = ssa3.nodes.len() - ssa2.nodes.len();
    assert_eq!(extra, pre.len());
    assert_eq!(ssa3.strided_convs(), 3);
    assert_eq!(ssa3.upsamples(), 3);
    let first_pre = ssa3.find("pre.entry.conv").unwrap();
    let stage0 = ssa3.find("stage0.block0.a.conv").unwrap();
    let stem = ssa3.find("stem.relu").unwrap();
    assert!(stem < first_pre && first_pre < stage0);
    assert_eq!(ssa3.side_outputs.len(), ssa2.side_outputs.len() + 1);
}

#[test]
fn dec_upsamples_only_at_fusion() {
    let spec = desk(VariantId::MsresnetDec);
    assert_eq!(spec.strided_convs(), 2);
    let fusion_ups = spec
        .nodes
        .iter()
        .filter(|n| n.name.starts_with("side"))
        .count();
    assert_eq!(fusion_ups, spec.upsamples());
    assert_eq!(fusion_ups, 1 + 2);
    let shapes = spec.infer_shapes(Shape::new(1, 1, 32, 32)).unwrap();
    let levels: Vec<usize> = spec
        .side_outputs
        .iter()
        .map(|&s| 32 / shapes[s].h)
        .collect();
    assert_eq!(levels, [1, 2, 4]);
    assert_eq!(spec.required_divisor(), 4);
}

#[test]
fn driu_pools_between_stages() {
    let spec = desk(VariantId::DriuLite);
    assert_eq!(spec.pools(), 2);
    assert_eq!(spec.strided_convs(), 0);
    assert_eq!(spec.required_divisor(), 4);
}

#[test]
fn ssa2_and_dec_share_parameters() {
    let a = desk(VariantId::MsresnetSsa2);
    let b = desk(VariantId::MsresnetDec);
    assert_eq!(a.param_count(), b.param_count());
    assert_eq!(a.parameters(), b.parameters());
    // Removing the upsample nodes makes the rest of the graph identical.
    let strip = |s: &NetworkSpec| -> Vec<(String, LayerKind)> {
        s.nodes
            .iter()
            .filter(|n| !matches!(n.kind, LayerKind::Upsample2d))
            .map(|n| (n.name.clone(), n.kind.clone()))
            .collect()
    };
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn ssa2_desk_param_ledger() {
    // Layer-by-layer: weights (out*in*9) plus BN gamma/beta (2*out).
    let conv_bn = |i: usize, o: usize| o * i * 9 + 2 * o;
    let stem = conv_bn(1, 16);
    let stage0 = 4 * conv_bn(16, 16);
    let stage1 = conv_bn(16, 32) + 4 * conv_bn(32, 32);
    let stage2 = conv_bn(32, 64) + 4 * conv_bn(64, 64);
    let fusion = 112 + 1;
    let ledger = stem + stage0 + stage1 + stage2 + fusion;
    assert_eq!(ledger, 217_953);
    assert_eq!(desk(VariantId::MsresnetSsa2).param_count(), ledger);
}

#[test]
fn single_conv_param_count() {
    let spec = stacked_convs(1);
    // 1->16 3x3 with bias: 144 + 16.
    assert_eq!(spec.param_count(), 160);
}

#[test]
fn receptive_field_of_stacked_convs() {
    assert_eq!(stacked_convs(1).receptive_field(), 3);
    assert_eq!(stacked_convs(2).receptive_field(), 5);
}

#[test]
fn decimation_sees_further_than_ssa() {
    let ssa2 = desk(VariantId::MsresnetSsa2).receptive_field();
    let dec = desk(VariantId::MsresnetDec).receptive_field();
    let noms = desk(VariantId::ResnetNoms).receptive_field();
    assert!(dec > ssa2, "dec {dec} ssa2 {ssa2}");
    assert!(ssa2 > noms, "ssa2 {ssa2} noms {noms}");
}

#[test]
fn every_variant_is_valid_and_full_resolution() {
    for id in VariantId::ALL {
        let spec = desk(id);
        spec.validate().unwrap();
        let shapes = spec.infer_shapes(Shape::new(2, 1, 64, 64)).unwrap();
        assert_eq!(shapes[spec.output], Shape::new(2, 1, 64, 64), "{id}");
    }
}

#[test]
fn resnet34_profile_builds() {
    let cfg = ArchConfig::resnet34();
    let spec = build_variant(VariantId::MsresnetSsa2, &cfg).unwrap();
    let dec = build_variant(VariantId::MsresnetDec, &cfg).unwrap();
    assert_eq!(spec.param_count(), dec.param_count());
    assert_eq!(spec.strided_convs(), 3);
    assert_eq!(
        spec.infer_shapes(Shape::new(1, 3, 32, 32)).unwrap()[spec.output],
        Shape::new(1, 1, 32, 32)
    );
}

fn seeded_image(shape: Shape, seed: u64) -> Tensor {
    let mut r = rng::seeded(seed);
    Tensor::from_vec(
        shape,
        (0..shape.numel())
            .map(|_| rng::uniform(&mut r, 0.0, 1.0))
            .collect(),
    )
}

#[test]
fn forward_outputs_probabilities() {
    for id in VariantId::ALL {
        let spec = desk(id);
        let params = init_parameters(&spec, 3);
        let image = seeded_image(Shape::new(1, 1, 64, 64), 4);
        let (tape, trace) = forward(&spec, &params, &image, Mode::Train).unwrap();
        let prob = tape.value(trace.prob);
        assert_eq!(prob.shape(), Shape::new(1, 1, 64, 64));
        assert!(prob.data().iter().all(|&p| p > 0.0 && p < 1.0), "{id}");
    }
}

#[test]
fn dec_on_constant_input_is_finite() {
    let spec = desk(VariantId::MsresnetDec);
    let params = init_parameters(&spec, 5);
    let image = Tensor::full(Shape::new(1, 1, 32, 32), 0.5);
    for mode in [Mode::Train, Mode::Eval] {
        let (tape, trace) = forward(&spec, &params, &image, mode).unwrap();
        assert!(tape.value(trace.prob).is_finite());
    }
}

#[test]
fn ssa2_stage_blocks_run_at_half_resolution() {
    let spec = desk(VariantId::MsresnetSsa2);
    let params = init_parameters(&spec, 6);
    let image = seeded_image(Shape::new(1, 1, 32, 32), 7);
    let (tape, trace) = forward(&spec, &params, &image, Mode::Eval).unwrap();
    for s in 1..=2 {
        let up = spec.find(&format!("stage{s}.up")).unwrap();
        let before = spec.nodes[up].inputs[0];
        assert_eq!(
            (
                tape.shape(trace.vars[before]).h,
                tape.shape(trace.vars[before]).w
            ),
            (16, 16)
        );
        for (i, node) in spec.nodes.iter().enumerate() {
            if node.name.starts_with(&format!("stage{s}.block")) {
                assert_eq!(tape.shape(trace.vars[i]).h, 16, "{}", node.name);
            }
        }
        assert_eq!(tape.shape(trace.vars[up]).h, 32);
    }
}

#[test]
fn indivisible_input_names_divisor() {
    let spec = desk(VariantId::MsresnetDec);
    let params = init_parameters(&spec, 1);
    let err = forward(
        &spec,
        &params,
        &Tensor::zeros(Shape::new(1, 1, 30, 32)),
        Mode::Eval,
    )
    .err()
    .unwrap();
    assert_eq!(
        err,
        ArchError::IndivisibleInput {
            height: 30,
            width: 32,
            divisor: 4
        }
    );
    assert!(err.to_string().contains("divisible by 4"));
}

#[test]
fn forward_is_deterministic() {
    let spec = desk(VariantId::MsresnetSsa2);
    let params = init_parameters(&spec, 9);
    let image = seeded_image(Shape::new(2, 1, 32, 32), 10);
    let run = || {
        let (tape, trace) = forward(&spec, &params, &image, Mode::Train).unwrap();
        tape.value(trace.prob).clone()
    };
    assert_eq!(run(), run());
}

#[test]
fn init_is_seeded_and_fan_in_bounded() {
    let spec = desk(VariantId::MsresnetSsa2);
    let a = init_parameters(&spec, 1);
    assert_eq!(a, init_parameters(&spec, 1));
    assert_ne!(a, init_parameters(&spec, 2));
    let w = a.value("stage2.block0.a.conv.weight").unwrap();
    let bound = (6.0f64 / (64.0 * 9.0)).sqrt();
    assert!(w.data().iter().all(|v| v.abs() <= bound));
    assert_eq!(a.trainable_count(), spec.param_count());
}

#[test]
fn small_network_gradients_match_finite_differences() {
    let cfg = ArchConfig {
        base_channels: 4,
        blocks_per_stage: vec![1, 1],
        ..ArchConfig::desk()
    };
    let gc = GradCheckConfig {
        samples_per_param: 8,
        ..GradCheckConfig::default()
    };
    for id in VariantId::ALL {
        let spec = build_variant(id, &cfg).unwrap();
        let report = gradcheck_network(&spec, Shape::new(2, 1, 8, 8), &gc).unwrap();
        assert!(
            report.passed(1e-4),
            "{id}: {:e}\n{report}",
            report.max_rel_error()
        );
    }
}
