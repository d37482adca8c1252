mod common;

use common::{max_abs_diff, random_graph};
use diffcore::{gradcheck, DetRng, ParamStore};
use gcpnet::{loss, Aggregation, GcpNet, ModelConfig, Target, TaskHead, TaskOutput};
use geomkit::{mat_vec, random_rotation, random_translation};

fn small_config(head: TaskHead, update_positions: bool) -> ModelConfig {
    ModelConfig {
        layers: 2,
        node_scalar_in: 3,
        node_vector_in: 2,
        edge_scalar_in: 2,
        edge_vector_in: 1,
        hidden_scalar: 8,
        hidden_vector: 4,
        lambda: 3,
        omega: 2,
        ffn_depth: 1,
        dropout: 0.0,
        aggregation: Aggregation::Mean,
        head,
        update_positions,
        ablate_frames: false,
        ablate_scalars: false,
        ablate_vectors: false,
        ablate_resgcp: false,
    }
}

#[test]
fn zero_weights_reduce_scalar_head_to_final_bias() {
    let mut rng = DetRng::seed_from(1);
    let mut store = ParamStore::new();
    let mut cfg = small_config(TaskHead::GraphScalar, false);
    cfg.layers = 1;
    let net = GcpNet::new(cfg, &mut store, &mut rng).unwrap();
    for (_, t) in store.iter() {
        t.set_value(&vec![0.0; t.numel()]).unwrap();
    }
    let b2 = store.get("head.b2").unwrap();
    b2.set_value(&[0.75]).unwrap();

    let graph = random_graph(&mut rng, 5, 3, 2, 2, 1);
    let out = net.forward(&graph, false, &mut rng).unwrap();
    match out {
        TaskOutput::GraphScalar(t) => assert_eq!(t.value(), vec![0.75]),
        _ => panic!("wrong head"),
    }
}

#[test]
fn graph_scalar_is_se3_invariant_and_positions_equivariant() {
    let mut rng = DetRng::seed_from(3);

    let mut store_s = ParamStore::new();
    let scalar_net =
        GcpNet::new(small_config(TaskHead::GraphScalar, false), &mut store_s, &mut rng).unwrap();
    let mut store_p = ParamStore::new();
    let pos_net =
        GcpNet::new(small_config(TaskHead::NodePositions, true), &mut store_p, &mut rng).unwrap();

    for trial in 0..20 {
        let graph = random_graph(&mut rng, 6, 3, 2, 2, 1);
        let q = random_rotation(&mut rng);
        let g = random_translation(&mut rng, 5.0);
        let moved = graph.linear_mapped(&q).translated(g);

        let (feat, out) = scalar_net.forward_full(&graph, false, &mut rng).unwrap();
        let (feat_m, out_m) = scalar_net.forward_full(&moved, false, &mut rng).unwrap();
        let ds = max_abs_diff(&out.values(), &out_m.values());
        assert!(ds < 1e-8, "trial {trial}: graph scalar moved by {ds}");
        let ds = max_abs_diff(
            &feat.s.as_ref().unwrap().value(),
            &feat_m.s.as_ref().unwrap().value(),
        );
        assert!(ds < 1e-8, "trial {trial}: node scalars moved by {ds}");
        let mut worst = 0.0_f64;
        for (a, b) in feat
            .v
            .unwrap()
            .value()
            .chunks_exact(3)
            .zip(feat_m.v.unwrap().value().chunks_exact(3))
        {
            worst = worst.max(max_abs_diff(&mat_vec(&q, [a[0], a[1], a[2]]), b));
        }
        assert!(worst < 1e-8, "trial {trial}: node vectors violated by {worst}");

        let pred = pos_net.forward(&graph, false, &mut rng).unwrap();
        let pred_m = pos_net.forward(&moved, false, &mut rng).unwrap();
        let mut worst = 0.0_f64;
        for (a, b) in pred
            .values()
            .chunks_exact(3)
            .zip(pred_m.values().chunks_exact(3))
        {
            let mut expect = mat_vec(&q, [a[0], a[1], a[2]]);
            expect = [expect[0] + g[0], expect[1] + g[1], expect[2] + g[2]];
            worst = worst.max(max_abs_diff(&expect, b));
        }
        assert!(worst < 1e-8, "trial {trial}: positions violated by {worst}");
    }
}

#[test]
fn geometric_self_consistency_on_chiral_input() {
    // identical scalars for rigidly moved copies, different scalars for the
    // mirror image of a chiral arrangement
    let mut rng = DetRng::seed_from(5);
    let mut store = ParamStore::new();
    let net = GcpNet::new(small_config(TaskHead::GraphScalar, false), &mut store, &mut rng).unwrap();

    let graph = random_graph(&mut rng, 4, 3, 2, 2, 1);
    let q = random_rotation(&mut rng);
    let g = random_translation(&mut rng, 3.0);
    let moved = graph.linear_mapped(&q).translated(g);
    let mirrored = graph.reflected();

    let base = net.forward(&graph, false, &mut rng).unwrap().values();
    let same = net.forward(&moved, false, &mut rng).unwrap().values();
    let flipped = net.forward(&mirrored, false, &mut rng).unwrap().values();

    assert!(max_abs_diff(&base, &same) < 1e-8);
    assert!(
        max_abs_diff(&base, &flipped) > 1e-3,
        "a generic chiral input must not survive reflection"
    );
}

#[test]
fn isomorphic_graphs_share_graph_outputs() {
    let mut rng = DetRng::seed_from(7);
    let mut store = ParamStore::new();
    let net = GcpNet::new(small_config(TaskHead::GraphScalar, false), &mut store, &mut rng).unwrap();

    let graph = random_graph(&mut rng, 6, 3, 2, 2, 1);
    let perm = [4usize, 2, 0, 5, 1, 3];
    let relabeled = graph.permuted(&perm).unwrap();

    let a = net.forward(&graph, false, &mut rng).unwrap().values();
    let b = net.forward(&relabeled, false, &mut rng).unwrap().values();
    assert!(max_abs_diff(&a, &b) < 1e-10);
}

#[test]
fn loss_dispatch_and_mismatch() {
    let mut rng = DetRng::seed_from(9);
    let mut store = ParamStore::new();
    let net = GcpNet::new(
        small_config(TaskHead::GraphClass { classes: 2 }, false),
        &mut store,
        &mut rng,
    )
    .unwrap();
    let graph = random_graph(&mut rng, 4, 3, 2, 2, 1);
    let out = net.forward(&graph, false, &mut rng).unwrap();
    assert!(loss(&out, &Target::Class(1)).is_ok());
    assert!(loss(&out, &Target::Scalar(0.0)).is_err());
}

#[test]
fn width_mismatch_is_a_configuration_error() {
    let mut rng = DetRng::seed_from(11);
    let mut store = ParamStore::new();
    let net = GcpNet::new(small_config(TaskHead::GraphScalar, false), &mut store, &mut rng).unwrap();
    let graph = random_graph(&mut rng, 4, 5, 2, 2, 1); // wrong node scalar width
    assert!(net.forward(&graph, false, &mut rng).is_err());
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let mut rng = DetRng::seed_from(13);
    let mut store = ParamStore::new();
    let mut cfg = small_config(TaskHead::NodePositions, true);
    cfg.layers = 1;
    cfg.omega = 1;
    cfg.hidden_scalar = 4;
    cfg.hidden_vector = 2;
    let net = GcpNet::new(cfg, &mut store, &mut rng).unwrap();

    let graph = random_graph(&mut rng, 4, 3, 2, 2, 1);
    let target: Vec<[f64; 3]> = (0..4).map(|_| [rng.normal(), rng.normal(), rng.normal()]).collect();

    let mut fwd_rng = DetRng::seed_from(0);
    let forward = || {
        let out = net.forward(&graph, false, &mut DetRng::seed_from(0)).unwrap();
        loss(&out, &Target::Positions(target.clone())).unwrap()
    };
    let _ = &mut fwd_rng;
    store.zero_grads();
    forward().backward().unwrap();
    let params = store.tensors();
    let mut f = || forward().item();
    let err = gradcheck::max_rel_error(&mut f, &params, 1e-5);
    assert!(err < 1e-4, "rel err {err}");
}

#[test]
fn two_layer_model_overfits_ten_tiny_graphs() {
    let mut rng = DetRng::seed_from(17);
    let mut store = ParamStore::new();
    let net = GcpNet::new(small_config(TaskHead::GraphScalar, false), &mut store, &mut rng).unwrap();

    let graphs: Vec<_> = (0..10).map(|_| random_graph(&mut rng, 4, 3, 2, 2, 1)).collect();
    let targets: Vec<f64> = (0..10).map(|_| rng.range(-1.0, 1.0)).collect();

    let mut final_mse = f64::INFINITY;
    for step in 0..2000 {
        let mut total: Option<diffcore::Tensor> = None;
        for (graph, &y) in graphs.iter().zip(&targets) {
            let out = net.forward(graph, true, &mut rng).unwrap();
            let l = loss(&out, &Target::Scalar(y)).unwrap();
            total = Some(match total {
                None => l,
                Some(t) => t.add(&l).unwrap(),
            });
        }
        let total = total.unwrap().scale(1.0 / graphs.len() as f64).unwrap();
        final_mse = total.item();
        if final_mse < 1e-3 {
            println!("overfit reached {final_mse:.2e} at step {step}");
            break;
        }
        total.backward().unwrap();
        store.adam_step(5e-3, (0.9, 0.999), 1e-8).unwrap();
    }
    assert!(
        final_mse < 1e-3,
        "2-layer model failed to overfit: mse {final_mse}"
    );
}
