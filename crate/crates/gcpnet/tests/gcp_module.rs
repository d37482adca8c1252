mod common;

use common::{max_abs_diff, random_graph};
use diffcore::{gradcheck, DetRng, ParamStore, Tensor};
use gcpnet::topo::{frames_tensor, GraphTopo};
use gcpnet::{Gcp, GcpConfig, GcpMode, ResGcp, ScalarVector};
use geomkit::{localize, mat_vec, random_rotation, GeoGraph};

fn graph_frames(graph: &GeoGraph) -> (Tensor, GraphTopo) {
    let (x0, _) = geomkit::centralize(&graph.positions);
    let frames = frames_tensor(&localize(&x0, &graph.edges)).unwrap();
    let topo = GraphTopo::from_edges(graph.n_nodes(), &graph.edges);
    (frames, topo)
}

fn node_input(graph: &GeoGraph) -> ScalarVector {
    let (h, chi) = gcpnet::topo::node_features(graph).unwrap();
    ScalarVector::new(h, chi).unwrap()
}

#[test]
fn concat_width_arithmetic() {
    let cfg = GcpConfig::new(GcpMode::Edge, 16, 16, 8, 8, 4);
    assert_eq!(cfg.down_width(), 4);
    assert_eq!(cfg.concat_width(), 16 + 9 + 4);

    // frame ablation drops exactly the nine scalarized entries
    let cfg = cfg.ablate(true, false, false);
    assert_eq!(cfg.concat_width(), 16 + 4);

    // non-divisor widths floor and clamp
    let cfg = GcpConfig::new(GcpMode::Edge, 4, 2, 4, 2, 3);
    assert_eq!(cfg.down_width(), 1);
}

#[test]
fn zero_vectors_annihilate_the_vector_path() {
    let mut rng = DetRng::seed_from(3);
    let mut store = ParamStore::new();
    let graph = random_graph(&mut rng, 4, 3, 2, 2, 1);
    let (frames, topo) = graph_frames(&graph);
    let gcp = Gcp::new(
        &mut store,
        "g",
        GcpConfig::new(GcpMode::Node, 3, 2, 5, 3, 2),
        &mut rng,
    )
    .unwrap();

    let s = Tensor::from_vec(&[4, 3], (0..12).map(|i| i as f64 * 0.1).collect()).unwrap();
    let v = Tensor::zeros(&[4, 2, 3]);
    let out = gcp
        .forward(&ScalarVector::new(Some(s), Some(v)).unwrap(), &frames, &topo)
        .unwrap();
    let v_out = out.v.unwrap().value();
    assert!(v_out.iter().all(|&x| x == 0.0), "gate cannot revive zero vectors");
}

#[test]
fn rotation_leaves_scalars_and_rotates_vectors() {
    let mut rng = DetRng::seed_from(5);
    let mut store = ParamStore::new();
    let gcp = Gcp::new(
        &mut store,
        "g",
        GcpConfig::new(GcpMode::Node, 3, 2, 6, 4, 2),
        &mut rng,
    )
    .unwrap();

    for trial in 0..20 {
        let graph = random_graph(&mut rng, 5, 3, 2, 2, 1);
        let q = random_rotation(&mut rng);
        let rotated = graph.linear_mapped(&q);

        let (frames, topo) = graph_frames(&graph);
        let (frames_q, _) = graph_frames(&rotated);

        let out = gcp.forward(&node_input(&graph), &frames, &topo).unwrap();
        let out_q = gcp.forward(&node_input(&rotated), &frames_q, &topo).unwrap();

        let ds = max_abs_diff(&out.s.as_ref().unwrap().value(), &out_q.s.as_ref().unwrap().value());
        assert!(ds < 1e-9, "trial {trial}: scalar violation {ds}");

        let v = out.v.unwrap().value();
        let vq = out_q.v.unwrap().value();
        let mut worst = 0.0_f64;
        for (chunk, chunk_q) in v.chunks_exact(3).zip(vq.chunks_exact(3)) {
            let expect = mat_vec(&q, [chunk[0], chunk[1], chunk[2]]);
            worst = worst.max(max_abs_diff(&expect, chunk_q));
        }
        assert!(worst < 1e-9, "trial {trial}: vector violation {worst}");
    }
}

#[test]
fn reflection_sensitivity_requires_frames() {
    let mut rng = DetRng::seed_from(7);
    let mut store = ParamStore::new();
    let with_frames = Gcp::new(
        &mut store,
        "wf",
        GcpConfig::new(GcpMode::Node, 3, 2, 6, 4, 2),
        &mut rng,
    )
    .unwrap();
    let mut store2 = ParamStore::new();
    let mut rng2 = DetRng::seed_from(7);
    let ablated = Gcp::new(
        &mut store2,
        "nf",
        GcpConfig::new(GcpMode::Node, 3, 2, 6, 4, 2).ablate(true, false, false),
        &mut rng2,
    )
    .unwrap();

    let graph = random_graph(&mut rng, 4, 3, 2, 2, 1);
    let mirrored = graph.reflected();
    let (frames, topo) = graph_frames(&graph);
    let (frames_m, _) = graph_frames(&mirrored);

    let s = with_frames
        .forward(&node_input(&graph), &frames, &topo)
        .unwrap();
    let s_m = with_frames
        .forward(&node_input(&mirrored), &frames_m, &topo)
        .unwrap();
    let gap = max_abs_diff(
        &s.s.as_ref().unwrap().value(),
        &s_m.s.as_ref().unwrap().value(),
    );
    assert!(gap > 1e-3, "frames should see the reflection, gap {gap}");

    let a = ablated.forward(&node_input(&graph), &frames, &topo).unwrap();
    let a_m = ablated
        .forward(&node_input(&mirrored), &frames_m, &topo)
        .unwrap();
    let gap = max_abs_diff(
        &a.s.as_ref().unwrap().value(),
        &a_m.s.as_ref().unwrap().value(),
    );
    assert!(gap < 1e-9, "frame-ablated scalars must be reflection-blind, gap {gap}");
}

#[test]
fn res_gcp_zero_weights_is_identity() {
    let mut rng = DetRng::seed_from(9);
    let mut store = ParamStore::new();
    let res = ResGcp::new(
        &mut store,
        "r",
        GcpConfig::new(GcpMode::Node, 3, 2, 3, 2, 2),
        true,
        &mut rng,
    )
    .unwrap();
    for (_, t) in store.iter() {
        t.set_value(&vec![0.0; t.numel()]).unwrap();
    }

    let mut rng2 = DetRng::seed_from(10);
    let graph = random_graph(&mut rng2, 4, 3, 2, 2, 1);
    let (frames, topo) = graph_frames(&graph);
    let input = node_input(&graph);
    let out = res.forward(&input, &frames, &topo).unwrap();
    // smooth_gate(0) = 0 and zero weights kill both branch outputs, so the
    // residual returns the input on both channels
    assert_eq!(out.s.unwrap().value(), input.s.unwrap().value());
    assert_eq!(out.v.unwrap().value(), input.v.unwrap().value());

    // stacking two zero-weight residual blocks composes to the identity
    let res2 = {
        let mut store2 = ParamStore::new();
        let r = ResGcp::new(
            &mut store2,
            "r2",
            GcpConfig::new(GcpMode::Node, 3, 2, 3, 2, 2),
            true,
            &mut rng,
        )
        .unwrap();
        for (_, t) in store2.iter() {
            t.set_value(&vec![0.0; t.numel()]).unwrap();
        }
        r
    };
    let input2 = node_input(&graph);
    let twice = res2
        .forward(&res.forward(&input2, &frames, &topo).unwrap(), &frames, &topo)
        .unwrap();
    assert_eq!(twice.s.unwrap().value(), input2.s.unwrap().value());
}

#[test]
fn residual_mismatch_is_a_config_error() {
    let mut rng = DetRng::seed_from(11);
    let mut store = ParamStore::new();
    let bad = ResGcp::new(
        &mut store,
        "bad",
        GcpConfig::new(GcpMode::Node, 3, 2, 4, 2, 2),
        true,
        &mut rng,
    );
    assert!(bad.is_err());
}

#[test]
fn gate_scales_channels_independently() {
    // scaling one column of w_uz scales only that output channel of V',
    // because the gate input s_v does not depend on w_uz
    let mut rng = DetRng::seed_from(13);
    let mut store = ParamStore::new();
    let gcp = Gcp::new(
        &mut store,
        "g",
        GcpConfig::new(GcpMode::Node, 3, 3, 6, 4, 1),
        &mut rng,
    )
    .unwrap();

    let graph = random_graph(&mut rng, 4, 3, 3, 2, 1);
    let (frames, topo) = graph_frames(&graph);
    let input = node_input(&graph);
    let base = gcp.forward(&input, &frames, &topo).unwrap();

    let w_uz = store.get("g.w_uz").unwrap();
    let mut w = w_uz.value();
    let cols = w_uz.shape()[1];
    let alpha = 2.5;
    let target_channel = 1;
    for row in w.chunks_exact_mut(cols) {
        row[target_channel] *= alpha;
    }
    w_uz.set_value(&w).unwrap();

    let scaled = gcp.forward(&input, &frames, &topo).unwrap();
    assert_eq!(
        base.s.as_ref().unwrap().value(),
        scaled.s.as_ref().unwrap().value(),
        "scalar path must not move"
    );
    let v0 = base.v.unwrap().value();
    let v1 = scaled.v.unwrap().value();
    let r = 4;
    for (row, (c0, c1)) in v0.chunks_exact(3 * r).zip(v1.chunks_exact(3 * r)).enumerate() {
        for ch in 0..r {
            for c in 0..3 {
                let before = c0[ch * 3 + c];
                let after = c1[ch * 3 + c];
                let expect = if ch == target_channel { before * alpha } else { before };
                assert!(
                    (after - expect).abs() < 1e-12,
                    "row {row} channel {ch}: {after} vs {expect}"
                );
            }
        }
    }
}

#[test]
fn gcp_gradients_match_finite_differences() {
    for mode in [GcpMode::Edge, GcpMode::Node] {
        let mut rng = DetRng::seed_from(17);
        let mut store = ParamStore::new();
        let gcp = Gcp::new(&mut store, "g", GcpConfig::new(mode, 3, 2, 4, 2, 2), &mut rng).unwrap();

        let graph = random_graph(&mut rng, 4, 3, 2, 3, 1);
        let (frames, topo) = graph_frames(&graph);
        let rows = match mode {
            GcpMode::Edge => topo.n_edges(),
            GcpMode::Node => topo.n_nodes,
        };
        let s = Tensor::from_vec(&[rows, 3], (0..rows * 3).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let v = Tensor::from_vec(
            &[rows, 2, 3],
            (0..rows * 6).map(|i| (i as f64 * 0.71).cos()).collect(),
        )
        .unwrap();
        let input = ScalarVector::new(Some(s), Some(v)).unwrap();
        let target_s: Vec<f64> = (0..rows * 4).map(|i| (i as f64 * 0.13).sin()).collect();
        let target_v: Vec<f64> = (0..rows * 2).map(|i| (i as f64 * 0.29).cos()).collect();

        let forward = || {
            let out = gcp.forward(&input, &frames, &topo).unwrap();
            let ls = out.s.as_ref().unwrap().mse_loss(&target_s).unwrap();
            let lv = out
                .v
                .as_ref()
                .unwrap()
                .row_norms()
                .unwrap()
                .mse_loss(&target_v)
                .unwrap();
            ls.add(&lv).unwrap()
        };
        store.zero_grads();
        forward().backward().unwrap();
        let params = store.tensors();
        let mut f = || forward().item();
        let err = gradcheck::max_rel_error(&mut f, &params, 1e-5);
        assert!(err < 1e-4, "{mode:?}: rel err {err}");
    }
}
