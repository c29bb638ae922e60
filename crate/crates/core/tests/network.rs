use ndarray::{Array3, Array4};
use qmotion::autodiff::{max_rel_err, Tape};
use qmotion::features::Normalizer;
use qmotion::network::{
    backbone, coordinate_embeddings, discriminate_continuity, discriminate_fidelity, embed,
    final_norm, generator_forward, low_rank_attention, prediction_head, reconstruction_head,
    spatial_attention, temporal_attention, unflatten_frames, Critic, GeneratorInput, LinearCritic,
    ModelDims, ModelParams, ReconHead,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dims(
    joints: usize,
    window: usize,
    d_model: usize,
    rank: usize,
    heads: usize,
    layers: usize,
) -> ModelDims {
    ModelDims {
        d_model,
        rank,
        heads,
        layers,
        joints,
        window,
        future: 3,
        channels: 7,
        critic_width: 6,
    }
}

fn random(shape: (usize, usize, usize), seed: u64) -> Array3<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Array3::from_shape_fn(shape, |_| r.random_range(-1.0..1.0))
}

fn random4(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Array4::from_shape_fn(shape, |_| r.random_range(-1.0..1.0))
}

#[test]
fn all_masked_coordinates_become_the_mask_token() {
    let d = dims(3, 4, 8, 2, 2, 1);
    let mut p = ModelParams::init(d, 1).unwrap();
    let token = random((1, 1, 8), 9);
    p.set_array(p.layout.index.mask_token, &token);
    let feats = random((4, 3, 7), 2);
    let mask = ndarray::Array3::from_elem((4, 3, 7), true);
    let e = coordinate_embeddings(&p, &feats, Some(&mask));
    for ((_, _, _, k), &v) in e.indexed_iter() {
        assert_eq!(v, token[[0, 0, k]]);
    }
}

#[test]
fn zero_embedding_weights_give_zero_tokens() {
    let d = dims(3, 4, 8, 2, 2, 1);
    let mut p = ModelParams::init(d, 1).unwrap();
    p.fill(p.layout.index.embed_w, 0.0);
    p.fill(p.layout.index.embed_b, 0.0);
    let feats = random4((2, 4, 3, 7), 3);
    let tape = Tape::new();
    let pv = p.leaves(&tape);
    let h = embed(&tape, &pv, &p, &feats, None).unwrap();
    assert!(tape.value(h).iter().all(|&v| v == 0.0));
}

#[test]
fn identity_embedding_reproduces_inputs() {
    let d = dims(3, 4, 7, 2, 1, 1);
    let mut p = ModelParams::init(d, 1).unwrap();
    let eye = Array3::from_shape_fn((1, 7, 7), |(_, i, j)| if i == j { 1.0 } else { 0.0 });
    p.set_array(p.layout.index.embed_w, &eye);
    p.fill(p.layout.index.embed_b, 0.0);
    let feats = random4((2, 4, 3, 7), 4);
    let tape = Tape::new();
    let pv = p.leaves(&tape);
    let h = embed(&tape, &pv, &p, &feats, None).unwrap();
    let flat = feats.to_shape((2, 12, 7)).unwrap().to_owned();
    assert_eq!(*tape.value(h), flat);
}

#[test]
fn embedding_rejects_wrong_shapes() {
    let p = ModelParams::init(dims(3, 4, 8, 2, 2, 1), 1).unwrap();
    let tape = Tape::new();
    let pv = p.leaves(&tape);
    assert!(embed(&tape, &pv, &p, &random4((1, 5, 3, 7), 1), None).is_err());
    let mask = ndarray::Array4::from_elem((1, 4, 3, 6), false);
    assert!(embed(&tape, &pv, &p, &random4((1, 4, 3, 7), 1), Some(&mask)).is_err());
}

#[test]
fn zero_spatial_gate_silences_heads() {
    let d = dims(5, 3, 8, 2, 2, 1);
    let mut p = ModelParams::init(d, 5).unwrap();
    let idx = p.layout.index.layers[0].spatial.clone();
    p.fill(idx.gate, 0.0);
    let tape = Tape::new();
    let pv = p.leaves(&tape);
    let h = tape.leaf(random((3, 5, 8), 6));
    let trace = low_rank_attention(&tape, &pv, &idx, &d, h);
    for head in &trace.heads {
        assert!(tape.value(*head).iter().all(|&v| v == 0.0));
    }
}

#[test]
fn constant_values_pass_through_spatial_attention() {
    let d = dims(5, 3, 8, 2, 2, 1);
    let p = ModelParams::init(d, 7).unwrap();
    let idx = &p.layout.index.layers[0].spatial;
    let row = random((1, 1, 8), 8);
    let h = Array3::from_shape_fn((2, 5, 8), |(_, _, k)| row[[0, 0, k]]);
    let tape = Tape::new();
    let pv = p.leaves(&tape);
    let trace = low_rank_attention(&tape, &pv, idx, &d, tape.leaf(h.clone()));
    let v = h.dot_last(&p.array(idx.wv));
    for (head, out) in trace.heads.iter().enumerate() {
        let out = tape.value(*out);
        let dh = d.head_dim();
        for g in 0..2 {
            for j in 0..5 {
                for k in 0..dh {
                    let expect = v[[g, j, head * dh + k]];
                    assert!((out[[g, j, k]] - expect).abs() < 1e-12);
                }
            }
        }
    }
}

trait DotLast {
    fn dot_last(&self, w: &Array3<f64>) -> Array3<f64>;
}

impl DotLast for Array3<f64> {
    /// `[G, N, D] · [1, D, E]` by explicit summation.
    fn dot_last(&self, w: &Array3<f64>) -> Array3<f64> {
        let (g, n, d) = self.dim();
        let e = w.dim().2;
        Array3::from_shape_fn((g, n, e), |(a, b, c)| {
            (0..d).map(|k| self[[a, b, k]] * w[[0, k, c]]).sum()
        })
    }
}

#[test]
fn spatial_attention_shape_and_normalization() {
    let d = dims(5, 1, 8, 2, 2, 1);
    let p = ModelParams::init(d, 11).unwrap();
    let idx = &p.layout.index.layers[0].spatial;
    let tape = Tape::new();
    let pv = p.leaves(&tape);
    let trace = low_rank_attention(&tape, &pv, idx, &d, tape.leaf(random((1, 5, 8), 12)));
    assert_eq!(trace.output.shape(), [1, 5, 8]);
    assert!(tape.value(trace.output).iter().all(|v| v.is_finite()));
    for (q, k) in trace.query_weights.iter().zip(&trace.key_weights) {
        for w in [q, k] {
            for row in tape
                .value(*w)
                .outer_iter()
                .flat_map(|m| m.outer_iter().map(|r| r.sum()).collect::<Vec<_>>())
            {
                assert!((row - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(k.shape(), [1, 2, 5]);
    }
}

#[test]
fn temporal_attention_shape_and_normalization() {
    let d = dims(1, 6, 8, 2, 2, 1);
    let p = ModelParams::init(d, 13).unwrap();
    let idx = &p.layout.index.layers[0].temporal;
    let tape = Tape::new();
    let pv = p.leaves(&tape);
    let (out, trace) = temporal_attention(&tape, &pv, idx, &d, tape.leaf(random((1, 6, 8), 14)));
    assert_eq!(out.shape(), [1, 6, 8]);
    assert!(tape.value(out).iter().all(|v| v.is_finite()));
    for k in &trace.key_weights {
        for r in tape
            .value(*k)
            .outer_iter()
            .flat_map(|m| m.outer_iter().map(|r| r.sum()).collect::<Vec<_>>())
        {
            assert!((r - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn constant_in_time_values_stay_constant() {
    let d = dims(2, 6, 8, 2, 2, 1);
    let p = ModelParams::init(d, 15).unwrap();
    let idx = &p.layout.index.layers[0].temporal;
    let per_joint = random((1, 2, 8), 16);
    let h = Array3::from_shape_fn((1, 12, 8), |(_, r, k)| per_joint[[0, r % 2, k]]);
    let tape = Tape::new();
    let pv = p.leaves(&tape);
    let (_, trace) = temporal_attention(&tape, &pv, idx, &d, tape.leaf(h));
    for head in &trace.heads {
        let v = tape.value(*head);
        for g in 0..2 {
            for t in 1..6 {
                for k in 0..4 {
                    assert!((v[[g, t, k]] - v[[g, 0, k]]).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn single_frame_temporal_attention_is_the_value() {
    let d = dims(3, 1, 8, 2, 2, 1);
    let p = ModelParams::init(d, 17).unwrap();
    let idx = &p.layout.index.layers[0].temporal;
    let h = random((2, 3, 8), 18);
    let tape = Tape::new();
    let pv = p.leaves(&tape);
    let (_, trace) = temporal_attention(&tape, &pv, idx, &d, tape.leaf(h.clone()));
    let flat = h.to_shape((6, 1, 8)).unwrap().to_owned();
    let v = flat.dot_last(&p.array(idx.wv));
    for (head, o) in trace.ungated.iter().enumerate() {
        let o = tape.value(*o);
        for g in 0..6 {
            for k in 0..4 {
                assert!((o[[g, 0, k]] - v[[g, 0, head * 4 + k]]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn spatial_attention_is_joint_permutation_equivariant() {
    let d = dims(6, 2, 8, 3, 2, 1);
    let p = ModelParams::init(d, 19).unwrap();
    let idx = &p.layout.index.layers[0].spatial;
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for trial in 0..25 {
        let h = random((1, 12, 8), 100 + trial);
        let mut perm: Vec<usize> = (0..6).collect();
        for i in (1..6).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let permuted =
            Array3::from_shape_fn((1, 12, 8), |(_, r, k)| h[[0, (r / 6) * 6 + perm[r % 6], k]]);
        let run = |x: Array3<f64>| {
            let tape = Tape::new();
            let pv = p.leaves(&tape);
            let (out, _) = spatial_attention(&tape, &pv, idx, &d, tape.leaf(x));
            let v = tape.value(out).clone();
            v
        };
        let (a, b) = (run(h), run(permuted));
        for r in 0..12 {
            for k in 0..8 {
                let src = (r / 6) * 6 + perm[r % 6];
                assert!((b[[0, r, k]] - a[[0, src, k]]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn zero_layers_pass_embeddings_through() {
    let d = dims(3, 4, 8, 2, 2, 0);
    let p = ModelParams::init(d, 21).unwrap();
    let tape = Tape::new();
    let pv = p.leaves(&tape);
    let h = embed(&tape, &pv, &p, &random4((2, 4, 3, 7), 22), None).unwrap();
    let out = backbone(&tape, &pv, &p, true, h);
    assert_eq!(*tape.value(out), *tape.value(h));
}

#[test]
fn backbone_is_deterministic_and_sensitive() {
    let d = dims(3, 4, 8, 2, 2, 2);
    let p = ModelParams::init(d, 23).unwrap();
    let feats = random4((1, 4, 3, 7), 24);
    let run = |f: &Array4<f64>, low_rank: bool| {
        let tape = Tape::new();
        let pv = p.leaves(&tape);
        let h = embed(&tape, &pv, &p, f, None).unwrap();
        let out = backbone(&tape, &pv, &p, low_rank, h);
        let v = tape.value(out).clone();
        v
    };
    for low_rank in [true, false] {
        let a = run(&feats, low_rank);
        let b = run(&feats, low_rank);
        assert!(a
            .iter()
            .zip(b.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        let mut bumped = feats.clone();
        bumped[[0, 1, 2, 3]] += 1e-4;
        let c = run(&bumped, low_rank);
        let change = a
            .iter()
            .zip(c.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(change > 0.0);
    }
}

#[test]
fn masked_values_never_reach_outputs() {
    let mut d = dims(3, 4, 8, 2, 2, 1);
    d.future = 2;
    let p = ModelParams::init(d, 25).unwrap();
    let norm = Normalizer::identity(3, 7);
    let clean = random4((2, 4, 3, 7), 26);
    let mut mask = Array4::from_elem((2, 4, 3, 7), false);
    mask[[0, 1, 1, 2]] = true;
    mask[[1, 3, 0, 6]] = true;
    let anchor = random((2, 3, 3), 27);
    let run = |masked: &Array4<f64>| {
        let tape = Tape::new();
        let pv = p.leaves(&tape);
        let out = generator_forward(
            &tape,
            &pv,
            &p,
            true,
            &norm,
            &GeneratorInput {
                clean: &clean,
                anchor: &anchor,
                masked: Some((masked, &mask)),
                noised: None,
            },
        )
        .unwrap();
        let v = tape.value(out.mask_recon.unwrap()).clone();
        v
    };
    let mut a = clean.clone();
    let mut b = clean.clone();
    a[[0, 1, 1, 2]] = 0.0;
    b[[0, 1, 1, 2]] = 123.0;
    a[[1, 3, 0, 6]] = -5.0;
    b[[1, 3, 0, 6]] = f64::MAX;
    let (ra, rb) = (run(&a), run(&b));
    assert!(ra
        .iter()
        .zip(rb.iter())
        .all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn head_shapes_and_zero_heads() {
    let mut d = dims(5, 10, 8, 2, 2, 1);
    d.future = 25;
    let mut p = ModelParams::init(d, 29).unwrap();
    let idx = p.layout.index.clone();
    for e in [
        idx.pred_w,
        idx.pred_b,
        idx.mask_w,
        idx.mask_b,
        idx.denoise_w,
        idx.denoise_b,
    ] {
        p.fill(e, 0.0);
    }
    let norm = Normalizer::identity(5, 7);
    let anchor = Array3::zeros((1, 5, 3));
    let tape = Tape::new();
    let pv = p.leaves(&tape);
    let h = embed(&tape, &pv, &p, &random4((1, 10, 5, 7), 30), None).unwrap();
    let hf = final_norm(&tape, &pv, &p, backbone(&tape, &pv, &p, true, h));
    let pred = prediction_head(&tape, &pv, &p, hf, 0..1, &norm, &anchor);
    let rec = reconstruction_head(&tape, &pv, &p, hf, 0..1, ReconHead::Mask, &norm, &anchor);
    let den = reconstruction_head(&tape, &pv, &p, hf, 0..1, ReconHead::Denoise, &norm, &anchor);
    assert_eq!(
        unflatten_frames(&tape.value(pred), 25, 5)[0].dim(),
        (25, 5, 3)
    );
    assert_eq!(
        unflatten_frames(&tape.value(rec), 10, 5)[0].dim(),
        (10, 5, 3)
    );
    for v in [pred, rec, den] {
        assert!(tape.value(v).iter().all(|&x| x == 0.0));
    }
}

#[test]
fn prediction_head_gradient_matches_finite_differences() {
    let mut d = dims(3, 4, 8, 2, 2, 1);
    d.future = 2;
    let p = ModelParams::init(d, 31).unwrap();
    let norm = Normalizer::identity(3, 7);
    let feats = random4((1, 4, 3, 7), 32);
    let anchor = random((1, 3, 3), 33);
    let target = random((1, 6, 3), 34);
    let idx = p.layout.index.clone();
    let loss_of = |params: &ModelParams| {
        let tape = Tape::new();
        let pv = params.leaves(&tape);
        let h = embed(&tape, &pv, params, &feats, None).unwrap();
        let hf = final_norm(&tape, &pv, params, backbone(&tape, &pv, params, true, h));
        let pred = prediction_head(&tape, &pv, params, hf, 0..1, &norm, &anchor);
        let diff = tape.sub(pred, tape.leaf(target.clone()));
        let loss = tape.sum_all(tape.mul(diff, diff));
        (tape, pv, loss)
    };
    let (tape, pv, loss) = loss_of(&p);
    let analytic = pv.flat_grad(&tape, loss, &p.layout).unwrap();
    for entry in [idx.pred_w, idx.pred_b] {
        let range = p.layout.entries[entry].range();
        let mut numeric = Vec::new();
        for i in range.clone() {
            let mut plus = p.clone();
            plus.values[i] += 1e-5;
            let mut minus = p.clone();
            minus.values[i] -= 1e-5;
            let (tp, _, lp) = loss_of(&plus);
            let (tm, _, lm) = loss_of(&minus);
            numeric.push((tp.scalar(lp) - tm.scalar(lm)) / 2e-5);
        }
        assert!(max_rel_err(&analytic[range], &numeric, 1e-6) < 1e-4);
    }
}

#[test]
fn zero_critics_score_zero() {
    let d = dims(4, 3, 8, 2, 2, 1);
    let p = ModelParams::init(d, 35).unwrap();
    let mut zero = p.clone();
    zero.values[p.layout.group_range(qmotion::network::ParamGroup::Critic)].fill(0.0);
    let norm = Normalizer::identity(4, 7);
    let frames = random((5, 4, 3), 36);
    assert!(discriminate_fidelity(&zero, &norm, &frames)
        .iter()
        .all(|&s| s == 0.0));
    let c = discriminate_continuity(&zero, &norm, &frames);
    assert_eq!(c.len(), 4);
    assert!(c.iter().all(|&s| s == 0.0));
    assert_eq!(discriminate_fidelity(&p, &norm, &frames).len(), 5);
}

#[test]
fn linear_critic_is_closed_form() {
    let tape = Tape::new();
    let w = random((1, 6, 1), 37);
    let x = random((1, 3, 6), 38);
    let critic = LinearCritic {
        w: tape.leaf(w.clone()),
    };
    let s = tape
        .value(critic.score(&tape, tape.leaf(x.clone())))
        .clone();
    for r in 0..3 {
        let expect: f64 = (0..6).map(|k| w[[0, k, 0]] * x[[0, r, k]]).sum();
        assert_eq!(s[[0, r, 0]], expect);
    }
}

#[test]
fn critics_match_input_finite_differences() {
    let d = dims(3, 3, 8, 2, 2, 1);
    let p = ModelParams::init(d, 39).unwrap();
    let mut norm = Normalizer::identity(3, 7);
    norm.coord_std.fill(2.0);
    norm.coord_mean.fill(0.5);
    let frames = random((2, 3, 3), 40);
    for fidelity in [true, false] {
        let score = |f: &Array3<f64>| -> f64 {
            if fidelity {
                discriminate_fidelity(&p, &norm, f).iter().sum()
            } else {
                discriminate_continuity(&p, &norm, f).iter().sum()
            }
        };
        let tape = Tape::new();
        let pv = p.leaves(&tape);
        let seq = tape.leaf(frames.to_shape((1, 6, 3)).unwrap().to_owned());
        let inputs = qmotion::network::critic_inputs(&tape, seq, 1, 2, &norm);
        let idx = if fidelity {
            &p.layout.index.fidelity
        } else {
            &p.layout.index.continuity
        };
        let critic = qmotion::network::MlpCritic::from_params(&pv, idx);
        let s = critic.score(
            &tape,
            if fidelity {
                inputs.fidelity
            } else {
                inputs.continuity
            },
        );
        let g = tape.grad(tape.sum_all(s), &[seq]).unwrap()[0];
        let analytic: Vec<f64> = tape.value(g).iter().copied().collect();
        let mut numeric = Vec::new();
        for i in 0..frames.len() {
            let mut plus = frames.clone();
            let mut minus = frames.clone();
            plus.as_slice_mut().unwrap()[i] += 1e-5;
            minus.as_slice_mut().unwrap()[i] -= 1e-5;
            numeric.push((score(&plus) - score(&minus)) / 2e-5);
        }
        assert!(
            max_rel_err(&analytic, &numeric, 1e-6) < 1e-4,
            "fidelity={fidelity}"
        );
    }
}

#[test]
fn continuity_critic_ignores_static_part_on_repeated_frames() {
    let d = dims(3, 3, 8, 2, 2, 1);
    let mut p = ModelParams::init(d, 41).unwrap();
    let idx = p.layout.index.continuity.clone();
    let mut w1 = p.array(idx.w[0]);
    for r in 0..9 {
        w1.row_mut_zero(r);
    }
    p.set_array(idx.w[0], &w1);
    p.fill(idx.b[0], 0.0);
    p.fill(idx.b[1], 0.0);
    p.fill(idx.b[2], 0.0);
    let norm = Normalizer::identity(3, 7);
    let pose = random((1, 3, 3), 42);
    let frames = Array3::from_shape_fn((3, 3, 3), |(_, j, k)| pose[[0, j, k]]);
    assert!(discriminate_continuity(&p, &norm, &frames)
        .iter()
        .all(|&s| s == 0.0));
}

trait ZeroRow {
    fn row_mut_zero(&mut self, r: usize);
}

impl ZeroRow for Array3<f64> {
    fn row_mut_zero(&mut self, r: usize) {
        self.slice_mut(ndarray::s![0, r, ..]).fill(0.0);
    }
}

#[test]
fn gradients_of_unused_parameters_are_exactly_zero() {
    let mut d = dims(3, 4, 8, 2, 2, 1);
    d.future = 2;
    let p = ModelParams::init(d, 43).unwrap();
    let tape = Tape::new();
    let pv = p.leaves(&tape);
    let h = embed(&tape, &pv, &p, &random4((1, 4, 3, 7), 44), None).unwrap();
    let hf = final_norm(&tape, &pv, &p, backbone(&tape, &pv, &p, true, h));
    let pred = prediction_head(
        &tape,
        &pv,
        &p,
        hf,
        0..1,
        &Normalizer::identity(3, 7),
        &random((1, 3, 3), 45),
    );
    let loss = tape.sum_all(tape.mul(pred, pred));
    let g = pv.flat_grad(&tape, loss, &p.layout).unwrap();
    assert!(
        g[p.layout.group_range(qmotion::network::ParamGroup::Critic)]
            .iter()
            .all(|&v| v == 0.0)
    );
    let i = p.layout.index.mask_w;
    assert!(g[p.layout.entries[i].range()].iter().all(|&v| v == 0.0));
}

#[test]
fn quadratic_loss_gradient_is_the_parameter_vector() {
    let p = ModelParams::init(dims(3, 4, 8, 2, 2, 1), 46).unwrap();
    let tape = Tape::new();
    let pv = p.leaves(&tape);
    let mut total = tape.constant([1, 1, 1], 0.0);
    for v in &pv.vars {
        total = tape.add(total, tape.scale(tape.sum_all(tape.mul(*v, *v)), 0.5));
    }
    assert_eq!(pv.flat_grad(&tape, total, &p.layout).unwrap(), p.values);
}

#[test]
fn backward_on_a_foreign_node_is_rejected() {
    let other = Tape::new();
    for _ in 0..10 {
        other.leaf(Array3::zeros((1, 1, 1)));
    }
    let foreign = other.leaf(Array3::zeros((1, 1, 1)));
    let tape = Tape::new();
    let x = tape.leaf(Array3::zeros((1, 1, 1)));
    assert!(matches!(
        tape.grad(foreign, &[x]),
        Err(qmotion::Error::BackwardBeforeForward)
    ));
}
