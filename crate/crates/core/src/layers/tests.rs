use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::gradcheck::{check_params, DEFAULT_FLOOR, DEFAULT_STEP, DEFAULT_TOLERANCE};
use crate::autodiff::{uniform, ParamId, ParamStore, Tape, Tensor, Var};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `sum(out ⊙ R)` for a fixed random `R`, so that no gradient cancels by symmetry.
fn probe(tape: &mut Tape<'_>, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(out).to_vec();
    let r = tape.constant(uniform(&mut rng(seed), &shape, 1.0));
    let y = tape.mul(out, r)?;
    Ok(tape.sum(y)?)
}

fn randomize(store: &mut ParamStore, seed: u64) {
    let mut g = rng(seed);
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let shape = store.value(id).shape().to_vec();
        *store.value_mut(id) = uniform(&mut g, &shape, 0.5);
    }
}

fn all_ids(store: &ParamStore) -> Vec<ParamId> {
    store.ids().collect()
}

#[test]
fn embed_without_drops_is_a_gather() {
    let mut store = ParamStore::new();
    let e = EmbeddingTable::new(&mut store, "e", &mut rng(1), 6, 3);
    let mut tape = Tape::with_params(&store);
    let out = e.embed(&mut tape, &[4, 2, 4], &[false; 3]).unwrap();
    let table = store.value(e.table);
    for (r, id) in [4, 2, 4].into_iter().enumerate() {
        assert_eq!(tape.value(out).row(r), table.row(id));
    }
}

#[test]
fn embed_all_dropped_uses_drop_row() {
    let mut store = ParamStore::new();
    let e = EmbeddingTable::new(&mut store, "e", &mut rng(1), 6, 3);
    let mut tape = Tape::with_params(&store);
    let out = e.embed(&mut tape, &[4, 2, 5], &[true; 3]).unwrap();
    for r in 0..3 {
        assert_eq!(tape.value(out).row(r), store.value(e.table).row(e.drop_row));
    }
}

#[test]
fn embed_rejects_out_of_range_ids() {
    let mut store = ParamStore::new();
    let e = EmbeddingTable::new(&mut store, "e", &mut rng(1), 4, 2);
    let mut tape = Tape::with_params(&store);
    assert!(matches!(
        e.embed(&mut tape, &[1, 4], &[false, false]),
        Err(LayerError::IdOutOfRange { id: 4, rows: 4 })
    ));
    assert!(matches!(
        e.embed(&mut tape, &[1], &[false, true]),
        Err(LayerError::MaskLength { .. })
    ));
}

proptest! {
    #[test]
    fn embed_mixed_mask_matches_naive_gather(
        ids in prop::collection::vec(0usize..9, 1..12),
        seed in any::<u64>(),
    ) {
        let mut store = ParamStore::new();
        let e = EmbeddingTable::new(&mut store, "e", &mut rng(seed), 9, 4);
        let mut g = rng(seed ^ 0x5eed);
        let drop = drop_decisions(&mut g, ids.len(), 0.5);
        let mut tape = Tape::with_params(&store);
        let out = e.embed(&mut tape, &ids, &drop).unwrap();
        let table = store.value(e.table);
        for (r, (&id, &d)) in ids.iter().zip(&drop).enumerate() {
            let want = if d { table.row(1) } else { table.row(id) };
            prop_assert_eq!(tape.value(out).row(r), want);
        }
    }

    #[test]
    fn char_output_shape_for_any_lengths(
        lengths in prop::collection::vec(1usize..9, 1..6),
    ) {
        let mut store = ParamStore::new();
        let enc = CharEncoder::new(&mut store, "c", &mut rng(3), 10, 4, 5, 6);
        let words: Vec<Vec<usize>> = lengths.iter().map(|&l| (0..l).map(|k| 3 + k % 7).collect()).collect();
        let mut tape = Tape::with_params(&store);
        let drops = vec![false; words.len()];
        let out = enc.encode(&mut tape, &words, &drops, CharDropout::default(), false, &mut rng(0)).unwrap();
        prop_assert_eq!(tape.shape(out), &[words.len(), 6][..]);
    }
}

#[test]
fn pretrained_reader_accepts_header_and_checks_width() {
    let text = "3 2\nthe 0.1 0.2\nDog 1 2\n\ncat -1 0.5\n";
    let p = read_pretrained(text.as_bytes()).unwrap();
    assert_eq!(p.len(), 3);
    assert_eq!(p.dim(), 2);
    assert_eq!(p.lookup("the"), Some(0));
    assert_eq!(p.lookup("Cat"), Some(2));
    assert_eq!(p.lookup("dog"), None);
    assert_eq!(p.vectors.row(1), &[1.0, 2.0]);

    let ragged = "a 1 2\nb 1\n";
    assert!(matches!(
        read_pretrained(ragged.as_bytes()),
        Err(LayerError::PretrainedFormat { line: 2, .. })
    ));
    assert!(read_pretrained("x 1 y\n".as_bytes()).is_err());
    assert!(read_pretrained("".as_bytes()).is_err());
}

#[test]
fn pretrained_table_is_frozen_and_unknowns_share_a_row() {
    let p = read_pretrained("a 1 2\nb 3 4\n".as_bytes()).unwrap();
    for unk in [UnkRow::Trainable, UnkRow::Zero] {
        let mut store = ParamStore::new();
        let e = PretrainedEmbedding::new(&mut store, "g", &mut rng(2), p.vectors.clone(), unk);
        assert!(store.is_frozen(e.table));
        let mut tape = Tape::with_params(&store);
        let out = e
            .embed(&mut tape, &[Some(1), None, Some(0), None], &[false, false, true, false])
            .unwrap();
        let v = tape.value(out);
        assert_eq!(v.row(0), &[3.0, 4.0]);
        assert_eq!(v.row(1), v.row(3));
        assert_eq!(v.row(2), store.value(e.specials).row(1));
        if unk == UnkRow::Zero {
            assert_eq!(v.row(1), &[0.0, 0.0]);
        } else {
            assert_eq!(v.row(1), store.value(e.specials).row(0));
        }
        let loss = probe(&mut tape, out, 1).unwrap();
        let grads = tape.backward(loss).unwrap().into_param_grads(&store);
        assert!(grads.get(e.table).is_none());
        assert!(grads.get(e.specials).unwrap().iter().any(|&g| g != 0.0));
    }
}

#[test]
fn window_arithmetic() {
    assert_eq!(window_count(1), 1);
    assert_eq!(window_count(2), 1);
    assert_eq!(window_count(3), 1);
    assert_eq!(window_count(5), 3);
}

#[test]
fn char_encoder_single_character_and_drops() {
    let mut store = ParamStore::new();
    let enc = CharEncoder::new(&mut store, "c", &mut rng(4), 8, 4, 5, 7);
    let mut tape = Tape::with_params(&store);
    let out = enc
        .encode(&mut tape, &[vec![3]], &[false], CharDropout::default(), false, &mut rng(0))
        .unwrap();
    assert_eq!(tape.shape(out), &[1, 7]);

    let all_dropped = enc
        .encode(&mut tape, &[vec![3, 4], vec![5]], &[true, true], CharDropout::default(), true, &mut rng(0))
        .unwrap();
    for r in 0..2 {
        assert_eq!(tape.value(all_dropped).row(r), store.value(enc.drop_row).data());
    }
    assert!(matches!(
        enc.encode(&mut tape, &[vec![]], &[false], CharDropout::default(), false, &mut rng(0)),
        Err(LayerError::EmptyWord(0))
    ));
}

#[test]
fn short_words_are_boundary_padded() {
    // "ab" pads to "ab<B>", the same single window as the explicit three-character word.
    let mut store = ParamStore::new();
    let enc = CharEncoder::new(&mut store, "c", &mut rng(4), 8, 4, 5, 7);
    let mut tape = Tape::with_params(&store);
    let d = CharDropout::default();
    let short = enc.encode(&mut tape, &[vec![3, 4]], &[false], d, false, &mut rng(0)).unwrap();
    let padded = enc
        .encode(&mut tape, &[vec![3, 4, crate::data::BOUNDARY_INDEX]], &[false], d, false, &mut rng(0))
        .unwrap();
    assert_eq!(tape.value(short), tape.value(padded));
}

#[test]
fn bilstm_single_token_shape() {
    let mut store = ParamStore::new();
    let lstm = BiLstm::new(&mut store, "r", &mut rng(5), 4, 6, 3);
    let mut tape = Tape::with_params(&store);
    let x = tape.constant(uniform(&mut rng(6), &[1, 4], 1.0));
    let out = lstm.forward(&mut tape, x, 0.45, 0.25, false, &mut rng(0)).unwrap();
    assert_eq!(tape.shape(out), &[1, 12]);
}

#[test]
fn bilstm_zero_weights_give_zero_output() {
    let mut store = ParamStore::new();
    let lstm = BiLstm::new(&mut store, "r", &mut rng(5), 4, 3, 2);
    let ids = all_ids(&store);
    for id in ids {
        store.value_mut(id).data_mut().fill(0.0);
    }
    let mut tape = Tape::with_params(&store);
    let x = tape.constant(uniform(&mut rng(6), &[5, 4], 3.0));
    let out = lstm.forward(&mut tape, x, 0.0, 0.0, false, &mut rng(0)).unwrap();
    assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
}

#[test]
fn bilstm_inference_is_deterministic() {
    let mut store = ParamStore::new();
    let lstm = BiLstm::new(&mut store, "r", &mut rng(5), 4, 3, 2);
    let input = uniform(&mut rng(6), &[5, 4], 1.0);
    let run = |seed| {
        let mut tape = Tape::with_params(&store);
        let x = tape.constant(input.clone());
        let out = lstm.forward(&mut tape, x, 0.45, 0.25, false, &mut rng(seed)).unwrap();
        tape.value(out).clone()
    };
    assert_eq!(run(1), run(2));
}

fn reverse_rows(t: &Tensor) -> Tensor {
    let n = t.shape()[0];
    let rows: Vec<Vec<f64>> = (0..n).rev().map(|r| t.row(r).to_vec()).collect();
    Tensor::from_rows(&rows).unwrap()
}

#[test]
fn bilstm_direction_asymmetry() {
    let mut store = ParamStore::new();
    let lstm = BiLstm::new(&mut store, "r", &mut rng(7), 3, 4, 1);
    let (fw, bw) = lstm.layers[0].clone();
    let swapped = BiLstm {
        layers: vec![(
            LstmParams {
                direction: LstmDirection::Forward,
                ..bw.clone()
            },
            LstmParams {
                direction: LstmDirection::Backward,
                ..fw.clone()
            },
        )],
        ..lstm.clone()
    };
    let x = uniform(&mut rng(8), &[5, 3], 1.0);
    let run = |net: &BiLstm, input: &Tensor| {
        let mut tape = Tape::with_params(&store);
        let v = tape.constant(input.clone());
        let out = net.forward(&mut tape, v, 0.0, 0.0, false, &mut rng(0)).unwrap();
        tape.value(out).clone()
    };
    let plain = run(&lstm, &x);

    // Reversed input through the direction-swapped network, re-reversed,
    // with the two halves exchanged, reproduces the original output.
    let back = reverse_rows(&run(&swapped, &reverse_rows(&x)));
    let h = 4;
    for r in 0..5 {
        let row = back.row(r);
        let exchanged: Vec<f64> = row[h..].iter().chain(&row[..h]).copied().collect();
        for (a, b) in exchanged.iter().zip(plain.row(r)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    // The unswapped network on reversed input does not.
    let naive = reverse_rows(&run(&lstm, &reverse_rows(&x)));
    assert!(naive.max_abs_diff(&plain) > 1e-6);
}

#[test]
fn recurrent_mask_is_shared_across_timesteps() {
    let mut store = ParamStore::new();
    let lstm = BiLstm::new(&mut store, "r", &mut rng(9), 3, 8, 2);
    let mut tape = Tape::with_params(&store);
    let x = tape.constant(uniform(&mut rng(10), &[6, 3], 1.0));
    let mut traces = Vec::new();
    lstm.forward_traced(&mut tape, x, 0.45, 0.25, true, &mut rng(11), Some(&mut traces))
        .unwrap();
    assert_eq!(traces.len(), 4);
    for tr in &traces {
        assert_eq!(tr.recurrent_masks.len(), 5);
        assert!(tr.recurrent_masks.iter().all(|m| m == &tr.recurrent_masks[0]));
        assert_eq!(tr.input_masks.len(), 6);
        assert!(tr.input_masks.iter().all(|m| m == &tr.input_masks[0]));
        let keep = 1.0 / 0.75;
        assert!(tr.recurrent_masks[0].iter().all(|&v| v == 0.0 || v == keep));
    }
    // Masks are drawn independently per direction.
    assert_ne!(traces[0].recurrent_masks[0], traces[1].recurrent_masks[0]);

    let mut quiet = Vec::new();
    lstm.forward_traced(&mut tape, x, 0.45, 0.25, false, &mut rng(11), Some(&mut quiet))
        .unwrap();
    assert!(quiet.iter().all(|t| t.recurrent_masks.is_empty() && t.input_masks.is_empty()));
}

#[test]
fn fnn_examples() {
    let mut store = ParamStore::new();
    let f = Fnn::new(&mut store, "f", &mut rng(1), 3, 2, Nonlinearity::Identity);
    store.value_mut(f.linear.w).data_mut().fill(0.0);
    store.value_mut(f.linear.b).data_mut().copy_from_slice(&[0.5, -2.0]);
    let mut tape = Tape::with_params(&store);
    let x = tape.constant(uniform(&mut rng(2), &[4, 3], 1.0));
    let out = f.forward(&mut tape, x).unwrap();
    for r in 0..4 {
        assert_eq!(tape.value(out).row(r), &[0.5, -2.0]);
    }

    let relu = Fnn {
        nonlinearity: Nonlinearity::Relu,
        ..f.clone()
    };
    let out = relu.forward(&mut tape, x).unwrap();
    for r in 0..4 {
        assert_eq!(tape.value(out).row(r), &[0.5, 0.0]);
    }

    let wide = tape.constant(Tensor::zeros(&[2, 5]));
    assert!(matches!(
        f.forward(&mut tape, wide),
        Err(LayerError::Dimension { expected: 3, actual: 5, .. })
    ));
    assert_eq!("relu".parse::<Nonlinearity>().unwrap(), Nonlinearity::Relu);
    assert!("tanh".parse::<Nonlinearity>().is_err());
}

#[test]
fn biaffine_bias_only_is_constant() {
    let mut store = ParamStore::new();
    let p = BiaffineParams::new(&mut store, "s", 3, 2, false, true);
    store
        .value_mut(p.b.unwrap())
        .data_mut()
        .copy_from_slice(&[1.5, -0.5]);
    let mut tape = Tape::with_params(&store);
    let dep = tape.constant(uniform(&mut rng(1), &[4, 3], 1.0));
    let head = tape.constant(uniform(&mut rng(2), &[4, 3], 1.0));
    let s = p.forward(&mut tape, dep, head).unwrap();
    assert_eq!(tape.shape(s), &[4, 4, 2]);
    for cell in tape.value(s).data().chunks(2) {
        assert_eq!(cell, &[1.5, -0.5]);
    }
}

#[test]
fn diagonal_bilinear_hand_case() {
    let mut store = ParamStore::new();
    let p = BiaffineParams::new(&mut store, "s", 2, 1, true, false);
    store.value_mut(p.u).data_mut().copy_from_slice(&[1.0, 1.0]);
    let mut tape = Tape::with_params(&store);
    let dep = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
    let head = tape.constant(Tensor::from_rows(&[vec![3.0, 4.0]]).unwrap());
    let s = p.forward(&mut tape, dep, head).unwrap();
    assert_eq!(tape.value(s).data(), &[11.0]);
}

/// Direct triple loop over the bilinear and affine terms.
fn naive_biaffine(dep: &Tensor, head: &Tensor, u: &Tensor, w: Option<&Tensor>, b: Option<&Tensor>) -> Vec<f64> {
    let (n1, n2, d) = (dep.shape()[0], head.shape()[0], dep.shape()[1]);
    let c = u.shape()[1];
    let mut out = Vec::new();
    for i in 0..n1 {
        for j in 0..n2 {
            for k in 0..c {
                let mut s = 0.0;
                for a in 0..d {
                    for e in 0..d {
                        s += dep.get(&[i, a]) * u.get(&[a, k, e]) * head.get(&[j, e]);
                    }
                }
                if let Some(w) = w {
                    for a in 0..d {
                        s += w.get(&[k, a]) * dep.get(&[i, a]) + w.get(&[k, d + a]) * head.get(&[j, a]);
                    }
                }
                if let Some(b) = b {
                    s += b.data()[k];
                }
                out.push(s);
            }
        }
    }
    out
}

proptest! {
    #[test]
    fn diagonal_equals_full_with_zeroed_off_diagonals(seed in any::<u64>(), n in 1usize..5, d in 1usize..5, c in 1usize..4) {
        let mut g = rng(seed);
        let diag = uniform(&mut g, &[c, d], 1.0);
        let mut full = Tensor::zeros(&[d, c, d]);
        for k in 0..c {
            for a in 0..d {
                full.set(&[a, k, a], diag.get(&[k, a]));
            }
        }
        let mut store = ParamStore::new();
        let pd = BiaffineParams::new(&mut store, "d", d, c, true, true);
        let pf = BiaffineParams::new(&mut store, "f", d, c, false, true);
        *store.value_mut(pd.u) = diag;
        *store.value_mut(pf.u) = full;
        let w = uniform(&mut g, &[c, 2 * d], 1.0);
        let b = uniform(&mut g, &[c], 1.0);
        for p in [&pd, &pf] {
            *store.value_mut(p.w.unwrap()) = w.clone();
            *store.value_mut(p.b.unwrap()) = b.clone();
        }
        let mut tape = Tape::with_params(&store);
        let dep = tape.constant(uniform(&mut g, &[n, d], 1.0));
        let head = tape.constant(uniform(&mut g, &[n + 1, d], 1.0));
        let sd = pd.forward(&mut tape, dep, head).unwrap();
        let sf = pf.forward(&mut tape, dep, head).unwrap();
        prop_assert!(tape.value(sd).max_abs_diff(tape.value(sf)) <= 1e-12);
    }

    #[test]
    fn biaffine_matches_triple_loop(seed in any::<u64>(), n in 1usize..4, d in 1usize..4, c in 1usize..4) {
        let mut g = rng(seed);
        let mut store = ParamStore::new();
        let aff = BiaffineParams::new(&mut store, "a", d, c, false, true);
        let bil = BiaffineParams::new(&mut store, "b", d, c, false, false);
        let u = uniform(&mut g, &[d, c, d], 1.0);
        *store.value_mut(aff.u) = u.clone();
        *store.value_mut(bil.u) = u.clone();
        let w = uniform(&mut g, &[c, 2 * d], 1.0);
        let b = uniform(&mut g, &[c], 1.0);
        *store.value_mut(aff.w.unwrap()) = w.clone();
        *store.value_mut(aff.b.unwrap()) = b.clone();
        let dep_t = uniform(&mut g, &[n, d], 1.0);
        let head_t = uniform(&mut g, &[n + 2, d], 1.0);
        let mut tape = Tape::with_params(&store);
        let dep = tape.constant(dep_t.clone());
        let head = tape.constant(head_t.clone());
        let s_aff = pf(&mut tape, &aff, dep, head);
        let s_bil = pf(&mut tape, &bil, dep, head);
        let want_aff = naive_biaffine(&dep_t, &head_t, &u, Some(&w), Some(&b));
        let want_bil = naive_biaffine(&dep_t, &head_t, &u, None, None);
        for (x, y) in s_aff.iter().zip(&want_aff) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in s_bil.iter().zip(&want_bil) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        prop_assert!(!bil.include_affine());
    }
}

fn pf(tape: &mut Tape<'_>, p: &BiaffineParams, dep: Var, head: Var) -> Vec<f64> {
    let s = p.forward(tape, dep, head).unwrap();
    tape.value(s).data().to_vec()
}

#[test]
fn bilinear_equals_biaffine_with_zero_affine_terms() {
    let mut g = rng(21);
    let mut store = ParamStore::new();
    let aff = BiaffineParams::new(&mut store, "a", 3, 2, true, true);
    let bil = BiaffineParams::new(&mut store, "b", 3, 2, true, false);
    let u = uniform(&mut g, &[2, 3], 1.0);
    *store.value_mut(aff.u) = u.clone();
    *store.value_mut(bil.u) = u;
    let mut tape = Tape::with_params(&store);
    let dep = tape.constant(uniform(&mut g, &[4, 3], 1.0));
    let head = tape.constant(uniform(&mut g, &[4, 3], 1.0));
    assert_eq!(pf(&mut tape, &aff, dep, head), pf(&mut tape, &bil, dep, head));
}

fn assert_grad(report: crate::autodiff::gradcheck::GradReport) {
    assert!(report.passes(DEFAULT_TOLERANCE), "{report:?}");
    assert!(report.checked > 0);
}

#[test]
fn gradcheck_embedding_and_fnn() {
    let mut store = ParamStore::new();
    let e = EmbeddingTable::new(&mut store, "e", &mut rng(1), 5, 3);
    let f = Fnn::new(&mut store, "f", &mut rng(2), 3, 4, Nonlinearity::Relu);
    randomize(&mut store, 3);
    let ids = all_ids(&store);
    let report = check_params(&mut store, &ids, 64, DEFAULT_STEP, DEFAULT_FLOOR, &mut rng(0), |t| {
        let x = e.embed(t, &[2, 4, 2, 0], &[false, false, true, false])?;
        let y = f.forward(t, x)?;
        probe(t, y, 4)
    })
    .unwrap();
    assert_grad(report);
}

#[test]
fn gradcheck_pretrained() {
    let mut store = ParamStore::new();
    let vectors = uniform(&mut rng(1), &[3, 2], 1.0);
    let e = PretrainedEmbedding::new(&mut store, "g", &mut rng(2), vectors, UnkRow::Trainable);
    let lin = Linear::new(&mut store, "l", &mut rng(3), 2, 3);
    let ids = all_ids(&store);
    let report = check_params(&mut store, &ids, 64, DEFAULT_STEP, DEFAULT_FLOOR, &mut rng(0), |t| {
        let x = e.embed(t, &[Some(2), None, Some(0)], &[false, false, true])?;
        let y = lin.forward(t, x)?;
        probe(t, y, 4)
    })
    .unwrap();
    assert_grad(report);
}

#[test]
fn gradcheck_bilstm_with_dropout() {
    let mut store = ParamStore::new();
    let lstm = BiLstm::new(&mut store, "r", &mut rng(1), 3, 4, 2);
    randomize(&mut store, 2);
    let input = uniform(&mut rng(3), &[4, 3], 1.0);
    let ids = all_ids(&store);
    let report = check_params(&mut store, &ids, 40, DEFAULT_STEP, DEFAULT_FLOOR, &mut rng(0), |t| {
        let x = t.constant(input.clone());
        let y = lstm.forward(t, x, 0.3, 0.3, true, &mut rng(9))?;
        probe(t, y, 4)
    })
    .unwrap();
    assert_grad(report);
}

#[test]
fn gradcheck_char_encoder() {
    let mut store = ParamStore::new();
    let enc = CharEncoder::new(&mut store, "c", &mut rng(1), 8, 3, 4, 3);
    randomize(&mut store, 2);
    let words = vec![vec![3, 4, 5, 6, 7], vec![4], vec![5, 3], vec![6, 6, 6]];
    let drop = [false, false, true, false];
    let rates = CharDropout {
        ff: 0.33,
        recur: 0.33,
        linear: 0.33,
    };
    let ids = all_ids(&store);
    let report = check_params(&mut store, &ids, 40, DEFAULT_STEP, DEFAULT_FLOOR, &mut rng(0), |t| {
        let y = enc.encode(t, &words, &drop, rates, true, &mut rng(9))?;
        probe(t, y, 4)
    })
    .unwrap();
    assert_grad(report);
}

#[test]
fn gradcheck_biaffine_layers() {
    for (diagonal, affine) in [(false, true), (true, true), (false, false), (true, false)] {
        let mut store = ParamStore::new();
        let p = BiaffineParams::new(&mut store, "s", 3, 2, diagonal, affine);
        let proj = Linear::new(&mut store, "p", &mut rng(1), 2, 3);
        randomize(&mut store, 2);
        let input = uniform(&mut rng(3), &[3, 2], 1.0);
        let ids = all_ids(&store);
        let report = check_params(&mut store, &ids, 64, DEFAULT_STEP, DEFAULT_FLOOR, &mut rng(0), |t| {
            let x = t.constant(input.clone());
            let h = proj.forward(t, x)?;
            let s = p.forward(t, h, h)?;
            probe(t, s, 4)
        })
        .unwrap();
        assert_grad(report);
    }
}
