//! Finite-difference checks of every tape operation, every layer, and the
//! end-to-end parser loss. Backs the `gradcheck` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::gradcheck::{check_inputs, check_params, GradReport, DEFAULT_FLOOR, DEFAULT_STEP};
use crate::autodiff::{uniform, ParamId, ParamStore, Tape, Tensor, TensorError, Var};
use crate::data::{Edge, SemanticGraph, Token, Vocabulary};
use crate::layers::{
    BiLstm, BiaffineParams, CharDropout, CharEncoder, EmbeddingTable, Fnn, Linear, Nonlinearity, Pretrained,
    PretrainedEmbedding, UnkRow,
};
use crate::model::{ModelConfig, ModelError, Parser};

#[derive(Clone, Debug)]
pub struct CheckEntry {
    pub name: String,
    pub report: GradReport,
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Weighted sum with fixed random weights, so each output element gets a distinct upstream gradient.
fn probe(tape: &mut Tape<'_>, out: Var, seed: u64) -> Result<Var, TensorError> {
    let shape = tape.shape(out).to_vec();
    let r = tape.constant(uniform(&mut rng(seed), &shape, 1.0));
    let y = tape.mul(out, r)?;
    tape.sum(y)
}

/// Values at least 0.2 away from zero, keeping kinks out of the step.
fn away_from_zero<R: Rng>(g: &mut R, shape: &[usize]) -> Tensor {
    let mut t = uniform(g, shape, 1.0);
    for x in t.data_mut() {
        *x = x.signum() * (0.2 + x.abs());
    }
    t
}

type OpCase = (&'static str, Vec<Vec<usize>>, fn(&mut Tape<'static>, &[Var]) -> Result<Var, TensorError>);

fn op_cases() -> Vec<OpCase> {
    fn p(t: &mut Tape<'static>, v: Var) -> Result<Var, TensorError> {
        probe(t, v, 99)
    }
    vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], |t, v| {
            let y = t.matmul(v[0], v[1])?;
            p(t, y)
        }),
        ("add", vec![vec![3, 4], vec![3, 4]], |t, v| {
            let y = t.add(v[0], v[1])?;
            p(t, y)
        }),
        ("add_broadcast", vec![vec![2, 3, 4], vec![4]], |t, v| {
            let y = t.add(v[0], v[1])?;
            p(t, y)
        }),
        ("mul", vec![vec![3, 4], vec![3, 4]], |t, v| {
            let y = t.mul(v[0], v[1])?;
            p(t, y)
        }),
        ("mul_broadcast", vec![vec![3, 4], vec![4]], |t, v| {
            let y = t.mul(v[0], v[1])?;
            p(t, y)
        }),
        ("scale", vec![vec![3, 2]], |t, v| {
            let y = t.scale(v[0], -1.7)?;
            p(t, y)
        }),
        ("sigmoid", vec![vec![3, 4]], |t, v| {
            let y = t.sigmoid(v[0])?;
            p(t, y)
        }),
        ("tanh", vec![vec![3, 4]], |t, v| {
            let y = t.tanh(v[0])?;
            p(t, y)
        }),
        ("relu", vec![vec![3, 4]], |t, v| {
            let y = t.relu(v[0])?;
            p(t, y)
        }),
        ("concat_rows", vec![vec![2, 3], vec![1, 3]], |t, v| {
            let y = t.concat(&[v[0], v[1]], 0)?;
            p(t, y)
        }),
        ("concat_columns", vec![vec![2, 3], vec![2, 1]], |t, v| {
            let y = t.concat(&[v[0], v[1]], 1)?;
            p(t, y)
        }),
        ("narrow", vec![vec![4, 5]], |t, v| {
            let y = t.narrow(v[0], 1, 1, 3)?;
            p(t, y)
        }),
        ("select_rows", vec![vec![3, 2], vec![2, 2]], |t, v| {
            let y = t.select_rows(&[v[0], v[1]], &[(1, 0), (0, 2), (0, 2), (1, 1)])?;
            p(t, y)
        }),
        ("gather_rows", vec![vec![4, 3]], |t, v| {
            let y = t.gather_rows(v[0], &[3, 0, 3])?;
            p(t, y)
        }),
        ("reshape", vec![vec![2, 6]], |t, v| {
            let y = t.reshape(v[0], &[3, 4])?;
            p(t, y)
        }),
        ("swap_leading", vec![vec![2, 3, 2]], |t, v| {
            let y = t.swap_leading(v[0])?;
            p(t, y)
        }),
        ("sum", vec![vec![3, 3]], |t, v| {
            let y = t.tanh(v[0])?;
            t.sum(y)
        }),
        ("softmax_xent", vec![vec![4, 3]], |t, v| t.softmax_xent(v[0], &[2, 0, 1, 1], &[true, true, false, true])),
        ("sigmoid_xent", vec![vec![2, 3]], |t, v| {
            t.sigmoid_xent(v[0], &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0], &[true, true, true, false, true, true])
        }),
        ("biaffine", vec![vec![3, 2], vec![4, 2], vec![2, 2, 2], vec![2, 4], vec![2]], |t, v| {
            let y = t.biaffine(v[0], v[1], v[2], Some(v[3]), Some(v[4]), false)?;
            p(t, y)
        }),
        ("biaffine_diagonal", vec![vec![3, 2], vec![4, 2], vec![3, 2], vec![3, 4], vec![3]], |t, v| {
            let y = t.biaffine(v[0], v[1], v[2], Some(v[3]), Some(v[4]), true)?;
            p(t, y)
        }),
        ("bilinear", vec![vec![3, 2], vec![3, 2], vec![2, 1, 2]], |t, v| {
            let y = t.biaffine(v[0], v[1], v[2], None, None, false)?;
            p(t, y)
        }),
        ("bilinear_diagonal", vec![vec![3, 2], vec![2, 2], vec![2, 2]], |t, v| {
            let y = t.biaffine(v[0], v[1], v[2], None, None, true)?;
            p(t, y)
        }),
    ]
}

fn randomized(store: &mut ParamStore, seed: u64) -> Vec<ParamId> {
    let mut g = rng(seed);
    let ids: Vec<ParamId> = store.ids().collect();
    for &id in &ids {
        if !store.is_frozen(id) {
            let shape = store.value(id).shape().to_vec();
            *store.value_mut(id) = uniform(&mut g, &shape, 0.5);
        }
    }
    ids
}

fn layer_checks(seed: u64, out: &mut Vec<CheckEntry>) -> Result<(), ModelError> {
    let step = DEFAULT_STEP;
    let floor = DEFAULT_FLOOR;
    let samples = 40;
    let mut push = |name: &str, report| {
        out.push(CheckEntry {
            name: name.to_string(),
            report,
        })
    };

    let mut store = ParamStore::new();
    let e = EmbeddingTable::new(&mut store, "e", &mut rng(seed), 5, 3);
    let f = Fnn::new(&mut store, "f", &mut rng(seed + 1), 3, 4, Nonlinearity::Relu);
    let ids = randomized(&mut store, seed + 2);
    let r = check_params(&mut store, &ids, samples, step, floor, &mut rng(seed), |t| {
        let x = e.embed(t, &[4, 0, 2, 4], &[false, false, true, false])?;
        let y = f.forward(t, x)?;
        Ok::<_, ModelError>(probe(t, y, 5)?)
    })?;
    push("embedding+fnn", r);

    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, "l", &mut rng(seed), 4, 3);
    let ids = randomized(&mut store, seed + 3);
    let x = uniform(&mut rng(seed + 4), &[2, 4], 1.0);
    let r = check_params(&mut store, &ids, samples, step, floor, &mut rng(seed), |t| {
        let x = t.constant(x.clone());
        let y = lin.forward(t, x)?;
        Ok::<_, ModelError>(probe(t, y, 6)?)
    })?;
    push("linear", r);

    let mut store = ParamStore::new();
    let vectors = uniform(&mut rng(seed + 5), &[3, 2], 1.0);
    let pe = PretrainedEmbedding::new(&mut store, "g", &mut rng(seed), vectors, UnkRow::Trainable);
    let ids = randomized(&mut store, seed + 6);
    let r = check_params(&mut store, &ids, samples, step, floor, &mut rng(seed), |t| {
        let y = pe.embed(t, &[Some(1), None, Some(2), Some(0)], &[false, false, false, true])?;
        Ok::<_, ModelError>(probe(t, y, 7)?)
    })?;
    push("pretrained", r);

    let mut store = ParamStore::new();
    let lstm = BiLstm::new(&mut store, "r", &mut rng(seed), 3, 4, 2);
    let ids = randomized(&mut store, seed + 7);
    let x = uniform(&mut rng(seed + 8), &[4, 3], 1.0);
    let r = check_params(&mut store, &ids, samples, step, floor, &mut rng(seed), |t| {
        let x = t.constant(x.clone());
        let y = lstm.forward(t, x, 0.3, 0.3, true, &mut rng(seed + 9))?;
        Ok::<_, ModelError>(probe(t, y, 8)?)
    })?;
    push("bilstm", r);

    let mut store = ParamStore::new();
    let enc = CharEncoder::new(&mut store, "c", &mut rng(seed), 8, 3, 4, 3);
    let ids = randomized(&mut store, seed + 10);
    let chars = vec![vec![3, 4, 5, 6, 7], vec![4], vec![5, 3], vec![6, 6, 6]];
    let rates = CharDropout {
        ff: 0.33,
        recur: 0.33,
        linear: 0.33,
    };
    let r = check_params(&mut store, &ids, samples, step, floor, &mut rng(seed), |t| {
        let y = enc.encode(t, &chars, &[false, false, true, false], rates, true, &mut rng(seed + 11))?;
        Ok::<_, ModelError>(probe(t, y, 9)?)
    })?;
    push("char_encoder", r);

    for (name, diagonal, affine) in [
        ("biaffine_layer", false, true),
        ("biaffine_layer_diagonal", true, true),
        ("bilinear_layer", false, false),
        ("bilinear_layer_diagonal", true, false),
    ] {
        let mut store = ParamStore::new();
        let b = BiaffineParams::new(&mut store, "s", 3, 2, diagonal, affine);
        let ids = randomized(&mut store, seed + 12);
        let dep = uniform(&mut rng(seed + 13), &[4, 3], 1.0);
        let head = uniform(&mut rng(seed + 14), &[4, 3], 1.0);
        let r = check_params(&mut store, &ids, samples, step, floor, &mut rng(seed), |t| {
            let (d, h) = (t.constant(dep.clone()), t.constant(head.clone()));
            let y = b.forward(t, d, h)?;
            Ok::<_, ModelError>(probe(t, y, 10)?)
        })?;
        push(name, r);
    }
    Ok(())
}

/// The 3-token sentence used for the end-to-end check.
pub fn three_token_sentence() -> SemanticGraph {
    let tokens = vec![
        Token::new(1, "The", "the", "DT"),
        Token::new(2, "cat", "cat", "NN"),
        Token::new(3, "sat", "sit", "VBD"),
    ];
    SemanticGraph::new(None, tokens, [Edge::new(1, 2, "BV"), Edge::new(3, 2, "ARG1")], [3])
        .expect("well-formed sentence")
}

fn model_checks(seed: u64, out: &mut Vec<CheckEntry>) -> Result<(), ModelError> {
    let gold = three_token_sentence();
    let vocab = Vocabulary::build(std::slice::from_ref(&gold), 1)?;
    let small = ModelConfig {
        use_char: true,
        use_lemma: true,
        lstm_layers: 2,
        glove_dim: 3,
        ..ModelConfig::default().scaled(3)
    };
    for (name, config) in [
        ("parser_loss", small.clone()),
        (
            "parser_loss_unfactorized",
            ModelConfig {
                factorized: false,
                ..small
            },
        ),
    ] {
        let words = ["the", "cat", "mat"].map(String::from).to_vec();
        let pre = Pretrained::new(words, uniform(&mut rng(seed + 20), &[3, 3], 1.0))?;
        let mut parser = Parser::new(config, vocab.clone(), Some(pre), seed)?;
        let ids = randomized(&mut parser.store, seed + 21);
        let model = parser.clone();
        let report = check_params(&mut parser.store, &ids, 12, DEFAULT_STEP, DEFAULT_FLOOR, &mut rng(seed), |t| {
            model.batch_loss(t, &[&gold], &mut rng(seed + 22))
        })?;
        out.push(CheckEntry {
            name: name.to_string(),
            report,
        });
    }
    Ok(())
}

/// Runs every check; each entry reports its largest relative error.
pub fn gradient_suite(seed: u64) -> Result<Vec<CheckEntry>, ModelError> {
    let mut out = Vec::new();
    let mut g = rng(seed);
    for (name, shapes, f) in op_cases() {
        let inputs: Vec<Tensor> = shapes.iter().map(|s| away_from_zero(&mut g, s)).collect();
        let report = check_inputs(&inputs, DEFAULT_STEP, DEFAULT_FLOOR, f)?;
        out.push(CheckEntry {
            name: name.to_string(),
            report,
        });
    }
    layer_checks(seed, &mut out)?;
    model_checks(seed, &mut out)?;
    Ok(out)
}
