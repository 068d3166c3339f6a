use std::collections::BTreeSet;

use jokerank_tensor::{Graph, Tensor, LAYER_NORM_EPS};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::check::{end_to_end_gradient_error, random_problem, tiny_cnn_config, tiny_transformer_config};
use super::*;
use crate::datamodel::{EmbeddingSpec, EventCalendar, Timestamp, UserHistory};
use crate::labelling::{label_all, LabelConfig, SampleWeightConfig};
use crate::simgen::{generate_world, WorldConfig};

fn single_token_setup(depths: BTreeSet<usize>) -> (DlNetwork, jokerank_tensor::ParamStore, TokenCache, Tensor) {
    let cfg = DLConfig {
        d_model: 4,
        num_heads: 1,
        num_layers: 1,
        user_attn_depths: depths,
        d_ff: 6,
        ..DLConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let tokens = TokenCache::from_rows(3, vec![(0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()]).unwrap();
    let net = DlNetwork::new(&cfg, 3, 2).unwrap();
    let mut store = net.init_params(9);
    let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
    for id in ids {
        store.get_mut(id).data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.3..0.3));
    }
    let user = Tensor::new(vec![1, USER_TOKENS, 4], (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    (net, store, tokens, user)
}

fn vecmat(x: &[f64], w: &Tensor) -> Vec<f64> {
    let (k, n) = (w.shape()[0], w.shape()[1]);
    assert_eq!(x.len(), k);
    (0..n).map(|j| (0..k).map(|i| x[i] * w.data()[i * n + j]).sum()).collect()
}

fn plus(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn norm(x: &[f64], gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    x.iter()
        .enumerate()
        .map(|(i, v)| (v - mean) / (var + LAYER_NORM_EPS).sqrt() * gamma[i] + beta[i])
        .collect()
}

#[test]
fn single_token_encoder_matches_straight_line() {
    let (net, store, tokens, user) = single_token_setup(BTreeSet::from([1]));
    let p = |name: &str| store.by_name(name).unwrap().clone();
    let d = |name: &str| store.by_name(name).unwrap().data().to_vec();
    let pe = [0.0_f64.sin(), 0.0_f64.cos(), 0.0_f64.sin(), 0.0_f64.cos()];
    let emb = tokens.batch(&[0], 1).embeddings.data().to_vec();
    let x = plus(&plus(&vecmat(&emb, &p("enc.input.w")), &d("enc.input.b")), &pe);
    // one key: the softmax weight is exactly 1
    let v = vecmat(&x, &p("enc.layer1.self_attn.wv"));
    let sa = plus(&vecmat(&v, &p("enc.layer1.self_attn.wo")), &d("enc.layer1.self_attn.bo"));
    let x = norm(&plus(&x, &sa), &d("enc.layer1.ln_self.gamma"), &d("enc.layer1.ln_self.beta"));
    let q = vecmat(&x, &p("enc.layer1.user_attn.wq"));
    let rows: Vec<Vec<f64>> = user.data().chunks(4).map(<[f64]>::to_vec).collect();
    let keys: Vec<Vec<f64>> = rows.iter().map(|r| vecmat(r, &p("enc.layer1.user_attn.wk"))).collect();
    let vals: Vec<Vec<f64>> = rows.iter().map(|r| vecmat(r, &p("enc.layer1.user_attn.wv"))).collect();
    let logits: Vec<f64> = keys.iter().map(|k| q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() / 2.0).collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    let mut mixed = vec![0.0; 4];
    for (l, v) in logits.iter().zip(&vals) {
        for (o, vi) in mixed.iter_mut().zip(v) {
            *o += (l - m).exp() / z * vi;
        }
    }
    let ua = plus(&vecmat(&mixed, &p("enc.layer1.user_attn.wo")), &d("enc.layer1.user_attn.bo"));
    let x = norm(&plus(&x, &ua), &d("enc.layer1.ln_user.gamma"), &d("enc.layer1.ln_user.beta"));
    let h: Vec<f64> = plus(&vecmat(&x, &p("enc.layer1.ffn1.w")), &d("enc.layer1.ffn1.b"))
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    let f = plus(&vecmat(&h, &p("enc.layer1.ffn2.w")), &d("enc.layer1.ffn2.b"));
    let want = norm(&plus(&x, &f), &d("enc.layer1.ln_ffn.gamma"), &d("enc.layer1.ln_ffn.beta"));

    let mut g = Graph::new();
    let u = g.constant(user);
    let out = net.encode_transformer(&mut g, &store, &tokens.batch(&[0], 1), Some(u)).unwrap();
    let got = g.value(out).data();
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-12, "{got:?} vs {want:?}");
    }
}

#[test]
fn user_context_changes_encoding_only_when_enabled() {
    let (net, store, tokens, user) = single_token_setup(BTreeSet::from([1]));
    let other = Tensor::new(user.shape().to_vec(), user.data().iter().map(|v| -v + 0.3).collect()).unwrap();
    let encode = |u: &Tensor| {
        let mut g = Graph::new();
        let u = g.constant(u.clone());
        let out = net.encode_transformer(&mut g, &store, &tokens.batch(&[0], 1), Some(u)).unwrap();
        g.value(out).data().to_vec()
    };
    let (a, b) = (encode(&user), encode(&other));
    let dist: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    assert!(dist > 1e-6);

    let (net, store, tokens, user) = single_token_setup(BTreeSet::new());
    let mut g = Graph::new();
    let u = g.constant(user);
    let with_user = net.encode_transformer(&mut g, &store, &tokens.batch(&[0], 1), Some(u)).unwrap();
    let plain = net.encode_transformer(&mut g, &store, &tokens.batch(&[0], 1), None).unwrap();
    assert_eq!(g.value(with_user).data(), g.value(plain).data());
}

#[test]
fn padding_does_not_change_encodings() {
    for cfg in [tiny_transformer_config(), tiny_cnn_config()] {
        let (net, store, tokens, _) = random_problem(&cfg, 3).unwrap();
        let mut g = Graph::new();
        let min = cfg.min_tokens();
        let alone = net.encode(&mut g, &store, &tokens.batch(&[0], min), None).unwrap();
        let padded = net.encode(&mut g, &store, &tokens.batch(&[0, 3], min), None).unwrap();
        let (a, b) = (g.value(alone).data(), g.value(padded).data());
        let w = a.len();
        for (x, y) in a.iter().zip(&b[..w]) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    for seed in [1, 2, 3] {
        let err = end_to_end_gradient_error(&tiny_transformer_config(), seed).unwrap();
        assert!(err < 1e-4, "transformer seed {seed}: {err}");
        let err = end_to_end_gradient_error(&tiny_cnn_config(), seed).unwrap();
        assert!(err < 1e-6, "cnn seed {seed}: {err}");
    }
}

fn cnn_identity() -> (DlNetwork, jokerank_tensor::ParamStore) {
    let cfg = DLConfig {
        encoder: EncoderKind::Cnn,
        user_attn_depths: BTreeSet::new(),
        cnn_filter_sizes: vec![1],
        cnn_num_filters: 3,
        ..DLConfig::default()
    };
    let net = DlNetwork::new(&cfg, 3, 1).unwrap();
    let mut store = net.init_params(0);
    let id = store.id("cnn.conv1.w").unwrap();
    store.get_mut(id).data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    (net, store)
}

#[test]
fn cnn_identity_kernel_is_elementwise_max() {
    let (net, store) = cnn_identity();
    let rows = vec![vec![0.2, -0.5, 0.1, 0.9, -0.1, 0.3, 0.4, -0.7, 0.0], vec![-0.3, 0.6, 0.05]];
    let tokens = TokenCache::from_rows(3, rows).unwrap();
    let mut g = Graph::new();
    let out = net.encode_cnn(&mut g, &store, &tokens.batch(&[0, 1], 1)).unwrap();
    assert_eq!(g.value(out).data(), &[0.9, 0.0, 0.3, 0.0, 0.6, 0.05]);
}

#[test]
fn cnn_is_order_sensitive_with_wide_filters() {
    let cfg = DLConfig {
        encoder: EncoderKind::Cnn,
        user_attn_depths: BTreeSet::new(),
        cnn_filter_sizes: vec![2],
        cnn_num_filters: 8,
        ..DLConfig::default()
    };
    let net = DlNetwork::new(&cfg, 3, 1).unwrap();
    let store = net.init_params(4);
    let fwd = vec![0.2, -0.5, 0.1, 0.9, -0.1, 0.3, 0.4, -0.7, 0.0];
    let rev: Vec<f64> = fwd.chunks(3).rev().flatten().copied().collect();
    let tokens = TokenCache::from_rows(3, vec![fwd, rev]).unwrap();
    let mut g = Graph::new();
    let out = net.encode_cnn(&mut g, &store, &tokens.batch(&[0, 1], 2)).unwrap();
    let v = g.value(out).data();
    assert_ne!(&v[..8], &v[8..]);
}

#[test]
fn outputs_are_distributions_and_untrained_scores_near_half() {
    let cfg = tiny_transformer_config();
    let (net, _, tokens, examples) = random_problem(&cfg, 8).unwrap();
    let store = net.init_params(8);
    let refs: Vec<&DlExample> = examples.iter().collect();
    let mut g = Graph::new();
    let heads = net.forward(&mut g, &store, &tokens, &BatchInput::new(&refs)).unwrap();
    for v in [heads.log_reuse, heads.log_return] {
        for row in g.value(v).data().chunks(2) {
            let (a, b) = (row[0].exp(), row[1].exp());
            assert!((a + b - 1.0).abs() < 1e-12 && a > 0.0 && b > 0.0);
        }
    }
    for p in predict(&net, &store, &tokens, &examples).unwrap() {
        assert!((p[0] - 0.5).abs() < 0.1 && (p[1] - 0.5).abs() < 0.1, "{p:?}");
    }
}

#[test]
fn liked_order_and_empty_history_handling() {
    let cfg = tiny_transformer_config();
    let (net, store, tokens, mut examples) = random_problem(&cfg, 2).unwrap();
    let base = predict(&net, &store, &tokens, &examples).unwrap();
    for e in &mut examples {
        e.liked.reverse();
    }
    assert_eq!(predict(&net, &store, &tokens, &examples).unwrap(), base);
    for e in &mut examples {
        e.liked.clear();
        e.disliked.clear();
    }
    let refs: Vec<&DlExample> = examples.iter().collect();
    let batch = BatchInput::new(&refs);
    assert!(batch.liked_avg.is_none());
    let p = predict(&net, &store, &tokens, &examples).unwrap();
    assert!(p.iter().flatten().all(|v| v.is_finite() && *v > 0.0 && *v < 1.0));
}

#[test]
fn history_and_candidates_share_the_encoder() {
    let mut cfg = tiny_transformer_config();
    cfg.user_attn_depths.clear();
    let (net, store, tokens, _) = random_problem(&cfg, 4).unwrap();
    let batch = BatchInput::new(&[&DlExample {
        candidate: 2,
        liked: vec![2],
        disliked: vec![],
        country: 0,
        time: [0.0; 3],
        label_reuse: 0,
        label_return: 0,
        sample_weight: 1.0,
        class_weight_reuse: 1.0,
        class_weight_return: 1.0,
    }]);
    let mut g = Graph::new();
    net.forward(&mut g, &store, &tokens, &batch).unwrap();
    let encoder_params: Vec<&str> = store.iter().map(|(_, n, _)| n).filter(|n| n.starts_with("enc.")).collect();
    assert!(!encoder_params.is_empty());
    // a lone liked joke equal to the candidate gives cosine 1 under shared weights
    let mut g = Graph::new();
    let enc = net.encode(&mut g, &store, &tokens.batch(&[2], 1), None).unwrap();
    let again = net.encode(&mut g, &store, &tokens.batch(&[2], 1), None).unwrap();
    let cos = g.cosine_rows(enc, again).unwrap();
    assert!((g.value(cos).data()[0] - 1.0).abs() < 1e-12);
}

fn random_targets(rng: &mut ChaCha8Rng, n: usize) -> LossTargets {
    LossTargets {
        labels_reuse: (0..n).map(|_| rng.gen_range(0..2)).collect(),
        labels_return: (0..n).map(|_| rng.gen_range(0..2)).collect(),
        sample_weights: (0..n).map(|_| rng.gen_range(1.0..2.0)).collect(),
        class_weights_reuse: (0..n).map(|_| rng.gen_range(0.5..3.0)).collect(),
        class_weights_return: (0..n).map(|_| rng.gen_range(0.5..3.0)).collect(),
    }
}

fn random_log_probs(g: &mut Graph, rng: &mut ChaCha8Rng, n: usize) -> (jokerank_tensor::Var, Vec<[f64; 2]>) {
    let logits = g.constant(Tensor::new(vec![n, 2], (0..2 * n).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap());
    let logp = g.log_softmax(logits, 1).unwrap();
    let probs = g.value(logp).data().chunks(2).map(|r| [r[0].exp(), r[1].exp()]).collect();
    (logp, probs)
}

#[test]
fn graph_loss_matches_straight_line_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..20 {
        let n = rng.gen_range(1..40);
        let targets = random_targets(&mut rng, n);
        let cfg = DLConfig {
            epsilon_smooth: rng.gen_range(0.0..0.3),
            loss_weights: (rng.gen_range(0.0..1.0), rng.gen_range(0.1..1.0)),
            ..DLConfig::default()
        };
        let mut g = Graph::new();
        let (lr, pr) = random_log_probs(&mut g, &mut rng, n);
        let (lt, pt) = random_log_probs(&mut g, &mut rng, n);
        let loss = total_loss_graph(&mut g, lr, lt, &targets, &cfg).unwrap();
        let plain = total_loss(&pr, &pt, &targets, &cfg).unwrap();
        assert!((g.value(loss).data()[0] - plain).abs() < 1e-12);
    }
}

#[test]
fn zero_return_weight_leaves_reuse_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let targets = random_targets(&mut rng, 16);
    let mut g = Graph::new();
    let (_, pr) = random_log_probs(&mut g, &mut rng, 16);
    let (_, pt) = random_log_probs(&mut g, &mut rng, 16);
    let cfg = DLConfig {
        loss_weights: (1.0, 0.0),
        ..DLConfig::default()
    };
    let reuse_only = total_loss(&pr, &pt, &targets, &cfg).unwrap();
    let other_returns: Vec<[f64; 2]> = pt.iter().map(|p| [p[1], p[0]]).collect();
    assert_eq!(total_loss(&pr, &other_returns, &targets, &cfg).unwrap(), reuse_only);
}

proptest! {
    #[test]
    fn smoothing_sums_to_one_and_keeps_argmax(eps in 0.0f64..0.999, label in 0u8..2) {
        let s = smooth_labels(one_hot(label), eps);
        prop_assert!((s[0] + s[1] - 1.0).abs() < 1e-15);
        prop_assert_eq!(usize::from(s[1] > s[0]), usize::from(label));
    }
}

struct SmallWorld {
    ctx: DlContext,
    train: Vec<crate::datamodel::LabelledInstance>,
    val: Vec<crate::datamodel::LabelledInstance>,
    history: crate::labelling::HistoryIndex,
}

fn small_world() -> SmallWorld {
    let cfg = WorldConfig {
        num_users: 40,
        num_jokes: 30,
        num_days: 10,
        seed: 3,
        embedding_dim: 8,
        ..WorldConfig::default()
    };
    let world = generate_world(&cfg, &EventCalendar::default_calendar()).unwrap();
    let label_cfg = LabelConfig::default();
    let mut all = label_all(&world.events, &label_cfg, &SampleWeightConfig::default()).unwrap();
    all.sort_by(|a, b| a.event.timestamp.cmp(&b.event.timestamp).then(a.event.user_id.cmp(&b.event.user_id)));
    let history = crate::labelling::HistoryIndex::new(&all, LabelChoice::Reuse, &label_cfg);
    let embedding = EmbeddingSpec {
        dim: 8,
        num_buckets: 1000,
        ..EmbeddingSpec::default()
    };
    let table = world.embedding_table(&embedding).unwrap();
    let ctx = DlContext::new(crate::datamodel::Corpus::new(world.corpus).unwrap(), &table, DLConfig::default().max_tokens);
    let mut train = all[..200].to_vec();
    crate::labelling::assign_class_weights(&mut train).unwrap();
    let val = all[200..400].to_vec();
    SmallWorld { ctx, train, val, history }
}

fn quick_config() -> DLConfig {
    DLConfig {
        max_epochs: 3,
        patience: 3,
        batch_size: 32,
        ..DLConfig::default()
    }
}

#[test]
fn training_lowers_loss_and_is_deterministic() {
    let w = small_world();
    let cfg = quick_config();
    let (model, log) = train_dl(&w.ctx, &w.train, &w.val, &w.history, &cfg, 11).unwrap();
    assert!(log.final_train_loss < log.initial_train_loss, "{log:?}");
    let (again, log2) = train_dl(&w.ctx, &w.train, &w.val, &w.history, &cfg, 11).unwrap();
    let aucs = |l: &DlTrainLog| l.epochs.iter().map(|e| e.val_auc.to_bits()).collect::<Vec<_>>();
    assert_eq!(aucs(&log), aucs(&log2));
    let ex = model.examples(&w.val, &w.history).unwrap();
    assert_eq!(model.predict(&ex).unwrap(), again.predict(&ex).unwrap());
}

#[test]
fn checkpoint_round_trip_reproduces_scores() {
    let w = small_world();
    let cfg = DLConfig {
        max_epochs: 1,
        ..quick_config()
    };
    let (model, _) = train_dl(&w.ctx, &w.train, &w.val, &w.history, &cfg, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path()).unwrap();
    let loaded = DLModel::load(dir.path(), &w.ctx).unwrap();
    for ((_, a, x), (_, b, y)) in model.params().iter().zip(loaded.params().iter()) {
        assert_eq!(a, b);
        assert_eq!(x, y);
    }
    let ctx = RequestContext {
        user_id: "u0001".into(),
        timestamp: Timestamp::from_unix(1_557_000_000),
        country_code: "US".into(),
        history: UserHistory::default(),
    };
    let ids: Vec<String> = w.ctx.corpus.iter().take(5).map(|j| j.joke_id.clone()).collect();
    let pairs: Vec<(&RequestContext, &str)> = ids.iter().map(|j| (&ctx, j.as_str())).collect();
    assert_eq!(model.score_pairs(&pairs).unwrap(), loaded.score_pairs(&pairs).unwrap());

    let mut jokes = w.ctx.corpus.jokes().to_vec();
    jokes[0].text.push_str(" extra");
    let table = EmbeddingSpec {
        dim: 8,
        num_buckets: 1000,
        ..EmbeddingSpec::default()
    }
    .build()
    .unwrap();
    let other = DlContext::new(crate::datamodel::Corpus::new(jokes).unwrap(), &table, w.ctx.max_tokens);
    assert!(matches!(DLModel::load(dir.path(), &other), Err(crate::Error::SchemaMismatch { .. })));
    let unseen_vectors = DlContext::new(w.ctx.corpus.clone(), &table, w.ctx.max_tokens);
    assert!(matches!(DLModel::load(dir.path(), &unseen_vectors), Err(crate::Error::SchemaMismatch { .. })));
}
