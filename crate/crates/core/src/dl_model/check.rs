use std::collections::BTreeSet;

use jokerank_tensor::gradcheck::{central_difference, relative_error, FD_STEP};
use jokerank_tensor::{Graph, ParamStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

use super::config::{DLConfig, EncoderKind};
use super::data::{BatchInput, DlExample, TokenCache};
use super::loss::{total_loss_graph, LossTargets};
use super::network::DlNetwork;

/// The small transformer used for end-to-end gradient checks: d_model 8,
/// one layer, one head, user-context attention on.
pub fn tiny_transformer_config() -> DLConfig {
    DLConfig {
        d_model: 8,
        num_heads: 1,
        num_layers: 1,
        user_attn_depths: BTreeSet::from([1]),
        d_ff: 8,
        fc_layers: 2,
        fc_sizes: vec![8, 8],
        epsilon_smooth: 0.2,
        ..DLConfig::default()
    }
}

pub fn tiny_cnn_config() -> DLConfig {
    DLConfig {
        encoder: EncoderKind::Cnn,
        user_attn_depths: BTreeSet::new(),
        cnn_filter_sizes: vec![1, 2, 3],
        cnn_num_filters: 4,
        ..tiny_transformer_config()
    }
}

/// Random token cache, examples and perturbed parameters for a check.
pub fn random_problem(cfg: &DLConfig, seed: u64) -> Result<(DlNetwork, ParamStore, TokenCache, Vec<DlExample>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 4;
    let jokes = 6;
    let seqs = (0..jokes)
        .map(|j| (0..(j % 4 + 1) * dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let tokens = TokenCache::from_rows(dim, seqs)?;
    let net = DlNetwork::new(cfg, dim, 3)?;
    let mut store = net.init_params(seed);
    let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
    for id in ids {
        store.get_mut(id).data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.2..0.2));
    }
    let examples = (0..4)
        .map(|i| DlExample {
            candidate: i % jokes,
            liked: if i == 3 { vec![] } else { vec![(i + 1) % jokes, (i + 3) % jokes] },
            disliked: vec![(i + 2) % jokes],
            country: i % 3,
            time: [rng.gen(), rng.gen(), f64::from(u8::from(i % 2 == 0))],
            label_reuse: u8::from(i % 2 == 1),
            label_return: u8::from(i < 2),
            sample_weight: rng.gen_range(1.0..2.0),
            class_weight_reuse: rng.gen_range(0.5..1.5),
            class_weight_return: rng.gen_range(0.5..1.5),
        })
        .collect();
    Ok((net, store, tokens, examples))
}

fn loss_value(net: &DlNetwork, store: &ParamStore, tokens: &TokenCache, examples: &[&DlExample]) -> Result<f64> {
    let batch = BatchInput::new(examples);
    let mut g = Graph::new();
    let heads = net.forward(&mut g, store, tokens, &batch)?;
    let loss = total_loss_graph(&mut g, heads.log_reuse, heads.log_return, &LossTargets::from_examples(examples), net.config())?;
    Ok(g.value(loss).data()[0])
}

/// Relative error between the tape gradient of the total loss and central
/// finite differences, over every parameter of the network.
pub fn end_to_end_gradient_error(cfg: &DLConfig, seed: u64) -> Result<f64> {
    let (net, mut store, tokens, examples) = random_problem(cfg, seed)?;
    let refs: Vec<&DlExample> = examples.iter().collect();
    let batch = BatchInput::new(&refs);
    let mut g = Graph::new();
    let heads = net.forward(&mut g, &store, &tokens, &batch)?;
    let loss = total_loss_graph(&mut g, heads.log_reuse, heads.log_return, &LossTargets::from_examples(&refs), cfg)?;
    g.backward(loss)?;
    let grads = g.param_grads();
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
    for id in ids {
        let base = store.get(id).data().to_vec();
        match grads.iter().find(|(g_id, _)| *g_id == id) {
            Some((_, t)) => analytic.extend_from_slice(t.data()),
            None => analytic.extend(std::iter::repeat_n(0.0, base.len())),
        }
        let fd = central_difference(&base, FD_STEP, |x| {
            store.get_mut(id).data_mut().copy_from_slice(x);
            loss_value(&net, &store, &tokens, &refs).expect("forward succeeded once")
        });
        store.get_mut(id).data_mut().copy_from_slice(&base);
        numeric.extend(fd);
    }
    Ok(relative_error(&analytic, &numeric))
}
