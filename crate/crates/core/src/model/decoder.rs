//! Label-graph decoder: forward pass, exact backward pass and batching.
//!
//! Sums that run over labels (softmax normalizers and attention-weighted
//! message sums) visit their terms in an order determined by the terms
//! themselves, never by label index. Permuting the labels therefore permutes
//! the output probabilities bit-for-bit.

use std::cmp::Ordering;
use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::encoder::{hidden_preactivation, relu};
use super::{Gradients, LayerNormParams, ModelConfig, ModelParams};
use crate::data_io::{MultiLabelDataset, SparseRow};
use crate::embeddings::LabelEmbeddings;
use crate::linalg::{dot, matmul, matmul_nt, matmul_tn};
use crate::losses::{asl_with_grad, regularizer_term, LossSpec};
use crate::par::{self, Execution};
use crate::{Error, Result};

/// Variance floor inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-9;

/// Samples folded sequentially per work unit in batch gradients. Fixed so
/// that the reduction order never depends on the thread count.
const GRADIENT_CHUNK: usize = 4;

struct NormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

fn layer_norm_forward(x: &Array2<f64>, p: &LayerNormParams) -> (Array2<f64>, NormCache) {
    let (n, d) = x.dim();
    let mut xhat = Array2::zeros((n, d));
    let mut inv_std = Array1::zeros(n);
    for (i, row) in x.rows().into_iter().enumerate() {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std[i] = inv;
        for (o, v) in xhat.row_mut(i).iter_mut().zip(row.iter()) {
            *o = (v - mean) * inv;
        }
    }
    let y = &xhat * &p.gain + &p.bias;
    (y, NormCache { xhat, inv_std })
}

/// Row-wise layer normalization with gain and bias.
pub fn layer_norm(x: ArrayView2<f64>, p: &LayerNormParams) -> Array2<f64> {
    layer_norm_forward(&x.to_owned(), p).0
}

fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &NormCache,
    p: &LayerNormParams,
    grad: &mut LayerNormParams,
) -> Array2<f64> {
    let d = dy.ncols() as f64;
    grad.gain += &(dy * &cache.xhat).sum_axis(Axis(0));
    grad.bias += &dy.sum_axis(Axis(0));
    let mut dx = Array2::zeros(dy.dim());
    for (i, (dy_row, xhat_row)) in dy.rows().into_iter().zip(cache.xhat.rows()).enumerate() {
        let dxhat: Vec<f64> = dy_row.iter().zip(p.gain.iter()).map(|(a, g)| a * g).collect();
        let mean_d = dxhat.iter().sum::<f64>() / d;
        let mean_dx = dxhat.iter().zip(xhat_row.iter()).map(|(a, b)| a * b).sum::<f64>() / d;
        let inv = cache.inv_std[i];
        for ((o, &g), &xh) in dx.row_mut(i).iter_mut().zip(&dxhat).zip(xhat_row.iter()) {
            *o = inv * (g - mean_d - xh * mean_dx);
        }
    }
    dx
}

fn cmp_rows(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Reorders runs of equal weight in `order` (already sorted by weight) by the
/// matching rows of the row-major `values` (width `width`).
fn break_ties_by_row(order: &mut [usize], weights: &[f64], values: &[f64], width: usize) {
    let row = |j: usize| &values[j * width..(j + 1) * width];
    let mut start = 0;
    while start < order.len() {
        let w = weights[order[start]];
        let run = order[start..]
            .iter()
            .take_while(|&&j| weights[j].total_cmp(&w).is_eq())
            .count();
        if run > 1 {
            order[start..start + run].sort_unstable_by(|&a, &b| cmp_rows(row(a), row(b)));
        }
        start += run;
    }
}

/// Indices sorted by `keys`, ties broken by the matching rows of `values`.
/// Indices that still tie contribute identical terms to any sum over them.
fn canonical_order(keys: &[f64], values: Option<(&[f64], usize)>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_unstable_by(|&a, &b| keys[a].total_cmp(&keys[b]));
    if let Some((values, width)) = values {
        break_ties_by_row(&mut order, keys, values, width);
    }
    order
}

/// Softmax with max subtraction; the normalizer is summed in ascending
/// score order. Returns that order.
fn softmax_in_place(scores: &mut [f64]) -> Vec<usize> {
    let order = canonical_order(scores, None);
    let max = scores[*order.last().unwrap()];
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
    }
    let denom = order.iter().fold(0.0, |acc, &j| acc + scores[j]);
    for s in scores.iter_mut() {
        *s /= denom;
    }
    order
}

/// Softmax over each row, with max subtraction.
pub fn softmax_rows(scores: ArrayView2<f64>) -> Array2<f64> {
    let mut out = scores.as_standard_layout().into_owned();
    let cols = out.ncols();
    if cols > 0 {
        for row in out.as_slice_mut().unwrap().chunks_mut(cols) {
            softmax_in_place(row);
        }
    }
    out
}

fn head_cols(h: usize, dh: usize) -> Range<usize> {
    h * dh..(h + 1) * dh
}

/// Columns of head `h` as a standard-layout L×dh matrix.
fn head_block(m: &Array2<f64>, h: usize, dh: usize) -> Array2<f64> {
    m.slice(s![.., head_cols(h, dh)]).as_standard_layout().into_owned()
}

/// `Σ_j weights_j · values_j` over `order`.
fn weighted_sum(order: &[usize], weights: &[f64], values: &[f64], out: &mut [f64]) {
    let width = out.len();
    out.fill(0.0);
    for &j in order {
        let a = weights[j];
        for (o, v) in out.iter_mut().zip(&values[j * width..(j + 1) * width]) {
            *o += a * v;
        }
    }
}

/// Scaled dot-product scores of one head (L×L).
fn head_scores(q: &Array2<f64>, k: &Array2<f64>, h: usize, dh: usize) -> Array2<f64> {
    let mut scores = matmul_nt(q.slice(s![.., head_cols(h, dh)]), k.slice(s![.., head_cols(h, dh)]));
    let scale = 1.0 / (dh as f64).sqrt();
    scores.mapv_inplace(|v| v * scale);
    scores
}

/// Per-head attention weights from projected queries and keys (both L×d).
fn head_attention(q: &Array2<f64>, k: &Array2<f64>, num_heads: usize) -> Vec<Array2<f64>> {
    let dh = q.ncols() / num_heads;
    (0..num_heads)
        .map(|h| {
            let mut alpha = head_scores(q, k, h, dh);
            for row in alpha.as_slice_mut().unwrap().chunks_mut(q.nrows().max(1)) {
                softmax_in_place(row);
            }
            alpha
        })
        .collect()
}

/// `Σ_j α_lj · values_j` per head, heads concatenated (L×d).
fn mix_heads(alphas: &[Array2<f64>], values: &Array2<f64>) -> Array2<f64> {
    let (l, d) = values.dim();
    let dh = d / alphas.len();
    let mut out = Array2::zeros((l, d));
    let mut acc = vec![0.0; dh];
    for (h, alpha) in alphas.iter().enumerate() {
        let vh = head_block(values, h, dh);
        let vh = vh.as_slice().unwrap();
        for i in 0..l {
            let weights = alpha.row(i);
            let weights = weights.as_slice().unwrap();
            let order = canonical_order(weights, Some((vh, dh)));
            weighted_sum(&order, weights, vh, &mut acc);
            out.slice_mut(s![i, head_cols(h, dh)])
                .assign(&ArrayView1::from(&acc[..]));
        }
    }
    out
}

/// [`head_attention`] followed by [`mix_heads`], sorting each row once. The
/// ascending-score order is also ascending in weight, so only runs of equal
/// weight need reordering by value row. Results are bit-identical to the
/// separate functions.
fn attend(q: &Array2<f64>, k: &Array2<f64>, values: &Array2<f64>, num_heads: usize) -> (Vec<Array2<f64>>, Array2<f64>) {
    let (l, d) = values.dim();
    let dh = d / num_heads;
    let mut out = Array2::zeros((l, d));
    let mut acc = vec![0.0; dh];
    let alphas = (0..num_heads)
        .map(|h| {
            let mut alpha = head_scores(q, k, h, dh);
            let vh = head_block(values, h, dh);
            let vh = vh.as_slice().unwrap();
            for (i, row) in alpha.as_slice_mut().unwrap().chunks_mut(l.max(1)).enumerate() {
                let mut order = softmax_in_place(row);
                if !order.windows(2).all(|w| row[w[0]] <= row[w[1]]) {
                    order.sort_unstable_by(|&a, &b| row[a].total_cmp(&row[b]));
                }
                break_ties_by_row(&mut order, row, vh, dh);
                weighted_sum(&order, row, vh, &mut acc);
                out.slice_mut(s![i, head_cols(h, dh)])
                    .assign(&ArrayView1::from(&acc[..]));
            }
            alpha
        })
        .collect();
    (alphas, out)
}

/// Attention weights of every head: `softmax_j((v_l·W^q_h)·(v_j·W^u_h) / √d_h)`
/// over all labels `j`, including `j = l`.
pub fn attention_weights(
    nodes: ArrayView2<f64>,
    query: ArrayView2<f64>,
    key: ArrayView2<f64>,
    num_heads: usize,
) -> Vec<Array2<f64>> {
    let q = matmul(nodes, query);
    let k = matmul(nodes, key);
    head_attention(&q, &k, num_heads)
}

/// Residual messages `m_l = v_l + concat_h(Σ_j α^h_lj · (v_j·W^v)_h) · W^out`.
pub fn message_pass(
    nodes: ArrayView2<f64>,
    alphas: &[Array2<f64>],
    value: ArrayView2<f64>,
    out: ArrayView2<f64>,
) -> Array2<f64> {
    let vv = matmul(nodes, value);
    let concat = mix_heads(alphas, &vv);
    &nodes + &matmul(concat.view(), out)
}

struct BlockCache {
    latent: Option<NormCache>,
    attn_in: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    vv: Array2<f64>,
    alphas: Vec<Array2<f64>>,
    concat: Array2<f64>,
    attn_norm: NormCache,
    ff_in: Array2<f64>,
    ff_pre: Array2<f64>,
    ff_act: Array2<f64>,
    ff_norm: NormCache,
}

struct DecoderCache {
    blocks: Vec<BlockCache>,
    nodes: Array2<f64>,
    probs: Array1<f64>,
    sublayers: usize,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn decoder_cached(z: &Array1<f64>, emb: ArrayView2<f64>, params: &ModelParams, config: &ModelConfig) -> DecoderCache {
    let mut nodes = emb.to_owned();
    let mut blocks = Vec::with_capacity(params.blocks.len());
    let mut sublayers = 0;
    for b in &params.blocks {
        let latent = b.latent.as_ref().map(|lp| {
            let zv = z.dot(&lp.value);
            let (y, cache) = layer_norm_forward(&(&nodes + &zv), &lp.norm);
            nodes = y;
            cache
        });

        let q = matmul(nodes.view(), b.query.view());
        let k = matmul(nodes.view(), b.key.view());
        let vv = matmul(nodes.view(), b.value.view());
        let (alphas, concat) = attend(&q, &k, &vv, config.num_heads);
        let m = &nodes + &matmul(concat.view(), b.attn_out.view());
        let (ff_in, attn_norm) = layer_norm_forward(&m, &b.attn_norm);
        sublayers += 1;

        let ff_pre = matmul(ff_in.view(), b.ff_w1.view()) + &b.ff_b1;
        let ff_act = ff_pre.mapv(|v| v.max(0.0));
        let u = matmul(ff_act.view(), b.ff_w2.view()) + &b.ff_b2;
        let (out, ff_norm) = layer_norm_forward(&(&ff_in + &u), &b.ff_norm);
        sublayers += 1;

        blocks.push(BlockCache {
            latent,
            attn_in: std::mem::replace(&mut nodes, out),
            q,
            k,
            vv,
            alphas,
            concat,
            attn_norm,
            ff_in,
            ff_pre,
            ff_act,
            ff_norm,
        });
    }
    let probs = Array1::from_iter(
        nodes
            .rows()
            .into_iter()
            .zip(params.readout.rows())
            .map(|(v, w)| sigmoid(dot(v.as_slice().unwrap(), w.as_slice().unwrap()))),
    );
    DecoderCache {
        blocks,
        nodes,
        probs,
        sublayers,
    }
}

/// Decoder result for one latent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderOutput {
    /// Per-label probabilities.
    pub probabilities: Array1<f64>,
    /// Attention and feedforward sublayers actually executed (2T).
    pub sublayers_executed: usize,
}

/// Runs the decoder from a latent vector.
pub fn decoder_forward(
    z: ArrayView1<f64>,
    emb: &LabelEmbeddings,
    params: &ModelParams,
    config: &ModelConfig,
) -> DecoderOutput {
    let cache = decoder_cached(&z.to_owned(), emb.current.view(), params, config);
    DecoderOutput {
        probabilities: cache.probs,
        sublayers_executed: cache.sublayers,
    }
}

/// Probabilities for one sparse row.
pub fn predict_one(row: &SparseRow, emb: &LabelEmbeddings, params: &ModelParams, config: &ModelConfig) -> Array1<f64> {
    let z = super::encode(row, &params.encoder);
    decoder_cached(&z, emb.current.view(), params, config).probs
}

/// N×L probabilities for every row of `dataset`.
pub fn predict(
    exec: Execution,
    dataset: &MultiLabelDataset,
    emb: &LabelEmbeddings,
    params: &ModelParams,
    config: &ModelConfig,
) -> Array2<f64> {
    let rows = par::map_indexed(exec, dataset.num_samples(), |i| {
        predict_one(&dataset.features[i], emb, params, config)
    });
    let mut out = Array2::zeros((rows.len(), config.num_labels));
    for (i, r) in rows.into_iter().enumerate() {
        out.row_mut(i).assign(&r);
    }
    out
}

fn outer_add(target: &mut Array2<f64>, a: &Array1<f64>, b: &Array1<f64>) {
    for (mut row, &av) in target.rows_mut().into_iter().zip(a.iter()) {
        if av != 0.0 {
            row.scaled_add(av, b);
        }
    }
}

/// Backpropagates `dprobs` (d objective / d probability) through one sample,
/// adding into `grads`.
#[allow(clippy::too_many_arguments, clippy::needless_range_loop)]
fn backward_sample(
    row: &SparseRow,
    hidden_pre: &Array1<f64>,
    hidden: &Array1<f64>,
    z: &Array1<f64>,
    cache: &DecoderCache,
    dprobs: &[f64],
    params: &ModelParams,
    config: &ModelConfig,
    grads: &mut Gradients,
) {
    let l = config.num_labels;
    let d = config.label_dim;
    let dh = config.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    // Readout and sigmoid.
    let mut dnodes = Array2::zeros((l, d));
    for i in 0..l {
        let p = cache.probs[i];
        let dlogit = dprobs[i] * p * (1.0 - p);
        if dlogit == 0.0 {
            continue;
        }
        grads.params.readout.row_mut(i).scaled_add(dlogit, &cache.nodes.row(i));
        dnodes.row_mut(i).scaled_add(dlogit, &params.readout.row(i));
    }

    let mut dz = Array1::<f64>::zeros(d);
    for (t, (b, c)) in params.blocks.iter().zip(&cache.blocks).enumerate().rev() {
        let g = &mut grads.params.blocks[t];

        // Feedforward sublayer: out = LN(ff_in + relu(ff_in·W1 + b1)·W2 + b2).
        let dsum = layer_norm_backward(&dnodes, &c.ff_norm, &b.ff_norm, &mut g.ff_norm);
        g.ff_b2 += &dsum.sum_axis(Axis(0));
        g.ff_w2 += &matmul_tn(c.ff_act.view(), dsum.view());
        let mut dpre = matmul_nt(dsum.view(), b.ff_w2.view());
        dpre.zip_mut_with(&c.ff_pre, |g, &p| {
            if p <= 0.0 {
                *g = 0.0
            }
        });
        g.ff_b1 += &dpre.sum_axis(Axis(0));
        g.ff_w1 += &matmul_tn(c.ff_in.view(), dpre.view());
        let dff_in = dsum + matmul_nt(dpre.view(), b.ff_w1.view());

        // Attention sublayer: ff_in = LN(attn_in + concat·W_out).
        let dm = layer_norm_backward(&dff_in, &c.attn_norm, &b.attn_norm, &mut g.attn_norm);
        g.attn_out += &matmul_tn(c.concat.view(), dm.view());
        let dconcat = matmul_nt(dm.view(), b.attn_out.view());
        let mut dq = Array2::<f64>::zeros((l, d));
        let mut dk = Array2::<f64>::zeros((l, d));
        let mut dvv = Array2::<f64>::zeros((l, d));
        for (h, alpha) in c.alphas.iter().enumerate() {
            let cols = head_cols(h, dh);
            let d_out = dconcat.slice(s![.., cols.clone()]);
            let vh = c.vv.slice(s![.., cols.clone()]);
            let dalpha = matmul_nt(d_out, vh);
            dvv.slice_mut(s![.., cols.clone()])
                .assign(&matmul_tn(alpha.view(), d_out));
            let mut dscore = Array2::zeros((l, l));
            for i in 0..l {
                let a = alpha.row(i);
                let da = dalpha.row(i);
                let inner = dot(a.as_slice().unwrap(), da.as_slice().unwrap());
                for j in 0..l {
                    dscore[[i, j]] = a[j] * (da[j] - inner) * scale;
                }
            }
            let qh = c.q.slice(s![.., cols.clone()]);
            let kh = c.k.slice(s![.., cols.clone()]);
            dq.slice_mut(s![.., cols.clone()]).assign(&matmul(dscore.view(), kh));
            dk.slice_mut(s![.., cols]).assign(&matmul_tn(dscore.view(), qh));
        }
        g.query += &matmul_tn(c.attn_in.view(), dq.view());
        g.key += &matmul_tn(c.attn_in.view(), dk.view());
        g.value += &matmul_tn(c.attn_in.view(), dvv.view());
        let dattn_in = dm
            + matmul_nt(dq.view(), b.query.view())
            + matmul_nt(dk.view(), b.key.view())
            + matmul_nt(dvv.view(), b.value.view());

        // Latent update: attn_in = LN(prev + z·W_z).
        dnodes = match (&b.latent, &c.latent) {
            (Some(lp), Some(lc)) => {
                let gl = g.latent.as_mut().expect("gradient layout mirrors parameters");
                let dx = layer_norm_backward(&dattn_in, lc, &lp.norm, &mut gl.norm);
                let dzv = dx.sum_axis(Axis(0));
                outer_add(&mut gl.value, z, &dzv);
                dz += &lp.value.dot(&dzv);
                dx
            }
            _ => dattn_in,
        };
    }
    grads.label_embeddings += &dnodes;

    // Encoder.
    let enc = &params.encoder;
    let ge = &mut grads.params.encoder;
    ge.b2 += &dz;
    outer_add(&mut ge.w2, hidden, &dz);
    let mut dpre = enc.w2.dot(&dz);
    dpre.zip_mut_with(hidden_pre, |g, &p| {
        if p <= 0.0 {
            *g = 0.0
        }
    });
    ge.b1 += &dpre;
    for (k, x) in row.iter() {
        ge.w1.row_mut(k).scaled_add(x, &dpre);
    }
}

/// Forward-only value of the regularized objective over `rows`. Uses the same
/// arithmetic as [`batch_forward_backward`].
pub fn batch_loss(
    dataset: &MultiLabelDataset,
    rows: &[usize],
    emb: &LabelEmbeddings,
    params: &ModelParams,
    config: &ModelConfig,
    spec: &LossSpec,
) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let mut asl_sum = 0.0;
    for &r in rows {
        let probs = predict_one(&dataset.features[r], emb, params, config);
        asl_sum += asl_with_grad(dataset.labels.row(r), probs.view(), spec)?.0;
    }
    let (regularizer, _) = regularizer_term(emb, spec.lambda);
    Ok(asl_sum / rows.len() as f64 + spec.lambda * regularizer)
}

/// Objective value and exact gradients for one mini-batch.
#[derive(Debug, Clone)]
pub struct BatchGradients {
    /// `mean ASL + λ · regularizer`.
    pub loss: f64,
    pub mean_asl: f64,
    /// Unweighted anchor regularizer.
    pub regularizer: f64,
    pub grads: Gradients,
}

/// [`batch_forward_backward`] with the default execution strategy.
pub fn forward_backward(
    dataset: &MultiLabelDataset,
    rows: &[usize],
    emb: &LabelEmbeddings,
    params: &ModelParams,
    config: &ModelConfig,
    spec: &LossSpec,
) -> Result<BatchGradients> {
    batch_forward_backward(Execution::default(), dataset, rows, emb, params, config, spec)
}

/// Loss and gradients of the regularized objective over the samples `rows`.
/// Per-sample gradients are summed over fixed chunks in sample order, so the
/// result is bit-identical under every execution strategy.
pub fn batch_forward_backward(
    exec: Execution,
    dataset: &MultiLabelDataset,
    rows: &[usize],
    emb: &LabelEmbeddings,
    params: &ModelParams,
    config: &ModelConfig,
    spec: &LossSpec,
) -> Result<BatchGradients> {
    if rows.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    if dataset.num_labels() != config.num_labels || emb.num_labels() != config.num_labels {
        return Err(Error::Data(format!(
            "model has {} labels, dataset {}, embeddings {}",
            config.num_labels,
            dataset.num_labels(),
            emb.num_labels()
        )));
    }
    if emb.dim() != config.label_dim {
        return Err(Error::Data(format!(
            "label embeddings have width {}, model expects {}",
            emb.dim(),
            config.label_dim
        )));
    }
    if dataset.num_features > config.num_features {
        return Err(Error::Data(format!(
            "dataset has {} features, model accepts {}",
            dataset.num_features, config.num_features
        )));
    }
    let n = rows.len() as f64;
    let chunks = par::chunked_fold(
        exec,
        rows.len(),
        GRADIENT_CHUNK,
        || (0.0, Gradients::zeros(params, config.num_labels, config.label_dim)),
        |(asl_sum, grads), i| {
            let r = rows[i];
            let row = &dataset.features[r];
            let hidden_pre = hidden_preactivation(row, &params.encoder);
            let hidden = relu(&hidden_pre);
            let z = hidden.dot(&params.encoder.w2) + &params.encoder.b2;
            let cache = decoder_cached(&z, emb.current.view(), params, config);
            let (value, mut dprobs) =
                asl_with_grad(dataset.labels.row(r), cache.probs.view(), spec).expect("label width checked above");
            dprobs.iter_mut().for_each(|g| *g /= n);
            *asl_sum += value;
            backward_sample(row, &hidden_pre, &hidden, &z, &cache, &dprobs, params, config, grads);
        },
    );

    let mut chunks = chunks.into_iter();
    let (mut asl_sum, mut grads) = chunks.next().expect("at least one chunk");
    for (s, g) in chunks {
        asl_sum += s;
        grads.add_assign(&g);
    }
    let mean_asl = asl_sum / n;
    let (regularizer, reg_grad) = regularizer_term(emb, spec.lambda);
    grads.label_embeddings += &reg_grad;
    let loss = mean_asl + spec.lambda * regularizer;
    if !loss.is_finite() {
        return Err(Error::NonFinite { what: "loss".into() });
    }
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::NonFinite {
            what: format!("gradient of {name}"),
        });
    }
    Ok(BatchGradients {
        loss,
        mean_asl,
        regularizer,
        grads,
    })
}
