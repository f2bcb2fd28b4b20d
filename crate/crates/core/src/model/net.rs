//! Forward and backward passes.
//!
//! The network is a pre-norm transformer: embeddings, `n_blocks` of
//! (layer norm → multi-head self-attention → residual, layer norm →
//! feed-forward with SiLU → residual), a final layer norm, and the head.
//! Sequences are processed one at a time in batch order and every reduction
//! runs in a fixed order, so results are bit-reproducible.
//!
//! Gradients are exact analytic derivatives of the mean cross-entropy loss.
//! When a mask is supplied, the loss is computed at the masked point
//! `W ⊙ M` and gradients are reported with respect to those effective
//! weights — masked coordinates receive the gradient they would see as free
//! parameters sitting at zero. Regimes decide whether to honor or discard
//! those components.

use std::borrow::Cow;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::prune::PruneMask;
use crate::tensor::{matmul, matmul_at, matmul_bt, Tensor};

use super::{Batch, GradSet, HeadKind, Labels, ModelConfig, ParamSet};

const LN_EPS: f64 = 1e-5;

/// Receives the input activations feeding each prunable weight matrix.
///
/// `rows` is `[valid_positions × fan_in]` for one sequence; a full pass over
/// a batch calls `record` once per (sequence, prunable weight).
pub trait ActSink {
    fn record(&mut self, name: &str, rows: &Tensor);
}

/// Materializes every recorded activation row. Memory-hungry; used by tests
/// and small calibration oracles.
#[derive(Debug, Default)]
pub struct RawCapture {
    rows: IndexMap<String, (usize, Vec<f64>)>,
}

impl RawCapture {
    pub fn new() -> Self {
        Self::default()
    }

    /// Concatenated `[total_rows × fan_in]` tensor per weight name.
    pub fn into_tensors(self) -> IndexMap<String, Tensor> {
        self.rows
            .into_iter()
            .map(|(name, (cols, data))| {
                let rows = data.len() / cols;
                (name, Tensor::new(vec![rows, cols], data).unwrap())
            })
            .collect()
    }
}

impl ActSink for RawCapture {
    fn record(&mut self, name: &str, rows: &Tensor) {
        let (_, c) = rows.dims2().unwrap();
        let entry = self
            .rows
            .entry(name.to_string())
            .or_insert_with(|| (c, Vec::new()));
        entry.1.extend_from_slice(rows.data());
    }
}

/// Streaming second-moment statistics per prunable weight: per-column sum of
/// squares always, and the full Gram matrix `XᵀX` when requested.
#[derive(Debug)]
pub struct CalibStats {
    want_gram: bool,
    entries: IndexMap<String, LayerStats>,
}

#[derive(Debug)]
pub struct LayerStats {
    pub rows_seen: usize,
    pub col_sq_sum: Vec<f64>,
    pub gram: Option<Tensor>,
}

impl CalibStats {
    pub fn new(want_gram: bool) -> Self {
        Self {
            want_gram,
            entries: IndexMap::new(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&LayerStats> {
        self.entries.get(name)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl ActSink for CalibStats {
    fn record(&mut self, name: &str, rows: &Tensor) {
        let (r, c) = rows.dims2().unwrap();
        let want_gram = self.want_gram;
        let stats = self.entries.entry(name.to_string()).or_insert_with(|| LayerStats {
            rows_seen: 0,
            col_sq_sum: vec![0.0; c],
            gram: want_gram.then(|| Tensor::zeros(vec![c, c])),
        });
        stats.rows_seen += r;
        for i in 0..r {
            let x = rows.row(i);
            for (s, &v) in stats.col_sq_sum.iter_mut().zip(x) {
                *s += v * v;
            }
            if let Some(g) = &mut stats.gram {
                let gd = g.data_mut();
                for j in 0..c {
                    let xj = x[j];
                    let grow = &mut gd[j * c..(j + 1) * c];
                    for (gv, &xk) in grow.iter_mut().zip(x) {
                        *gv += xj * xk;
                    }
                }
            }
        }
    }
}

/// Mean cross-entropy loss and logits.
///
/// Classification heads return `[batch, classes]` logits; token-prediction
/// heads return `[batch, seq, vocab]` with padded positions left at zero.
/// With a mask, every pruned weight contributes exactly as zero:
/// `forward(p, b, m) == forward(apply_mask(p, m), b, None)` bit-exactly.
pub fn forward(
    params: &ParamSet,
    cfg: &ModelConfig,
    batch: &Batch,
    mask: Option<&PruneMask>,
) -> Result<(f64, Tensor)> {
    run(params, cfg, batch, mask, None, None)
}

/// Forward pass that also streams layer inputs into `sink`.
pub fn forward_collect(
    params: &ParamSet,
    cfg: &ModelConfig,
    batch: &Batch,
    mask: Option<&PruneMask>,
    sink: &mut dyn ActSink,
) -> Result<(f64, Tensor)> {
    run(params, cfg, batch, mask, None, Some(sink))
}

/// Exact gradients of the batch loss for every parameter.
pub fn backward(
    params: &ParamSet,
    cfg: &ModelConfig,
    batch: &Batch,
    mask: Option<&PruneMask>,
) -> Result<GradSet> {
    let mut grads = GradSet::zeros_like(params);
    run(params, cfg, batch, mask, Some(&mut grads), None)?;
    Ok(grads)
}

/// Loss and gradients in one pass.
pub fn loss_and_grads(
    params: &ParamSet,
    cfg: &ModelConfig,
    batch: &Batch,
    mask: Option<&PruneMask>,
) -> Result<(f64, GradSet)> {
    let mut grads = GradSet::zeros_like(params);
    let (loss, _) = run(params, cfg, batch, mask, Some(&mut grads), None)?;
    Ok((loss, grads))
}

// ---------------------------------------------------------------------------
// weight resolution
// ---------------------------------------------------------------------------

struct BlockNames {
    ln1g: String,
    ln1b: String,
    wq: String,
    wk: String,
    wv: String,
    wo: String,
    ln2g: String,
    ln2b: String,
    ff1: String,
    ff2: String,
}

impl BlockNames {
    fn new(b: usize) -> Self {
        Self {
            ln1g: format!("block{b}.ln1.gamma"),
            ln1b: format!("block{b}.ln1.beta"),
            wq: format!("block{b}.attn.wq"),
            wk: format!("block{b}.attn.wk"),
            wv: format!("block{b}.attn.wv"),
            wo: format!("block{b}.attn.wo"),
            ln2g: format!("block{b}.ln2.gamma"),
            ln2b: format!("block{b}.ln2.beta"),
            ff1: format!("block{b}.ff1.weight"),
            ff2: format!("block{b}.ff2.weight"),
        }
    }
}

struct BlockW<'a> {
    names: BlockNames,
    ln1g: &'a Tensor,
    ln1b: &'a Tensor,
    wq: Cow<'a, Tensor>,
    wk: Cow<'a, Tensor>,
    wv: Cow<'a, Tensor>,
    wo: Cow<'a, Tensor>,
    ln2g: &'a Tensor,
    ln2b: &'a Tensor,
    ff1: Cow<'a, Tensor>,
    ff2: Cow<'a, Tensor>,
}

struct Resolved<'a> {
    wte: &'a Tensor,
    wpe: &'a Tensor,
    blocks: Vec<BlockW<'a>>,
    lnfg: &'a Tensor,
    lnfb: &'a Tensor,
    head_w: &'a Tensor,
    head_b: &'a Tensor,
}

fn effective<'a>(
    params: &'a ParamSet,
    mask: Option<&PruneMask>,
    name: &str,
) -> Result<Cow<'a, Tensor>> {
    let t = params.tensor(name)?;
    match mask.and_then(|m| m.entry(name)) {
        None => Ok(Cow::Borrowed(t)),
        Some(mt) => {
            if mt.shape() != t.shape() {
                return Err(Error::Alignment(format!(
                    "mask for {name:?} has shape {:?}, weights are {:?}",
                    mt.shape(),
                    t.shape()
                )));
            }
            let mut c = t.clone();
            for (v, &keep) in c.data_mut().iter_mut().zip(mt.keep()) {
                if keep == 0 {
                    *v = 0.0;
                }
            }
            Ok(Cow::Owned(c))
        }
    }
}

fn resolve<'a>(
    params: &'a ParamSet,
    cfg: &ModelConfig,
    mask: Option<&PruneMask>,
) -> Result<Resolved<'a>> {
    if let Some(m) = mask {
        m.check_alignment(params)?;
    }
    let mut blocks = Vec::with_capacity(cfg.n_blocks);
    for b in 0..cfg.n_blocks {
        let names = BlockNames::new(b);
        blocks.push(BlockW {
            ln1g: params.tensor(&names.ln1g)?,
            ln1b: params.tensor(&names.ln1b)?,
            wq: effective(params, mask, &names.wq)?,
            wk: effective(params, mask, &names.wk)?,
            wv: effective(params, mask, &names.wv)?,
            wo: effective(params, mask, &names.wo)?,
            ln2g: params.tensor(&names.ln2g)?,
            ln2b: params.tensor(&names.ln2b)?,
            ff1: effective(params, mask, &names.ff1)?,
            ff2: effective(params, mask, &names.ff2)?,
            names,
        });
    }
    Ok(Resolved {
        wte: params.tensor("embed.tok.weight")?,
        wpe: params.tensor("embed.pos.weight")?,
        blocks,
        lnfg: params.tensor("final_ln.gamma")?,
        lnfb: params.tensor("final_ln.beta")?,
        head_w: params.tensor("head.weight")?,
        head_b: params.tensor("head.bias")?,
    })
}

// ---------------------------------------------------------------------------
// primitive layers
// ---------------------------------------------------------------------------

struct LnCache {
    rstd: Vec<f64>,
    xhat: Tensor,
}

fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> (Tensor, LnCache) {
    let (rows, d) = x.dims2().unwrap();
    let mut y = Tensor::zeros(vec![rows, d]);
    let mut xhat = Tensor::zeros(vec![rows, d]);
    let mut rstd = Vec::with_capacity(rows);
    let g = gamma.data();
    let bt = beta.data();
    for i in 0..rows {
        let xr = x.row(i);
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd.push(rs);
        let xh = xhat.row_mut(i);
        for j in 0..d {
            xh[j] = (xr[j] - mean) * rs;
        }
        let yr = y.row_mut(i);
        for j in 0..d {
            yr[j] = g[j] * xh[j] + bt[j];
        }
    }
    (y, LnCache { rstd, xhat })
}

/// dL/dx for a layer norm, accumulating dγ and dβ.
fn layer_norm_backward(
    dy: &Tensor,
    cache: &LnCache,
    gamma: &Tensor,
    dgamma: &mut Tensor,
    dbeta: &mut Tensor,
) -> Tensor {
    let (rows, d) = dy.dims2().unwrap();
    let g = gamma.data();
    let mut dx = Tensor::zeros(vec![rows, d]);
    for i in 0..rows {
        let dyr = dy.row(i);
        let xh = cache.xhat.row(i);
        {
            let dg = dgamma.data_mut();
            let db = dbeta.data_mut();
            for j in 0..d {
                dg[j] += dyr[j] * xh[j];
                db[j] += dyr[j];
            }
        }
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for j in 0..d {
            let dxh = dyr[j] * g[j];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xh[j];
        }
        let m1 = sum_dxhat / d as f64;
        let m2 = sum_dxhat_xhat / d as f64;
        let dxr = dx.row_mut(i);
        for j in 0..d {
            let dxh = dyr[j] * g[j];
            dxr[j] = cache.rstd[i] * (dxh - m1 - xh[j] * m2);
        }
    }
    dx
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_prime(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

fn softmax_rows_in_place(t: &mut Tensor) {
    let (rows, _) = t.dims2().unwrap();
    for i in 0..rows {
        let r = t.row_mut(i);
        let max = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in r.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in r.iter_mut() {
            *v /= sum;
        }
    }
}

/// Softmax probabilities plus the log-sum-exp of each row, so callers can
/// take `lse − logit[label]` as an exactly-normalized negative log-likelihood.
fn softmax_rows(t: &Tensor) -> (Tensor, Vec<f64>) {
    let (rows, _) = t.dims2().unwrap();
    let mut probs = t.clone();
    let mut lse = Vec::with_capacity(rows);
    for i in 0..rows {
        let r = probs.row_mut(i);
        let max = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in r.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in r.iter_mut() {
            *v /= sum;
        }
        lse.push(max + sum.ln());
    }
    (probs, lse)
}

/// Copy columns `h*hd..(h+1)*hd` into a `[rows × hd]` tensor.
fn take_head(x: &Tensor, h: usize, hd: usize) -> Tensor {
    let (rows, _) = x.dims2().unwrap();
    let mut out = Tensor::zeros(vec![rows, hd]);
    for i in 0..rows {
        out.row_mut(i).copy_from_slice(&x.row(i)[h * hd..(h + 1) * hd]);
    }
    out
}

/// Add `src` into columns `h*hd..(h+1)*hd` of `dst`.
fn put_head(dst: &mut Tensor, src: &Tensor, h: usize, hd: usize) {
    let (rows, _) = src.dims2().unwrap();
    for i in 0..rows {
        let d = &mut dst.row_mut(i)[h * hd..(h + 1) * hd];
        for (dv, &sv) in d.iter_mut().zip(src.row(i)) {
            *dv += sv;
        }
    }
}

// ---------------------------------------------------------------------------
// per-sequence caches
// ---------------------------------------------------------------------------

struct BlockCache {
    ln1: LnCache,
    u: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    att: Vec<Tensor>,
    ctx: Tensor,
    ln2: LnCache,
    vn: Tensor,
    f1: Tensor,
    act: Tensor,
}

struct SeqCache {
    blocks: Vec<BlockCache>,
    lnf: LnCache,
    xf: Tensor,
    logits: Tensor,
    probs: Tensor,
    lse: Vec<f64>,
}

fn forward_seq(
    w: &Resolved,
    cfg: &ModelConfig,
    tokens: &[u32],
    len: usize,
    sink: &mut Option<&mut dyn ActSink>,
) -> SeqCache {
    let d = cfg.d_model;
    let hd = cfg.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();

    let mut x = Tensor::zeros(vec![len, d]);
    for i in 0..len {
        let te = w.wte.row(tokens[i] as usize);
        let pe = w.wpe.row(i);
        let xr = x.row_mut(i);
        for j in 0..d {
            xr[j] = te[j] + pe[j];
        }
    }

    let mut blocks = Vec::with_capacity(w.blocks.len());
    for bw in &w.blocks {
        let (u, ln1) = layer_norm(&x, bw.ln1g, bw.ln1b);
        if let Some(s) = sink {
            s.record(&bw.names.wq, &u);
            s.record(&bw.names.wk, &u);
            s.record(&bw.names.wv, &u);
        }
        let q = matmul_bt(&u, &bw.wq).unwrap();
        let k = matmul_bt(&u, &bw.wk).unwrap();
        let v = matmul_bt(&u, &bw.wv).unwrap();

        let mut ctx = Tensor::zeros(vec![len, d]);
        let mut att = Vec::with_capacity(cfg.n_heads);
        for h in 0..cfg.n_heads {
            let qh = take_head(&q, h, hd);
            let kh = take_head(&k, h, hd);
            let vh = take_head(&v, h, hd);
            let mut s = matmul_bt(&qh, &kh).unwrap().scale(scale);
            softmax_rows_in_place(&mut s);
            let ch = matmul(&s, &vh).unwrap();
            put_head(&mut ctx, &ch, h, hd);
            att.push(s);
        }
        if let Some(s) = sink {
            s.record(&bw.names.wo, &ctx);
        }
        let attn_out = matmul_bt(&ctx, &bw.wo).unwrap();
        let x_mid = x.add(&attn_out).unwrap();

        let (vn, ln2) = layer_norm(&x_mid, bw.ln2g, bw.ln2b);
        if let Some(s) = sink {
            s.record(&bw.names.ff1, &vn);
        }
        let f1 = matmul_bt(&vn, &bw.ff1).unwrap();
        let act = f1.map(silu);
        if let Some(s) = sink {
            s.record(&bw.names.ff2, &act);
        }
        let f2 = matmul_bt(&act, &bw.ff2).unwrap();
        let x_out = x_mid.add(&f2).unwrap();

        blocks.push(BlockCache {
            ln1,
            u,
            q,
            k,
            v,
            att,
            ctx,
            ln2,
            vn,
            f1,
            act,
        });
        x = x_out;
    }

    let (xf, lnf) = layer_norm(&x, w.lnfg, w.lnfb);

    let logits = match cfg.head {
        HeadKind::Classification { classes } => {
            let pooled = mean_rows(&xf);
            let pooled_t = Tensor::new(vec![1, xf.shape()[1]], pooled).unwrap();
            let mut logits = matmul_bt(&pooled_t, w.head_w).unwrap();
            for (l, &b) in logits.data_mut().iter_mut().zip(w.head_b.data()) {
                *l += b;
            }
            debug_assert_eq!(logits.len(), classes);
            logits
        }
        HeadKind::TokenPrediction => {
            let mut logits = matmul_bt(&xf, w.head_w).unwrap();
            for i in 0..len {
                let r = logits.row_mut(i);
                for (l, &b) in r.iter_mut().zip(w.head_b.data()) {
                    *l += b;
                }
            }
            logits
        }
    };
    let (probs, lse) = softmax_rows(&logits);

    SeqCache {
        blocks,
        lnf,
        xf,
        logits,
        probs,
        lse,
    }
}

fn mean_rows(x: &Tensor) -> Vec<f64> {
    let (rows, d) = x.dims2().unwrap();
    let mut out = vec![0.0; d];
    for i in 0..rows {
        for (o, &v) in out.iter_mut().zip(x.row(i)) {
            *o += v;
        }
    }
    for o in &mut out {
        *o /= rows as f64;
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn backward_seq(
    w: &Resolved,
    cfg: &ModelConfig,
    cache: &SeqCache,
    tokens: &[u32],
    len: usize,
    dlogits: &Tensor,
    grads: &mut GradSet,
) {
    let d = cfg.d_model;
    let hd = cfg.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();

    // head backward -> dxf
    let mut dxf = Tensor::zeros(vec![len, d]);
    match cfg.head {
        HeadKind::Classification { .. } => {
            // logits = pooled·Wᵀ + b, pooled = mean over rows of xf
            let pooled = mean_rows(&cache.xf);
            let pooled_t = Tensor::new(vec![1, d], pooled).unwrap();
            let dw = matmul_at(dlogits, &pooled_t).unwrap(); // [classes × d]
            add_into(grads.tensor_mut("head.weight"), &dw);
            add_slice(grads.tensor_mut("head.bias").data_mut(), dlogits.data());
            let dpooled = matmul(dlogits, w.head_w).unwrap(); // [1 × d]
            let inv = 1.0 / len as f64;
            for i in 0..len {
                let r = dxf.row_mut(i);
                for (rv, &pv) in r.iter_mut().zip(dpooled.data()) {
                    *rv = pv * inv;
                }
            }
        }
        HeadKind::TokenPrediction => {
            // dlogits is [len × vocab]
            let dw = matmul_at(dlogits, &cache.xf).unwrap(); // [vocab × d]
            add_into(grads.tensor_mut("head.weight"), &dw);
            let db = grads.tensor_mut("head.bias").data_mut();
            let (rows, vcb) = dlogits.dims2().unwrap();
            for i in 0..rows {
                let r = dlogits.row(i);
                for j in 0..vcb {
                    db[j] += r[j];
                }
            }
            dxf = matmul(dlogits, w.head_w).unwrap(); // [len × d]
        }
    }

    // final layer norm
    let (mut dgf, mut dbf) = (
        Tensor::zeros(vec![d]),
        Tensor::zeros(vec![d]),
    );
    let mut dx = layer_norm_backward(&dxf, &cache.lnf, w.lnfg, &mut dgf, &mut dbf);
    add_into(grads.tensor_mut("final_ln.gamma"), &dgf);
    add_into(grads.tensor_mut("final_ln.beta"), &dbf);

    // blocks in reverse
    for (bw, bc) in w.blocks.iter().zip(&cache.blocks).rev() {
        // x_out = x_mid + act·ff2ᵀ
        let dxout = dx;
        let dff2_out = &dxout;
        let dw2 = matmul_at(dff2_out, &bc.act).unwrap(); // [d × f]
        add_into(grads.tensor_mut(&bw.names.ff2), &dw2);
        let dact = matmul(dff2_out, &bw.ff2).unwrap(); // [len × f]
        let mut df1 = dact;
        for (g, &z) in df1.data_mut().iter_mut().zip(bc.f1.data()) {
            *g *= silu_prime(z);
        }
        let dw1 = matmul_at(&df1, &bc.vn).unwrap(); // [f × d]
        add_into(grads.tensor_mut(&bw.names.ff1), &dw1);
        let dvn = matmul(&df1, &bw.ff1).unwrap(); // [len × d]

        let (mut dg2, mut db2) = (Tensor::zeros(vec![d]), Tensor::zeros(vec![d]));
        let dx_mid_ln = layer_norm_backward(&dvn, &bc.ln2, bw.ln2g, &mut dg2, &mut db2);
        add_into(grads.tensor_mut(&bw.names.ln2g), &dg2);
        add_into(grads.tensor_mut(&bw.names.ln2b), &db2);
        let dx_mid = dxout.add(&dx_mid_ln).unwrap();

        // x_mid = x_in + ctx·woᵀ
        let dctx_out = &dx_mid;
        let dwo = matmul_at(dctx_out, &bc.ctx).unwrap();
        add_into(grads.tensor_mut(&bw.names.wo), &dwo);
        let dctx = matmul(dctx_out, &bw.wo).unwrap(); // [len × d]

        let mut dq = Tensor::zeros(vec![len, d]);
        let mut dk = Tensor::zeros(vec![len, d]);
        let mut dv = Tensor::zeros(vec![len, d]);
        for h in 0..cfg.n_heads {
            let dch = take_head(&dctx, h, hd);
            let vh = take_head(&bc.v, h, hd);
            let qh = take_head(&bc.q, h, hd);
            let kh = take_head(&bc.k, h, hd);
            let a = &bc.att[h];

            let da = matmul_bt(&dch, &vh).unwrap(); // [len × len]
            let dvh = matmul_at(a, &dch).unwrap(); // [len × hd]

            // softmax rows backward: ds = a ⊙ (da − rowsum(da ⊙ a))
            let mut ds = Tensor::zeros(vec![len, len]);
            for i in 0..len {
                let ar = a.row(i);
                let dar = da.row(i);
                let dot: f64 = ar.iter().zip(dar).map(|(&av, &dv)| av * dv).sum();
                let dsr = ds.row_mut(i);
                for j in 0..len {
                    dsr[j] = ar[j] * (dar[j] - dot);
                }
            }
            let dqh = matmul(&ds, &kh).unwrap().scale(scale);
            let dkh = matmul_at(&ds, &qh).unwrap().scale(scale);
            put_head(&mut dq, &dqh, h, hd);
            put_head(&mut dk, &dkh, h, hd);
            put_head(&mut dv, &dvh, h, hd);
        }

        let dwq = matmul_at(&dq, &bc.u).unwrap();
        let dwk = matmul_at(&dk, &bc.u).unwrap();
        let dwv = matmul_at(&dv, &bc.u).unwrap();
        add_into(grads.tensor_mut(&bw.names.wq), &dwq);
        add_into(grads.tensor_mut(&bw.names.wk), &dwk);
        add_into(grads.tensor_mut(&bw.names.wv), &dwv);

        let mut du = matmul(&dq, &bw.wq).unwrap();
        du = du.add(&matmul(&dk, &bw.wk).unwrap()).unwrap();
        du = du.add(&matmul(&dv, &bw.wv).unwrap()).unwrap();

        let (mut dg1, mut db1) = (Tensor::zeros(vec![d]), Tensor::zeros(vec![d]));
        let dx_in_ln = layer_norm_backward(&du, &bc.ln1, bw.ln1g, &mut dg1, &mut db1);
        add_into(grads.tensor_mut(&bw.names.ln1g), &dg1);
        add_into(grads.tensor_mut(&bw.names.ln1b), &db1);
        dx = dx_mid.add(&dx_in_ln).unwrap();
    }

    // embeddings
    {
        let dwte = grads.tensor_mut("embed.tok.weight");
        for i in 0..len {
            let row = dwte.row_mut(tokens[i] as usize);
            for (rv, &gv) in row.iter_mut().zip(dx.row(i)) {
                *rv += gv;
            }
        }
    }
    {
        let dwpe = grads.tensor_mut("embed.pos.weight");
        for i in 0..len {
            let row = dwpe.row_mut(i);
            for (rv, &gv) in row.iter_mut().zip(dx.row(i)) {
                *rv += gv;
            }
        }
    }
}

fn add_into(dst: &mut Tensor, src: &Tensor) {
    debug_assert_eq!(dst.shape(), src.shape());
    for (d, &s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d += s;
    }
}

fn add_slice(dst: &mut [f64], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

// ---------------------------------------------------------------------------
// batch driver
// ---------------------------------------------------------------------------

fn run(
    params: &ParamSet,
    cfg: &ModelConfig,
    batch: &Batch,
    mask: Option<&PruneMask>,
    mut grads: Option<&mut GradSet>,
    mut sink: Option<&mut dyn ActSink>,
) -> Result<(f64, Tensor)> {
    cfg.validate()?;
    batch.validate(cfg)?;
    let w = resolve(params, cfg, mask)?;
    let out_dim = cfg.head.output_dim(cfg.vocab_size);

    // denominator of the mean: sequences for classification, scored
    // positions for token prediction
    let denom = match &batch.labels {
        Labels::PerSequence(_) => batch.batch as f64,
        Labels::PerToken(ls) => {
            let mut n = 0usize;
            for s in 0..batch.batch {
                let len = batch.lengths[s];
                n += ls[s * batch.seq..s * batch.seq + len]
                    .iter()
                    .filter(|&&l| l >= 0)
                    .count();
            }
            if n == 0 {
                return Err(Error::Config("no scored positions inside valid lengths".into()));
            }
            n as f64
        }
    };

    let mut total_nll = 0.0;
    let mut logits_out = match cfg.head {
        HeadKind::Classification { .. } => Tensor::zeros(vec![batch.batch, out_dim]),
        HeadKind::TokenPrediction => Tensor::zeros(vec![batch.batch, batch.seq, out_dim]),
    };

    for s in 0..batch.batch {
        let len = batch.lengths[s];
        let tokens = &batch.seq_tokens(s)[..len];
        let cache = forward_seq(&w, cfg, tokens, len, &mut sink);

        let dlogits = match &batch.labels {
            Labels::PerSequence(ls) => {
                let label = ls[s];
                total_nll += cache.lse[0] - cache.logits.data()[label];
                let out = &mut logits_out.data_mut()[s * out_dim..(s + 1) * out_dim];
                out.copy_from_slice(cache.logits.data());
                grads.as_ref().map(|_| {
                    let mut dl = cache.probs.clone();
                    dl.data_mut()[label] -= 1.0;
                    dl.scale(1.0 / denom)
                })
            }
            Labels::PerToken(ls) => {
                let labels = &ls[s * batch.seq..s * batch.seq + len];
                let vocab = out_dim;
                for (i, &l) in labels.iter().enumerate() {
                    if l >= 0 {
                        total_nll += cache.lse[i] - cache.logits.row(i)[l as usize];
                    }
                }
                let base = s * batch.seq * vocab;
                for i in 0..len {
                    let out = &mut logits_out.data_mut()[base + i * vocab..base + (i + 1) * vocab];
                    out.copy_from_slice(cache.logits.row(i));
                }
                grads.as_ref().map(|_| {
                    let mut dl = Tensor::zeros(vec![len, vocab]);
                    for (i, &l) in labels.iter().enumerate() {
                        if l >= 0 {
                            let r = dl.row_mut(i);
                            r.copy_from_slice(cache.probs.row(i));
                            r[l as usize] -= 1.0;
                            for v in r.iter_mut() {
                                *v /= denom;
                            }
                        }
                    }
                    dl
                })
            }
        };

        if let (Some(g), Some(dl)) = (grads.as_deref_mut(), dlogits) {
            backward_seq(&w, cfg, &cache, tokens, len, &dl, g);
        }
    }

    let loss = total_nll / denom;
    if !loss.is_finite() {
        return Err(Error::Numeric("non-finite loss".into()));
    }
    Ok((loss, logits_out))
}
