//! A small conditional epsilon-predictor.
//!
//! ```text
//! x_t ─ conv3x3 ─ +temb ─ silu ─ h1
//! h1  ─ cross-attn @ 1/4 res (block D) ─ h2 = h1 + up(attn)
//! h2  ─ cross-attn @ 1/8 res (block M) ─ h3 = h2 + up(attn)
//! h3  ─ conv3x3 ─ +temb ─ silu ─ conv3x3 ─ N
//! eps_hat = sqrt(1 - alphabar) x_t + sqrt(alphabar) N
//! ```
//!
//! Convolutions are per frame with zero padding. Each cross-attention block
//! pools its input to the block resolution, forms queries from the pooled
//! features plus a learned per-cell (and per-frame) position embedding, and
//! attends over the prompt tokens and a learned null token.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Dims, LatentTensor};
use crate::toy::scene::{ToyPrompt, NULL_TOKEN, PROMPT_LEN, VOCAB_SIZE};

/// Tokens attended by every cross-attention block: the prompt plus null.
pub const N_TOKENS: usize = PROMPT_LEN + 1;
pub const DOWN_POOL: usize = 4;
pub const MID_POOL: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub dims: Dims,
    pub hidden: usize,
    pub attn_dim: usize,
    pub heads: usize,
    pub embed_dim: usize,
    pub time_dim: usize,
}

impl ModelConfig {
    pub fn new(dims: Dims) -> Self {
        ModelConfig {
            dims,
            hidden: 16,
            attn_dim: 8,
            heads: 2,
            embed_dim: 16,
            time_dim: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims;
        if d.w % MID_POOL != 0 || d.h % MID_POOL != 0 {
            return Err(Error::InvalidParam(format!(
                "toy denoiser needs W and H divisible by {MID_POOL}, got {d}"
            )));
        }
        if self.heads == 0
            || self.attn_dim % self.heads != 0
            || self.hidden % self.heads != 0
            || self.time_dim % 2 != 0
        {
            return Err(Error::InvalidParam(format!(
                "inconsistent model widths {self:?}"
            )));
        }
        Ok(())
    }

    fn block_cells(&self, pool: usize) -> usize {
        (self.dims.w / pool) * (self.dims.h / pool) * self.dims.l
    }
}

/// Parameters of one cross-attention block.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnParams {
    /// `[hidden][attn]`
    pub wq: Vec<f32>,
    /// `[cell][attn]`
    pub pos: Vec<f32>,
    /// `[embed][attn]`
    pub wk: Vec<f32>,
    /// `[embed][hidden]`
    pub wv: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    /// `[ky][kx][in][out]`
    pub conv1: Vec<f32>,
    pub b1: Vec<f32>,
    /// `[time][hidden]`
    pub wt1: Vec<f32>,
    pub down: AttnParams,
    pub mid: AttnParams,
    pub conv2: Vec<f32>,
    pub b2: Vec<f32>,
    pub wt2: Vec<f32>,
    pub conv3: Vec<f32>,
    pub b3: Vec<f32>,
    /// `[vocab][embed]`
    pub emb: Vec<f32>,
}

impl Params {
    pub(crate) fn zeros(cfg: &ModelConfig) -> Self {
        let (c, d, a, e, t) = (
            cfg.dims.c,
            cfg.hidden,
            cfg.attn_dim,
            cfg.embed_dim,
            cfg.time_dim,
        );
        let attn = |cells: usize| AttnParams {
            wq: vec![0.0; d * a],
            pos: vec![0.0; cells * a],
            wk: vec![0.0; e * a],
            wv: vec![0.0; e * d],
        };
        Params {
            conv1: vec![0.0; 9 * c * d],
            b1: vec![0.0; d],
            wt1: vec![0.0; t * d],
            down: attn(cfg.block_cells(DOWN_POOL)),
            mid: attn(cfg.block_cells(MID_POOL)),
            conv2: vec![0.0; 9 * d * d],
            b2: vec![0.0; d],
            wt2: vec![0.0; t * d],
            conv3: vec![0.0; 9 * d * c],
            b3: vec![0.0; c],
            emb: vec![0.0; VOCAB_SIZE * e],
        }
    }

    fn init(cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let mut p = Params::zeros(cfg);
        let (c, d, a, e, t) = (
            cfg.dims.c,
            cfg.hidden,
            cfg.attn_dim,
            cfg.embed_dim,
            cfg.time_dim,
        );
        let fill = |v: &mut Vec<f32>, std: f64, rng: &mut Rng| {
            rng.fill_gaussian(v);
            for x in v.iter_mut() {
                *x *= std as f32;
            }
        };
        fill(&mut p.conv1, (1.0 / (9 * c) as f64).sqrt(), rng);
        fill(&mut p.wt1, (1.0 / t as f64).sqrt() * 0.5, rng);
        for blk in [&mut p.down, &mut p.mid] {
            fill(&mut blk.wq, (1.0 / d as f64).sqrt(), rng);
            fill(&mut blk.pos, 0.5, rng);
            fill(&mut blk.wk, (1.0 / e as f64).sqrt(), rng);
            fill(&mut blk.wv, (1.0 / e as f64).sqrt() * 0.5, rng);
        }
        fill(&mut p.conv2, (1.0 / (9 * d) as f64).sqrt(), rng);
        fill(&mut p.wt2, (1.0 / t as f64).sqrt() * 0.5, rng);
        fill(&mut p.conv3, 0.01, rng);
        fill(&mut p.emb, 1.0, rng);
        let _ = a;
        p
    }

    /// Named views in checkpoint order.
    pub fn named(&self) -> Vec<(&'static str, &Vec<f32>)> {
        vec![
            ("conv1", &self.conv1),
            ("b1", &self.b1),
            ("wt1", &self.wt1),
            ("down.wq", &self.down.wq),
            ("down.pos", &self.down.pos),
            ("down.wk", &self.down.wk),
            ("down.wv", &self.down.wv),
            ("mid.wq", &self.mid.wq),
            ("mid.pos", &self.mid.pos),
            ("mid.wk", &self.mid.wk),
            ("mid.wv", &self.mid.wv),
            ("conv2", &self.conv2),
            ("b2", &self.b2),
            ("wt2", &self.wt2),
            ("conv3", &self.conv3),
            ("b3", &self.b3),
            ("emb", &self.emb),
        ]
    }

    pub fn named_mut(&mut self) -> Vec<(&'static str, &mut Vec<f32>)> {
        vec![
            ("conv1", &mut self.conv1),
            ("b1", &mut self.b1),
            ("wt1", &mut self.wt1),
            ("down.wq", &mut self.down.wq),
            ("down.pos", &mut self.down.pos),
            ("down.wk", &mut self.down.wk),
            ("down.wv", &mut self.down.wv),
            ("mid.wq", &mut self.mid.wq),
            ("mid.pos", &mut self.mid.pos),
            ("mid.wk", &mut self.mid.wk),
            ("mid.wv", &mut self.mid.wv),
            ("conv2", &mut self.conv2),
            ("b2", &mut self.b2),
            ("wt2", &mut self.wt2),
            ("conv3", &mut self.conv3),
            ("b3", &mut self.b3),
            ("emb", &mut self.emb),
        ]
    }

    pub fn zeros_like(&self) -> Params {
        let mut p = self.clone();
        for (_, v) in p.named_mut() {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
        p
    }

    pub fn count(&self) -> usize {
        self.named().iter().map(|(_, v)| v.len()).sum()
    }

    /// `self += other`, field by field.
    pub fn add_assign(&mut self, other: &Params) {
        for ((_, a), (_, b)) in self.named_mut().into_iter().zip(other.named()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

/// The trained (or freshly initialized) denoiser.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDenoiser {
    pub config: ModelConfig,
    pub params: Params,
    /// Loss on the fixed evaluation batch before and after training.
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
}

/// Attention probabilities of one block: `[cell][head][token]`.
#[derive(Debug, Clone)]
pub struct BlockAttention {
    pub bw: usize,
    pub bh: usize,
    pub l: usize,
    pub heads: usize,
    pub probs: Vec<f32>,
}

impl BlockAttention {
    /// Head-averaged map for token slot `j`, frame-major `[l][y][x]`.
    pub fn token_map(&self, j: usize) -> Vec<f32> {
        let cells = self.bw * self.bh * self.l;
        (0..cells)
            .map(|cell| {
                let base = cell * self.heads * N_TOKENS;
                (0..self.heads)
                    .map(|hd| self.probs[base + hd * N_TOKENS + j])
                    .sum::<f32>()
                    / self.heads as f32
            })
            .collect()
    }
}

struct AttnCache {
    pooled: Vec<f32>,
    q: Vec<f32>,
    k: Vec<f32>,
    v: Vec<f32>,
    probs: Vec<f32>,
}

/// Activations kept for the backward pass.
pub(crate) struct Cache {
    x: Vec<f32>,
    temb: Vec<f32>,
    tokens: [usize; N_TOKENS],
    pre1: Vec<f32>,
    h1: Vec<f32>,
    down: AttnCache,
    h2: Vec<f32>,
    mid: AttnCache,
    h3: Vec<f32>,
    pre2: Vec<f32>,
    h4: Vec<f32>,
    skip: f32,
    scale: f32,
}

#[inline]
fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn silu(x: f32) -> f32 {
    x * sigmoid(x)
}

#[inline]
fn silu_grad(x: f32) -> f32 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Sinusoidal embedding of the integer timestep.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f32> {
    let half = dim / 2;
    let mut out = vec![0.0f32; dim];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out[i] = arg.sin() as f32;
        out[half + i] = arg.cos() as f32;
    }
    out
}

/// 3x3 same-padded convolution applied to each frame. Kernel layout is
/// `[tap][cin][cout]` with `tap = ky * 3 + kx`.
fn conv_forward(
    inp: &[f32],
    d: Dims,
    cin: usize,
    k: &[f32],
    cout: usize,
    bias: &[f32],
    out: &mut [f32],
) {
    // Fixed widths keep the accumulator in registers.
    match cout {
        3 => conv_forward_n::<3>(inp, d, cin, k, bias, out),
        4 => conv_forward_n::<4>(inp, d, cin, k, bias, out),
        8 => conv_forward_n::<8>(inp, d, cin, k, bias, out),
        16 => conv_forward_n::<16>(inp, d, cin, k, bias, out),
        24 => conv_forward_n::<24>(inp, d, cin, k, bias, out),
        32 => conv_forward_n::<32>(inp, d, cin, k, bias, out),
        _ => conv_forward_dyn(inp, d, cin, k, cout, bias, out),
    }
}

/// Visits the in-bounds taps around `(x, y)` as `(tap, neighbour offset in pixels)`.
#[inline(always)]
fn for_taps(x: isize, y: isize, w: isize, h: isize, mut f: impl FnMut(usize, usize)) {
    for ky in 0..3isize {
        let yy = y + ky - 1;
        if yy < 0 || yy >= h {
            continue;
        }
        for kx in 0..3isize {
            let xx = x + kx - 1;
            if xx < 0 || xx >= w {
                continue;
            }
            f((ky * 3 + kx) as usize, (yy * w + xx) as usize);
        }
    }
}

fn conv_forward_n<const CO: usize>(inp: &[f32], d: Dims, cin: usize, k: &[f32], bias: &[f32], out: &mut [f32]) {
    let (w, h) = (d.w as isize, d.h as isize);
    let bias: [f32; CO] = bias.try_into().expect("bias width");
    for l in 0..d.l {
        let frame = l * d.w * d.h;
        for y in 0..h {
            for x in 0..w {
                let mut acc = bias;
                for_taps(x, y, w, h, |tap, q| {
                    let src = &inp[(frame + q) * cin..(frame + q + 1) * cin];
                    let kb = &k[tap * cin * CO..(tap + 1) * cin * CO];
                    for (&a, row) in src.iter().zip(kb.chunks_exact(CO)) {
                        for o in 0..CO {
                            acc[o] += a * row[o];
                        }
                    }
                });
                let o = (frame + (y * w + x) as usize) * CO;
                out[o..o + CO].copy_from_slice(&acc);
            }
        }
    }
}

fn conv_forward_dyn(inp: &[f32], d: Dims, cin: usize, k: &[f32], cout: usize, bias: &[f32], out: &mut [f32]) {
    let (w, h) = (d.w as isize, d.h as isize);
    for l in 0..d.l {
        let frame = l * d.w * d.h;
        for y in 0..h {
            for x in 0..w {
                let o = (frame + (y * w + x) as usize) * cout;
                let acc = &mut out[o..o + cout];
                acc.copy_from_slice(bias);
                for_taps(x, y, w, h, |tap, q| {
                    let src = &inp[(frame + q) * cin..(frame + q + 1) * cin];
                    let kb = &k[tap * cin * cout..(tap + 1) * cin * cout];
                    for (&a, row) in src.iter().zip(kb.chunks_exact(cout)) {
                        for (o, &kv) in acc.iter_mut().zip(row) {
                            *o += a * kv;
                        }
                    }
                });
            }
        }
    }
}

/// Accumulates kernel and bias gradients, and the input gradient when asked.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    inp: &[f32],
    d: Dims,
    cin: usize,
    k: &[f32],
    cout: usize,
    dout: &[f32],
    dk: &mut [f32],
    db: &mut [f32],
    din: Option<&mut [f32]>,
) {
    match cout {
        3 => conv_kernel_grad_n::<3>(inp, d, cin, dout, dk, db),
        4 => conv_kernel_grad_n::<4>(inp, d, cin, dout, dk, db),
        8 => conv_kernel_grad_n::<8>(inp, d, cin, dout, dk, db),
        16 => conv_kernel_grad_n::<16>(inp, d, cin, dout, dk, db),
        24 => conv_kernel_grad_n::<24>(inp, d, cin, dout, dk, db),
        32 => conv_kernel_grad_n::<32>(inp, d, cin, dout, dk, db),
        _ => conv_kernel_grad_dyn(inp, d, cin, cout, dout, dk, db),
    }
    if let Some(din) = din {
        // The input gradient is a forward convolution of `dout` with the
        // spatially flipped, channel-transposed kernel.
        let mut flipped = vec![0.0f32; k.len()];
        for tap in 0..9 {
            for ci in 0..cin {
                for co in 0..cout {
                    flipped[((8 - tap) * cout + co) * cin + ci] = k[(tap * cin + ci) * cout + co];
                }
            }
        }
        let mut tmp = vec![0.0f32; din.len()];
        conv_forward(dout, d, cout, &flipped, cin, &vec![0.0; cin], &mut tmp);
        for (a, b) in din.iter_mut().zip(&tmp) {
            *a += b;
        }
    }
}

fn conv_kernel_grad_n<const CO: usize>(inp: &[f32], d: Dims, cin: usize, dout: &[f32], dk: &mut [f32], db: &mut [f32]) {
    let (w, h) = (d.w as isize, d.h as isize);
    let mut bias_acc = [0.0f32; CO];
    for l in 0..d.l {
        let frame = l * d.w * d.h;
        for y in 0..h {
            for x in 0..w {
                let o = (frame + (y * w + x) as usize) * CO;
                let g: [f32; CO] = dout[o..o + CO].try_into().expect("gradient width");
                for c in 0..CO {
                    bias_acc[c] += g[c];
                }
                for_taps(x, y, w, h, |tap, q| {
                    let src = &inp[(frame + q) * cin..(frame + q + 1) * cin];
                    let kb = &mut dk[tap * cin * CO..(tap + 1) * cin * CO];
                    for (&a, row) in src.iter().zip(kb.chunks_exact_mut(CO)) {
                        for c in 0..CO {
                            row[c] += a * g[c];
                        }
                    }
                });
            }
        }
    }
    for (b, v) in db.iter_mut().zip(bias_acc) {
        *b += v;
    }
}

fn conv_kernel_grad_dyn(inp: &[f32], d: Dims, cin: usize, cout: usize, dout: &[f32], dk: &mut [f32], db: &mut [f32]) {
    let (w, h) = (d.w as isize, d.h as isize);
    for l in 0..d.l {
        let frame = l * d.w * d.h;
        for y in 0..h {
            for x in 0..w {
                let o = (frame + (y * w + x) as usize) * cout;
                let g = &dout[o..o + cout];
                for (b, &gv) in db.iter_mut().zip(g) {
                    *b += gv;
                }
                for_taps(x, y, w, h, |tap, q| {
                    let src = &inp[(frame + q) * cin..(frame + q + 1) * cin];
                    let kb = &mut dk[tap * cin * cout..(tap + 1) * cin * cout];
                    for (&a, row) in src.iter().zip(kb.chunks_exact_mut(cout)) {
                        for (r, &gv) in row.iter_mut().zip(g) {
                            *r += a * gv;
                        }
                    }
                });
            }
        }
    }
}

impl ToyDenoiser {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = Params::init(&config, &mut Rng::new(seed));
        Ok(ToyDenoiser {
            config,
            params,
            initial_loss: None,
            final_loss: None,
        })
    }

    pub fn from_params(config: ModelConfig, params: Params) -> Result<Self> {
        config.validate()?;
        let expect = Params::zeros(&config);
        for ((name, a), (_, b)) in params.named().into_iter().zip(expect.named()) {
            if a.len() != b.len() {
                return Err(Error::Shape(format!(
                    "parameter {name} has {} values, config needs {}",
                    a.len(),
                    b.len()
                )));
            }
        }
        Ok(ToyDenoiser {
            config,
            params,
            initial_loss: None,
            final_loss: None,
        })
    }

    fn tokens(cond: &ToyPrompt) -> [usize; N_TOKENS] {
        let t = cond.tokens();
        [t[0], t[1], t[2], t[3], NULL_TOKEN]
    }

    fn attn_forward(&self, blk: &AttnParams, pool: usize, hin: &[f32], tokens: &[usize; N_TOKENS]) -> (Vec<f32>, AttnCache) {
        let cfg = &self.config;
        let d = cfg.dims;
        let (dh, a, e, heads) = (cfg.hidden, cfg.attn_dim, cfg.embed_dim, cfg.heads);
        let (bw, bh) = (d.w / pool, d.h / pool);
        let cells = bw * bh * d.l;
        let area = (pool * pool) as f32;

        let mut pooled = vec![0.0f32; cells * dh];
        for l in 0..d.l {
            for y in 0..d.h {
                for x in 0..d.w {
                    let cell = (l * bh + y / pool) * bw + x / pool;
                    let p = (l * d.h + y) * d.w + x;
                    let src = &hin[p * dh..(p + 1) * dh];
                    for (g, &v) in pooled[cell * dh..(cell + 1) * dh].iter_mut().zip(src) {
                        *g += v / area;
                    }
                }
            }
        }

        let mut q = blk.pos.clone();
        for cell in 0..cells {
            let g = &pooled[cell * dh..(cell + 1) * dh];
            let qrow = &mut q[cell * a..(cell + 1) * a];
            for (di, &gv) in g.iter().enumerate() {
                for (qv, &wv) in qrow.iter_mut().zip(&blk.wq[di * a..(di + 1) * a]) {
                    *qv += gv * wv;
                }
            }
        }
        let mut k = vec![0.0f32; N_TOKENS * a];
        let mut v = vec![0.0f32; N_TOKENS * dh];
        for (j, &tok) in tokens.iter().enumerate() {
            let emb = &self.params.emb[tok * e..(tok + 1) * e];
            for (ei, &ev) in emb.iter().enumerate() {
                for (kv, &w) in k[j * a..(j + 1) * a].iter_mut().zip(&blk.wk[ei * a..(ei + 1) * a]) {
                    *kv += ev * w;
                }
                for (vv, &w) in v[j * dh..(j + 1) * dh].iter_mut().zip(&blk.wv[ei * dh..(ei + 1) * dh]) {
                    *vv += ev * w;
                }
            }
        }

        let ad = a / heads;
        let vd = dh / heads;
        let inv = 1.0 / (ad as f32).sqrt();
        let mut probs = vec![0.0f32; cells * heads * N_TOKENS];
        let mut out = vec![0.0f32; cells * dh];
        for cell in 0..cells {
            for hd in 0..heads {
                let qh = &q[cell * a + hd * ad..cell * a + (hd + 1) * ad];
                let pr = &mut probs[(cell * heads + hd) * N_TOKENS..(cell * heads + hd + 1) * N_TOKENS];
                let mut mx = f32::NEG_INFINITY;
                for j in 0..N_TOKENS {
                    let kh = &k[j * a + hd * ad..j * a + (hd + 1) * ad];
                    let s: f32 = qh.iter().zip(kh).map(|(x, y)| x * y).sum::<f32>() * inv;
                    pr[j] = s;
                    mx = mx.max(s);
                }
                let mut z = 0.0f32;
                for p in pr.iter_mut() {
                    *p = (*p - mx).exp();
                    z += *p;
                }
                for p in pr.iter_mut() {
                    *p /= z;
                }
                let o = &mut out[cell * dh + hd * vd..cell * dh + (hd + 1) * vd];
                for j in 0..N_TOKENS {
                    let vh = &v[j * dh + hd * vd..j * dh + (hd + 1) * vd];
                    for (ov, &vv) in o.iter_mut().zip(vh) {
                        *ov += pr[j] * vv;
                    }
                }
            }
        }

        let mut hout = hin.to_vec();
        for l in 0..d.l {
            for y in 0..d.h {
                for x in 0..d.w {
                    let cell = (l * bh + y / pool) * bw + x / pool;
                    let p = (l * d.h + y) * d.w + x;
                    for (hv, &ov) in hout[p * dh..(p + 1) * dh].iter_mut().zip(&out[cell * dh..(cell + 1) * dh]) {
                        *hv += ov;
                    }
                }
            }
        }
        (
            hout,
            AttnCache {
                pooled,
                q,
                k,
                v,
                probs,
            },
        )
    }

    /// Backward through one attention block. `dh` holds the gradient w.r.t.
    /// the block output and is updated in place to the gradient w.r.t. its input.
    #[allow(clippy::too_many_arguments)]
    fn attn_backward(
        &self,
        blk: &AttnParams,
        gblk: &mut AttnParams,
        gemb: &mut [f32],
        pool: usize,
        cache: &AttnCache,
        tokens: &[usize; N_TOKENS],
        dh: &mut [f32],
    ) {
        let cfg = &self.config;
        let d = cfg.dims;
        let (hid, a, e, heads) = (cfg.hidden, cfg.attn_dim, cfg.embed_dim, cfg.heads);
        let (bw, bh) = (d.w / pool, d.h / pool);
        let cells = bw * bh * d.l;
        let area = (pool * pool) as f32;
        let ad = a / heads;
        let vd = hid / heads;
        let inv = 1.0 / (ad as f32).sqrt();

        let mut dout = vec![0.0f32; cells * hid];
        for l in 0..d.l {
            for y in 0..d.h {
                for x in 0..d.w {
                    let cell = (l * bh + y / pool) * bw + x / pool;
                    let p = (l * d.h + y) * d.w + x;
                    for (o, &g) in dout[cell * hid..(cell + 1) * hid].iter_mut().zip(&dh[p * hid..(p + 1) * hid]) {
                        *o += g;
                    }
                }
            }
        }

        let mut dq = vec![0.0f32; cells * a];
        let mut dk = vec![0.0f32; N_TOKENS * a];
        let mut dv = vec![0.0f32; N_TOKENS * hid];
        let mut dprob = [0.0f32; N_TOKENS];
        for cell in 0..cells {
            for hd in 0..heads {
                let pr = &cache.probs[(cell * heads + hd) * N_TOKENS..(cell * heads + hd + 1) * N_TOKENS];
                let go = &dout[cell * hid + hd * vd..cell * hid + (hd + 1) * vd];
                let mut dot = 0.0f32;
                for j in 0..N_TOKENS {
                    let vh = &cache.v[j * hid + hd * vd..j * hid + (hd + 1) * vd];
                    dprob[j] = go.iter().zip(vh).map(|(x, y)| x * y).sum();
                    dot += pr[j] * dprob[j];
                    for (dvv, &g) in dv[j * hid + hd * vd..j * hid + (hd + 1) * vd].iter_mut().zip(go) {
                        *dvv += pr[j] * g;
                    }
                }
                let qh = &cache.q[cell * a + hd * ad..cell * a + (hd + 1) * ad];
                for j in 0..N_TOKENS {
                    let ds = pr[j] * (dprob[j] - dot) * inv;
                    if ds == 0.0 {
                        continue;
                    }
                    let kh = &cache.k[j * a + hd * ad..j * a + (hd + 1) * ad];
                    for (dqv, &kv) in dq[cell * a + hd * ad..cell * a + (hd + 1) * ad].iter_mut().zip(kh) {
                        *dqv += ds * kv;
                    }
                    for (dkv, &qv) in dk[j * a + hd * ad..j * a + (hd + 1) * ad].iter_mut().zip(qh) {
                        *dkv += ds * qv;
                    }
                }
            }
        }

        for (p, &g) in gblk.pos.iter_mut().zip(&dq) {
            *p += g;
        }
        let mut dpooled = vec![0.0f32; cells * hid];
        for cell in 0..cells {
            let g = &cache.pooled[cell * hid..(cell + 1) * hid];
            let dqc = &dq[cell * a..(cell + 1) * a];
            for di in 0..hid {
                let wrow = &blk.wq[di * a..(di + 1) * a];
                let grow = &mut gblk.wq[di * a..(di + 1) * a];
                let gv = g[di];
                let mut s = 0.0f32;
                for ((gw, &w), &dqv) in grow.iter_mut().zip(wrow).zip(dqc) {
                    *gw += gv * dqv;
                    s += w * dqv;
                }
                dpooled[cell * hid + di] = s;
            }
        }
        for (j, &tok) in tokens.iter().enumerate() {
            let emb = &self.params.emb[tok * e..(tok + 1) * e];
            let dkj = &dk[j * a..(j + 1) * a];
            let dvj = &dv[j * hid..(j + 1) * hid];
            for ei in 0..e {
                let ev = emb[ei];
                let mut s = 0.0f32;
                for ((gw, &w), &g) in gblk.wk[ei * a..(ei + 1) * a].iter_mut().zip(&blk.wk[ei * a..(ei + 1) * a]).zip(dkj) {
                    *gw += ev * g;
                    s += w * g;
                }
                for ((gw, &w), &g) in gblk.wv[ei * hid..(ei + 1) * hid].iter_mut().zip(&blk.wv[ei * hid..(ei + 1) * hid]).zip(dvj) {
                    *gw += ev * g;
                    s += w * g;
                }
                gemb[tok * e + ei] += s;
            }
        }
        for l in 0..d.l {
            for y in 0..d.h {
                for x in 0..d.w {
                    let cell = (l * bh + y / pool) * bw + x / pool;
                    let p = (l * d.h + y) * d.w + x;
                    for (g, &dp) in dh[p * hid..(p + 1) * hid].iter_mut().zip(&dpooled[cell * hid..(cell + 1) * hid]) {
                        *g += dp / area;
                    }
                }
            }
        }
    }

    /// Full forward pass returning `eps_hat` and the activation cache.
    pub(crate) fn forward(&self, x: &LatentTensor, t: usize, alphabar: f64, cond: &ToyPrompt) -> Result<(LatentTensor, Cache)> {
        let cfg = &self.config;
        let d = cfg.dims;
        if x.dims() != d {
            return Err(Error::Shape(format!(
                "denoiser built for {d}, got input {}",
                x.dims()
            )));
        }
        let (c, hid) = (d.c, cfg.hidden);
        let pix = d.w * d.h * d.l;
        let p = &self.params;
        let temb = time_embedding(t, cfg.time_dim);
        let tokens = Self::tokens(cond);

        let time_bias = |b: &[f32], wt: &[f32]| -> Vec<f32> {
            let mut out = b.to_vec();
            for (ti, &tv) in temb.iter().enumerate() {
                for (o, &w) in out.iter_mut().zip(&wt[ti * hid..(ti + 1) * hid]) {
                    *o += tv * w;
                }
            }
            out
        };

        let mut pre1 = vec![0.0f32; pix * hid];
        conv_forward(x.data(), d, c, &p.conv1, hid, &time_bias(&p.b1, &p.wt1), &mut pre1);
        let h1: Vec<f32> = pre1.iter().map(|&v| silu(v)).collect();
        let (h2, down) = self.attn_forward(&p.down, DOWN_POOL, &h1, &tokens);
        let (h3, mid) = self.attn_forward(&p.mid, MID_POOL, &h2, &tokens);
        let mut pre2 = vec![0.0f32; pix * hid];
        conv_forward(&h3, d, hid, &p.conv2, hid, &time_bias(&p.b2, &p.wt2), &mut pre2);
        let h4: Vec<f32> = pre2.iter().map(|&v| silu(v)).collect();
        let mut net = vec![0.0f32; pix * c];
        conv_forward(&h4, d, hid, &p.conv3, c, &p.b3, &mut net);

        let skip = (1.0 - alphabar).max(0.0).sqrt() as f32;
        let scale = alphabar.sqrt() as f32;
        let eps: Vec<f32> = x
            .data()
            .iter()
            .zip(&net)
            .map(|(&xv, &n)| skip * xv + scale * n)
            .collect();
        let eps = LatentTensor::from_vec(d, eps)?;
        Ok((
            eps,
            Cache {
                x: x.data().to_vec(),
                temb,
                tokens,
                pre1,
                h1,
                down,
                h2,
                mid,
                h3,
                pre2,
                h4,
                skip,
                scale,
            },
        ))
    }

    /// Gradient of the loss w.r.t. every parameter, given `d loss / d eps_hat`.
    pub(crate) fn backward(&self, cache: &Cache, deps: &[f32], grads: &mut Params) {
        let cfg = &self.config;
        let d = cfg.dims;
        let (c, hid) = (d.c, cfg.hidden);
        let pix = d.w * d.h * d.l;
        let p = &self.params;
        let _ = cache.skip;

        let dnet: Vec<f32> = deps.iter().map(|&g| g * cache.scale).collect();
        let mut dh4 = vec![0.0f32; pix * hid];
        conv_backward(&cache.h4, d, hid, &p.conv3, c, &dnet, &mut grads.conv3, &mut grads.b3, Some(&mut dh4));
        let dpre2: Vec<f32> = dh4
            .iter()
            .zip(&cache.pre2)
            .map(|(&g, &x)| g * silu_grad(x))
            .collect();
        let mut db2 = vec![0.0f32; hid];
        let mut dh = vec![0.0f32; pix * hid];
        conv_backward(&cache.h3, d, hid, &p.conv2, hid, &dpre2, &mut grads.conv2, &mut db2, Some(&mut dh));
        for (g, &v) in grads.b2.iter_mut().zip(&db2) {
            *g += v;
        }
        for (ti, &tv) in cache.temb.iter().enumerate() {
            for (g, &v) in grads.wt2[ti * hid..(ti + 1) * hid].iter_mut().zip(&db2) {
                *g += tv * v;
            }
        }

        self.attn_backward(&p.mid, &mut grads.mid, &mut grads.emb, MID_POOL, &cache.mid, &cache.tokens, &mut dh);
        self.attn_backward(&p.down, &mut grads.down, &mut grads.emb, DOWN_POOL, &cache.down, &cache.tokens, &mut dh);

        let dpre1: Vec<f32> = dh
            .iter()
            .zip(&cache.pre1)
            .map(|(&g, &x)| g * silu_grad(x))
            .collect();
        let mut db1 = vec![0.0f32; hid];
        conv_backward(&cache.x, d, c, &p.conv1, hid, &dpre1, &mut grads.conv1, &mut db1, None);
        for (g, &v) in grads.b1.iter_mut().zip(&db1) {
            *g += v;
        }
        for (ti, &tv) in cache.temb.iter().enumerate() {
            for (g, &v) in grads.wt1[ti * hid..(ti + 1) * hid].iter_mut().zip(&db1) {
                *g += tv * v;
            }
        }
        let _ = (&cache.h1, &cache.h2);
    }

    /// Noise prediction together with both blocks' attention probabilities.
    pub fn predict_with_attention(
        &self,
        x: &LatentTensor,
        t: usize,
        alphabar: f64,
        cond: &ToyPrompt,
    ) -> Result<(LatentTensor, BlockAttention, BlockAttention)> {
        let (eps, cache) = self.forward(x, t, alphabar, cond)?;
        let d = self.config.dims;
        let wrap = |pool: usize, probs: Vec<f32>| BlockAttention {
            bw: d.w / pool,
            bh: d.h / pool,
            l: d.l,
            heads: self.config.heads,
            probs,
        };
        Ok((
            eps,
            wrap(DOWN_POOL, cache.down.probs),
            wrap(MID_POOL, cache.mid.probs),
        ))
    }
}
