//! Transformer building blocks on top of [`Graph`].

use rand::Rng;

use super::graph::{Graph, Var};
use super::tensor::{ModelConfig, ParamId, ParameterStore};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

fn linear_std(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

/// Lower-triangular additive mask: 0 on and below the diagonal, -inf above.
pub fn causal_mask(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            m[i * n + j] = f64::NEG_INFINITY;
        }
    }
    m
}

/// Token embedding, optionally factorized as `table[V×e] · factor[e×d]`.
/// `std` is the init scale of the table.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: ParamId,
    pub factor: Option<ParamId>,
    pub vocab_size: usize,
}

impl Embedding {
    pub fn new<R: Rng>(
        store: &mut ParameterStore,
        prefix: &str,
        vocab_size: usize,
        d_model: usize,
        embed_dim: Option<usize>,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        match embed_dim {
            Some(e) => {
                let table = store.add_normal(&format!("{prefix}.table"), vec![vocab_size, e], std, rng)?;
                let factor =
                    store.add_normal(&format!("{prefix}.factor"), vec![e, d_model], linear_std(e), rng)?;
                Ok(Self { table, factor: Some(factor), vocab_size })
            }
            None => {
                let table =
                    store.add_normal(&format!("{prefix}.table"), vec![vocab_size, d_model], std, rng)?;
                Ok(Self { table, factor: None, vocab_size })
            }
        }
    }

    pub fn load(store: &ParameterStore, prefix: &str) -> Result<Self> {
        let table = store.require(&format!("{prefix}.table"))?;
        let factor = store.id(&format!("{prefix}.factor"));
        let vocab_size = store.get(table).matrix_dims().0;
        Ok(Self { table, factor, vocab_size })
    }

    /// Embeddings of `ids`, one row each.
    pub fn forward(&self, g: &mut Graph, ids: &[usize]) -> Result<Var> {
        embed(g, ids, self.table, self.factor)
    }

    /// The full V×d embedding matrix, used for tied output projections.
    pub fn matrix(&self, g: &mut Graph) -> Result<Var> {
        let t = g.param(self.table);
        match self.factor {
            Some(f) => {
                let f = g.param(f);
                g.matmul(t, f)
            }
            None => Ok(t),
        }
    }
}

/// Rows of the embedding table for `ids`, projected through `factor` if given.
pub fn embed(g: &mut Graph, ids: &[usize], table: ParamId, factor: Option<ParamId>) -> Result<Var> {
    let t = g.param(table);
    let rows = g.gather(t, ids)?;
    match factor {
        Some(f) => {
            let f = g.param(f);
            g.matmul(rows, f)
        }
        None => Ok(rows),
    }
}

/// Learned absolute positions.
#[derive(Debug, Clone)]
pub struct Positions {
    pub table: ParamId,
    pub max_len: usize,
}

impl Positions {
    pub fn new<R: Rng>(
        store: &mut ParameterStore,
        name: &str,
        max_len: usize,
        d: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let table = store.add_normal(name, vec![max_len, d], 0.1, rng)?;
        Ok(Self { table, max_len })
    }

    pub fn load(store: &ParameterStore, name: &str) -> Result<Self> {
        let table = store.require(name)?;
        let max_len = store.get(table).matrix_dims().0;
        Ok(Self { table, max_len })
    }

    /// Adds position rows 0..n to `x`.
    pub fn add_to(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let n = g.shape(x).0;
        if n > self.max_len {
            return Err(Error::Validation(format!(
                "sequence of length {n} exceeds the positional table ({})",
                self.max_len
            )));
        }
        let ids: Vec<usize> = (0..n).collect();
        let t = g.param(self.table);
        let p = g.gather(t, &ids)?;
        g.add(x, p)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gain: ParamId,
    bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParameterStore, prefix: &str, d: usize) -> Result<Self> {
        Ok(Self {
            gain: store.add_filled(&format!("{prefix}.gain"), vec![d], 1.0)?,
            bias: store.add_zeros(&format!("{prefix}.bias"), vec![d])?,
        })
    }

    pub fn load(store: &ParameterStore, prefix: &str) -> Result<Self> {
        Ok(Self {
            gain: store.require(&format!("{prefix}.gain"))?,
            bias: store.require(&format!("{prefix}.bias"))?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        g.layer_norm(x, gain, bias, LN_EPS)
    }
}

/// Dense `x·W + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParameterStore,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let weight =
            store.add_normal(&format!("{prefix}.weight"), vec![d_in, d_out], linear_std(d_in), rng)?;
        let bias = if bias { Some(store.add_zeros(&format!("{prefix}.bias"), vec![d_out])?) } else { None };
        Ok(Self { weight, bias })
    }

    pub fn load(store: &ParameterStore, prefix: &str) -> Result<Self> {
        Ok(Self {
            weight: store.require(&format!("{prefix}.weight"))?,
            bias: store.id(&format!("{prefix}.bias")),
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Attention of `q` over `k`/`v` with scores scaled by 1/√d_k and an optional
/// additive mask. Returns (output, weights).
pub fn scaled_dot_attention(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<&[f64]>,
) -> Result<(Var, Var)> {
    let dk = g.shape(q).1;
    let scores = g.matmul_bt(q, k)?;
    let scores = g.scale(scores, 1.0 / (dk as f64).sqrt());
    let weights = g.softmax(scores, mask)?;
    let out = g.matmul(weights, v)?;
    Ok((out, weights))
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    n_heads: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(
        store: &mut ParameterStore,
        prefix: &str,
        d: usize,
        n_heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            q: Linear::new(store, &format!("{prefix}.q"), d, d, false, rng)?,
            k: Linear::new(store, &format!("{prefix}.k"), d, d, false, rng)?,
            v: Linear::new(store, &format!("{prefix}.v"), d, d, false, rng)?,
            o: Linear::new(store, &format!("{prefix}.o"), d, d, true, rng)?,
            n_heads,
        })
    }

    pub fn load(store: &ParameterStore, prefix: &str, n_heads: usize) -> Result<Self> {
        Ok(Self {
            q: Linear::load(store, &format!("{prefix}.q"))?,
            k: Linear::load(store, &format!("{prefix}.k"))?,
            v: Linear::load(store, &format!("{prefix}.v"))?,
            o: Linear::load(store, &format!("{prefix}.o"))?,
            n_heads,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var, memory: Var, mask: Option<&[f64]>) -> Result<Var> {
        let q = self.q.forward(g, x)?;
        let k = self.k.forward(g, memory)?;
        let v = self.v.forward(g, memory)?;
        let d = g.shape(q).1;
        let dh = d / self.n_heads;
        let mut heads = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            heads.push(scaled_dot_attention(g, qh, kh, vh, mask)?.0);
        }
        let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? };
        self.o.forward(g, cat)
    }
}

#[derive(Debug, Clone)]
struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.up.forward(g, x)?;
        let h = g.gelu(h);
        self.down.forward(g, h)
    }
}

#[derive(Debug, Clone)]
struct Block {
    ln_self: LayerNorm,
    self_attn: MultiHeadAttention,
    cross: Option<(LayerNorm, MultiHeadAttention)>,
    ln_ff: LayerNorm,
    ff: FeedForward,
}

impl Block {
    fn forward(&self, g: &mut Graph, x: Var, memory: Option<Var>, mask: Option<&[f64]>) -> Result<Var> {
        let h = self.ln_self.forward(g, x)?;
        let a = self.self_attn.forward(g, h, h, mask)?;
        let mut x = g.add(x, a)?;
        if let (Some((ln, attn)), Some(mem)) = (&self.cross, memory) {
            let h = ln.forward(g, x)?;
            let a = attn.forward(g, h, mem, None)?;
            x = g.add(x, a)?;
        }
        let h = self.ln_ff.forward(g, x)?;
        let f = self.ff.forward(g, h)?;
        g.add(x, f)
    }
}

/// Pre-norm transformer stack; decoder stacks add cross-attention.
#[derive(Debug, Clone)]
pub struct TransformerStack {
    blocks: Vec<Block>,
    final_norm: Option<LayerNorm>,
}

impl TransformerStack {
    pub fn new<R: Rng>(
        store: &mut ParameterStore,
        prefix: &str,
        cfg: &ModelConfig,
        cross: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let d = cfg.d_model;
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let p = format!("{prefix}.{l}");
            let cross = if cross {
                Some((
                    LayerNorm::new(store, &format!("{p}.ln_cross"), d)?,
                    MultiHeadAttention::new(store, &format!("{p}.cross"), d, cfg.n_heads, rng)?,
                ))
            } else {
                None
            };
            blocks.push(Block {
                ln_self: LayerNorm::new(store, &format!("{p}.ln_self"), d)?,
                self_attn: MultiHeadAttention::new(store, &format!("{p}.self"), d, cfg.n_heads, rng)?,
                cross,
                ln_ff: LayerNorm::new(store, &format!("{p}.ln_ff"), d)?,
                ff: FeedForward {
                    up: Linear::new(store, &format!("{p}.ff_up"), d, cfg.d_ff, true, rng)?,
                    down: Linear::new(store, &format!("{p}.ff_down"), cfg.d_ff, d, true, rng)?,
                },
            });
        }
        let final_norm = if cfg.n_layers > 0 {
            Some(LayerNorm::new(store, &format!("{prefix}.ln_final"), d)?)
        } else {
            None
        };
        Ok(Self { blocks, final_norm })
    }

    pub fn load(store: &ParameterStore, prefix: &str, cfg: &ModelConfig, cross: bool) -> Result<Self> {
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let p = format!("{prefix}.{l}");
            let cross = if cross {
                Some((
                    LayerNorm::load(store, &format!("{p}.ln_cross"))?,
                    MultiHeadAttention::load(store, &format!("{p}.cross"), cfg.n_heads)?,
                ))
            } else {
                None
            };
            blocks.push(Block {
                ln_self: LayerNorm::load(store, &format!("{p}.ln_self"))?,
                self_attn: MultiHeadAttention::load(store, &format!("{p}.self"), cfg.n_heads)?,
                cross,
                ln_ff: LayerNorm::load(store, &format!("{p}.ln_ff"))?,
                ff: FeedForward {
                    up: Linear::load(store, &format!("{p}.ff_up"))?,
                    down: Linear::load(store, &format!("{p}.ff_down"))?,
                },
            });
        }
        let final_norm = if cfg.n_layers > 0 {
            Some(LayerNorm::load(store, &format!("{prefix}.ln_final"))?)
        } else {
            None
        };
        Ok(Self { blocks, final_norm })
    }

    pub fn n_layers(&self) -> usize {
        self.blocks.len()
    }

    fn run(&self, g: &mut Graph, mut x: Var, memory: Option<Var>, mask: Option<&[f64]>) -> Result<Var> {
        for b in &self.blocks {
            x = b.forward(g, x, memory, mask)?;
        }
        match &self.final_norm {
            Some(ln) => ln.forward(g, x),
            None => Ok(x),
        }
    }
}

/// Bidirectional self-attention over `x`.
pub fn transformer_encoder(g: &mut Graph, x: Var, stack: &TransformerStack) -> Result<Var> {
    stack.run(g, x, None, None)
}

/// Self-attention over `x` (causal if requested) plus cross-attention to
/// `memory` in every block.
pub fn transformer_decoder(
    g: &mut Graph,
    x: Var,
    memory: Var,
    stack: &TransformerStack,
    causal: bool,
) -> Result<Var> {
    let n = g.shape(x).0;
    let mask = causal.then(|| causal_mask(n));
    stack.run(g, x, Some(memory), mask.as_deref())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn dense_attention(q: &[f64], k: &[f64], v: &[f64], n: usize, m: usize, d: usize) -> Vec<f64> {
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let s: Vec<f64> = (0..m)
                .map(|j| (0..d).map(|t| q[i * d + t] * k[j * d + t]).sum::<f64>() / (d as f64).sqrt())
                .collect();
            let z: f64 = s.iter().map(|x| x.exp()).sum();
            for j in 0..m {
                for t in 0..d {
                    out[i * d + t] += s[j].exp() / z * v[j * d + t];
                }
            }
        }
        out
    }

    #[test]
    fn attention_matches_dense_reference() {
        let store = ParameterStore::new(ModelConfig::desk());
        let mut g = Graph::new(&store);
        let (n, m, d) = (3, 4, 5);
        let gen = |s: usize, len: usize| {
            (0..len).map(|i| ((i * 7 + s) % 11) as f64 / 5.0 - 1.0).collect::<Vec<_>>()
        };
        let (qv, kv, vv) = (gen(1, n * d), gen(2, m * d), gen(3, m * d));
        let q = g.input(n, d, qv.clone()).unwrap();
        let k = g.input(m, d, kv.clone()).unwrap();
        let v = g.input(m, d, vv.clone()).unwrap();
        let (out, w) = scaled_dot_attention(&mut g, q, k, v, None).unwrap();
        let want = dense_attention(&qv, &kv, &vv, n, m, d);
        for (a, b) in g.value(out).iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
        for r in 0..n {
            let s: f64 = g.row(w, r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn causal_mask_blocks_future_positions() {
        let store = ParameterStore::new(ModelConfig::desk());
        let mut g = Graph::new(&store);
        let x = g.input(3, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let mask = causal_mask(3);
        let (_, w) = scaled_dot_attention(&mut g, x, x, x, Some(&mask)).unwrap();
        assert_eq!(g.row(w, 0), &[1.0, 0.0, 0.0]);
        assert_eq!(g.row(w, 1)[2], 0.0);
    }

    #[test]
    fn zero_layer_stack_is_identity() {
        let cfg = ModelConfig { n_layers: 0, ..ModelConfig::desk() };
        let mut store = ParameterStore::new(cfg);
        let mut rng = stream(1, Stream::Init);
        let stack = TransformerStack::new(&mut store, "enc", &cfg, false, &mut rng).unwrap();
        assert!(store.is_empty());
        let mut g = Graph::new(&store);
        let x = g.input(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = transformer_encoder(&mut g, x, &stack).unwrap();
        assert_eq!(g.value(y), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn decoder_output_prefix_ignores_later_tokens_when_causal() {
        let cfg = ModelConfig { n_layers: 2, d_model: 8, n_heads: 2, d_ff: 16, embed_dim: None };
        let mut store = ParameterStore::new(cfg);
        let mut rng = stream(3, Stream::Init);
        let stack = TransformerStack::new(&mut store, "dec", &cfg, true, &mut rng).unwrap();
        let mem: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
        let run = |tail: f64| {
            let mut g = Graph::new(&store);
            let m = g.input(2, 8, mem.clone()).unwrap();
            let mut xv: Vec<f64> = (0..24).map(|i| (i as f64 * 0.11).cos()).collect();
            xv[16..].iter_mut().for_each(|v| *v += tail);
            let x = g.input(3, 8, xv).unwrap();
            let y = transformer_decoder(&mut g, x, m, &stack, true).unwrap();
            g.value(y)[..16].to_vec()
        };
        let a = run(0.0);
        let b = run(5.0);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
