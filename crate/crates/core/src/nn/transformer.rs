use ndarray::{Array2, ArrayView2};
use rand::Rng;

use super::{
    attention_backward, attention_forward, gelu, gelu_backward, join, Attention, HiddenSpan, LayerNorm, Linear,
    LnCache, Params,
};
use crate::real::Real;

/// Pre-norm residual transformer block:
/// `h = x + Attn(LN(x))`, `y = h + MLP(LN(h))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Block<F> {
    pub ln1: LayerNorm<F>,
    pub attn: Attention<F>,
    pub ln2: LayerNorm<F>,
    pub fc1: Linear<F>,
    pub fc2: Linear<F>,
}

#[derive(Clone, Debug)]
pub struct BlockCache<F> {
    ln1: LnCache<F>,
    a_in: Array2<F>,
    qkv: Array2<F>,
    probs: Vec<F>,
    hidden: Option<HiddenSpan>,
    ctx: Array2<F>,
    ln2: LnCache<F>,
    m_in: Array2<F>,
    f1: Array2<F>,
    g: Array2<F>,
}

impl<F: Real> Block<F> {
    pub fn new<R: Rng + ?Sized>(dim: usize, heads: usize, mlp_ratio: usize, causal: bool, rng: &mut R) -> Self {
        Block {
            ln1: LayerNorm::new(dim),
            attn: Attention::new(dim, heads, causal, rng),
            ln2: LayerNorm::new(dim),
            fc1: Linear::new(dim, mlp_ratio * dim, rng),
            fc2: Linear::new(mlp_ratio * dim, dim, rng),
        }
    }

    fn dim(&self) -> usize {
        self.attn.dim()
    }

    pub fn forward_train(&self, x: ArrayView2<'_, F>, hidden: Option<HiddenSpan>) -> (Array2<F>, BlockCache<F>) {
        let dim = self.dim();
        let rows = x.nrows();
        let (a_in, ln1) = self.ln1.forward(x);
        let qkv = self.attn.qkv.forward(a_in.view());
        let (ctx, probs) = attention_forward(
            qkv.as_slice().expect("standard layout"),
            rows,
            0,
            dim,
            self.attn.heads,
            self.attn.causal,
            hidden,
        );
        let mut h = self.attn.out.forward(ctx.view());
        h += &x;
        let (m_in, ln2) = self.ln2.forward(h.view());
        let f1 = self.fc1.forward(m_in.view());
        let g = gelu(f1.view());
        let mut y = self.fc2.forward(g.view());
        y += &h;
        let cache = BlockCache {
            ln1,
            a_in,
            qkv,
            probs,
            hidden,
            ctx,
            ln2,
            m_in,
            f1,
            g,
        };
        (y, cache)
    }

    pub fn backward(&self, cache: &BlockCache<F>, dy: ArrayView2<'_, F>, grad: &mut Self) -> Array2<F> {
        let dg = self.fc2.backward(cache.g.view(), dy, &mut grad.fc2);
        let df1 = gelu_backward(cache.f1.view(), dg.view());
        let dm_in = self.fc1.backward(cache.m_in.view(), df1.view(), &mut grad.fc1);
        let mut dh = self.ln2.backward(&cache.ln2, dm_in.view(), &mut grad.ln2);
        dh += &dy;
        let dctx = self.attn.out.backward(cache.ctx.view(), dh.view(), &mut grad.attn.out);
        let dqkv = attention_backward(
            cache.qkv.as_slice().expect("standard layout"),
            &cache.probs,
            dctx.view(),
            self.dim(),
            self.attn.heads,
            self.attn.causal,
            cache.hidden,
        );
        let da_in = self
            .attn
            .qkv
            .backward(cache.a_in.view(), dqkv.view(), &mut grad.attn.qkv);
        let mut dx = self.ln1.backward(&cache.ln1, da_in.view(), &mut grad.ln1);
        dx += &dh;
        dx
    }

    /// Processes `x_new` as the continuation of rows whose key/value
    /// projections are held in `kv` (`rows × 3d`, row-major). Appends the new
    /// rows' projections to `kv`. Only valid for causal blocks.
    pub fn forward_incremental(&self, x_new: ArrayView2<'_, F>, kv: &mut Vec<F>) -> Array2<F> {
        debug_assert!(self.attn.causal, "incremental decoding needs causal attention");
        let dim = self.dim();
        let start = kv.len() / (3 * dim);
        let (a_in, _) = self.ln1.forward(x_new);
        let qkv_new = self.attn.qkv.forward(a_in.view());
        kv.extend_from_slice(qkv_new.as_slice().expect("standard layout"));
        let rows = start + x_new.nrows();
        let (ctx, _) = attention_forward(kv, rows, start, dim, self.attn.heads, true, None);
        let mut h = self.attn.out.forward(ctx.view());
        h += &x_new;
        let (m_in, _) = self.ln2.forward(h.view());
        let g = gelu(self.fc1.forward(m_in.view()).view());
        let mut y = self.fc2.forward(g.view());
        y += &h;
        y
    }
}

impl<F: Real> Params<F> for Block<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[F])) {
        self.ln1.visit(&join(prefix, "ln1"), f);
        self.attn.visit(&join(prefix, "attn"), f);
        self.ln2.visit(&join(prefix, "ln2"), f);
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [F])) {
        self.ln1.visit_mut(&join(prefix, "ln1"), f);
        self.attn.visit_mut(&join(prefix, "attn"), f);
        self.ln2.visit_mut(&join(prefix, "ln2"), f);
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}

/// A stack of blocks followed by a final layer norm. With zero blocks the
/// stack is the identity map (the final norm is skipped too).
#[derive(Clone, Debug, PartialEq)]
pub struct Stack<F> {
    pub blocks: Vec<Block<F>>,
    pub ln_f: LayerNorm<F>,
}

#[derive(Clone, Debug)]
pub struct StackCache<F> {
    blocks: Vec<BlockCache<F>>,
    ln_f: Option<LnCache<F>>,
}

impl<F: Real> Stack<F> {
    pub fn new<R: Rng + ?Sized>(
        dim: usize,
        layers: usize,
        heads: usize,
        mlp_ratio: usize,
        causal: bool,
        rng: &mut R,
    ) -> Self {
        Stack {
            blocks: (0..layers)
                .map(|_| Block::new(dim, heads, mlp_ratio, causal, rng))
                .collect(),
            ln_f: LayerNorm::new(dim),
        }
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn forward_train(&self, x: ArrayView2<'_, F>, hidden: Option<HiddenSpan>) -> (Array2<F>, StackCache<F>) {
        if self.blocks.is_empty() {
            return (
                x.to_owned(),
                StackCache {
                    blocks: Vec::new(),
                    ln_f: None,
                },
            );
        }
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut h = x.to_owned();
        for block in &self.blocks {
            let (y, c) = block.forward_train(h.view(), hidden);
            caches.push(c);
            h = y;
        }
        let (y, ln_c) = self.ln_f.forward(h.view());
        (
            y,
            StackCache {
                blocks: caches,
                ln_f: Some(ln_c),
            },
        )
    }

    pub fn backward(&self, cache: &StackCache<F>, dy: ArrayView2<'_, F>, grad: &mut Self) -> Array2<F> {
        let Some(ln_c) = &cache.ln_f else {
            return dy.to_owned();
        };
        let mut d = self.ln_f.backward(ln_c, dy, &mut grad.ln_f);
        for ((block, c), g) in self.blocks.iter().zip(&cache.blocks).zip(grad.blocks.iter_mut()).rev() {
            d = block.backward(c, d.view(), g);
        }
        d
    }

    /// Incremental causal forward. `kv` holds one buffer per block and is
    /// extended in place.
    pub fn forward_incremental(&self, x_new: ArrayView2<'_, F>, kv: &mut [Vec<F>]) -> Array2<F> {
        if self.blocks.is_empty() {
            return x_new.to_owned();
        }
        let mut h = x_new.to_owned();
        for (block, cache) in self.blocks.iter().zip(kv.iter_mut()) {
            h = block.forward_incremental(h.view(), cache);
        }
        self.ln_f.forward(h.view()).0
    }
}

impl<F: Real> Params<F> for Stack<F> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[F])) {
        self.blocks.visit(&join(prefix, "blocks"), f);
        self.ln_f.visit(&join(prefix, "ln_f"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [F])) {
        self.blocks.visit_mut(&join(prefix, "blocks"), f);
        self.ln_f.visit_mut(&join(prefix, "ln_f"), f);
    }
}
