//! Two-branch risk model joining expression profiles with per-sample patch
//! features.
//!
//! The expression vector is chunked into contiguous groups, each projected
//! to one token; patch vectors are projected row-wise to tokens, subsampled
//! or zero-padded to a fixed count, and masked so padding is invisible to
//! attention. Two multi-head attention blocks run with swapped roles
//! (expression queries patch keys, patch queries expression keys); the two
//! attended class tokens are concatenated and fed to a small MLP that emits
//! the scalar risk.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::mlp::{init_mlp, Mlp, MlpSpec};
use crate::model::Model;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionSpec {
    pub expr_dim: usize,
    pub patch_dim: usize,
    /// Number of expression tokens; the gene vector is split into this many
    /// contiguous groups (sizes differ by at most one).
    pub expr_token_count: usize,
    pub token_dim: usize,
    /// Patch tokens per sample after subsampling or zero-padding.
    pub max_patch_tokens: usize,
    pub n_heads: usize,
    /// Hidden widths of the MLP applied to the joined class tokens.
    pub head_hidden: Vec<usize>,
    pub dropout: f64,
}

impl FusionSpec {
    pub fn default_for(expr_dim: usize, patch_dim: usize) -> FusionSpec {
        FusionSpec {
            expr_dim,
            patch_dim,
            expr_token_count: expr_dim.min(32),
            token_dim: 256,
            max_patch_tokens: 128,
            n_heads: 4,
            head_hidden: vec![128],
            dropout: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.expr_dim == 0 || self.patch_dim == 0 {
            return Err(Error::config("feature dimensions must be positive"));
        }
        if self.expr_token_count == 0 || self.expr_token_count > self.expr_dim {
            return Err(Error::config(format!(
                "expr_token_count {} outside [1, expr_dim={}]",
                self.expr_token_count, self.expr_dim
            )));
        }
        if self.n_heads == 0 || self.token_dim == 0 || !self.token_dim.is_multiple_of(self.n_heads)
        {
            return Err(Error::config(format!(
                "token_dim {} must be a positive multiple of n_heads {}",
                self.token_dim, self.n_heads
            )));
        }
        if self.max_patch_tokens == 0 {
            return Err(Error::config("max_patch_tokens must be positive"));
        }
        if self.head_hidden.contains(&0) {
            return Err(Error::config("head hidden widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    /// (start, len) of each contiguous expression group.
    fn group_bounds(&self) -> Vec<(usize, usize)> {
        let (d, g) = (self.expr_dim, self.expr_token_count);
        let (base, rem) = (d / g, d % g);
        let mut bounds = Vec::with_capacity(g);
        let mut start = 0;
        for i in 0..g {
            let len = base + usize::from(i < rem);
            bounds.push((start, len));
            start += len;
        }
        bounds
    }
}

#[derive(Debug, Clone)]
struct AttnBlock {
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    wo: Tensor,
}

impl AttnBlock {
    fn init(prefix: &str, token_dim: usize, rng: &mut ChaCha8Rng) -> AttnBlock {
        let mk = |name: &str, rng: &mut ChaCha8Rng| {
            let t = uniform(token_dim, token_dim, rng);
            t.set_name(format!("{prefix}.{name}"));
            t
        };
        AttnBlock {
            wq: mk("wq", rng),
            wk: mk("wk", rng),
            wv: mk("wv", rng),
            wo: mk("wo", rng),
        }
    }

    fn params(&self) -> [&Tensor; 4] {
        [&self.wq, &self.wk, &self.wv, &self.wo]
    }

    fn detached(&self) -> AttnBlock {
        AttnBlock {
            wq: self.wq.detached_clone(),
            wk: self.wk.detached_clone(),
            wv: self.wv.detached_clone(),
            wo: self.wo.detached_clone(),
        }
    }
}

fn uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    use rand::Rng;
    let bound = 1.0 / (rows as f64).sqrt();
    let values: Vec<f64> = (0..rows * cols)
        .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
        .collect();
    Tensor::from_vec(vec![rows, cols], values)
}

#[derive(Debug, Clone)]
pub struct FusionModel {
    pub spec: FusionSpec,
    expr_proj: Vec<Tensor>,
    cls_expr: Tensor,
    patch_proj: Tensor,
    cls_patch: Tensor,
    attn_expr: AttnBlock,
    attn_patch: AttnBlock,
    head: Mlp,
}

/// Forward-pass mode. A RNG enables input noise, dropout and random patch
/// subsampling; without one the pass is deterministic (no noise, no
/// dropout, first-rows subsampling).
pub struct FusionContext<'r> {
    pub rng: Option<&'r mut ChaCha8Rng>,
    pub noise_sigma: f64,
}

impl<'r> FusionContext<'r> {
    pub fn eval() -> FusionContext<'static> {
        FusionContext {
            rng: None,
            noise_sigma: 0.0,
        }
    }

    pub fn train(rng: &'r mut ChaCha8Rng, noise_sigma: f64) -> FusionContext<'r> {
        FusionContext {
            rng: Some(rng),
            noise_sigma,
        }
    }
}

pub fn init_fusion(spec: &FusionSpec, rng: &mut ChaCha8Rng) -> Result<FusionModel> {
    spec.validate()?;
    let td = spec.token_dim;
    let mut expr_proj = Vec::with_capacity(spec.expr_token_count);
    for (g, (_, len)) in spec.group_bounds().into_iter().enumerate() {
        let t = uniform(len, td, rng);
        t.set_name(format!("expr_proj.{g}"));
        expr_proj.push(t);
    }
    let cls_expr = uniform(1, td, rng);
    cls_expr.set_name("cls_expr");
    let patch_proj = uniform(spec.patch_dim, td, rng);
    patch_proj.set_name("patch_proj");
    let cls_patch = uniform(1, td, rng);
    cls_patch.set_name("cls_patch");
    let attn_expr = AttnBlock::init("attn_expr", td, rng);
    let attn_patch = AttnBlock::init("attn_patch", td, rng);
    let head_spec = MlpSpec::new(2 * td, spec.head_hidden.clone(), spec.dropout)?;
    let head = init_mlp(&head_spec, rng)?;
    for p in head.params() {
        let name = p.name();
        p.set_name(format!("head.{name}"));
    }
    Ok(FusionModel {
        spec: spec.clone(),
        expr_proj,
        cls_expr,
        patch_proj,
        cls_patch,
        attn_expr,
        attn_patch,
        head,
    })
}

impl FusionModel {
    /// Scalar risk for one sample, shape `[1, 1]`.
    pub fn forward(
        &self,
        expr: &[f64],
        patches: &ndarray::Array2<f64>,
        ctx: &mut FusionContext,
    ) -> Result<Tensor> {
        let spec = &self.spec;
        if expr.len() != spec.expr_dim {
            return Err(Error::ShapeMismatch {
                op: "fusion forward (expression)",
                left: vec![1, expr.len()],
                right: vec![1, spec.expr_dim],
            });
        }
        if patches.ncols() != spec.patch_dim {
            return Err(Error::ShapeMismatch {
                op: "fusion forward (patches)",
                left: vec![patches.nrows(), patches.ncols()],
                right: vec![patches.nrows(), spec.patch_dim],
            });
        }
        if patches.nrows() == 0 {
            return Err(Error::Domain {
                op: "fusion forward",
                detail: "sample has no patch rows".to_string(),
            });
        }

        // expression branch: noise on the raw vector, then per-group tokens
        let mut x = Tensor::from_rows(&[expr.to_vec()]);
        if let Some(rng) = ctx.rng.as_deref_mut() {
            x = x.add_noise(ctx.noise_sigma, rng)?;
        }
        let mut expr_rows: Vec<Tensor> = vec![self.cls_expr.clone()];
        for (g, (start, len)) in spec.group_bounds().into_iter().enumerate() {
            expr_rows.push(x.slice_cols(start, len)?.matmul(&self.expr_proj[g])?);
        }
        let row_refs: Vec<&Tensor> = expr_rows.iter().collect();
        let tokens_e = Tensor::stack_rows(&row_refs)?;

        // patch branch: project, subsample to the token budget, noise the
        // kept real rows, zero-pad, then prepend the class token
        let rows: Vec<Vec<f64>> = patches.rows().into_iter().map(|r| r.to_vec()).collect();
        let mut proj = Tensor::from_rows(&rows).matmul(&self.patch_proj)?;
        let p_total = patches.nrows();
        let kept = if p_total > spec.max_patch_tokens {
            let indices: Vec<usize> = match ctx.rng.as_deref_mut() {
                Some(rng) => {
                    let mut idx =
                        rand::seq::index::sample(rng, p_total, spec.max_patch_tokens).into_vec();
                    idx.sort_unstable();
                    idx
                }
                None => (0..spec.max_patch_tokens).collect(),
            };
            proj = proj.gather_rows(&indices)?;
            spec.max_patch_tokens
        } else {
            p_total
        };
        if let Some(rng) = ctx.rng.as_deref_mut() {
            proj = proj.add_noise(ctx.noise_sigma, rng)?;
        }
        if kept < spec.max_patch_tokens {
            let pad = Tensor::zeros(vec![spec.max_patch_tokens - kept, spec.token_dim]);
            proj = proj.concat(&pad, 0)?;
        }
        let tokens_p = self.cls_patch.concat(&proj, 0)?;
        let mut key_mask = vec![true; 1 + spec.max_patch_tokens];
        for flag in key_mask.iter_mut().skip(1 + kept) {
            *flag = false;
        }

        let attended_e = self.attention(&tokens_e, &tokens_p, Some(&key_mask), &self.attn_expr)?;
        let attended_p = self.attention(&tokens_p, &tokens_e, None, &self.attn_patch)?;
        let joint = attended_e
            .gather_rows(&[0])?
            .concat(&attended_p.gather_rows(&[0])?, 1)?;
        self.head.forward(&joint, ctx.rng.as_deref_mut())
    }

    fn attention(
        &self,
        q_tokens: &Tensor,
        kv_tokens: &Tensor,
        key_mask: Option<&[bool]>,
        block: &AttnBlock,
    ) -> Result<Tensor> {
        let d_head = self.spec.token_dim / self.spec.n_heads;
        let scale = 1.0 / (d_head as f64).sqrt();
        let q = q_tokens.matmul(&block.wq)?;
        let k = kv_tokens.matmul(&block.wk)?;
        let v = kv_tokens.matmul(&block.wv)?;
        let mut heads = Vec::with_capacity(self.spec.n_heads);
        for h in 0..self.spec.n_heads {
            let qh = q.slice_cols(h * d_head, d_head)?;
            let kh = k.slice_cols(h * d_head, d_head)?;
            let vh = v.slice_cols(h * d_head, d_head)?;
            let scores = qh.matmul(&kh.transpose()?)?.scale(scale);
            let attn = scores.softmax_rows(key_mask)?;
            heads.push(attn.matmul(&vh)?);
        }
        let mut joined = heads[0].clone();
        for h in &heads[1..] {
            joined = joined.concat(h, 1)?;
        }
        joined.matmul(&block.wo)
    }
}

impl Model for FusionModel {
    fn params(&self) -> Vec<&Tensor> {
        let mut params: Vec<&Tensor> = self.expr_proj.iter().collect();
        params.push(&self.cls_expr);
        params.push(&self.patch_proj);
        params.push(&self.cls_patch);
        params.extend(self.attn_expr.params());
        params.extend(self.attn_patch.params());
        params.extend(self.head.params());
        params
    }

    fn clone_detached(&self) -> FusionModel {
        FusionModel {
            spec: self.spec.clone(),
            expr_proj: self.expr_proj.iter().map(Tensor::detached_clone).collect(),
            cls_expr: self.cls_expr.detached_clone(),
            patch_proj: self.patch_proj.detached_clone(),
            cls_patch: self.cls_patch.detached_clone(),
            attn_expr: self.attn_expr.detached(),
            attn_patch: self.attn_patch.detached(),
            head: self.head.clone_detached(),
        }
    }
}
