//! The masked-autoencoder generator (encoder + decoder) and the patch-level
//! discriminator, built from shared transformer pieces.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::patch::{positional_encoding, MaskSet, PatchGrid, PatchSeq};
use crate::numerics::{trunc_normal, ParamSet, ParamVars, Tape, Tensor, Var};

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub enc_blocks: usize,
    pub dec_dim: usize,
    pub dec_blocks: usize,
    pub disc_dim: usize,
    pub disc_blocks: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 128,
            patch_size: 16,
            embed_dim: 64,
            enc_blocks: 2,
            dec_dim: 32,
            dec_blocks: 1,
            disc_dim: 64,
            disc_blocks: 1,
            heads: 4,
            mlp_ratio: 2,
            ln_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn grid(&self) -> Result<PatchGrid> {
        PatchGrid::new(self.image_size, self.image_size, self.patch_size)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        for (name, dim) in [
            ("embed_dim", self.embed_dim),
            ("dec_dim", self.dec_dim),
            ("disc_dim", self.disc_dim),
        ] {
            if dim == 0 || dim % self.heads != 0 {
                return Err(Error::Config(format!(
                    "{name} {dim} not divisible by {} heads",
                    self.heads
                )));
            }
            if dim % 2 != 0 {
                return Err(Error::Config(format!(
                    "{name} {dim} must be even for positional encoding"
                )));
            }
        }
        if self.mlp_ratio == 0 {
            return Err(Error::Config("mlp_ratio must be positive".into()));
        }
        Ok(())
    }
}

/// Projection weights for one attention layer.
pub struct MhaWeights<'a> {
    pub wq: &'a Var,
    pub bq: &'a Var,
    pub wk: &'a Var,
    pub bk: &'a Var,
    pub wv: &'a Var,
    pub bv: &'a Var,
    pub wo: &'a Var,
    pub bo: &'a Var,
}

fn linear(x: &Var, w: &Var, b: &Var) -> Result<Var> {
    x.matmul(w)?.add_row(b)
}

/// Multi-head self/cross attention: project q/k/v, run per-head scaled
/// dot-product attention (scale 1/sqrt(head_dim)), concatenate the heads,
/// and apply the output projection.
pub fn multi_head_attention(
    q: &Var,
    k: &Var,
    v: &Var,
    num_heads: usize,
    w: &MhaWeights,
) -> Result<Var> {
    let dim = *q
        .shape()
        .get(1)
        .ok_or_else(|| Error::Shape("attention input must be 2-D".into()))?;
    if num_heads == 0 || dim % num_heads != 0 {
        return Err(Error::Config(format!(
            "embedding dim {dim} not divisible by {num_heads} heads"
        )));
    }
    if k.shape()[0] != v.shape()[0] {
        return Err(Error::Shape("key/value sequence lengths differ".into()));
    }
    let head_dim = dim / num_heads;
    let qp = linear(q, w.wq, w.bq)?;
    let kp = linear(k, w.wk, w.bk)?;
    let vp = linear(v, w.wv, w.bv)?;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut heads = Vec::with_capacity(num_heads);
    for h in 0..num_heads {
        let qh = qp.slice_cols(h * head_dim, head_dim)?;
        let kh = kp.slice_cols(h * head_dim, head_dim)?;
        let vh = vp.slice_cols(h * head_dim, head_dim)?;
        let scores = qh.matmul(&kh.transpose()?)?.scale(scale);
        let attn = scores.softmax(1)?;
        heads.push(attn.matmul(&vh)?);
    }
    let concat = Var::concat_cols(&heads)?;
    linear(&concat, w.wo, w.bo)
}

fn block_param_names(prefix: &str) -> [String; 16] {
    [
        format!("{prefix}.ln1.g"),
        format!("{prefix}.ln1.b"),
        format!("{prefix}.attn.wq"),
        format!("{prefix}.attn.bq"),
        format!("{prefix}.attn.wk"),
        format!("{prefix}.attn.bk"),
        format!("{prefix}.attn.wv"),
        format!("{prefix}.attn.bv"),
        format!("{prefix}.attn.wo"),
        format!("{prefix}.attn.bo"),
        format!("{prefix}.ln2.g"),
        format!("{prefix}.ln2.b"),
        format!("{prefix}.mlp.w1"),
        format!("{prefix}.mlp.b1"),
        format!("{prefix}.mlp.w2"),
        format!("{prefix}.mlp.b2"),
    ]
}

fn init_block(params: &mut ParamSet, prefix: &str, dim: usize, ratio: usize, rng: &mut ChaCha8Rng) {
    let hidden = dim * ratio;
    let names = block_param_names(prefix);
    params.insert(&names[0], Tensor::full(vec![dim], 1.0));
    params.insert(&names[1], Tensor::zeros(vec![dim]));
    for w in &names[2..10] {
        if w.ends_with(".wq") || w.ends_with(".wk") || w.ends_with(".wv") || w.ends_with(".wo") {
            params.insert(w, trunc_normal(vec![dim, dim], INIT_STD, rng));
        } else {
            params.insert(w, Tensor::zeros(vec![1, dim]));
        }
    }
    params.insert(&names[10], Tensor::full(vec![dim], 1.0));
    params.insert(&names[11], Tensor::zeros(vec![dim]));
    params.insert(&names[12], trunc_normal(vec![dim, hidden], INIT_STD, rng));
    params.insert(&names[13], Tensor::zeros(vec![1, hidden]));
    params.insert(&names[14], trunc_normal(vec![hidden, dim], INIT_STD, rng));
    params.insert(&names[15], Tensor::zeros(vec![1, dim]));
}

/// Pre-norm transformer block: x + MHA(LN(x)), then x + MLP(LN(x)).
fn transformer_block(
    x: &Var,
    p: &ParamVars,
    prefix: &str,
    heads: usize,
    eps: f64,
) -> Result<Var> {
    let names = block_param_names(prefix);
    let h = x.layer_norm(p.get(&names[0]), p.get(&names[1]), eps)?;
    let attn = multi_head_attention(
        &h,
        &h,
        &h,
        heads,
        &MhaWeights {
            wq: p.get(&names[2]),
            bq: p.get(&names[3]),
            wk: p.get(&names[4]),
            bk: p.get(&names[5]),
            wv: p.get(&names[6]),
            bv: p.get(&names[7]),
            wo: p.get(&names[8]),
            bo: p.get(&names[9]),
        },
    )?;
    let x = x.add(&attn)?;
    let h = x.layer_norm(p.get(&names[10]), p.get(&names[11]), eps)?;
    let mlp = linear(
        &linear(&h, p.get(&names[12]), p.get(&names[13]))?.gelu(),
        p.get(&names[14]),
        p.get(&names[15]),
    )?;
    x.add(&mlp)
}

/// Generator forward products for one image and mask.
pub struct GenForward {
    /// Per-visible-patch latent vectors, `[|V|, embed_dim]`.
    pub latent: Var,
    /// Decoder pixel predictions at every slot, `[N, P*P]`.
    pub pred: Var,
    /// Predictions extracted at the masked slots, `[|M|, P*P]`.
    pub x_hat_m: Var,
    /// Reassembled sequence: originals at visible slots, predictions at
    /// masked slots, `[N, P*P]`.
    pub x_tilde: Var,
}

#[derive(Debug, Clone)]
pub struct Generator {
    pub cfg: ModelConfig,
    pub params: ParamSet,
}

impl Generator {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p2 = cfg.patch_size * cfg.patch_size;
        let mut params = ParamSet::new();
        params.insert("enc.embed.w", trunc_normal(vec![p2, cfg.embed_dim], INIT_STD, &mut rng));
        params.insert("enc.embed.b", Tensor::zeros(vec![1, cfg.embed_dim]));
        for i in 0..cfg.enc_blocks {
            init_block(&mut params, &format!("enc.blk{i}"), cfg.embed_dim, cfg.mlp_ratio, &mut rng);
        }
        params.insert("enc.norm.g", Tensor::full(vec![cfg.embed_dim], 1.0));
        params.insert("enc.norm.b", Tensor::zeros(vec![cfg.embed_dim]));
        params.insert(
            "dec.proj.w",
            trunc_normal(vec![cfg.embed_dim, cfg.dec_dim], INIT_STD, &mut rng),
        );
        params.insert("dec.proj.b", Tensor::zeros(vec![1, cfg.dec_dim]));
        params.insert("dec.mask_token", trunc_normal(vec![1, cfg.dec_dim], INIT_STD, &mut rng));
        for i in 0..cfg.dec_blocks {
            init_block(&mut params, &format!("dec.blk{i}"), cfg.dec_dim, cfg.mlp_ratio, &mut rng);
        }
        params.insert("dec.norm.g", Tensor::full(vec![cfg.dec_dim], 1.0));
        params.insert("dec.norm.b", Tensor::zeros(vec![cfg.dec_dim]));
        // pixel head starts at zero so the first reconstructions are flat
        params.insert("dec.head.w", Tensor::zeros(vec![cfg.dec_dim, p2]));
        params.insert("dec.head.b", Tensor::zeros(vec![1, p2]));
        Ok(Self {
            cfg: cfg.clone(),
            params,
        })
    }

    /// Encoder: visible patches -> linear embed + positions -> blocks ->
    /// final norm. Errors if the mask leaves no visible patch.
    pub fn encode(
        &self,
        tape: &Tape,
        vars: &ParamVars,
        seq: &PatchSeq,
        mask: &MaskSet,
    ) -> Result<Var> {
        let visible = mask.visible();
        if visible.is_empty() {
            return Err(Error::Contract(
                "encoder needs at least one visible patch (mask_ratio 1 disallowed)".into(),
            ));
        }
        let grid = seq.grid;
        let pe = positional_encoding(grid, self.cfg.embed_dim)?;
        let patches = tape.constant(seq.data.clone());
        let x_v = patches.gather_rows(&visible)?;
        let pe_v = tape.constant(pe).gather_rows(&visible)?;
        let mut h = linear(&x_v, vars.get("enc.embed.w"), vars.get("enc.embed.b"))?.add(&pe_v)?;
        for i in 0..self.cfg.enc_blocks {
            h = transformer_block(&h, vars, &format!("enc.blk{i}"), self.cfg.heads, self.cfg.ln_eps)?;
        }
        h.layer_norm(vars.get("enc.norm.g"), vars.get("enc.norm.b"), self.cfg.ln_eps)
    }

    /// Decoder: project the latent, fill masked slots with the learned mask
    /// token, add positions at every slot, run the decoder blocks, and emit
    /// pixel predictions. `x_tilde` keeps ground-truth pixels at visible
    /// slots so anomaly evidence lives only in masked regions.
    pub fn decode(
        &self,
        tape: &Tape,
        vars: &ParamVars,
        latent: &Var,
        seq: &PatchSeq,
        mask: &MaskSet,
    ) -> Result<GenForward> {
        let grid = seq.grid;
        let n = grid.num_patches();
        let visible = mask.visible();
        if latent.shape()[0] != visible.len() {
            return Err(Error::Shape(format!(
                "latent has {} rows, mask leaves {} visible patches",
                latent.shape()[0],
                visible.len()
            )));
        }
        let vis_part = linear(latent, vars.get("dec.proj.w"), vars.get("dec.proj.b"))?;
        // slot k -> row in [vis_part ; mask tokens]
        let mut slot_row = vec![usize::MAX; n];
        for (i, &k) in visible.iter().enumerate() {
            slot_row[k] = i;
        }
        for (i, &k) in mask.masked.iter().enumerate() {
            slot_row[k] = visible.len() + i;
        }
        let full = if mask.masked.is_empty() {
            vis_part
        } else {
            let tokens = vars.get("dec.mask_token").repeat_row(mask.masked.len())?;
            Var::concat_rows(&[vis_part, tokens])?
        };
        let mut h = full
            .gather_rows(&slot_row)?
            .add(&tape.constant(positional_encoding(grid, self.cfg.dec_dim)?))?;
        for i in 0..self.cfg.dec_blocks {
            h = transformer_block(&h, vars, &format!("dec.blk{i}"), self.cfg.heads, self.cfg.ln_eps)?;
        }
        let h = h.layer_norm(vars.get("dec.norm.g"), vars.get("dec.norm.b"), self.cfg.ln_eps)?;
        let pred = linear(&h, vars.get("dec.head.w"), vars.get("dec.head.b"))?;
        let x_hat_m = pred.gather_rows(&mask.masked)?;
        // originals at visible slots, predictions at masked slots
        let originals = tape.constant(seq.data.clone());
        let stacked = Var::concat_rows(&[originals, pred.clone()])?;
        let tilde_rows: Vec<usize> = (0..n)
            .map(|k| if mask.masked.binary_search(&k).is_ok() { n + k } else { k })
            .collect();
        let x_tilde = stacked.gather_rows(&tilde_rows)?;
        Ok(GenForward {
            latent: latent.clone(),
            pred,
            x_hat_m,
            x_tilde,
        })
    }

    pub fn forward(
        &self,
        tape: &Tape,
        vars: &ParamVars,
        seq: &PatchSeq,
        mask: &MaskSet,
    ) -> Result<GenForward> {
        let latent = self.encode(tape, vars, seq, mask)?;
        self.decode(tape, vars, &latent, seq, mask)
    }
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    pub cfg: ModelConfig,
    pub params: ParamSet,
}

impl Discriminator {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p2 = cfg.patch_size * cfg.patch_size;
        let mut params = ParamSet::new();
        params.insert("disc.embed.w", trunc_normal(vec![p2, cfg.disc_dim], INIT_STD, &mut rng));
        params.insert("disc.embed.b", Tensor::zeros(vec![1, cfg.disc_dim]));
        for i in 0..cfg.disc_blocks {
            init_block(&mut params, &format!("disc.blk{i}"), cfg.disc_dim, cfg.mlp_ratio, &mut rng);
        }
        params.insert("disc.norm.g", Tensor::full(vec![cfg.disc_dim], 1.0));
        params.insert("disc.norm.b", Tensor::zeros(vec![cfg.disc_dim]));
        params.insert("disc.head.w", Tensor::zeros(vec![cfg.disc_dim, 1]));
        params.insert("disc.head.b", Tensor::zeros(vec![1, 1]));
        Ok(Self {
            cfg: cfg.clone(),
            params,
        })
    }

    /// Per-patch real-vs-reconstructed probability for a subset of patches.
    /// `positions` gives each input row's patch index for the positional
    /// table; gradients flow through `patches` into whatever produced them.
    pub fn discriminate(
        &self,
        tape: &Tape,
        vars: &ParamVars,
        patches: &Var,
        positions: &[usize],
    ) -> Result<Var> {
        if positions.is_empty() || patches.shape()[0] == 0 {
            return Err(Error::Contract("discriminator input is empty".into()));
        }
        if patches.shape()[0] != positions.len() {
            return Err(Error::Shape(format!(
                "{} patches but {} positions",
                patches.shape()[0],
                positions.len()
            )));
        }
        let grid = self.cfg.grid()?;
        let pe = tape
            .constant(positional_encoding(grid, self.cfg.disc_dim)?)
            .gather_rows(positions)?;
        let mut h = linear(patches, vars.get("disc.embed.w"), vars.get("disc.embed.b"))?
            .add(&pe)?;
        for i in 0..self.cfg.disc_blocks {
            h = transformer_block(&h, vars, &format!("disc.blk{i}"), self.cfg.heads, self.cfg.ln_eps)?;
        }
        let h = h.layer_norm(vars.get("disc.norm.g"), vars.get("disc.norm.b"), self.cfg.ln_eps)?;
        let logits = linear(&h, vars.get("disc.head.w"), vars.get("disc.head.b"))?;
        Ok(logits.sigmoid())
    }
}
