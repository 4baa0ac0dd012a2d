use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GenError, ModelConfig};
use crate::autograd::{AttnMask, ParamId, ParamStore, Tape, Var};
use crate::tensor::Matrix;
use crate::tokenizer::{TokenSequence, BOS, PAD};

#[derive(Debug, Clone, PartialEq)]
struct Norm {
    g: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
struct Attn {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
struct Ffn {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
struct EncLayer {
    ln1: Norm,
    attn: Attn,
    ln2: Norm,
    ffn: Ffn,
}

#[derive(Debug, Clone, PartialEq)]
struct DecLayer {
    ln1: Norm,
    self_attn: Attn,
    ln2: Norm,
    cross: Attn,
    ln3: Norm,
    ffn: Ffn,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    tok_emb: ParamId,
    enc_pos: ParamId,
    dec_pos: ParamId,
    enc: Vec<EncLayer>,
    enc_ln: Norm,
    dec: Vec<DecLayer>,
    dec_ln: Norm,
    out_w: ParamId,
    out_b: ParamId,
}

struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl Builder<'_> {
    fn dense(&mut self, name: String, rows: usize, cols: usize) -> ParamId {
        let std = 1.0 / (rows as f64).sqrt();
        let m = Matrix::randn(rows, cols, std, &mut self.rng);
        self.store.add(name, m)
    }

    /// Embedding table with rows of roughly unit norm.
    fn table(&mut self, name: String, rows: usize, cols: usize) -> ParamId {
        let m = Matrix::randn(rows, cols, 1.0 / (cols as f64).sqrt(), &mut self.rng);
        self.store.add(name, m)
    }

    fn zeros(&mut self, name: String, cols: usize) -> ParamId {
        self.store.add(name, Matrix::zeros(1, cols))
    }

    fn norm(&mut self, prefix: &str, h: usize) -> Norm {
        Norm {
            g: self
                .store
                .add(format!("{prefix}.g"), Matrix::filled(1, h, 1.0)),
            b: self.zeros(format!("{prefix}.b"), h),
        }
    }

    fn attn(&mut self, prefix: &str, cfg: &ModelConfig) -> Attn {
        let (h, a) = (cfg.hidden, cfg.attn_dim());
        Attn {
            wq: self.dense(format!("{prefix}.wq"), h, a),
            wk: self.dense(format!("{prefix}.wk"), h, a),
            wv: self.dense(format!("{prefix}.wv"), h, a),
            wo: self.dense(format!("{prefix}.wo"), a, h),
        }
    }

    fn ffn(&mut self, prefix: &str, cfg: &ModelConfig) -> Ffn {
        Ffn {
            w1: self.dense(format!("{prefix}.w1"), cfg.hidden, cfg.ff_dim),
            b1: self.zeros(format!("{prefix}.b1"), cfg.ff_dim),
            w2: self.dense(format!("{prefix}.w2"), cfg.ff_dim, cfg.hidden),
            b2: self.zeros(format!("{prefix}.b2"), cfg.hidden),
        }
    }
}

impl Layout {
    fn build(cfg: &ModelConfig, store: &mut ParamStore) -> Self {
        let h = cfg.hidden;
        let mut b = Builder {
            store,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        };
        let tok_emb = b.table("tok_emb".into(), cfg.vocab_size, h);
        let enc_pos = b.table("enc_pos".into(), cfg.max_source_len, h);
        let dec_pos = b.table("dec_pos".into(), cfg.max_target_len, h);
        let enc = (0..cfg.enc_layers)
            .map(|i| EncLayer {
                ln1: b.norm(&format!("enc.{i}.ln1"), h),
                attn: b.attn(&format!("enc.{i}.attn"), cfg),
                ln2: b.norm(&format!("enc.{i}.ln2"), h),
                ffn: b.ffn(&format!("enc.{i}.ffn"), cfg),
            })
            .collect();
        let enc_ln = b.norm("enc.ln", h);
        let dec = (0..cfg.dec_layers)
            .map(|i| DecLayer {
                ln1: b.norm(&format!("dec.{i}.ln1"), h),
                self_attn: b.attn(&format!("dec.{i}.self"), cfg),
                ln2: b.norm(&format!("dec.{i}.ln2"), h),
                cross: b.attn(&format!("dec.{i}.cross"), cfg),
                ln3: b.norm(&format!("dec.{i}.ln3"), h),
                ffn: b.ffn(&format!("dec.{i}.ffn"), cfg),
            })
            .collect();
        let dec_ln = b.norm("dec.ln", h);
        let out_w = b.dense("out.w".into(), h, cfg.vocab_size);
        let out_b = b.zeros("out.b".into(), cfg.vocab_size);
        Self {
            tok_emb,
            enc_pos,
            dec_pos,
            enc,
            enc_ln,
            dec,
            dec_ln,
            out_w,
            out_b,
        }
    }
}

/// Dropout state for one training step.
pub(crate) struct Dropout<'a> {
    pub p: f64,
    pub rng: &'a mut ChaCha8Rng,
}

fn apply_dropout(tape: &mut Tape, x: Var, drop: &mut Option<Dropout>) -> Var {
    let Some(d) = drop else { return x };
    if d.p == 0.0 {
        return x;
    }
    let (r, c) = tape.value(x).shape();
    let keep = 1.0 / (1.0 - d.p);
    let data = (0..r * c)
        .map(|_| {
            if d.rng.random::<f64>() < d.p {
                0.0
            } else {
                keep
            }
        })
        .collect();
    let mask = tape.constant(Matrix::from_vec(r, c, data));
    tape.mul(x, mask)
}

/// Value-level teacher-forced loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NllValue {
    /// Sum of `-log p(target)` over non-PAD targets.
    pub sum: f64,
    pub count: usize,
}

impl NllValue {
    /// Mean over counted targets; 0 when nothing is counted.
    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }
}

/// `-log softmax(logits[t])[targets[t]]` summed over rows whose target is not `PAD`.
pub fn nll_loss(logits: &Matrix, targets: &[u32]) -> Result<NllValue, GenError> {
    if logits.rows() != targets.len() {
        return Err(GenError::ShapeMismatch(format!(
            "{} logits rows for {} targets",
            logits.rows(),
            targets.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0;
    for (r, &t) in targets.iter().enumerate() {
        if t == PAD {
            continue;
        }
        let row = logits.row(r);
        let t = t as usize;
        if t >= row.len() {
            return Err(GenError::ShapeMismatch(format!(
                "target {t} outside vocabulary {}",
                row.len()
            )));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        sum += lse - row[t];
        count += 1;
    }
    Ok(NllValue { sum, count })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    cfg: ModelConfig,
    params: ParamStore,
    layout: Layout,
}

impl Generator {
    /// Seeded random initialization.
    pub fn new(cfg: ModelConfig) -> Result<Self, GenError> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let layout = Layout::build(&cfg, &mut params);
        Ok(Self {
            cfg,
            params,
            layout,
        })
    }

    /// Wraps trained parameters; names and shapes must match what `cfg` produces.
    pub fn from_params(cfg: ModelConfig, params: ParamStore) -> Result<Self, GenError> {
        let template = Self::new(cfg)?;
        if template.params.len() != params.len() {
            return Err(GenError::ShapeMismatch(format!(
                "expected {} tensors, found {}",
                template.params.len(),
                params.len()
            )));
        }
        for (i, (name, v)) in template
            .params
            .names()
            .iter()
            .zip(template.params.values())
            .enumerate()
        {
            let got = &params.values()[i];
            if &params.names()[i] != name || got.shape() != v.shape() {
                return Err(GenError::ShapeMismatch(format!(
                    "tensor {i}: expected {name} {:?}, found {} {:?}",
                    v.shape(),
                    params.names()[i],
                    got.shape()
                )));
            }
        }
        if !params.all_finite() {
            return Err(GenError::ShapeMismatch(
                "non-finite parameter values".into(),
            ));
        }
        Ok(Self {
            layout: template.layout,
            cfg: template.cfg,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    fn check_tokens(&self, tokens: &[u32], max_len: usize, what: &str) -> Result<(), GenError> {
        if tokens.len() > max_len {
            return Err(GenError::ShapeMismatch(format!(
                "{what} length {} exceeds {max_len}",
                tokens.len()
            )));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.cfg.vocab_size) {
            return Err(GenError::ShapeMismatch(format!(
                "token {t} outside vocabulary {}",
                self.cfg.vocab_size
            )));
        }
        Ok(())
    }

    fn embed(&self, tape: &mut Tape, tokens: &[u32], pos: ParamId) -> Var {
        let idx: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let table = tape.param(self.layout.tok_emb);
        let x = tape.gather(table, &idx);
        let ptable = tape.param(pos);
        let positions: Vec<usize> = (0..tokens.len()).collect();
        let p = tape.gather(ptable, &positions);
        tape.add(x, p)
    }

    fn norm(&self, tape: &mut Tape, x: Var, n: &Norm) -> Var {
        let g = tape.param(n.g);
        let b = tape.param(n.b);
        tape.layer_norm(x, g, b)
    }

    fn attention(&self, tape: &mut Tape, a: &Attn, q_in: Var, kv_in: Var, mask: &AttnMask) -> Var {
        let heads = self.cfg.heads;
        let dh = self.cfg.head_dim();
        let (wq, wk, wv, wo) = (
            tape.param(a.wq),
            tape.param(a.wk),
            tape.param(a.wv),
            tape.param(a.wo),
        );
        let q = tape.matmul(q_in, wq);
        let q = tape.scale(q, 1.0 / (dh as f64).sqrt());
        let k = tape.matmul(kv_in, wk);
        let v = tape.matmul(kv_in, wv);
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (qh, kh, vh) = if heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_cols(q, h * dh, dh),
                    tape.slice_cols(k, h * dh, dh),
                    tape.slice_cols(v, h * dh, dh),
                )
            };
            let s = tape.matmul_t(qh, false, kh, true);
            let p = tape.masked_softmax(s, mask);
            outs.push(tape.matmul(p, vh));
        }
        let cat = if heads == 1 {
            outs[0]
        } else {
            tape.concat_cols(&outs)
        };
        tape.matmul(cat, wo)
    }

    fn ffn(&self, tape: &mut Tape, f: &Ffn, x: Var) -> Var {
        let (w1, b1, w2, b2) = (
            tape.param(f.w1),
            tape.param(f.b1),
            tape.param(f.w2),
            tape.param(f.b2),
        );
        let h = tape.matmul(x, w1);
        let h = tape.add_row(h, b1);
        let h = tape.gelu(h);
        let o = tape.matmul(h, w2);
        tape.add_row(o, b2)
    }

    /// Encoder states for `tokens`; `keys[i]` is false for padding.
    pub(crate) fn encode_on(
        &self,
        tape: &mut Tape,
        tokens: &[u32],
        keys: &[bool],
        drop: &mut Option<Dropout>,
    ) -> Var {
        let mask = if keys.iter().all(|&k| k) {
            AttnMask::None
        } else {
            AttnMask::Keys(keys.to_vec())
        };
        let x = self.embed(tape, tokens, self.layout.enc_pos);
        let mut x = apply_dropout(tape, x, drop);
        for layer in &self.layout.enc {
            let h = self.norm(tape, x, &layer.ln1);
            let a = self.attention(tape, &layer.attn, h, h, &mask);
            let a = apply_dropout(tape, a, drop);
            x = tape.add(x, a);
            let h = self.norm(tape, x, &layer.ln2);
            let f = self.ffn(tape, &layer.ffn, h);
            let f = apply_dropout(tape, f, drop);
            x = tape.add(x, f);
        }
        self.norm(tape, x, &self.layout.enc_ln)
    }

    /// Logits `(len(y_in) x vocab)`; row `t` predicts the token after `y_in[..=t]`.
    pub(crate) fn decode_on(
        &self,
        tape: &mut Tape,
        ctx: Var,
        ctx_keys: &[bool],
        y_in: &[u32],
        drop: &mut Option<Dropout>,
    ) -> Var {
        let cross_mask = if ctx_keys.iter().all(|&k| k) {
            AttnMask::None
        } else {
            AttnMask::Keys(ctx_keys.to_vec())
        };
        let x = self.embed(tape, y_in, self.layout.dec_pos);
        let mut x = apply_dropout(tape, x, drop);
        for layer in &self.layout.dec {
            let h = self.norm(tape, x, &layer.ln1);
            let a = self.attention(tape, &layer.self_attn, h, h, &AttnMask::Causal);
            let a = apply_dropout(tape, a, drop);
            x = tape.add(x, a);
            let h = self.norm(tape, x, &layer.ln2);
            let c = self.attention(tape, &layer.cross, h, ctx, &cross_mask);
            let c = apply_dropout(tape, c, drop);
            x = tape.add(x, c);
            let h = self.norm(tape, x, &layer.ln3);
            let f = self.ffn(tape, &layer.ffn, h);
            let f = apply_dropout(tape, f, drop);
            x = tape.add(x, f);
        }
        let x = self.norm(tape, x, &self.layout.dec_ln);
        let w = tape.param(self.layout.out_w);
        let b = tape.param(self.layout.out_b);
        let logits = tape.matmul(x, w);
        tape.add_row(logits, b)
    }

    fn check_source(&self, seq: &TokenSequence) -> Result<(), GenError> {
        if seq.mask.len() != seq.tokens.len() {
            return Err(GenError::ShapeMismatch(format!(
                "{} tokens with {} mask entries",
                seq.tokens.len(),
                seq.mask.len()
            )));
        }
        self.check_tokens(&seq.tokens, self.cfg.max_source_len, "source")
    }

    /// Per-sequence encoder states, one `len x hidden` matrix each. Sequences are independent.
    pub fn encode(&self, batch: &[TokenSequence]) -> Result<Vec<Matrix>, GenError> {
        batch
            .iter()
            .map(|seq| {
                self.check_source(seq)?;
                let keys: Vec<bool> = seq.mask.iter().map(|&m| m == 1).collect();
                let mut tape = Tape::new(&self.params);
                let out = self.encode_on(&mut tape, &seq.tokens, &keys, &mut None);
                Ok(tape.value(out).clone())
            })
            .collect()
    }

    /// Next-token logits for every prefix position given encoder states `ctx`.
    pub fn decode_logits(
        &self,
        ctx: &Matrix,
        ctx_mask: &[u8],
        prefix: &[u32],
    ) -> Result<Matrix, GenError> {
        if prefix.first() != Some(&BOS) {
            return Err(GenError::ShapeMismatch(
                "decoder prefix must start with BOS".into(),
            ));
        }
        if ctx.cols() != self.cfg.hidden || ctx_mask.len() != ctx.rows() {
            return Err(GenError::ShapeMismatch(format!(
                "context {:?} with {} mask entries for hidden {}",
                ctx.shape(),
                ctx_mask.len(),
                self.cfg.hidden
            )));
        }
        self.check_tokens(prefix, self.cfg.max_target_len, "decoder prefix")?;
        let keys: Vec<bool> = ctx_mask.iter().map(|&m| m == 1).collect();
        let mut tape = Tape::new(&self.params);
        let c = tape.constant(ctx.clone());
        let out = self.decode_on(&mut tape, c, &keys, prefix, &mut None);
        Ok(tape.value(out).clone())
    }

    /// Checks one (source content, target) pair against the configured limits.
    pub(crate) fn check_pair(&self, source: &[u32], target: &[u32]) -> Result<(), GenError> {
        self.check_tokens(source, self.cfg.max_source_len, "source")?;
        self.check_tokens(target, self.cfg.max_target_len, "target")?;
        if source.is_empty() || target.is_empty() {
            return Err(GenError::ShapeMismatch("empty source or target".into()));
        }
        Ok(())
    }

    /// Adds the summed target NLL of one pair to `tape`; PAD targets are skipped.
    pub(crate) fn pair_nll(
        &self,
        tape: &mut Tape,
        source: &[u32],
        target: &[u32],
        drop: &mut Option<Dropout>,
    ) -> (Var, usize) {
        let keys = vec![true; source.len()];
        let ctx = self.encode_on(tape, source, &keys, drop);
        let y_in = crate::tokenizer::decoder_input(target);
        let logits = self.decode_on(tape, ctx, &keys, &y_in, drop);
        let targets: Vec<Option<usize>> = target
            .iter()
            .map(|&t| (t != PAD).then_some(t as usize))
            .collect();
        let count = targets.iter().flatten().count();
        (tape.cross_entropy(logits, &targets), count)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::EOS;

    fn tiny() -> ModelConfig {
        ModelConfig {
            vocab_size: 11,
            enc_layers: 2,
            dec_layers: 2,
            hidden: 8,
            ff_dim: 16,
            heads: 2,
            dropout: 0.0,
            max_source_len: 16,
            max_target_len: 8,
            seed: 3,
        }
    }

    fn seq(content: &[u32], len: usize) -> TokenSequence {
        let mut tokens = content.to_vec();
        tokens.resize(len, PAD);
        let mut mask = vec![1u8; content.len()];
        mask.resize(len, 0);
        TokenSequence { tokens, mask }
    }

    #[test]
    fn uneven_heads_are_supported() {
        let cfg = ModelConfig {
            vocab_size: 20,
            hidden: 128,
            heads: 6,
            ff_dim: 32,
            enc_layers: 1,
            dec_layers: 1,
            ..ModelConfig::default()
        };
        assert_eq!(cfg.head_dim(), 21);
        assert_eq!(cfg.attn_dim(), 126);
        let g = Generator::new(cfg).unwrap();
        let wq = g.params().find("enc.0.attn.wq").unwrap();
        assert_eq!(g.params().get(wq).shape(), (128, 126));
        let ctx = g.encode(&[seq(&[3, 4, 5], 3)]).unwrap();
        assert_eq!(ctx[0].shape(), (3, 128));
    }

    #[test]
    fn even_heads_use_the_full_width() {
        let cfg = ModelConfig {
            vocab_size: 20,
            hidden: 128,
            heads: 8,
            ff_dim: 32,
            enc_layers: 1,
            dec_layers: 1,
            ..ModelConfig::default()
        };
        assert_eq!((cfg.head_dim(), cfg.attn_dim()), (16, 128));
        let g = Generator::new(cfg).unwrap();
        let ctx = g.encode(&[seq(&[3, 4], 2)]).unwrap();
        assert_eq!(ctx[0].shape(), (2, 128));
    }

    #[test]
    fn padding_does_not_change_content_states() {
        let g = Generator::new(tiny()).unwrap();
        let content = [3, 4, 5, 6, 7, 8, 9, 10];
        let a = &g.encode(&[seq(&content, 16)]).unwrap()[0];
        let mut other = seq(&content, 16);
        for t in other.tokens[8..].iter_mut() {
            *t = 5;
        }
        let b = &g.encode(&[other]).unwrap()[0];
        let bare = &g.encode(&[seq(&content, 8)]).unwrap()[0];
        for r in 0..8 {
            assert_eq!(a.row(r), b.row(r));
            for (x, y) in a.row(r).iter().zip(bare.row(r)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batch_rows_are_independent() {
        let g = Generator::new(tiny()).unwrap();
        let s = seq(&[3, 9, 4], 5);
        let out = g.encode(&[s.clone(), seq(&[7, 7], 5), s]).unwrap();
        assert_eq!(out[0], out[2]);
    }

    #[test]
    fn decoding_is_causal_and_normalized() {
        let g = Generator::new(tiny()).unwrap();
        let s = seq(&[3, 4, 5, 6], 6);
        let ctx = &g.encode(std::slice::from_ref(&s)).unwrap()[0];
        let short = g.decode_logits(ctx, &s.mask, &[BOS, 5, 6]).unwrap();
        let long = g.decode_logits(ctx, &s.mask, &[BOS, 5, 6, 9, 10]).unwrap();
        for r in 0..3 {
            for (x, y) in short.row(r).iter().zip(long.row(r)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        for r in 0..long.rows() {
            let row = long.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let total: f64 = row.iter().map(|v| (v - max).exp() / z).sum();
            assert!((total - 1.0).abs() < 1e-6);
        }
        let again = Generator::new(tiny()).unwrap();
        assert_eq!(
            again.decode_logits(ctx, &s.mask, &[BOS, 5, 6]).unwrap(),
            short
        );
    }

    #[test]
    fn shape_errors() {
        let g = Generator::new(tiny()).unwrap();
        assert!(matches!(
            g.encode(&[seq(&[3, 11], 2)]),
            Err(GenError::ShapeMismatch(_))
        ));
        assert!(matches!(
            g.encode(&[seq(&[3], 17)]),
            Err(GenError::ShapeMismatch(_))
        ));
        let ctx = Matrix::zeros(2, 8);
        assert!(g.decode_logits(&ctx, &[1, 1], &[5]).is_err());
        assert!(g.decode_logits(&ctx, &[1], &[BOS]).is_err());
    }

    #[test]
    fn nll_examples() {
        let uniform = Matrix::zeros(3, 7);
        let v = nll_loss(&uniform, &[3, 4, EOS]).unwrap();
        assert!((v.mean() - 7f64.ln()).abs() < 1e-12);

        let mut confident = Matrix::zeros(1, 4);
        let mut prev = f64::INFINITY;
        for margin in [1.0, 5.0, 20.0, 60.0] {
            confident.set(0, 2, margin);
            let l = nll_loss(&confident, &[2]).unwrap().mean();
            assert!(l < prev);
            prev = l;
        }
        assert!(prev < 1e-20);

        let v = nll_loss(&uniform, &[PAD, PAD, PAD]).unwrap();
        assert_eq!((v.sum, v.count, v.mean()), (0.0, 0, 0.0));
        assert!(nll_loss(&uniform, &[1, 2]).is_err());
    }

    #[test]
    fn sequence_logprob_factorizes() {
        let g = Generator::new(tiny()).unwrap();
        let s = seq(&[3, 4, 5], 3);
        let ctx = &g.encode(std::slice::from_ref(&s)).unwrap()[0];
        let y = [6u32, 9, 4, EOS];
        let full = g
            .decode_logits(ctx, &s.mask, &crate::tokenizer::decoder_input(&y))
            .unwrap();
        let joint = -nll_loss(&full, &y).unwrap().sum;
        let mut stepwise = 0.0;
        let mut prefix = vec![BOS];
        for &t in &y {
            let logits = g.decode_logits(ctx, &s.mask, &prefix).unwrap();
            let last = Matrix::from_vec(1, logits.cols(), logits.row(logits.rows() - 1).to_vec());
            stepwise -= nll_loss(&last, &[t]).unwrap().sum;
            prefix.push(t);
        }
        assert!((joint - stepwise).abs() < 1e-10);
    }

    #[test]
    fn from_params_checks_layout() {
        let g = Generator::new(tiny()).unwrap();
        let back = Generator::from_params(tiny(), g.params().clone()).unwrap();
        assert_eq!(back, g);
        let other = ModelConfig {
            ff_dim: 12,
            ..tiny()
        };
        assert!(Generator::from_params(other, g.params().clone()).is_err());
    }
}
