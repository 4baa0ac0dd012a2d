//! Encoder/decoder MLPs, the residual-quantized autoencoder objective and its training loop.
//!
//! Gradients through the quantizer use the straight-through estimator: the decoder sees
//! `z + sg[zhat - z]`. The objective per item is
//!
//! ```text
//! ||x - xhat||^2 + sum_l ||sg[r_l] - q_l||^2 + beta * sum_l ||r_l - sg[q_l]||^2
//! ```
//!
//! where `r_l` is the residual entering level `l` and `q_l` its selected codeword. In the encoder
//! term the earlier codewords inside `r_l` are treated as constants, so it only moves the encoder.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::quantize::{init_codebooks, quantize, Codebooks, QuantizationResult};
use super::CodecError;
use crate::autograd::{ParamId, ParamStore, Tape, Var};
use crate::gradcheck::{finite_difference_check, GradCheckReport, FD_STEP};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::{sq_dist, Matrix};

/// Item input vectors, row `i - 1` for item `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemFeatures {
    pub matrix: Matrix,
    pub source: FeatureSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureSource {
    File,
    Random { seed: u64 },
}

impl ItemFeatures {
    /// Standard normal features.
    pub fn random(items: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            matrix: Matrix::randn(items, dim, 1.0, &mut rng),
            source: FeatureSource::Random { seed },
        }
    }

    pub fn from_matrix(matrix: Matrix) -> Result<Self, CodecError> {
        if !matrix.is_finite() {
            return Err(CodecError::NonFinite("item features"));
        }
        Ok(Self {
            matrix,
            source: FeatureSource::File,
        })
    }

    pub fn num_items(&self) -> usize {
        self.matrix.rows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecConfig {
    pub input_dim: usize,
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    /// Codebook size per quantization level.
    pub level_sizes: Vec<usize>,
    pub beta: f64,
    pub lr: f64,
    pub epochs: usize,
    /// Items per step; 0 means full batch.
    pub batch_size: usize,
    pub kmeans_iters: usize,
    pub seed: u64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            input_dim: 64,
            latent_dim: 32,
            encoder_hidden: vec![128, 64],
            decoder_hidden: vec![64, 128],
            level_sizes: vec![32, 32, 32],
            beta: 0.25,
            lr: 1e-3,
            epochs: 200,
            batch_size: 0,
            kmeans_iters: 100,
            seed: 0,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<(), CodecError> {
        if self.level_sizes.is_empty() {
            return Err(CodecError::NoLevels);
        }
        if let Some(l) = self.level_sizes.iter().position(|&k| k == 0) {
            return Err(CodecError::BadLevelSize(l));
        }
        if self.input_dim == 0 || self.latent_dim == 0 {
            return Err(CodecError::BadConfig("dimensions must be positive".into()));
        }
        if self
            .encoder_hidden
            .iter()
            .chain(&self.decoder_hidden)
            .any(|&w| w == 0)
        {
            return Err(CodecError::BadConfig(
                "hidden widths must be positive".into(),
            ));
        }
        if !(self.beta >= 0.0 && self.lr >= 0.0) {
            return Err(CodecError::BadConfig(
                "beta and lr must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Dense layers with GELU between them (none after the last).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    pub fn new(
        prefix: &str,
        widths: &[usize],
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let std = 1.0 / (w[0] as f64).sqrt();
                let weight = store.add(
                    format!("{prefix}.{i}.w"),
                    Matrix::randn(w[0], w[1], std, rng),
                );
                let bias = store.add(format!("{prefix}.{i}.b"), Matrix::zeros(1, w[1]));
                (weight, bias)
            })
            .collect();
        Self { layers }
    }

    /// Rebuilds the layer list from parameter names in `store`.
    pub fn from_store(prefix: &str, store: &ParamStore) -> Option<Self> {
        let mut layers = Vec::new();
        while let (Some(w), Some(b)) = (
            store.find(&format!("{prefix}.{}.w", layers.len())),
            store.find(&format!("{prefix}.{}.b", layers.len())),
        ) {
            layers.push((w, b));
        }
        (!layers.is_empty()).then_some(Self { layers })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let wv = tape.param(w);
            let bv = tape.param(b);
            h = tape.matmul(h, wv);
            h = tape.add_row(h, bv);
            if i + 1 < self.layers.len() {
                h = tape.gelu(h);
            }
        }
        h
    }
}

/// Encoder `f: R^{d_x} -> R^d` and decoder `g: R^d -> R^{d_x}` sharing one parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderDecoder {
    pub params: ParamStore,
    pub encoder: Mlp,
    pub decoder: Mlp,
}

impl EncoderDecoder {
    pub fn new(cfg: &CodecConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut params = ParamStore::new();
        let mut enc_widths = vec![cfg.input_dim];
        enc_widths.extend(&cfg.encoder_hidden);
        enc_widths.push(cfg.latent_dim);
        let mut dec_widths = vec![cfg.latent_dim];
        dec_widths.extend(&cfg.decoder_hidden);
        dec_widths.push(cfg.input_dim);
        let encoder = Mlp::new("encoder", &enc_widths, &mut params, rng);
        let decoder = Mlp::new("decoder", &dec_widths, &mut params, rng);
        Self {
            params,
            encoder,
            decoder,
        }
    }

    pub fn from_params(params: ParamStore) -> Option<Self> {
        let encoder = Mlp::from_store("encoder", &params)?;
        let decoder = Mlp::from_store("decoder", &params)?;
        Some(Self {
            params,
            encoder,
            decoder,
        })
    }

    pub fn encode(&self, x: &Matrix) -> Matrix {
        let mut tape = Tape::new(&self.params);
        let xv = tape.constant(x.clone());
        let z = self.encoder.forward(&mut tape, xv);
        tape.value(z).clone()
    }

    pub fn decode(&self, z: &Matrix) -> Matrix {
        let mut tape = Tape::new(&self.params);
        let zv = tape.constant(z.clone());
        let x = self.decoder.forward(&mut tape, zv);
        tape.value(x).clone()
    }
}

/// Value-level loss terms for one item.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub recon: f64,
    /// Codeword term plus the beta-weighted encoder term.
    pub commit: f64,
}

/// Evaluates the objective for one item from already computed quantities.
pub fn rqvae_loss(x: &[f64], xhat: &[f64], qres: &QuantizationResult, beta: f64) -> LossTerms {
    let recon = sq_dist(x, xhat);
    let pull: f64 = qres
        .residuals
        .iter()
        .zip(&qres.selected)
        .map(|(r, q)| sq_dist(r, q))
        .sum();
    // Both commitment directions share a value; only their gradients differ.
    let commit = pull + beta * pull;
    LossTerms {
        total: recon + commit,
        recon,
        commit,
    }
}

/// Quantities held fixed (stop-gradient) while differentiating one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenQuantization {
    /// `codes[l][row]`.
    pub codes: Vec<Vec<usize>>,
    /// `zhat - z`, added to the encoder output for the straight-through path.
    pub st_offset: Matrix,
    /// Residual entering each level.
    pub residuals: Vec<Matrix>,
    /// Sum of the codewords chosen before each level.
    pub prefix: Vec<Matrix>,
    /// Codeword chosen at each level.
    pub selected: Vec<Matrix>,
}

impl FrozenQuantization {
    pub fn compute(z: &Matrix, books: &Codebooks) -> Self {
        let (n, d) = z.shape();
        let levels = books.num_levels();
        let mut codes = vec![Vec::with_capacity(n); levels];
        let mut st_offset = Matrix::zeros(n, d);
        let mut residuals = vec![Matrix::zeros(n, d); levels];
        let mut prefix = vec![Matrix::zeros(n, d); levels];
        let mut selected = vec![Matrix::zeros(n, d); levels];
        for i in 0..n {
            let zi = z.row(i);
            let q = quantize(zi, books);
            for (o, (h, zz)) in st_offset.row_mut(i).iter_mut().zip(q.zhat.iter().zip(zi)) {
                *o = h - zz;
            }
            for l in 0..levels {
                codes[l].push(q.codes[l]);
                residuals[l].row_mut(i).copy_from_slice(&q.residuals[l]);
                selected[l].row_mut(i).copy_from_slice(&q.selected[l]);
                let p: Vec<f64> = zi.iter().zip(&q.residuals[l]).map(|(a, b)| a - b).collect();
                prefix[l].row_mut(i).copy_from_slice(&p);
            }
        }
        Self {
            codes,
            st_offset,
            residuals,
            prefix,
            selected,
        }
    }
}

/// Nodes of the batch objective, each averaged over rows.
pub struct LossNodes {
    pub total: Var,
    pub recon: Var,
    pub commit: Var,
}

/// Records the batch objective on `tape`. `codebooks` are the parameter ids of the codeword
/// matrices in the same store as `model`'s parameters.
pub fn build_loss(
    tape: &mut Tape,
    model_encoder: &Mlp,
    model_decoder: &Mlp,
    codebooks: &[ParamId],
    x: &Matrix,
    frozen: &FrozenQuantization,
    beta: f64,
) -> LossNodes {
    let n = x.rows() as f64;
    let xv = tape.constant(x.clone());
    let z = model_encoder.forward(tape, xv);
    let offset = tape.constant(frozen.st_offset.clone());
    let zhat = tape.add(z, offset);
    let xhat = model_decoder.forward(tape, zhat);
    let diff = tape.sub(xv, xhat);
    let recon = tape.sum_sq(diff);
    let recon = tape.scale(recon, 1.0 / n);

    let mut commit_terms = Vec::with_capacity(codebooks.len() * 2);
    for (l, &book) in codebooks.iter().enumerate() {
        let table = tape.param(book);
        let q = tape.gather(table, &frozen.codes[l]);
        let r_const = tape.constant(frozen.residuals[l].clone());
        let pull = tape.sub(r_const, q);
        let pull = tape.sum_sq(pull);
        commit_terms.push(tape.scale(pull, 1.0 / n));

        let prefix = tape.constant(frozen.prefix[l].clone());
        let r = tape.sub(z, prefix);
        let q_const = tape.constant(frozen.selected[l].clone());
        let push = tape.sub(r, q_const);
        let push = tape.sum_sq(push);
        commit_terms.push(tape.scale(push, beta / n));
    }
    let commit = tape.sum_scalars(&commit_terms);
    let total = tape.sum_scalars(&[recon, commit]);
    LossNodes {
        total,
        recon,
        commit,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub total: f64,
    pub recon: f64,
    pub commit: f64,
    /// Reconstruction error per feature element.
    pub recon_mse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedCodec {
    pub model: EncoderDecoder,
    pub books: Codebooks,
    pub history: Vec<EpochLoss>,
}

impl TrainedCodec {
    /// Per-element reconstruction MSE of `x` through hard quantization.
    pub fn recon_mse(&self, x: &Matrix) -> f64 {
        recon_mse(&self.model, &self.books, x)
    }

    /// Codewords in use per level when encoding `x`.
    pub fn utilization(&self, x: &Matrix) -> Vec<usize> {
        codebook_usage(&self.model, &self.books, x)
    }
}

pub fn recon_mse(model: &EncoderDecoder, books: &Codebooks, x: &Matrix) -> f64 {
    let z = model.encode(x);
    let mut zhat = Matrix::zeros(z.rows(), z.cols());
    for i in 0..z.rows() {
        zhat.row_mut(i)
            .copy_from_slice(&quantize(z.row(i), books).zhat);
    }
    let xhat = model.decode(&zhat);
    let sse: f64 = x
        .data()
        .iter()
        .zip(xhat.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    sse / x.len().max(1) as f64
}

/// Number of distinct codewords in use at each level.
pub fn codebook_usage(model: &EncoderDecoder, books: &Codebooks, x: &Matrix) -> Vec<usize> {
    let z = model.encode(x);
    let mut used: Vec<Vec<bool>> = books
        .level_sizes()
        .iter()
        .map(|&k| vec![false; k])
        .collect();
    for i in 0..z.rows() {
        for (l, c) in quantize(z.row(i), books).codes.into_iter().enumerate() {
            used[l][c] = true;
        }
    }
    used.iter()
        .map(|u| u.iter().filter(|&&b| b).count())
        .collect()
}

/// Trains encoder, decoder and codebooks with Adam. Codebooks are initialized by k-means on the
/// encodings of the untrained encoder.
pub fn train_rqvae(features: &ItemFeatures, cfg: &CodecConfig) -> Result<TrainedCodec, CodecError> {
    cfg.validate()?;
    if features.dim() != cfg.input_dim {
        return Err(CodecError::DimMismatch {
            expected: cfg.input_dim,
            got: features.dim(),
        });
    }
    let n = features.num_items();
    if n == 0 {
        return Err(CodecError::EmptyInput);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let EncoderDecoder {
        mut params,
        encoder,
        decoder,
    } = EncoderDecoder::new(cfg, &mut rng);
    let n_model = params.len();

    let z0 = {
        let tmp = EncoderDecoder {
            params: params.clone(),
            encoder: encoder.clone(),
            decoder: decoder.clone(),
        };
        tmp.encode(&features.matrix)
    };
    let init = init_codebooks(&z0, &cfg.level_sizes, cfg.kmeans_iters, cfg.seed)?;
    let book_ids: Vec<ParamId> = init
        .levels()
        .iter()
        .enumerate()
        .map(|(l, m)| params.add(format!("codebook.{l}"), m.clone()))
        .collect();

    let mut adam = Adam::new(
        &params,
        AdamConfig {
            lr: cfg.lr,
            ..Default::default()
        },
    );
    let batch = if cfg.batch_size == 0 {
        n
    } else {
        cfg.batch_size.min(n)
    };
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        if batch < n {
            order.shuffle(&mut rng);
        }
        let (mut total, mut recon, mut commit) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(batch) {
            let mut x = Matrix::zeros(chunk.len(), features.dim());
            for (r, &i) in chunk.iter().enumerate() {
                x.row_mut(r).copy_from_slice(features.matrix.row(i));
            }
            let books = current_books(&params, &book_ids)?;
            let grads = {
                let z = {
                    let mut tape = Tape::new(&params);
                    let xv = tape.constant(x.clone());
                    let z = encoder.forward(&mut tape, xv);
                    tape.value(z).clone()
                };
                let frozen = FrozenQuantization::compute(&z, &books);
                let mut tape = Tape::new(&params);
                let nodes = build_loss(
                    &mut tape, &encoder, &decoder, &book_ids, &x, &frozen, cfg.beta,
                );
                let w = chunk.len() as f64 / n as f64;
                total += w * tape.scalar(nodes.total);
                recon += w * tape.scalar(nodes.recon);
                commit += w * tape.scalar(nodes.commit);
                if !tape.scalar(nodes.total).is_finite() {
                    return Err(CodecError::NonFiniteLoss(epoch));
                }
                tape.backward(nodes.total)
            };
            adam.step(&mut params, &grads);
        }
        history.push(EpochLoss {
            epoch,
            total,
            recon,
            commit,
            recon_mse: recon / features.dim() as f64,
        });
    }

    let books = current_books(&params, &book_ids)?;
    let mut values = params.values().to_vec();
    values.truncate(n_model);
    let mut model_params = ParamStore::new();
    for (name, v) in params.names()[..n_model].iter().zip(values) {
        model_params.add(name.clone(), v);
    }
    if !model_params.all_finite() {
        return Err(CodecError::NonFiniteLoss(cfg.epochs.saturating_sub(1)));
    }
    Ok(TrainedCodec {
        model: EncoderDecoder {
            params: model_params,
            encoder,
            decoder,
        },
        books,
        history,
    })
}

/// Finite-difference check of the batch objective with quantization decisions held at their
/// values for the initial parameters. The frozen quantities are exactly the stop-gradient inputs,
/// so this is the function the analytic gradients differentiate.
pub fn grad_check(
    features: &ItemFeatures,
    cfg: &CodecConfig,
    tol: f64,
) -> Result<GradCheckReport, CodecError> {
    cfg.validate()?;
    if features.dim() != cfg.input_dim {
        return Err(CodecError::DimMismatch {
            expected: cfg.input_dim,
            got: features.dim(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let EncoderDecoder {
        mut params,
        encoder,
        decoder,
    } = EncoderDecoder::new(cfg, &mut rng);
    let x = &features.matrix;
    let z = {
        let mut tape = Tape::new(&params);
        let xv = tape.constant(x.clone());
        let z = encoder.forward(&mut tape, xv);
        tape.value(z).clone()
    };
    let init = init_codebooks(&z, &cfg.level_sizes, cfg.kmeans_iters, cfg.seed)?;
    // Spread codewords off the k-means optimum so codebook gradients are not all near zero.
    let book_ids: Vec<ParamId> = init
        .levels()
        .iter()
        .enumerate()
        .map(|(l, m)| {
            let mut book = Matrix::randn(m.rows(), m.cols(), 0.1, &mut rng);
            book.add_assign(m);
            params.add(format!("codebook.{l}"), book)
        })
        .collect();
    let books = current_books(&params, &book_ids)?;
    let frozen = FrozenQuantization::compute(&z, &books);
    let loss = |p: &ParamStore| {
        let mut tape = Tape::new(p);
        let nodes = build_loss(
            &mut tape, &encoder, &decoder, &book_ids, x, &frozen, cfg.beta,
        );
        (tape.scalar(nodes.total), tape.backward(nodes.total))
    };
    let (_, grads) = loss(&params);
    let report = finite_difference_check(&params, &grads, FD_STEP, |p| loss(p).0);
    if report.max_rel_err >= tol {
        return Err(CodecError::GradMismatch {
            tensor: report.worst_tensor.clone(),
            err: report.max_rel_err,
        });
    }
    Ok(report)
}

fn current_books(params: &ParamStore, ids: &[ParamId]) -> Result<Codebooks, CodecError> {
    Codebooks::new(ids.iter().map(|&id| params.get(id).clone()).collect())
}
