//! Residual vector quantization over a stack of codebooks.

use super::kmeans::{kmeans, nearest};
use super::CodecError;
use crate::tensor::Matrix;

/// One `K_l x d` codeword matrix per level.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebooks {
    levels: Vec<Matrix>,
}

impl Codebooks {
    pub fn new(levels: Vec<Matrix>) -> Result<Self, CodecError> {
        if levels.is_empty() {
            return Err(CodecError::NoLevels);
        }
        let d = levels[0].cols();
        for (l, m) in levels.iter().enumerate() {
            if m.rows() == 0 {
                return Err(CodecError::BadLevelSize(l));
            }
            if m.cols() != d {
                return Err(CodecError::DimMismatch {
                    expected: d,
                    got: m.cols(),
                });
            }
            if !m.is_finite() {
                return Err(CodecError::NonFinite("codebook"));
            }
        }
        Ok(Self { levels })
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn dim(&self) -> usize {
        self.levels[0].cols()
    }

    pub fn level(&self, l: usize) -> &Matrix {
        &self.levels[l]
    }

    pub fn levels(&self) -> &[Matrix] {
        &self.levels
    }

    pub fn level_sizes(&self) -> Vec<usize> {
        self.levels.iter().map(Matrix::rows).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizationResult {
    /// Selected codeword index per level.
    pub codes: Vec<usize>,
    /// Selected codeword per level.
    pub selected: Vec<Vec<f64>>,
    /// `residuals[l] = z - sum(selected[..l])`, the vector quantized at level `l`.
    pub residuals: Vec<Vec<f64>>,
    /// Sum of the selected codewords, accumulated level by level from zero.
    pub zhat: Vec<f64>,
}

impl QuantizationResult {
    /// `z - zhat`, what is left after the last level.
    pub fn final_residual(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.zhat).map(|(a, b)| a - b).collect()
    }
}

/// Quantizes `z` level by level; each level picks the codeword closest to the current residual,
/// lowest index on ties.
pub fn quantize(z: &[f64], books: &Codebooks) -> QuantizationResult {
    assert_eq!(z.len(), books.dim(), "latent dimension mismatch");
    quantize_levels(z, books, books.num_levels())
}

/// Like [`quantize`] but only over the first `depth` levels.
pub fn quantize_levels(z: &[f64], books: &Codebooks, depth: usize) -> QuantizationResult {
    let d = z.len();
    let mut partial = vec![0.0; d];
    let mut out = QuantizationResult {
        codes: Vec::with_capacity(depth),
        selected: Vec::with_capacity(depth),
        residuals: Vec::with_capacity(depth),
        zhat: Vec::new(),
    };
    for book in &books.levels[..depth] {
        let residual: Vec<f64> = z.iter().zip(&partial).map(|(a, b)| a - b).collect();
        let (code, _) = nearest(&residual, book);
        let q = book.row(code).to_vec();
        for (p, v) in partial.iter_mut().zip(&q) {
            *p += v;
        }
        out.codes.push(code);
        out.selected.push(q);
        out.residuals.push(residual);
    }
    out.zhat = partial;
    out
}

/// Level-by-level k-means initialization: level 1 clusters the encodings, level `l > 1` clusters
/// what remains after quantizing with the already initialized levels.
pub fn init_codebooks(
    encoded: &Matrix,
    level_sizes: &[usize],
    max_iters: usize,
    seed: u64,
) -> Result<Codebooks, CodecError> {
    if level_sizes.is_empty() {
        return Err(CodecError::NoLevels);
    }
    if let Some(l) = level_sizes.iter().position(|&k| k == 0) {
        return Err(CodecError::BadLevelSize(l));
    }
    let n = encoded.rows();
    let mut levels: Vec<Matrix> = Vec::with_capacity(level_sizes.len());
    let mut residuals = encoded.clone();
    for (l, &k) in level_sizes.iter().enumerate() {
        let level_seed = seed.wrapping_add((l as u64 + 1).wrapping_mul(0x5851_F42D_4C95_7F2D));
        let km = kmeans(&residuals, k, max_iters, level_seed)?;
        levels.push(km.centroids);
        let books = Codebooks {
            levels: levels.clone(),
        };
        for i in 0..n {
            let q = quantize_levels(encoded.row(i), &books, l + 1);
            let r = q.final_residual(encoded.row(i));
            residuals.row_mut(i).copy_from_slice(&r);
        }
    }
    Codebooks::new(levels)
}
