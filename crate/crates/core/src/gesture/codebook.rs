use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::CODEBOOK_SIZE;
use crate::numerics::Tensor;
use crate::rng;

/// Length of one codebook row.
pub const LATENT_DIM: usize = 256;
/// Seed used for every frozen component so the codebook and motion decoder
/// are identical across runs and run seeds.
pub const FROZEN_SEED: u64 = 0x46_54_4c_4b;

/// Body region a codebook covers. A single whole-body book is used by
/// default; the tag lets a per-region split be configured later.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BodyPart {
    #[default]
    Whole,
    Face,
    Upper,
    Lower,
    Hands,
}

/// Frozen vector-quantization table `[256 × 256]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    table: Tensor,
    pub part: BodyPart,
}

impl Codebook {
    /// Uniform(−1, 1) rows from a named stream; rejects tables whose rows
    /// are not pairwise separated by more than 1e-6.
    pub fn generate(seed: u64, part: BodyPart) -> Result<Self> {
        let mut r = rng::stream(seed, &format!("{}/codebook/{part:?}", rng::streams::FROZEN));
        let data = (0..CODEBOOK_SIZE * LATENT_DIM).map(|_| r.gen_range(-1.0..1.0)).collect();
        Self::from_table(Tensor::new(vec![CODEBOOK_SIZE, LATENT_DIM], data)?, part)
    }

    /// The default frozen codebook.
    pub fn frozen() -> Self {
        Self::generate(FROZEN_SEED, BodyPart::Whole).expect("generated codebook rows are distinct")
    }

    pub fn from_table(table: Tensor, part: BodyPart) -> Result<Self> {
        if table.shape() != [CODEBOOK_SIZE, LATENT_DIM] {
            return Err(Error::shape_in("codebook", format!("expected [256, 256], got {:?}", table.shape())));
        }
        if !table.is_finite() {
            return Err(Error::NonFinite("codebook"));
        }
        let gap = min_pairwise_gap(&table);
        if gap <= 1e-6 {
            return Err(Error::InvalidArgument(format!("codebook rows too close (gap {gap})")));
        }
        Ok(Self { table, part })
    }

    pub fn table(&self) -> &Tensor {
        &self.table
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.table.row(i)
    }

    /// Nearest row by L2 distance for each input row; ties go to the lower index.
    pub fn quantize(&self, latents: &Tensor) -> Result<Vec<usize>> {
        if latents.cols() != LATENT_DIM {
            return Err(Error::shape_in("quantize", format!("latent width {} != {LATENT_DIM}", latents.cols())));
        }
        Ok((0..latents.rows())
            .map(|t| {
                let x = latents.row(t);
                let mut best = (0, f64::INFINITY);
                for k in 0..CODEBOOK_SIZE {
                    let d: f64 = self.row(k).iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                    if d < best.1 {
                        best = (k, d);
                    }
                }
                best.0
            })
            .collect())
    }

    /// Codebook rows for `indices`, `[T × 256]`.
    pub fn dequantize(&self, indices: &[usize]) -> Result<Tensor> {
        if indices.is_empty() {
            return Err(Error::InvalidArgument("no indices to dequantize".into()));
        }
        let mut data = Vec::with_capacity(indices.len() * LATENT_DIM);
        for &i in indices {
            if i >= CODEBOOK_SIZE {
                return Err(Error::InvalidArgument(format!("codebook index {i} >= {CODEBOOK_SIZE}")));
            }
            data.extend_from_slice(self.row(i));
        }
        Tensor::new(vec![indices.len(), LATENT_DIM], data)
    }
}

fn min_pairwise_gap(t: &Tensor) -> f64 {
    let mut gap = f64::INFINITY;
    for i in 0..t.rows() {
        for j in i + 1..t.rows() {
            let d: f64 = t.row(i).iter().zip(t.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            gap = gap.min(d.sqrt());
        }
    }
    gap
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_dequantize_roundtrip() {
        let cb = Codebook::frozen();
        let all: Vec<usize> = (0..CODEBOOK_SIZE).collect();
        assert_eq!(cb.quantize(&cb.dequantize(&all).unwrap()).unwrap(), all);
        assert!(cb.dequantize(&[256]).is_err());
    }

    #[test]
    fn nearest_row_with_two_codes() {
        let mut data = vec![0.0; CODEBOOK_SIZE * LATENT_DIM];
        // Rows 2.. are far away so only e0 = 0 and e1 = 1 compete.
        for k in 1..CODEBOOK_SIZE {
            data[k * LATENT_DIM..(k + 1) * LATENT_DIM].fill(if k == 1 { 1.0 } else { 10.0 + k as f64 });
        }
        let cb = Codebook::from_table(Tensor::new(vec![256, 256], data).unwrap(), BodyPart::Whole).unwrap();
        let x = Tensor::full(&[1, LATENT_DIM], 0.9);
        assert_eq!(cb.quantize(&x).unwrap(), vec![1]);
        let tie = Tensor::full(&[1, LATENT_DIM], 0.5);
        assert_eq!(cb.quantize(&tie).unwrap(), vec![0]);
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(Codebook::frozen(), Codebook::frozen());
        assert_ne!(Codebook::generate(1, BodyPart::Face).unwrap(), Codebook::frozen());
    }
}
