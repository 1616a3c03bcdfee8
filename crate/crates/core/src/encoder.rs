//! A small trainable text encoder: hashed character n-grams, a mean-pooled
//! embedding table, and a learnable linear head mapping `hidden_dim` to
//! `out_dim`.
//!
//! ```text
//! text ──tokenize──▶ bucket ids ──mean(embed_table[ids])──▶ pooled ──·W + b──▶ output
//! ```
//!
//! Outputs are not normalized; every consumer compares them by cosine.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Mat64, Vec64};

/// Inputs longer than this are truncated.
pub const MAX_TOKENS: usize = 512;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Number of hash buckets (rows of the embedding table).
    pub vocab_size: usize,
    /// Width of the pooled trunk output.
    pub hidden_dim: usize,
    /// Width of the final embedding.
    pub out_dim: usize,
    /// Character n-gram size, 1 to 3.
    pub ngram: usize,
    pub hash_seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: 4096,
            hidden_dim: 64,
            out_dim: 128,
            ngram: 2,
            hash_seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 {
            return Err(Error::InvalidConfig("vocab_size must be >= 1".into()));
        }
        if self.hidden_dim == 0 || self.out_dim == 0 {
            return Err(Error::InvalidConfig("hidden_dim and out_dim must be >= 1".into()));
        }
        if !(1..=3).contains(&self.ngram) {
            return Err(Error::InvalidConfig(format!("ngram must be 1..=3, got {}", self.ngram)));
        }
        Ok(())
    }
}

/// Encoder weights. The same struct doubles as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub embed_table: Mat64,
    pub proj_weight: Mat64,
    pub proj_bias: Vec64,
}

impl EncoderParams {
    pub fn zeros(config: &EncoderConfig) -> Self {
        Self {
            embed_table: Mat64::zeros(config.vocab_size, config.hidden_dim),
            proj_weight: Mat64::zeros(config.hidden_dim, config.out_dim),
            proj_bias: Vec64::zeros(config.out_dim),
        }
    }

    /// Every weight drawn independently from `uniform(-scale, scale)`.
    pub fn init_uniform(config: &EncoderConfig, seed: u64, scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros(config);
        for t in params.tensors_mut() {
            for v in t {
                *v = rng.random_range(-scale..scale);
            }
        }
        params
    }

    /// Checks the tensor shapes against `config`.
    pub fn check_shapes(&self, config: &EncoderConfig) -> Result<()> {
        let want = [
            ("embed_table", (config.vocab_size, config.hidden_dim), self.embed_table.shape()),
            ("proj_weight", (config.hidden_dim, config.out_dim), self.proj_weight.shape()),
            ("proj_bias", (config.out_dim, 1), (self.proj_bias.len(), 1)),
        ];
        for (name, expected, got) in want {
            if expected != got {
                return Err(Error::ShapeMismatch(format!(
                    "{name}: expected {expected:?}, got {got:?}"
                )));
            }
        }
        Ok(())
    }

    /// Tensors in their fixed serialization order.
    pub fn tensors(&self) -> [&[f64]; 3] {
        [
            self.embed_table.as_slice(),
            self.proj_weight.as_slice(),
            &self.proj_bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 3] {
        [
            self.embed_table.as_mut_slice(),
            self.proj_weight.as_mut_slice(),
            &mut self.proj_bias,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    /// Inverse of [`flatten`](Self::flatten) for a given config.
    pub fn from_flat(config: &EncoderConfig, flat: &[f64]) -> Result<Self> {
        let mut params = Self::zeros(config);
        if flat.len() != params.num_params() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                params.num_params(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for t in params.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(params)
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }
}

/// Forward-pass cache consumed by [`encode_backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncodeTrace {
    pub token_ids: Vec<usize>,
    pub pooled: Vec64,
    pub output: Vec64,
}

/// Seeded 64-bit FNV-1a.
fn fnv1a(bytes: &[u8], seed: u64) -> u64 {
    let mut h = FNV_OFFSET ^ seed;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Hashes the character n-grams of the trimmed text into buckets.
///
/// A text shorter than `ngram` characters yields a single bucket for the
/// whole text.
pub fn tokenize(text: &str, config: &EncoderConfig) -> Result<Vec<usize>> {
    let text = text.trim();
    if text.is_empty() {
        return Err(Error::EmptyText);
    }
    let bucket = |gram: &str| (fnv1a(gram.as_bytes(), config.hash_seed) % config.vocab_size as u64) as usize;
    let bounds: Vec<usize> = text
        .char_indices()
        .map(|(i, _)| i)
        .chain(std::iter::once(text.len()))
        .collect();
    let chars = bounds.len() - 1;
    if chars < config.ngram {
        return Ok(vec![bucket(text)]);
    }
    Ok((0..=chars - config.ngram)
        .take(MAX_TOKENS)
        .map(|i| bucket(&text[bounds[i]..bounds[i + config.ngram]]))
        .collect())
}

pub fn encode(text: &str, params: &EncoderParams, config: &EncoderConfig) -> Result<EncodeTrace> {
    let token_ids = tokenize(text, config)?;
    let mut pooled = Vec64::zeros(config.hidden_dim);
    for &id in &token_ids {
        pooled.add_scaled(1.0, params.embed_table.row(id));
    }
    let inv = 1.0 / token_ids.len() as f64;
    pooled.iter_mut().for_each(|v| *v *= inv);
    let mut output = params.proj_weight.vec_mul(&pooled)?;
    output.add_scaled(1.0, &params.proj_bias);
    Ok(EncodeTrace {
        token_ids,
        pooled,
        output,
    })
}

/// Gradients of `grad_output · output` with respect to every parameter.
pub fn encode_backward(
    trace: &EncodeTrace,
    grad_output: &[f64],
    params: &EncoderParams,
) -> Result<EncoderParams> {
    let mut grads = EncoderParams {
        embed_table: Mat64::zeros(params.embed_table.rows(), params.embed_table.cols()),
        proj_weight: Mat64::zeros(params.proj_weight.rows(), params.proj_weight.cols()),
        proj_bias: Vec64::zeros(params.proj_bias.len()),
    };
    accumulate_backward(trace, grad_output, params, &mut grads)?;
    Ok(grads)
}

/// Like [`encode_backward`] but adds into an existing gradient buffer.
pub fn accumulate_backward(
    trace: &EncodeTrace,
    grad_output: &[f64],
    params: &EncoderParams,
    grads: &mut EncoderParams,
) -> Result<()> {
    let (hidden, out) = params.proj_weight.shape();
    if grad_output.len() != out || trace.output.len() != out || trace.pooled.len() != hidden {
        return Err(Error::ShapeMismatch(format!(
            "trace ({}, {}) / grad_output {} vs projection {hidden}x{out}",
            trace.pooled.len(),
            trace.output.len(),
            grad_output.len()
        )));
    }
    if grads.proj_weight.shape() != (hidden, out)
        || grads.embed_table.shape() != params.embed_table.shape()
        || grads.proj_bias.len() != out
    {
        return Err(Error::ShapeMismatch("gradient buffer does not match params".into()));
    }
    if let Some(&bad) = trace.token_ids.iter().find(|&&id| id >= params.embed_table.rows()) {
        return Err(Error::ShapeMismatch(format!("token id {bad} outside the table")));
    }
    grads.proj_bias.add_scaled(1.0, grad_output);
    for (r, &p) in trace.pooled.iter().enumerate() {
        if p != 0.0 {
            for (g, go) in grads.proj_weight.row_mut(r).iter_mut().zip(grad_output) {
                *g += p * go;
            }
        }
    }
    // ∂/∂pooled = W · grad_output, shared equally by every token.
    let grad_pooled = params.proj_weight.mul_vec(grad_output)?;
    let inv = 1.0 / trace.token_ids.len() as f64;
    for &id in &trace.token_ids {
        for (g, gp) in grads.embed_table.row_mut(id).iter_mut().zip(grad_pooled.iter()) {
            *g += gp * inv;
        }
    }
    Ok(())
}

/// Anything that maps text to an embedding.
pub trait Embedder {
    fn embed(&self, text: &str) -> Result<Vec64>;

    fn dim(&self) -> usize;
}

/// Config and weights bundled for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub params: EncoderParams,
}

impl Encoder {
    pub fn new(config: EncoderConfig, params: EncoderParams) -> Result<Self> {
        config.validate()?;
        params.check_shapes(&config)?;
        Ok(Self { config, params })
    }
}

impl Embedder for Encoder {
    fn embed(&self, text: &str) -> Result<Vec64> {
        Ok(encode(text, &self.params, &self.config)?.output)
    }

    fn dim(&self) -> usize {
        self.config.out_dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, max_rel_err, FD_STEP};

    fn small() -> EncoderConfig {
        EncoderConfig {
            vocab_size: 16,
            hidden_dim: 4,
            out_dim: 6,
            ngram: 2,
            hash_seed: 7,
        }
    }

    /// Independent FNV-1a: the published constants, byte by byte.
    fn reference_bucket(gram: &str, seed: u64, vocab: u64) -> usize {
        let mut h: u64 = 14695981039346656037 ^ seed;
        for b in gram.bytes() {
            h = (h ^ b as u64).wrapping_mul(1099511628211);
        }
        (h % vocab) as usize
    }

    #[test]
    fn tokenize_examples() {
        let cfg = EncoderConfig::default();
        assert_eq!(tokenize("hello world", &cfg).unwrap(), tokenize("hello world", &cfg).unwrap());
        assert_eq!(tokenize("ab", &cfg).unwrap().len(), 1);
        let ids = tokenize("abc", &cfg).unwrap();
        assert_eq!(
            ids,
            vec![
                reference_bucket("ab", cfg.hash_seed, 4096),
                reference_bucket("bc", cfg.hash_seed, 4096)
            ]
        );
        assert!(matches!(tokenize("  \t", &cfg), Err(Error::EmptyText)));
    }

    #[test]
    fn tokenize_handles_multibyte_and_short_text() {
        let cfg = EncoderConfig { ngram: 3, ..Default::default() };
        assert_eq!(tokenize("é", &cfg).unwrap().len(), 1);
        let ids = tokenize("日本語テキスト", &cfg).unwrap();
        assert_eq!(ids.len(), 5);
        assert_eq!(ids[0], reference_bucket("日本語", 0, 4096));
    }

    #[test]
    fn tokenize_truncates() {
        let text = "x".repeat(2000);
        assert_eq!(tokenize(&text, &EncoderConfig::default()).unwrap().len(), MAX_TOKENS);
    }

    #[test]
    fn hash_seed_changes_buckets() {
        let a = tokenize("some longer text", &EncoderConfig::default()).unwrap();
        let b = tokenize("some longer text", &EncoderConfig { hash_seed: 99, ..Default::default() }).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn single_token_matches_matrix_arithmetic() {
        let cfg = small();
        let params = EncoderParams::init_uniform(&cfg, 3, 0.5);
        let trace = encode("ab", &params, &cfg).unwrap();
        let id = trace.token_ids[0];
        for c in 0..cfg.out_dim {
            let mut want = params.proj_bias[c];
            for h in 0..cfg.hidden_dim {
                want += params.embed_table.get(id, h) * params.proj_weight.get(h, c);
            }
            assert!((trace.output[c] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_projection_outputs_bias() {
        let cfg = small();
        let mut params = EncoderParams::init_uniform(&cfg, 3, 0.5);
        params.proj_weight.as_mut_slice().fill(0.0);
        for text in ["abc", "something else"] {
            assert_eq!(encode(text, &params, &cfg).unwrap().output, params.proj_bias);
        }
    }

    #[test]
    fn pooling_ignores_order() {
        let cfg = EncoderConfig { ngram: 1, ..small() };
        let params = EncoderParams::init_uniform(&cfg, 5, 0.5);
        let a = encode("abca", &params, &cfg).unwrap();
        let b = encode("caab", &params, &cfg).unwrap();
        for (x, y) in a.output.iter().zip(b.output.iter()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_trivial_cases() {
        let cfg = small();
        let params = EncoderParams::init_uniform(&cfg, 1, 0.5);
        let trace = encode("abcd", &params, &cfg).unwrap();
        let zero = encode_backward(&trace, &[0.0; 6], &params).unwrap();
        assert!(zero.flatten().iter().all(|&g| g == 0.0));

        let go = [0.3, -1.0, 2.0, 0.0, 0.5, -0.25];
        let grads = encode_backward(&trace, &go, &params).unwrap();
        assert_eq!(&*grads.proj_bias, &go);
        for r in 0..cfg.vocab_size {
            if !trace.token_ids.contains(&r) {
                assert!(grads.embed_table.row(r).iter().all(|&g| g == 0.0));
            }
        }
        assert!(encode_backward(&trace, &[0.0; 5], &params).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let cfg = small();
        let params = EncoderParams::init_uniform(&cfg, 11, 0.5);
        let text = "abcd"; // three bigrams
        let go = [0.7, -0.2, 1.3, -0.9, 0.4, 0.05];
        let trace = encode(text, &params, &cfg).unwrap();
        assert_eq!(trace.token_ids.len(), 3);
        let analytic = encode_backward(&trace, &go, &params).unwrap().flatten();
        let f = |flat: &[f64]| {
            let p = EncoderParams::from_flat(&cfg, flat).unwrap();
            let out = encode(text, &p, &cfg).unwrap().output;
            out.iter().zip(&go).map(|(o, g)| o * g).sum::<f64>()
        };
        let numeric = finite_diff_grad(f, &params.flatten(), FD_STEP).unwrap();
        assert!(max_rel_err(&analytic, &numeric) < 1e-4);
    }

    #[test]
    fn flat_round_trip_and_shape_checks() {
        let cfg = small();
        let p = EncoderParams::init_uniform(&cfg, 2, 0.05);
        assert_eq!(EncoderParams::from_flat(&cfg, &p.flatten()).unwrap(), p);
        assert!(p.check_shapes(&cfg).is_ok());
        assert!(p.check_shapes(&EncoderConfig::default()).is_err());
        assert!(p.flatten().iter().all(|v| v.abs() < 0.05));
    }

    #[test]
    fn config_validation() {
        assert!(EncoderConfig::default().validate().is_ok());
        assert!(EncoderConfig { ngram: 4, ..Default::default() }.validate().is_err());
        assert!(EncoderConfig { vocab_size: 0, ..Default::default() }.validate().is_err());
    }
}
