//! Deterministic parameter initialization.
//!
//! Every parameter draws from its own ChaCha8 stream, keyed by the run seed
//! mixed with a hash of the parameter name. Adding or removing one parameter
//! therefore never shifts the values of the others.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::numerics::tensor::Tensor;

/// FNV-1a hash of a byte string; stable across platforms and runs.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Per-parameter RNG derived from the run seed and the parameter name.
pub fn rng_for(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a(name.as_bytes()))
}

/// Xavier / Glorot uniform: U(−a, a) with a = √(6 / (fan_in + fan_out)).
pub fn xavier_uniform(seed: u64, name: &str, fan_in: usize, fan_out: usize, shape: &[usize]) -> Tensor {
    let mut rng = rng_for(seed, name);
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-a..a)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape/product consistent by construction")
}

/// Matrix of Xavier-uniform weights with fan sizes taken from its shape.
pub fn xavier_matrix(seed: u64, name: &str, rows: usize, cols: usize) -> Tensor {
    xavier_uniform(seed, name, rows, cols, &[rows, cols])
}

/// All-zero tensor, the conventional start for biases.
pub fn zeros(shape: &[usize]) -> Tensor {
    Tensor::zeros(shape.to_vec())
}

/// All-ones tensor, the conventional start for layer-norm gains.
pub fn ones(shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), vec![1.0; n]).expect("shape/product consistent by construction")
}

/// Constant-filled tensor.
pub fn full(shape: &[usize], value: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), vec![value; n]).expect("shape/product consistent by construction")
}
