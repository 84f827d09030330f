//! Orthonormal Haar discrete wavelet transform.
//!
//! Analysis splits a signal into pairwise-averaged approximations and
//! pairwise differences, both scaled by 1/√2, recursing on the
//! approximation. The transform is orthonormal, so energy is preserved
//! and synthesis inverts it exactly.

use crate::error::{Error, Result};

/// Output of a K-level analysis: `details[k]` holds level k+1 (length
/// L/2^(k+1)), `approx` holds the final approximation (length L/2^K).
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletBands {
    pub approx: Vec<f64>,
    pub details: Vec<Vec<f64>>,
}

impl WaveletBands {
    pub fn signal_len(&self) -> usize {
        self.approx.len() + self.details.iter().map(Vec::len).sum::<usize>()
    }

    /// Σ‖band‖² across approximation and all details.
    pub fn energy(&self) -> f64 {
        let approx: f64 = self.approx.iter().map(|v| v * v).sum();
        let details: f64 = self
            .details
            .iter()
            .flat_map(|d| d.iter())
            .map(|v| v * v)
            .sum();
        approx + details
    }
}

/// K-level Haar analysis of a signal whose length divides by 2^K.
pub fn dwt_haar(x: &[f64], levels: usize) -> Result<WaveletBands> {
    if levels == 0 {
        return Err(Error::param("levels", "must be at least 1"));
    }
    if x.is_empty() || x.len() % (1usize << levels) != 0 {
        return Err(Error::shape(
            "dwt_haar",
            format!("length {} not divisible by 2^{}", x.len(), levels),
        ));
    }
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    let mut approx = x.to_vec();
    let mut details = Vec::with_capacity(levels);
    for _ in 0..levels {
        let half = approx.len() / 2;
        let mut next = Vec::with_capacity(half);
        let mut detail = Vec::with_capacity(half);
        for i in 0..half {
            let (a, b) = (approx[2 * i], approx[2 * i + 1]);
            next.push((a + b) * inv_sqrt2);
            detail.push((a - b) * inv_sqrt2);
        }
        approx = next;
        details.push(detail);
    }
    Ok(WaveletBands { approx, details })
}

/// Exact synthesis: `idwt_haar(dwt_haar(x)) == x` up to rounding.
pub fn idwt_haar(bands: &WaveletBands) -> Result<Vec<f64>> {
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    let mut approx = bands.approx.clone();
    for detail in bands.details.iter().rev() {
        if detail.len() != approx.len() {
            return Err(Error::shape(
                "idwt_haar",
                format!(
                    "detail band length {} does not match approximation length {}",
                    detail.len(),
                    approx.len()
                ),
            ));
        }
        let mut next = Vec::with_capacity(approx.len() * 2);
        for (a, d) in approx.iter().zip(detail) {
            next.push((a + d) * inv_sqrt2);
            next.push((a - d) * inv_sqrt2);
        }
        approx = next;
    }
    Ok(approx)
}
