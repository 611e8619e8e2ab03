use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Resampler {
    #[default]
    Systematic,
    Stratified,
    Multinomial,
}

impl Resampler {
    pub const ALL: [Resampler; 3] = [Resampler::Systematic, Resampler::Stratified, Resampler::Multinomial];

    pub fn name(self) -> &'static str {
        match self {
            Resampler::Systematic => "systematic",
            Resampler::Stratified => "stratified",
            Resampler::Multinomial => "multinomial",
        }
    }

    /// Draws `n` ancestor indices (0-based, ascending) from normalised `w`.
    pub fn resample(self, w: &[f64], n: usize, rng: &mut RngStream) -> Result<Vec<usize>> {
        match self {
            Resampler::Systematic => resample_systematic(w, n, rng),
            Resampler::Stratified => resample_stratified(w, n, rng),
            Resampler::Multinomial => resample_multinomial(w, n, rng),
        }
    }
}

impl std::str::FromStr for Resampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Resampler::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown resampler '{s}'")))
    }
}

fn check_weights(w: &[f64]) -> Result<()> {
    let sum: f64 = w.iter().sum();
    if w.is_empty() || w.iter().any(|v| !(*v >= 0.0)) || !((sum - 1.0).abs() <= 1e-9) {
        return Err(Error::UnnormalizedWeights { sum });
    }
    Ok(())
}

/// Inverse-CDF lookup of ascending points `u` in `[0, 1)`.
fn inverse_cdf(w: &[f64], u: impl Iterator<Item = f64>) -> Vec<usize> {
    // rounding can leave the cumulative sum short of 1; the tail maps to the
    // last index with positive weight
    let last = w.iter().rposition(|v| *v > 0.0).unwrap_or(w.len() - 1);
    let mut out = Vec::new();
    let mut i = 0;
    let mut cum = w[0];
    for p in u {
        while p >= cum && i < last {
            i += 1;
            cum += w[i];
        }
        out.push(i);
    }
    out
}

/// One uniform offset `u`; points `(u + k)/n`.
pub fn resample_systematic(w: &[f64], n: usize, rng: &mut RngStream) -> Result<Vec<usize>> {
    check_weights(w)?;
    let u = rng.uniform();
    Ok(inverse_cdf(w, (0..n).map(move |k| (u + k as f64) / n as f64)))
}

/// Systematic resampling with a given offset `u ∈ [0, 1)`.
pub fn systematic_from_offset(w: &[f64], n: usize, u: f64) -> Result<Vec<usize>> {
    check_weights(w)?;
    Ok(inverse_cdf(w, (0..n).map(move |k| (u + k as f64) / n as f64)))
}

/// One independent uniform per stratum `[k/n, (k+1)/n)`.
pub fn resample_stratified(w: &[f64], n: usize, rng: &mut RngStream) -> Result<Vec<usize>> {
    check_weights(w)?;
    let u: Vec<f64> = (0..n).map(|k| (k as f64 + rng.uniform()) / n as f64).collect();
    Ok(inverse_cdf(w, u.into_iter()))
}

/// `n` i.i.d. categorical draws, returned sorted.
pub fn resample_multinomial(w: &[f64], n: usize, rng: &mut RngStream) -> Result<Vec<usize>> {
    check_weights(w)?;
    let mut u: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
    u.sort_by(f64::total_cmp);
    Ok(inverse_cdf(w, u.into_iter()))
}

/// Number of times each index appears.
pub fn offspring_counts(ancestors: &[usize], len: usize) -> Vec<usize> {
    let mut counts = vec![0; len];
    for &a in ancestors {
        counts[a] += 1;
    }
    counts
}
