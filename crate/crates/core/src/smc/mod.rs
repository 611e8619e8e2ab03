//! Particle filtering with bootstrap and INLA-based proposals.

mod filter;
mod resample;

pub use filter::{
    replicate_filters, run_filter, summarise, FilterConfig, FilterOutput, ParticleSystem, ProposalKind,
    ReplicateSummary,
};
pub use resample::{
    offspring_counts, resample_multinomial, resample_stratified, resample_systematic, systematic_from_offset,
    Resampler,
};
