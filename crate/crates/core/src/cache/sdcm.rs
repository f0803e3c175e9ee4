//! Stack-distance cache model: hit probability of an access given its reuse
//! distance, under random placement of the intervening lines across sets.

use super::{Associativity, CacheError, CacheLevelConfig};
use crate::reuse::{ReuseDistance, ReuseProfile};

/// Distances whose direct-mapped survival `((B-1)/B)^D` falls below this are
/// treated as certain misses.
const NEGLIGIBLE: f64 = 1e-12;

/// Hit probability in an `assoc`-way cache of `blocks` lines.
///
/// The access hits when fewer than `assoc` of the `D` intervening distinct
/// lines map to its set: the lower tail `P[Binomial(D, A/B) <= A-1]`.
pub fn cond_hit_assoc(d: ReuseDistance, assoc: u64, blocks: u64) -> Result<f64, CacheError> {
    if assoc < 1 || assoc > blocks {
        return Err(CacheError::BadAssociativity { assoc, blocks });
    }
    let d = match d {
        ReuseDistance::Infinite => return Ok(0.0),
        ReuseDistance::Finite(d) => d,
    };
    if d < assoc {
        // Every binomial term up to D is included.
        return Ok(1.0);
    }
    if assoc == blocks {
        return Ok(0.0);
    }
    if direct_survival(d, blocks) < NEGLIGIBLE {
        return Ok(0.0);
    }

    let (a_f, b_f, d_f) = (assoc as f64, blocks as f64, d as f64);
    // log term_0 = D * ln((B-A)/B), then
    // term_{a+1} = term_a * (D-a)/(a+1) * A/(B-A), all in log space.
    let log_ratio = (a_f / (b_f - a_f)).ln();
    let next = |log_term: f64, a: u64| log_term + (d_f - a as f64).ln() - (a as f64 + 1.0).ln() + log_ratio;
    let mut lower = Vec::with_capacity(assoc as usize);
    let mut log_term = d_f * (-a_f / b_f).ln_1p();
    for a in 0..assoc {
        lower.push(log_term);
        log_term = next(log_term, a);
    }
    if d_f * a_f / b_f >= a_f {
        // Mean at or above A: the lower tail is the small side.
        return Ok(clamp_prob(log_sum_exp(&lower).exp()));
    }
    // The lower tail holds most of the mass; take the complement of the
    // upper tail. Past the mode (at most A here) terms only shrink.
    let first = log_term;
    let mut upper = vec![log_term];
    let mut a = assoc;
    while a < d {
        log_term = next(log_term, a);
        a += 1;
        if log_term < first - 60.0 {
            break;
        }
        upper.push(log_term);
    }
    Ok(clamp_prob(-log_sum_exp(&upper).exp_m1()))
}

fn log_sum_exp(logs: &[f64]) -> f64 {
    let peak = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if peak == f64::NEG_INFINITY {
        return peak;
    }
    peak + logs.iter().map(|l| (l - peak).exp()).sum::<f64>().ln()
}

/// Hit probability in a direct-mapped cache of `blocks` lines: `((B-1)/B)^D`.
pub fn cond_hit_direct(d: ReuseDistance, blocks: u64) -> Result<f64, CacheError> {
    if blocks < 1 {
        return Err(CacheError::BadAssociativity { assoc: 1, blocks });
    }
    Ok(match d {
        ReuseDistance::Infinite => 0.0,
        ReuseDistance::Finite(d) => clamp_prob(direct_survival(d, blocks)),
    })
}

fn direct_survival(d: u64, blocks: u64) -> f64 {
    if d == 0 {
        1.0
    } else {
        (1.0 - 1.0 / blocks as f64).powf(d as f64)
    }
}

fn clamp_prob(p: f64) -> f64 {
    if p.is_nan() {
        0.0
    } else {
        p.clamp(0.0, 1.0)
    }
}

/// Hit probability of `cfg` for a whole profile: `sum_D P(D) * P(h | D)`.
/// An empty profile has rate 0.
pub fn hit_rate(profile: &ReuseProfile, cfg: &CacheLevelConfig) -> Result<f64, CacheError> {
    if let Some(l) = profile.line_size() {
        if l != cfg.line_size {
            return Err(CacheError::GranularityMismatch { profile: l, level: cfg.line_size });
        }
    }
    let blocks = cfg.blocks();
    if profile.total() == 0 {
        return Ok(0.0);
    }
    // Weighted by counts and normalized once, so integer hit counts stay
    // exact.
    let mut expected_hits = 0.0;
    for (d, count, _) in profile.iter() {
        let cond = match cfg.associativity {
            Associativity::Full => cond_hit_assoc(d, blocks, blocks)?,
            Associativity::Ways(1) => cond_hit_direct(d, blocks)?,
            Associativity::Ways(a) => cond_hit_assoc(d, a, blocks)?,
        };
        expected_hits += count as f64 * cond;
    }
    Ok(clamp_prob(expected_hits / profile.total() as f64))
}
