//! Posterior summaries and convergence diagnostics over retained draws.

use crate::error::{Error, Result};
use crate::sampler::{ChainOutput, Quantity};

/// Pooled summary of one monitored quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub quantity: Quantity,
    pub mean: f64,
    pub sd: f64,
    /// 2.5% quantile.
    pub lower: f64,
    /// 97.5% quantile.
    pub upper: f64,
    pub ess: f64,
    /// Split-chain potential scale reduction; `NaN` when undefined.
    pub rhat: f64,
}

impl PosteriorSummary {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

/// Linear-interpolation quantile of sorted data (R type 7).
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with `n - 1` denominator.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

fn autocovariance(xs: &[f64], lag: usize) -> f64 {
    let n = xs.len();
    let m = mean(xs);
    (0..n - lag)
        .map(|i| (xs[i] - m) * (xs[i + lag] - m))
        .sum::<f64>()
        / n as f64
}

/// Effective sample size over several chains, truncating the summed
/// autocorrelations at the first non-positive pair (initial positive
/// sequence).
pub fn effective_sample_size(chains: &[&[f64]]) -> f64 {
    let total: usize = chains.iter().map(|c| c.len()).sum();
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if n < 4 {
        return total as f64;
    }
    let var_within: f64 =
        chains.iter().map(|c| autocovariance(c, 0)).sum::<f64>() / chains.len() as f64;
    if !(var_within > 0.0) {
        return total as f64;
    }
    let rho = |lag: usize| -> f64 {
        chains.iter().map(|c| autocovariance(c, lag)).sum::<f64>()
            / chains.len() as f64
            / var_within
    };
    let mut sum = 0.0;
    let mut lag = 1;
    while lag + 1 < n {
        let pair = rho(lag) + rho(lag + 1);
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        lag += 2;
    }
    let tau = 1.0 + 2.0 * sum;
    (total as f64 / tau).min(total as f64)
}

/// Split-chain R-hat: each chain is halved and the between/within variance
/// ratio is taken over the halves.
pub fn split_rhat(chains: &[&[f64]]) -> f64 {
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0) / 2;
    if n < 2 {
        return f64::NAN;
    }
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| [&c[..n], &c[c.len() - n..]])
        .collect();
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let w = halves.iter().map(|h| variance(h)).sum::<f64>() / halves.len() as f64;
    let b = n as f64 * variance(&means);
    if !(w > 0.0) {
        return if b > 0.0 { f64::INFINITY } else { f64::NAN };
    }
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b / n as f64;
    (var_plus / w).sqrt()
}

/// Summarises one quantity from per-chain draw vectors.
pub fn summarize_draws(quantity: Quantity, chains: &[&[f64]]) -> Result<PosteriorSummary> {
    let mut pooled: Vec<f64> = chains.iter().flat_map(|c| c.iter().copied()).collect();
    if pooled.len() < 2 {
        return Err(Error::EmptyDraws(quantity.to_string()));
    }
    let m = mean(&pooled);
    let sd = variance(&pooled).sqrt();
    pooled.sort_by(f64::total_cmp);
    Ok(PosteriorSummary {
        mean: m,
        sd,
        lower: quantile_sorted(&pooled, 0.025),
        upper: quantile_sorted(&pooled, 0.975),
        ess: effective_sample_size(chains),
        rhat: split_rhat(chains),
        quantity,
    })
}

/// Pools chains and summarises every monitored quantity.
pub fn summarize(chains: &[ChainOutput]) -> Result<Vec<PosteriorSummary>> {
    let Some(first) = chains.first() else {
        return Err(Error::EmptyDraws("no chains".into()));
    };
    if chains.iter().any(|c| c.quantities != first.quantities) {
        return Err(Error::Invalid("chains monitor different quantities".into()));
    }
    let columns: Vec<Vec<Vec<f64>>> = chains
        .iter()
        .map(|c| {
            (0..c.quantities.len())
                .map(|j| c.draws.iter().map(|row| row[j]).collect())
                .collect()
        })
        .collect();
    first
        .quantities
        .iter()
        .enumerate()
        .map(|(j, q)| {
            let per_chain: Vec<&[f64]> = columns.iter().map(|c| c[j].as_slice()).collect();
            summarize_draws(q.clone(), &per_chain)
        })
        .collect()
}
