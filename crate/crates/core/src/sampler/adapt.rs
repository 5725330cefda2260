//! Proposal-scale adaptation for random-walk Metropolis updates.

use nalgebra::{Matrix2, Vector2};

/// Adaptive scale for a scalar random-walk proposal.
#[derive(Debug, Clone)]
pub(crate) struct RwScale {
    pub log_scale: f64,
    batch_accepted: u32,
    batch_proposed: u32,
    pub accepted: u64,
    pub proposed: u64,
}

impl RwScale {
    pub fn new(scale: f64) -> Self {
        Self {
            log_scale: scale.ln(),
            batch_accepted: 0,
            batch_proposed: 0,
            accepted: 0,
            proposed: 0,
        }
    }

    #[inline]
    pub fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    #[inline]
    pub fn record(&mut self, accepted: bool, retain_stats: bool) {
        self.batch_proposed += 1;
        self.batch_accepted += accepted as u32;
        if retain_stats {
            self.proposed += 1;
            self.accepted += accepted as u64;
        }
    }

    /// Robbins-Monro step on the log scale toward `target` acceptance.
    pub fn adapt(&mut self, target: f64, batch: usize) {
        if self.batch_proposed > 0 {
            let rate = self.batch_accepted as f64 / self.batch_proposed as f64;
            let step = (batch as f64).powf(-0.5).min(1.0);
            self.log_scale = (self.log_scale + 2.0 * step * (rate - target)).clamp(-30.0, 10.0);
        }
        self.batch_accepted = 0;
        self.batch_proposed = 0;
    }
}

/// Two-dimensional block random walk with an empirically adapted
/// covariance (Haario-style), used for the statewide trend.
#[derive(Debug, Clone)]
pub(crate) struct BlockRw {
    pub scale: RwScale,
    chol: Matrix2<f64>,
    count: f64,
    mean: Vector2<f64>,
    m2: Matrix2<f64>,
    empirical: bool,
}

impl BlockRw {
    pub fn new(sd0: f64, sd1: f64) -> Self {
        Self {
            scale: RwScale::new(1.0),
            chol: Matrix2::new(sd0, 0.0, 0.0, sd1),
            count: 0.0,
            mean: Vector2::zeros(),
            m2: Matrix2::zeros(),
            empirical: false,
        }
    }

    pub fn step(&self, z: Vector2<f64>) -> Vector2<f64> {
        self.chol * z * self.scale.scale()
    }

    pub fn observe(&mut self, x: Vector2<f64>) {
        self.count += 1.0;
        let d = x - self.mean;
        self.mean += d / self.count;
        self.m2 += d * (x - self.mean).transpose();
    }

    pub fn adapt(&mut self, target: f64, batch: usize) {
        self.scale.adapt(target, batch);
        if self.count >= 50.0 {
            let cov = self.m2 / (self.count - 1.0);
            // 2.38^2 / d with d = 2
            let scaled = cov * (2.38f64 * 2.38 / 2.0);
            let jitter = Matrix2::identity() * (1e-12 + 1e-6 * scaled.trace().abs());
            if let Some(ch) = (scaled + jitter).cholesky() {
                self.chol = ch.l();
                if !self.empirical {
                    // the learned covariance already carries the scale
                    self.scale.log_scale = 0.0;
                    self.empirical = true;
                }
            }
        }
    }
}
