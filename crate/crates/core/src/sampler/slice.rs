//! Automated factor slice sampling on a continuous embedding of an integer
//! trajectory.
//!
//! The state is a real vector `x`; the target is evaluated at the nearest
//! lattice point, so its density is constant on unit cells and the induced
//! marginal on the integers is exactly the target pmf. Univariate slice
//! updates run along each eigenvector of the running trajectory covariance.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Exp1};

/// Lattice point of a continuous coordinate.
#[inline]
pub fn to_lattice(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

/// Univariate stepping-out and shrinkage slice update along `direction`.
/// Returns the new log density and the number of expansions and
/// contractions performed.
pub fn slice_along<R, F>(
    x: &mut [f64],
    direction: &[f64],
    width: f64,
    max_stepout: usize,
    current: f64,
    mut logf: F,
    rng: &mut R,
) -> (f64, u32, u32)
where
    R: Rng + ?Sized,
    F: FnMut(&[f64]) -> f64,
{
    let dim = x.len();
    let origin = x.to_vec();
    let mut point = vec![0.0; dim];
    let mut eval = |offset: f64, point: &mut Vec<f64>| {
        for d in 0..dim {
            point[d] = origin[d] + offset * direction[d];
        }
        logf(point)
    };
    let e: f64 = Exp1.sample(rng);
    let level = current - e;

    let mut left = -width * rng.random::<f64>();
    let mut right = left + width;
    let mut expansions = 0;
    let mut j = (max_stepout as f64 * rng.random::<f64>()).floor() as usize;
    let mut k = max_stepout.saturating_sub(1).saturating_sub(j);
    while j > 0 && eval(left, &mut point) > level {
        left -= width;
        j -= 1;
        expansions += 1;
    }
    while k > 0 && eval(right, &mut point) > level {
        right += width;
        k -= 1;
        expansions += 1;
    }

    let mut contractions = 0;
    loop {
        let offset = left + rng.random::<f64>() * (right - left);
        let lp = eval(offset, &mut point);
        if lp > level {
            x.copy_from_slice(&point);
            return (lp, expansions, contractions);
        }
        if offset < 0.0 {
            left = offset;
        } else {
            right = offset;
        }
        contractions += 1;
        if right - left < 1e-9 {
            // the slice always contains the origin's lattice cell
            return (current, expansions, contractions);
        }
    }
}

/// Per-block adaptive state: directions, widths and running moments.
#[derive(Debug, Clone)]
pub struct FactorSlice {
    dim: usize,
    /// Column-major `dim x dim`; column `j` is direction `j`.
    directions: DMatrix<f64>,
    widths: Vec<f64>,
    expansions: Vec<u32>,
    contractions: Vec<u32>,
    count: f64,
    mean: DVector<f64>,
    m2: DMatrix<f64>,
}

impl FactorSlice {
    pub fn new(initial_widths: Vec<f64>) -> Self {
        let dim = initial_widths.len();
        Self {
            dim,
            directions: DMatrix::identity(dim, dim),
            widths: initial_widths,
            expansions: vec![0; dim],
            contractions: vec![0; dim],
            count: 0.0,
            mean: DVector::zeros(dim),
            m2: DMatrix::zeros(dim, dim),
        }
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn direction(&self, j: usize) -> Vec<f64> {
        self.directions.column(j).iter().copied().collect()
    }

    /// One sweep over all directions.
    pub fn sweep<R, F>(
        &mut self,
        x: &mut [f64],
        mut current: f64,
        max_stepout: usize,
        mut logf: F,
        rng: &mut R,
    ) -> f64
    where
        R: Rng + ?Sized,
        F: FnMut(&[f64]) -> f64,
    {
        for j in 0..self.dim {
            let dir = self.direction(j);
            let (lp, e, c) = slice_along(
                x,
                &dir,
                self.widths[j],
                max_stepout,
                current,
                &mut logf,
                rng,
            );
            current = lp;
            self.expansions[j] += e;
            self.contractions[j] += c;
        }
        current
    }

    pub fn observe(&mut self, x: &[f64]) {
        self.count += 1.0;
        let v = DVector::from_column_slice(x);
        let d = &v - &self.mean;
        self.mean += &d / self.count;
        let d2 = &v - &self.mean;
        self.m2 += &d * d2.transpose();
    }

    /// Retunes widths from the expansion/contraction balance and, once
    /// enough draws have accumulated, replaces the directions with the
    /// eigenvectors of the empirical covariance.
    pub fn adapt(&mut self) {
        for j in 0..self.dim {
            let total = self.expansions[j] + self.contractions[j];
            if total > 0 {
                let ratio = self.expansions[j] as f64 / total as f64;
                self.widths[j] = (self.widths[j] * 2.0 * ratio.clamp(0.1, 0.9)).max(0.5);
            }
            self.expansions[j] = 0;
            self.contractions[j] = 0;
        }
        if self.count >= (10 * self.dim).max(20) as f64 {
            let cov = &self.m2 / (self.count - 1.0);
            let eig = SymmetricEigen::new(cov);
            if eig.eigenvalues.iter().all(|v| v.is_finite()) {
                self.directions = eig.eigenvectors;
                self.widths = eig
                    .eigenvalues
                    .iter()
                    .map(|&v| (2.0 * v.max(0.0).sqrt()).max(0.5))
                    .collect();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lattice_rounding_is_half_open() {
        assert_eq!(to_lattice(2.49), 2);
        assert_eq!(to_lattice(2.5), 3);
        assert_eq!(to_lattice(-0.5), 0);
        assert_eq!(to_lattice(-0.51), -1);
    }

    /// Integer target on 0..=20 recovered through the continuous embedding.
    #[test]
    fn recovers_discrete_target() {
        let weights: Vec<f64> = (0..=20).map(|k| (k as f64 - 7.0).powi(2) / -12.0).collect();
        let logf = |x: &[f64]| {
            let n = to_lattice(x[0]);
            if (0..=20).contains(&n) {
                weights[n as usize]
            } else {
                f64::NEG_INFINITY
            }
        };
        let z: f64 = weights.iter().map(|w| w.exp()).sum();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut fs = FactorSlice::new(vec![3.0]);
        let mut x = vec![7.0];
        let mut cur = logf(&x);
        let mut counts = [0usize; 21];
        let draws = 100_000;
        for _ in 0..draws {
            cur = fs.sweep(&mut x, cur, 10, logf, &mut rng);
            counts[to_lattice(x[0]) as usize] += 1;
        }
        let tv: f64 = counts
            .iter()
            .zip(&weights)
            .map(|(&c, w)| (c as f64 / draws as f64 - w.exp() / z).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.01, "tv {tv}");
    }

    #[test]
    fn directions_follow_covariance() {
        let mut fs = FactorSlice::new(vec![1.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let a: f64 = rng.random::<f64>() * 10.0;
            fs.observe(&[a, a + 0.01 * rng.random::<f64>()]);
        }
        fs.adapt();
        // leading eigenvector (largest eigenvalue) lies along (1, 1)
        let (idx, _) = (0..2)
            .map(|j| (j, fs.widths()[j]))
            .fold((0, 0.0), |acc, (j, w)| if w > acc.1 { (j, w) } else { acc });
        let d = fs.direction(idx);
        assert!((d[0].abs() - d[1].abs()).abs() < 0.01);
    }
}
