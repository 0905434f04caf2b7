//! Pairwise Markov random field prior on an 8-connected pixel grid.
//!
//! `h(x) = beta * sum_{i~j} b_ij rho(x_i - x_j)` with `b_ij = 1` for edge
//! neighbors and `1/sqrt(2)` for diagonal neighbors, each unordered pair
//! counted once.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Forward half of the neighborhood as `(d_row, d_col, weight)`.
const HALF_NEIGHBORHOOD: [(isize, isize, f64); 4] = [
    (0, 1, 1.0),
    (1, 0, 1.0),
    (1, 1, std::f64::consts::FRAC_1_SQRT_2),
    (1, -1, std::f64::consts::FRAC_1_SQRT_2),
];

/// Full neighborhood, used by per-pixel updates.
pub(crate) const NEIGHBORHOOD: [(isize, isize, f64); 8] = [
    (-1, -1, std::f64::consts::FRAC_1_SQRT_2),
    (-1, 0, 1.0),
    (-1, 1, std::f64::consts::FRAC_1_SQRT_2),
    (0, -1, 1.0),
    (0, 1, 1.0),
    (1, -1, std::f64::consts::FRAC_1_SQRT_2),
    (1, 0, 1.0),
    (1, 1, std::f64::consts::FRAC_1_SQRT_2),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Potential {
    /// `rho(d) = d^2 / 2`.
    Quadratic,
    /// `rho(d) = |d|^p / p * u / (1 + u)` with `u = |d / t|^(q - p)`: behaves like
    /// `|d|^p / p` below the threshold `t` and like `|d|^q` above it.
    Qggmrf { p: f64, q: f64, t: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub beta: f64,
    pub potential: Potential,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            potential: Potential::Quadratic,
        }
    }
}

impl PriorConfig {
    pub fn quadratic(beta: f64) -> Self {
        Self {
            beta,
            potential: Potential::Quadratic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::param("beta", "must be finite and non-negative"));
        }
        if let Potential::Qggmrf { p, q, t } = self.potential {
            if !(1.0 <= q && q <= p && p <= 2.0) {
                return Err(Error::param("potential", format!("need 1 <= q <= p <= 2, got p={p}, q={q}")));
            }
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::param("potential", "threshold t must be positive"));
            }
        }
        Ok(())
    }

    /// `rho(d)`.
    pub fn rho(&self, d: f64) -> f64 {
        match self.potential {
            Potential::Quadratic => 0.5 * d * d,
            Potential::Qggmrf { p, q, t } => {
                let s = d.abs();
                if s == 0.0 {
                    return 0.0;
                }
                let u = (s / t).powf(q - p);
                s.powf(p) / p * u / (1.0 + u)
            }
        }
    }

    /// `rho'(d) / d`, the curvature of the symmetric quadratic majorizer of `rho` at `d`.
    pub fn surrogate_weight(&self, d: f64) -> f64 {
        match self.potential {
            Potential::Quadratic => 1.0,
            Potential::Qggmrf { p, q, t } => {
                let s = d.abs().max(t * 1e-9);
                let u = (s / t).powf(q - p);
                s.powf(p - 2.0) * u / (1.0 + u) * (1.0 + (q - p) / (p * (1.0 + u)))
            }
        }
    }

    /// `h(x)`.
    pub fn value(&self, x: ArrayView2<f64>) -> f64 {
        if self.beta == 0.0 {
            return 0.0;
        }
        let mut total = 0.0;
        for_each_pair(x, |_, _, b, d| total += b * self.rho(d));
        self.beta * total
    }

    /// `grad h(x)`.
    pub fn gradient(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut g = Array2::zeros(x.dim());
        if self.beta == 0.0 {
            return g;
        }
        for_each_pair(x, |i, j, b, d| {
            let f = self.beta * b * d * self.surrogate_weight(d);
            g[i] += f;
            g[j] -= f;
        });
        g
    }

    /// Curvature of the majorizer at `x` along direction `dir`:
    /// `beta * sum b_ij w(x_i - x_j) (dir_i - dir_j)^2`.
    pub fn surrogate_curvature(&self, x: ArrayView2<f64>, dir: ArrayView2<f64>) -> f64 {
        if self.beta == 0.0 {
            return 0.0;
        }
        let mut total = 0.0;
        for_each_pair(x, |i, j, b, d| {
            let dd = dir[i] - dir[j];
            total += b * self.surrogate_weight(d) * dd * dd;
        });
        self.beta * total
    }

    /// `beta * sum_j b_ij` per pixel: the Hessian diagonal of the quadratic prior,
    /// and an upper bound on the majorizer diagonal when `p = 2`.
    pub fn diagonal(&self, n_side: usize) -> Array2<f64> {
        Array2::from_shape_fn((n_side, n_side), |(r, c)| {
            neighbors(n_side, r, c).map(|(_, _, b)| b).sum::<f64>() * self.beta
        })
    }

    /// Dense graph Laplacian `L` with `h(x) = beta/2 x^T L x` for the quadratic potential.
    pub fn laplacian(n_side: usize) -> Array2<f64> {
        let n = n_side * n_side;
        let mut l = Array2::zeros((n, n));
        for r in 0..n_side {
            for c in 0..n_side {
                let i = r * n_side + c;
                for (rr, cc, b) in neighbors(n_side, r, c) {
                    let j = rr * n_side + cc;
                    l[[i, i]] += b;
                    l[[i, j]] -= b;
                }
            }
        }
        l
    }
}

/// In-bounds neighbors of `(r, c)` as `(row, col, weight)`.
pub(crate) fn neighbors(n_side: usize, r: usize, c: usize) -> impl Iterator<Item = (usize, usize, f64)> {
    NEIGHBORHOOD.iter().filter_map(move |&(dr, dc, b)| {
        let rr = r as isize + dr;
        let cc = c as isize + dc;
        (rr >= 0 && cc >= 0 && (rr as usize) < n_side && (cc as usize) < n_side).then_some((rr as usize, cc as usize, b))
    })
}

/// Calls `f(i, j, b_ij, x_i - x_j)` once per unordered neighbor pair.
fn for_each_pair(x: ArrayView2<f64>, mut f: impl FnMut([usize; 2], [usize; 2], f64, f64)) {
    let (rows, cols) = x.dim();
    for r in 0..rows {
        for c in 0..cols {
            for &(dr, dc, b) in &HALF_NEIGHBORHOOD {
                let rr = r as isize + dr;
                let cc = c as isize + dc;
                if rr < 0 || cc < 0 || rr as usize >= rows || cc as usize >= cols {
                    continue;
                }
                let j = [rr as usize, cc as usize];
                f([r, c], j, b, x[[r, c]] - x[j]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, n: usize) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((n, n), || rng.gen_range(-1.0..1.0))
    }

    fn priors() -> [PriorConfig; 3] {
        [
            PriorConfig::quadratic(0.7),
            PriorConfig {
                beta: 1.3,
                potential: Potential::Qggmrf { p: 2.0, q: 1.2, t: 0.1 },
            },
            PriorConfig {
                beta: 0.4,
                potential: Potential::Qggmrf { p: 1.5, q: 1.0, t: 0.5 },
            },
        ]
    }

    #[test]
    fn invariant_to_constant_shift() {
        let x = random_image(1, 9);
        for prior in priors() {
            let shifted = &x + 3.25;
            let a = prior.value(x.view());
            assert!((a - prior.value(shifted.view())).abs() <= 1e-12 * a.max(1.0));
            assert_eq!(prior.value(Array2::from_elem((9, 9), 2.0).view()), 0.0);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = random_image(2, 6);
        for prior in priors() {
            let g = prior.gradient(x.view());
            let h = 1e-6;
            for idx in [[0, 0], [2, 3], [5, 5], [4, 0]] {
                let mut plus = x.clone();
                plus[idx] += h;
                let mut minus = x.clone();
                minus[idx] -= h;
                let fd = (prior.value(plus.view()) - prior.value(minus.view())) / (2.0 * h);
                assert!((fd - g[idx]).abs() <= 1e-5 * fd.abs().max(1.0), "{prior:?} {idx:?}: {fd} vs {}", g[idx]);
            }
        }
    }

    #[test]
    fn quadratic_matches_laplacian_form() {
        let n = 5;
        let x = random_image(3, n);
        let prior = PriorConfig::quadratic(2.0);
        let l = PriorConfig::laplacian(n);
        let v = Array2::from_shape_vec((n * n, 1), x.iter().copied().collect()).unwrap();
        let quad = 0.5 * prior.beta * v.t().dot(&l.dot(&v))[[0, 0]];
        assert!((quad - prior.value(x.view())).abs() < 1e-12);
        let diag = prior.diagonal(n);
        for i in 0..n * n {
            assert!((diag[[i / n, i % n]] - prior.beta * l[[i, i]]).abs() < 1e-12);
        }
    }

    #[test]
    fn surrogate_majorizes_potential() {
        for prior in priors() {
            for &d0 in &[-2.0, -0.3, 0.05, 0.4, 1.7] {
                let w = prior.surrogate_weight(d0);
                for &d in &[-3.0, -1.0, -0.1, 0.0, 0.2, 0.9, 2.5] {
                    let bound = prior.rho(d0) + 0.5 * w * (d * d - d0 * d0);
                    assert!(bound + 1e-12 >= prior.rho(d), "{prior:?} d0={d0} d={d}");
                }
            }
        }
    }

    #[test]
    fn validation() {
        assert!(PriorConfig::quadratic(-1.0).validate().is_err());
        assert!(PriorConfig::quadratic(0.0).validate().is_ok());
        let bad = PriorConfig {
            beta: 1.0,
            potential: Potential::Qggmrf { p: 1.1, q: 1.5, t: 1.0 },
        };
        assert!(bad.validate().is_err());
    }
}
