//! The observation model `Y = theta theta^T / sqrt(n) + Z`.
//!
//! `Z` is a symmetric Gaussian matrix with independent `N(0, 1)` entries
//! above the diagonal. Two diagonal conventions are supported: the classical
//! ensemble with `Z_ii ~ N(0, 2)` and a unit-variance diagonal, which the
//! Hermite machinery in [`crate::lowdeg`] requires. Noise is drawn from one
//! counter-based stream per row with the diagonal entry first, so the two
//! conventions produce bit-identical off-diagonal entries at equal seeds.

use crate::error::{Error, Result};
use crate::prior::DiscretePrior;
use crate::rng::{domain, stream};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Distribution of the diagonal noise entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum DiagonalConvention {
    /// `Z_ii ~ N(0, 2)`.
    GoeVar2,
    /// `Z_ii ~ N(0, 1)`.
    UnitVar1,
}

impl DiagonalConvention {
    fn diag_scale(self) -> f64 {
        match self {
            DiagonalConvention::GoeVar2 => std::f64::consts::SQRT_2,
            DiagonalConvention::UnitVar1 => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DiagonalConvention::GoeVar2 => "goe",
            DiagonalConvention::UnitVar1 => "unit",
        }
    }
}

impl std::str::FromStr for DiagonalConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "goe" => Ok(DiagonalConvention::GoeVar2),
            "unit" => Ok(DiagonalConvention::UnitVar1),
            other => Err(Error::invalid(format!(
                "unknown diagonal convention {other:?}, expected \"goe\" or \"unit\""
            ))),
        }
    }
}

/// One draw of the model: the data matrix together with the planted signal
/// and the sampling coordinates that produced it.
#[derive(Debug, Clone)]
pub struct Observation {
    pub n: usize,
    /// Exactly symmetric data matrix.
    pub y: DMatrix<f64>,
    /// Planted signal, i.i.d. from the prior.
    pub theta: DVector<f64>,
    pub seed: u64,
    pub convention: DiagonalConvention,
}

impl Observation {
    /// Sample an observation. Bit-identical for equal `(seed, convention)`.
    pub fn sample(
        prior: &DiscretePrior,
        n: usize,
        seed: u64,
        convention: DiagonalConvention,
    ) -> Result<Self> {
        Self::build(prior, n, seed, convention, true)
    }

    /// Debug variant with the noise forced to zero: `Y = theta theta^T / sqrt(n)`.
    pub fn sample_noiseless(
        prior: &DiscretePrior,
        n: usize,
        seed: u64,
        convention: DiagonalConvention,
    ) -> Result<Self> {
        Self::build(prior, n, seed, convention, false)
    }

    fn build(
        prior: &DiscretePrior,
        n: usize,
        seed: u64,
        convention: DiagonalConvention,
        with_noise: bool,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("n must be positive"));
        }
        let mut signal_rng = stream(seed, domain::SIGNAL, 0);
        let theta = DVector::from_fn(n, |_, _| prior.sample(&mut signal_rng));
        let scale = 1.0 / (n as f64).sqrt();
        let mut y = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            let mut row_rng = stream(seed, domain::NOISE_ROW, i as u64);
            let diag_noise: f64 = row_rng.sample(StandardNormal);
            let ti = theta[i];
            y[(i, i)] = ti * ti * scale
                + if with_noise {
                    convention.diag_scale() * diag_noise
                } else {
                    0.0
                };
            for j in i + 1..n {
                let z: f64 = row_rng.sample(StandardNormal);
                let v = ti * theta[j] * scale + if with_noise { z } else { 0.0 };
                y[(i, j)] = v;
                y[(j, i)] = v;
            }
        }
        Ok(Observation {
            n,
            y,
            theta,
            seed,
            convention,
        })
    }
}

/// Draw a symmetric noise matrix with `Z_ii ~ N(0, 2)` and `Z_ij ~ N(0, 1)`
/// for `i < j` from the supplied generator.
pub fn sample_goe<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let mut z = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let d: f64 = rng.sample(StandardNormal);
        z[(i, i)] = std::f64::consts::SQRT_2 * d;
        for j in i + 1..n {
            let v: f64 = rng.sample(StandardNormal);
            z[(i, j)] = v;
            z[(j, i)] = v;
        }
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prior() -> DiscretePrior {
        DiscretePrior::three_point(1.0, 0.01).unwrap()
    }

    #[test]
    fn rejects_zero_n() {
        assert!(Observation::sample(&prior(), 0, 1, DiagonalConvention::GoeVar2).is_err());
    }

    #[test]
    fn symmetric_and_reproducible() {
        let p = prior();
        let a = Observation::sample(&p, 40, 9, DiagonalConvention::GoeVar2).unwrap();
        let b = Observation::sample(&p, 40, 9, DiagonalConvention::GoeVar2).unwrap();
        assert_eq!(a.y, b.y);
        assert_eq!(a.theta, b.theta);
        for i in 0..40 {
            for j in 0..40 {
                assert_eq!(a.y[(i, j)], a.y[(j, i)]);
            }
        }
        let c = Observation::sample(&p, 40, 10, DiagonalConvention::GoeVar2).unwrap();
        assert_ne!(a.y, c.y);
    }

    #[test]
    fn conventions_share_off_diagonal_noise() {
        let p = prior();
        let goe = Observation::sample(&p, 60, 4, DiagonalConvention::GoeVar2).unwrap();
        let unit = Observation::sample(&p, 60, 4, DiagonalConvention::UnitVar1).unwrap();
        for i in 0..60 {
            for j in 0..60 {
                if i != j {
                    assert_eq!(goe.y[(i, j)], unit.y[(i, j)]);
                }
            }
        }
        // Diagonal noise scales by sqrt(2) between the conventions.
        let scale = 1.0 / 60f64.sqrt();
        for i in 0..60 {
            let t = goe.theta[i];
            let zg = goe.y[(i, i)] - t * t * scale;
            let zu = unit.y[(i, i)] - t * t * scale;
            assert!((zg - std::f64::consts::SQRT_2 * zu).abs() < 1e-12);
        }
    }

    #[test]
    fn noiseless_point_mass_is_exact() {
        let p = DiscretePrior::point_mass(1.5).unwrap();
        let obs = Observation::sample_noiseless(&p, 9, 3, DiagonalConvention::GoeVar2).unwrap();
        let want = 1.5 * 1.5 / 3.0;
        for i in 0..9 {
            for j in 0..9 {
                assert_eq!(obs.y[(i, j)], want);
            }
        }
    }

    #[test]
    fn goe_entry_variances() {
        let n = 2000;
        let mut rng = crate::rng::stream(77, crate::rng::domain::NOISE_ROW, 0);
        let z = sample_goe(n, &mut rng);
        let diag_var: f64 = (0..n).map(|i| z[(i, i)] * z[(i, i)]).sum::<f64>() / n as f64;
        assert!(
            (1.6..2.4).contains(&diag_var),
            "diagonal variance {diag_var}"
        );
        let mut acc = 0.0;
        let mut count = 0usize;
        for i in 0..n {
            for j in i + 1..n {
                acc += z[(i, j)] * z[(i, j)];
                count += 1;
            }
        }
        let off_var = acc / count as f64;
        assert!(
            (0.99..1.01).contains(&off_var),
            "off-diagonal variance {off_var}"
        );
    }

    #[test]
    fn observation_diagonal_variances() {
        // Noise part of the diagonal under each convention, over many seeds.
        let p = DiscretePrior::rademacher();
        let n = 16;
        let scale = 1.0 / (n as f64).sqrt();
        for (conv, want) in [
            (DiagonalConvention::GoeVar2, 2.0),
            (DiagonalConvention::UnitVar1, 1.0),
        ] {
            let mut acc = 0.0;
            let reps = 4000;
            for seed in 0..reps {
                let obs = Observation::sample(&p, n, seed, conv).unwrap();
                for i in 0..n {
                    let t = obs.theta[i];
                    let z = obs.y[(i, i)] - t * t * scale;
                    acc += z * z;
                }
            }
            let var = acc / (reps as usize * n) as f64;
            assert!(
                (var - want).abs() < 0.1 * want,
                "{conv:?}: variance {var} vs {want}"
            );
        }
    }

    #[test]
    fn signal_correlation_moment() {
        // E[Y_12 * theta_1 * theta_2] = E[(theta_1 theta_2)^2] / sqrt(n).
        let p = prior();
        let n = 4;
        let m2 = p.second_moment();
        let want = m2 * m2 / 2.0;
        let reps = 100_000u64;
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        for seed in 0..reps {
            let obs = Observation::sample(&p, n, seed, DiagonalConvention::GoeVar2).unwrap();
            let v = obs.y[(0, 1)] * obs.theta[0] * obs.theta[1];
            acc += v;
            acc2 += v * v;
        }
        let mean = acc / reps as f64;
        let se = ((acc2 / reps as f64 - mean * mean) / reps as f64).sqrt();
        assert!(
            (mean - want).abs() < 3.0 * se,
            "{mean} vs {want} +- {se}"
        );
    }
}
