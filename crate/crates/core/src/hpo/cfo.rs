//! Randomized local search with an adaptive step radius.
//!
//! Each round draws a random unit direction and proposes the incumbent moved
//! by `+radius` and `-radius` along it, clamped to the unit cube. A better
//! candidate doubles the radius; two rounds in a row with no improvement halve
//! it; once it would fall below the floor the search restarts from a fresh
//! random point.

use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CfoSettings {
    pub initial_radius: f64,
    pub max_radius: f64,
    pub min_radius: f64,
    pub failures_to_shrink: u32,
}

impl Default for CfoSettings {
    fn default() -> Self {
        Self {
            initial_radius: 0.1,
            max_radius: 1.0,
            min_radius: 1e-3,
            failures_to_shrink: 2,
        }
    }
}

/// The pair of candidates `incumbent +/- radius * u` for a random unit `u`.
pub fn cfo_propose<R: Rng>(incumbent: &[f64], radius: f64, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let mut dir: Vec<f64> = (0..incumbent.len()).map(|_| rng.sample(StandardNormal)).collect();
    let n = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
    if n > 0.0 {
        dir.iter_mut().for_each(|d| *d /= n);
    }
    let shift = |sign: f64| -> Vec<f64> {
        incumbent
            .iter()
            .zip(&dir)
            .map(|(x, d)| (x + sign * radius * d).clamp(0.0, 1.0))
            .collect()
    };
    (shift(1.0), shift(-1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadiusUpdate {
    pub radius: f64,
    /// Consecutive failed rounds after this update.
    pub failures: u32,
    /// The radius hit the floor; the caller should restart from a new sample.
    pub restart: bool,
}

/// Radius after one round. `failures` counts the failed rounds before it.
pub fn cfo_update(better_found: bool, failures: u32, radius: f64, s: &CfoSettings) -> RadiusUpdate {
    if better_found {
        return RadiusUpdate {
            radius: (radius * 2.0).min(s.max_radius),
            failures: 0,
            restart: false,
        };
    }
    let failures = failures + 1;
    if failures < s.failures_to_shrink {
        return RadiusUpdate {
            radius,
            failures,
            restart: false,
        };
    }
    let halved = radius / 2.0;
    if halved < s.min_radius {
        RadiusUpdate {
            radius: s.initial_radius,
            failures: 0,
            restart: true,
        }
    } else {
        RadiusUpdate {
            radius: halved,
            failures: 0,
            restart: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn proposals_are_symmetric_and_clamped() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = [0.5, 0.5, 0.5];
        let (a, b) = cfo_propose(&x, 0.1, &mut rng);
        let da: f64 = a.iter().zip(&x).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        assert!((da - 0.1).abs() < 1e-12);
        for i in 0..3 {
            assert!((a[i] - x[i] + b[i] - x[i]).abs() < 1e-12);
        }
        let (a, b) = cfo_propose(&[0.0, 1.0], 5.0, &mut rng);
        assert!(a.iter().chain(&b).all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn radius_growth_and_shrink() {
        let s = CfoSettings::default();
        let mut r = 0.1;
        for _ in 0..3 {
            r = cfo_update(true, 0, r, &s).radius;
        }
        assert!((r - 0.8).abs() < 1e-12);
        assert_eq!(cfo_update(true, 0, 0.8, &s).radius, 1.0);

        let first = cfo_update(false, 0, 0.1, &s);
        assert_eq!((first.radius, first.failures), (0.1, 1));
        let second = cfo_update(false, first.failures, first.radius, &s);
        assert_eq!((second.radius, second.failures, second.restart), (0.05, 0, false));

        let floor = cfo_update(false, 1, 0.0015, &s);
        assert!(floor.restart);
        assert_eq!(floor.radius, s.initial_radius);
    }
}
