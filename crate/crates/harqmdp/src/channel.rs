//! Rayleigh block-fading channel: SNR distribution and capacity map.
//!
//! The per-block SNR is exponentially distributed with mean `mean_snr`
//! (linear scale): pdf(x) = exp(-x/g)/g, cdf(x) = 1 - exp(-x/g). Blocks
//! fade independently. With Gaussian inputs a block at SNR g carries
//! C(g) = log2(1 + g) bits per channel use, and the ergodic capacity
//! E[C] upper-bounds the throughput of any retransmission protocol at
//! the same average SNR.

use rand::Rng;
use thiserror::Error;

use crate::quad::adaptive_simpson;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("mean SNR must be positive and finite, got {0}")]
    InvalidMeanSnr(f64),
    #[error("SNR must be nonnegative, got {0}")]
    NegativeSnr(f64),
    #[error("argument {value} outside domain {domain}")]
    OutOfDomain { value: f64, domain: &'static str },
}

/// Gaussian-input capacity C(g) = log2(1 + g) in bits per channel use.
pub fn capacity(snr: f64) -> Result<f64, ChannelError> {
    if !(snr >= 0.0) {
        return Err(ChannelError::NegativeSnr(snr));
    }
    Ok(cap(snr))
}

/// Unchecked capacity for internal hot paths; callers guarantee snr >= 0.
#[inline]
pub(crate) fn cap(snr: f64) -> f64 {
    (1.0 + snr).log2()
}

/// Rayleigh fading SNR law with mean `mean_snr` (linear scale).
///
/// Immutable after construction and freely shared across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel {
    mean_snr: f64,
}

impl ChannelModel {
    pub fn new(mean_snr: f64) -> Result<Self, ChannelError> {
        if !(mean_snr > 0.0 && mean_snr.is_finite()) {
            return Err(ChannelError::InvalidMeanSnr(mean_snr));
        }
        Ok(Self { mean_snr })
    }

    /// Average SNR, linear scale.
    pub fn mean_snr(&self) -> f64 {
        self.mean_snr
    }

    /// Density exp(-x/g)/g of the per-block SNR.
    pub fn pdf(&self, x: f64) -> Result<f64, ChannelError> {
        if !(x >= 0.0) {
            return Err(ChannelError::OutOfDomain {
                value: x,
                domain: "[0, inf)",
            });
        }
        Ok((-x / self.mean_snr).exp() / self.mean_snr)
    }

    /// Distribution function 1 - exp(-x/g).
    pub fn cdf(&self, x: f64) -> Result<f64, ChannelError> {
        if !(x >= 0.0) {
            return Err(ChannelError::OutOfDomain {
                value: x,
                domain: "[0, inf)",
            });
        }
        Ok(self.cdf_raw(x))
    }

    /// Quantile function -g ln(1-u) for u in [0, 1).
    pub fn inv_cdf(&self, u: f64) -> Result<f64, ChannelError> {
        if !(0.0..1.0).contains(&u) {
            return Err(ChannelError::OutOfDomain {
                value: u,
                domain: "[0, 1)",
            });
        }
        Ok(-self.mean_snr * (1.0 - u).ln())
    }

    /// Internal cdf accepting any threshold; negative maps to 0 and
    /// +inf to 1, which is what the transition-row telescoping needs.
    #[inline]
    pub(crate) fn cdf_raw(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else if x.is_finite() {
            -(-x / self.mean_snr).exp_m1()
        } else {
            1.0
        }
    }

    #[inline]
    pub(crate) fn pdf_raw(&self, x: f64) -> f64 {
        if x < 0.0 || !x.is_finite() {
            0.0
        } else {
            (-x / self.mean_snr).exp() / self.mean_snr
        }
    }

    /// Ergodic capacity E[log2(1 + SNR)] in bits per channel use.
    ///
    /// Computed by adaptive quadrature on the transformed variable
    /// u = cdf(x), so the integrand has compact support; relative
    /// tolerance 1e-8. Equals log2(e) * exp(1/g) * E1(1/g).
    pub fn ergodic_capacity(&self) -> f64 {
        // Rough magnitude first so the absolute tolerance tracks the
        // requested relative one.
        let scale = cap(self.mean_snr).max(1e-3);
        let g = |u: f64| cap(-self.mean_snr * (1.0 - u).ln());
        let upper = 1.0 - 1e-15;
        adaptive_simpson(&g, 0.0, upper, 1e-8 * scale)
    }

    /// Draws one SNR value by inverting the cdf at a uniform sample.
    ///
    /// The same seeded generator produces the same stream.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        -self.mean_snr * (1.0 - u).ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Exponential integral E1(x) for x > 0; series for small x,
    /// continued fraction otherwise. Test oracle only.
    fn exp_integral_e1(x: f64) -> f64 {
        assert!(x > 0.0);
        if x <= 1.0 {
            let euler = 0.577_215_664_901_532_9;
            let mut sum = 0.0;
            let mut term = 1.0;
            for k in 1..60 {
                term *= -x / k as f64;
                sum -= term / k as f64;
            }
            -euler - x.ln() + sum
        } else {
            // Lentz continued fraction for E1.
            let mut b = x + 1.0;
            let mut c = 1e308;
            let mut d = 1.0 / b;
            let mut h = d;
            for i in 1..200 {
                let a = -(i as f64) * (i as f64);
                b += 2.0;
                d = 1.0 / (a * d + b);
                c = b + a / c;
                let del = c * d;
                h *= del;
                if (del - 1.0).abs() < 1e-15 {
                    break;
                }
            }
            h * (-x).exp()
        }
    }

    #[test]
    fn capacity_known_points() {
        assert_eq!(capacity(0.0).unwrap(), 0.0);
        assert!((capacity(1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((capacity(3.0).unwrap() - 2.0).abs() < 1e-15);
        assert!(capacity(-0.5).is_err());
    }

    #[test]
    fn capacity_strictly_increasing() {
        let mut prev = -1.0;
        for i in 0..100 {
            let c = capacity(i as f64 * 0.37).unwrap();
            assert!(c > prev);
            prev = c;
        }
    }

    #[test]
    fn pdf_cdf_values() {
        let ch = ChannelModel::new(2.0).unwrap();
        assert_eq!(ch.cdf(0.0).unwrap(), 0.0);
        let half = ch.cdf(2.0 * 2.0_f64.ln()).unwrap();
        assert!((half - 0.5).abs() < 1e-12);
        assert!((ch.pdf(0.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(ch.pdf(-1.0).is_err());
        assert!(ch.cdf(-1.0).is_err());
        assert!(ch.inv_cdf(1.0).is_err());
        assert!(ch.inv_cdf(-0.1).is_err());
    }

    #[test]
    fn cdf_monotone_and_saturating() {
        let ch = ChannelModel::new(5.0).unwrap();
        let mut prev = -1.0;
        for i in 0..200 {
            let v = ch.cdf(i as f64).unwrap();
            assert!(v >= prev);
            prev = v;
        }
        assert!((ch.cdf(1e6).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inv_cdf_inverts_cdf() {
        let ch = ChannelModel::new(3.7).unwrap();
        for i in 0..50 {
            let x = 0.1 + i as f64 * 0.5;
            let round = ch.inv_cdf(ch.cdf(x).unwrap()).unwrap();
            assert!((round - x).abs() < 1e-12 * x.max(1.0), "x={x} round={round}");
        }
        let half = ChannelModel::new(1.0).unwrap().inv_cdf(0.5).unwrap();
        assert!((half - 2.0_f64.ln()).abs() < 1e-12);
        assert_eq!(ChannelModel::new(1.0).unwrap().inv_cdf(0.0).unwrap(), 0.0);
    }

    #[test]
    fn pdf_integrates_to_one() {
        let ch = ChannelModel::new(7.3).unwrap();
        let mass = adaptive_simpson(&|x| ch.pdf_raw(x), 0.0, 60.0 * 7.3, 1e-11);
        let tail = (-60.0_f64).exp();
        assert!((mass + tail - 1.0).abs() < 1e-9, "mass {mass}");
    }

    #[test]
    fn ergodic_capacity_matches_exponential_integral() {
        for &g in &[0.5, 1.0, 10.0, 20.0, 100.0] {
            let ch = ChannelModel::new(g).unwrap();
            let byquad = ch.ergodic_capacity();
            let exact = std::f64::consts::LOG2_E * (1.0 / g).exp() * exp_integral_e1(1.0 / g);
            assert!(
                (byquad - exact).abs() < 1e-6 * exact.max(1e-3),
                "g={g} quad={byquad} exact={exact}"
            );
        }
        let c20 = ChannelModel::new(20.0).unwrap().ergodic_capacity();
        assert!((c20 - 3.74).abs() < 0.01, "c20={c20}");
    }

    #[test]
    fn ergodic_capacity_monotone_and_vanishing() {
        let c10 = ChannelModel::new(10.0).unwrap().ergodic_capacity();
        let c20 = ChannelModel::new(20.0).unwrap().ergodic_capacity();
        assert!(c10 < c20);
        let tiny = ChannelModel::new(1e-6).unwrap().ergodic_capacity();
        assert!(tiny < 1e-4);
    }

    #[test]
    fn sampling_is_deterministic_and_unbiased() {
        let ch = ChannelModel::new(4.0).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(11);
        let mut b = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            assert_eq!(ch.sample(&mut a), ch.sample(&mut b));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000;
        let mean: f64 = (0..n).map(|_| ch.sample(&mut rng)).sum::<f64>() / n as f64;
        // CLT bound from the spec: 4 sigma of the sample mean.
        assert!((mean - 4.0).abs() < 4.0 * 4.0 / 1e3, "mean={mean}");
    }
}
