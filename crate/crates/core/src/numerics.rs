//! Arbitrary-precision primitives: precision policy, exactly rounded sums and
//! the normalized discrete Fourier transforms used by the analysis layer.

use rug::float::Constant;
use rug::ops::Pow;
use rug::{Complex, Float};
use serde::{Deserialize, Serialize};

use crate::error::QpcError;

/// Decimal working precision and the factor applied when escalating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrecisionPolicy {
    pub decimal_digits: u32,
    pub escalation_factor: u32,
}

impl Default for PrecisionPolicy {
    fn default() -> Self {
        Self {
            decimal_digits: 64,
            escalation_factor: 2,
        }
    }
}

impl PrecisionPolicy {
    pub const MIN_DIGITS: u32 = 16;

    pub fn new(decimal_digits: u32, escalation_factor: u32) -> Result<Self, QpcError> {
        let policy = Self {
            decimal_digits,
            escalation_factor,
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<(), QpcError> {
        if self.decimal_digits < Self::MIN_DIGITS {
            return Err(QpcError::Invariant(format!(
                "decimal precision {} is below the minimum of {}",
                self.decimal_digits,
                Self::MIN_DIGITS
            )));
        }
        if self.escalation_factor < 2 {
            return Err(QpcError::Invariant(format!(
                "escalation factor {} must be at least 2",
                self.escalation_factor
            )));
        }
        Ok(())
    }

    /// Binary mantissa width carrying at least `decimal_digits` digits.
    pub fn bits(&self) -> u32 {
        digits_to_bits(self.decimal_digits)
    }

    pub fn escalated(&self) -> Self {
        Self {
            decimal_digits: self.decimal_digits * self.escalation_factor,
            escalation_factor: self.escalation_factor,
        }
    }

    /// Relative threshold below which a pivot is treated as zero.
    pub fn degeneracy_threshold(&self) -> Float {
        pow10(self.bits(), -((self.decimal_digits / 2) as i32))
    }
}

pub fn digits_to_bits(digits: u32) -> u32 {
    (digits as f64 * std::f64::consts::LOG2_10).ceil() as u32
}

pub fn pow10(prec: u32, exp: i32) -> Float {
    let ten = Float::with_val(prec, 10);
    ten.pow(exp)
}

pub fn real(prec: u32, v: f64) -> Float {
    Float::with_val(prec, v)
}

pub fn complex(prec: u32, re: f64, im: f64) -> Complex {
    Complex::with_val(prec, (re, im))
}

pub fn pi(prec: u32) -> Float {
    Float::with_val(prec, Constant::Pi)
}

/// Parses a decimal literal at `prec` bits with a single correct rounding.
pub fn parse_real(prec: u32, text: &str) -> Result<Float, QpcError> {
    let parsed = Float::parse(text.trim())
        .map_err(|e| QpcError::Parse(format!("invalid number `{text}`: {e}")))?;
    Ok(Float::with_val(prec, parsed))
}

/// Shortest decimal string that parses back to the identical value.
pub fn to_decimal(x: &Float) -> String {
    x.to_string_radix(10, None)
}

/// Exactly rounded sum of complex terms.
///
/// The real and imaginary parts are each summed with a single final rounding,
/// so the result does not depend on the order of `terms`.
pub fn compensated_complex_sum(terms: &[Complex], prec: u32) -> Complex {
    let re = Float::with_val(prec, Float::sum(terms.iter().map(|t| t.real())));
    let im = Float::with_val(prec, Float::sum(terms.iter().map(|t| t.imag())));
    Complex::with_val(prec, (re, im))
}

pub fn real_sum(terms: &[Float], prec: u32) -> Float {
    Float::with_val(prec, Float::sum(terms.iter()))
}

/// `|a - b| / max(|a|, |b|)` as an `f64`, zero when both vanish.
pub fn relative_difference(a: &Float, b: &Float) -> f64 {
    let prec = a.prec().max(b.prec());
    let diff = Float::with_val(prec, a - b).abs();
    let scale = Float::with_val(prec, a.abs_ref()).max(&Float::with_val(prec, b.abs_ref()));
    if scale.is_zero() {
        return 0.0;
    }
    (diff / scale).to_f64()
}

pub fn complex_relative_difference(a: &Complex, b: &Complex) -> f64 {
    let prec = a.prec().0.max(b.prec().0);
    let diff = Float::with_val(prec, Complex::with_val(prec, a - b).abs_ref());
    let na = Float::with_val(prec, a.abs_ref());
    let nb = Float::with_val(prec, b.abs_ref());
    let scale = na.max(&nb);
    if scale.is_zero() {
        return 0.0;
    }
    (diff / scale).to_f64()
}

/// `F_p = M^{-1/2} sum_n x_n e^{+2 pi i n p / M}` for `p = 0..M`.
pub fn ifft_normalized(samples: &[Complex], prec: u32) -> Result<Vec<Complex>, QpcError> {
    normalized_transform(samples, prec, 1)
}

/// Inverse of [`ifft_normalized`]: the same transform with `e^{-2 pi i n p / M}`.
pub fn fft_normalized(samples: &[Complex], prec: u32) -> Result<Vec<Complex>, QpcError> {
    normalized_transform(samples, prec, -1)
}

fn normalized_transform(samples: &[Complex], prec: u32, sign: i32) -> Result<Vec<Complex>, QpcError> {
    let m = samples.len();
    if m == 0 {
        return Err(QpcError::Invariant("transform of an empty sequence".into()));
    }
    let roots = unit_roots(m, sign, prec);
    let mut out = dft_recursive(samples, 0, 1, m, &roots, prec);
    let scale = Float::with_val(prec, m).sqrt().recip();
    for v in &mut out {
        *v *= &scale;
    }
    Ok(out)
}

/// Direct `O(M^2)` evaluation with exactly rounded accumulation; used as a
/// reference for the recursive transform.
pub fn dft_direct(samples: &[Complex], prec: u32, sign: i32) -> Vec<Complex> {
    let m = samples.len();
    let roots = unit_roots(m, sign, prec);
    let scale = Float::with_val(prec, m).sqrt().recip();
    (0..m)
        .map(|p| {
            let terms: Vec<Complex> = samples
                .iter()
                .enumerate()
                .map(|(n, x)| Complex::with_val(prec, x * &roots[(n * p) % m]))
                .collect();
            compensated_complex_sum(&terms, prec) * &scale
        })
        .collect()
}

fn unit_roots(m: usize, sign: i32, prec: u32) -> Vec<Complex> {
    let two_pi = Float::with_val(prec, pi(prec) * 2u32);
    (0..m)
        .map(|j| {
            let angle = Float::with_val(prec, &two_pi * j as u64) / m as u64 * sign;
            let (s, c) = angle.sin_cos(Float::new(prec));
            Complex::with_val(prec, (c, s))
        })
        .collect()
}

fn smallest_factor(n: usize) -> usize {
    if n % 2 == 0 {
        return 2;
    }
    let mut f = 3;
    while f * f <= n {
        if n % f == 0 {
            return f;
        }
        f += 2;
    }
    n
}

/// Mixed-radix decimation in time over `x[offset + stride * i]`, `i < n`.
/// Prime lengths fall back to the direct sum.
fn dft_recursive(
    x: &[Complex],
    offset: usize,
    stride: usize,
    n: usize,
    roots: &[Complex],
    prec: u32,
) -> Vec<Complex> {
    let m = roots.len();
    let step = m / n;
    if n == 1 {
        return vec![x[offset].clone()];
    }
    let p = smallest_factor(n);
    if p == n {
        return (0..n)
            .map(|k| {
                let terms: Vec<Complex> = (0..n)
                    .map(|i| {
                        let w = &roots[(i * k % n) * step];
                        Complex::with_val(prec, &x[offset + stride * i] * w)
                    })
                    .collect();
                compensated_complex_sum(&terms, prec)
            })
            .collect();
    }
    let q = n / p;
    let subs: Vec<Vec<Complex>> = (0..p)
        .map(|r| dft_recursive(x, offset + stride * r, stride * p, q, roots, prec))
        .collect();
    (0..n)
        .map(|k| {
            let terms: Vec<Complex> = (0..p)
                .map(|r| {
                    let w = &roots[(r * k % n) * step];
                    Complex::with_val(prec, &subs[r][k % q] * w)
                })
                .collect();
            compensated_complex_sum(&terms, prec)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const PREC: u32 = 212;

    fn sample(n: usize) -> Vec<Complex> {
        (0..n)
            .map(|i| {
                let t = i as f64;
                complex(PREC, (0.37 * t).sin() + 0.1 * t, (1.3 * t).cos() - 0.05 * t * t)
            })
            .collect()
    }

    #[test]
    fn bits_cover_digits() {
        assert_eq!(digits_to_bits(64), 213);
        assert!(digits_to_bits(16) >= 53);
    }

    #[test]
    fn policy_rejects_low_digits_and_factor() {
        assert!(PrecisionPolicy::new(15, 2).is_err());
        assert!(PrecisionPolicy::new(16, 1).is_err());
        assert_eq!(PrecisionPolicy::new(32, 3).unwrap().escalated().decimal_digits, 96);
    }

    #[test]
    fn recursive_matches_direct() {
        for n in [1usize, 2, 3, 4, 6, 7, 12, 30, 173, 346] {
            let x = sample(n);
            let fast = ifft_normalized(&x, PREC).unwrap();
            let slow = dft_direct(&x, PREC, 1);
            for (a, b) in fast.iter().zip(&slow) {
                let d = Float::with_val(PREC, Complex::with_val(PREC, a - b).abs_ref());
                assert!(d < 1e-55, "n={n} diff={d}");
            }
        }
    }

    #[test]
    fn round_trip_recovers_input() {
        let x = sample(60);
        let back = fft_normalized(&ifft_normalized(&x, PREC).unwrap(), PREC).unwrap();
        for (a, b) in x.iter().zip(&back) {
            assert!(complex_relative_difference(a, b) < 1e-55);
        }
    }

    #[test]
    fn impulse_gives_flat_spectrum() {
        let mut x = vec![complex(PREC, 0.0, 0.0); 9];
        x[0] = complex(PREC, 3.0, 0.0);
        for f in ifft_normalized(&x, PREC).unwrap() {
            assert!(complex_relative_difference(&f, &complex(PREC, 1.0, 0.0)) < 1e-60);
        }
    }

    #[test]
    fn sum_is_order_independent() {
        let mut terms = vec![
            complex(PREC, 1e40, -3.0),
            complex(PREC, 1.0, 1e-30),
            complex(PREC, -1e40, 3.0),
            complex(PREC, 1e-20, 0.5),
        ];
        let a = compensated_complex_sum(&terms, 53);
        terms.reverse();
        let b = compensated_complex_sum(&terms, 53);
        assert_eq!(a, b);
        assert_eq!(a.real().to_f64(), 1.0 + 1e-20);
        assert_eq!(a.imag().to_f64(), 0.5 + 1e-30);
    }

    #[test]
    fn decimal_round_trip() {
        let x = parse_real(PREC, "196.476447513288009802519e-9").unwrap();
        let y = parse_real(PREC, &to_decimal(&x)).unwrap();
        assert_eq!(x, y);
        assert!(parse_real(PREC, "1.2.3").is_err());
    }
}
