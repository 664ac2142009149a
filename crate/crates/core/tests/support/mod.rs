//! Shared helpers for the integration test targets.
#![allow(dead_code)]

/// Floating value `m * 2^e` with `1 <= |m| < 2`, which keeps f64
/// mantissa precision while extending the exponent far past f64 range.
/// Steep-tail trajectories overflow f64 within a few steps; this type
/// follows them exactly enough to check growth bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wide {
    m: f64,
    e: i64,
}

impl Wide {
    pub const ZERO: Wide = Wide { m: 0.0, e: 0 };

    pub fn from_f64(value: f64) -> Self {
        assert!(value.is_finite(), "wide arithmetic needs finite seeds");
        Self::normalize(value, 0)
    }

    fn normalize(mut m: f64, mut e: i64) -> Self {
        if m == 0.0 {
            return Self::ZERO;
        }
        // Pull the binary exponent out of the mantissa in one step and
        // fix up the off-by-one cases from rounding.
        let k = m.abs().log2().floor() as i64;
        m *= exp2_i(-k);
        e += k;
        while m.abs() >= 2.0 {
            m *= 0.5;
            e += 1;
        }
        while m.abs() < 1.0 {
            m *= 2.0;
            e -= 1;
        }
        Self { m, e }
    }

    pub fn mul(self, other: Self) -> Self {
        if self.m == 0.0 || other.m == 0.0 {
            return Self::ZERO;
        }
        Self::normalize(self.m * other.m, self.e + other.e)
    }

    pub fn add(self, other: Self) -> Self {
        if self.m == 0.0 {
            return other;
        }
        if other.m == 0.0 {
            return self;
        }
        let (hi, lo) = if self.e >= other.e {
            (self, other)
        } else {
            (other, self)
        };
        let shift = hi.e - lo.e;
        if shift > 100 {
            return hi;
        }
        Self::normalize(hi.m + lo.m * exp2_i(-shift), hi.e)
    }

    pub fn neg(self) -> Self {
        Self { m: -self.m, e: self.e }
    }

    pub fn scale_f64(self, factor: f64) -> Self {
        self.mul(Self::from_f64(factor))
    }

    /// Doubles the value `k` times.
    pub fn shift_up(self, k: i64) -> Self {
        if self.m == 0.0 {
            self
        } else {
            Self { m: self.m, e: self.e + k }
        }
    }

    pub fn abs(self) -> Self {
        Self { m: self.m.abs(), e: self.e }
    }

    /// Magnitude comparison as `|self| >= |other|`.
    pub fn abs_ge(self, other: Self) -> bool {
        let a = self.abs();
        let b = other.abs();
        if b.m == 0.0 {
            return true;
        }
        if a.m == 0.0 {
            return false;
        }
        (a.e, a.m) >= (b.e, b.m)
    }

    /// `log2 |value|`, for diagnostics on astronomically large states.
    pub fn log2_abs(self) -> f64 {
        assert!(self.m != 0.0);
        self.e as f64 + self.m.abs().log2()
    }

    /// Exact only while the value fits in f64; saturates otherwise.
    pub fn to_f64(self) -> f64 {
        self.m * exp2_i(self.e)
    }
}

fn exp2_i(e: i64) -> f64 {
    // Split so intermediate powers stay inside f64 range for |e| < 2000.
    let half = e / 2;
    (half as f64).exp2() * ((e - half) as f64).exp2()
}

/// Quadrature oracle for the one-dimensional density
/// `pi(x) proportional to exp(-(1 + x^2)^(beta/2) / beta)`: normalizing
/// constant, distribution function, quantiles, and equal-mass bin
/// edges, all from adaptive Simpson integration.
pub struct DensityOracle {
    beta: f64,
    x_max: f64,
    half_mass: f64,
}

impl DensityOracle {
    pub fn new(beta: f64) -> Self {
        assert!(beta.is_finite() && beta > 0.0);
        let mut oracle = DensityOracle {
            beta,
            x_max: 0.0,
            half_mass: 0.0,
        };
        // Truncate where the density falls 700 e-folds below its peak.
        let u0 = oracle.potential(0.0);
        let mut hi = 1.0f64;
        while oracle.potential(hi) - u0 < 700.0 {
            hi *= 2.0;
        }
        oracle.x_max = hi;
        oracle.half_mass = oracle.integrate(0.0, hi);
        oracle
    }

    fn potential(&self, x: f64) -> f64 {
        (1.0 + x * x).powf(self.beta / 2.0) / self.beta
    }

    /// Density relative to its value at the mode.
    fn weight(&self, x: f64) -> f64 {
        (self.potential(0.0) - self.potential(x)).exp()
    }

    fn integrate(&self, a: f64, b: f64) -> f64 {
        adaptive_simpson(&|x: f64| self.weight(x), a, b)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let tail = |r: f64| -> f64 {
            if r >= self.x_max {
                return 1.0;
            }
            0.5 + 0.5 * self.integrate(0.0, r) / self.half_mass
        };
        if x >= 0.0 {
            tail(x)
        } else {
            1.0 - tail(-x)
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        assert!((0.0..1.0).contains(&p) && p > 0.0);
        if p == 0.5 {
            return 0.0;
        }
        let (mut lo, mut hi) = (-self.x_max, self.x_max);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-12 * hi.abs().max(1.0) {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    /// Interior edges of `k` equal-probability bins.
    pub fn equal_mass_edges(&self, k: usize) -> Vec<f64> {
        (1..k).map(|i| self.quantile(i as f64 / k as f64)).collect()
    }

    /// `E[x^2]` under the normalized density.
    pub fn second_moment(&self) -> f64 {
        adaptive_simpson(&|x: f64| x * x * self.weight(x), 0.0, self.x_max) / self.half_mass
    }
}

/// Adaptive Simpson with an absolute tolerance calibrated by a cheap
/// first pass, so negligible tail segments terminate immediately. The
/// interval is pre-split at dyadic points because the integrands decay
/// on a unit scale; a single panel over a wide range would place every
/// node past the bump and stop at zero.
fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    assert!(a.is_finite() && b.is_finite() && 0.0 <= a && b >= a);
    if a == b {
        return 0.0;
    }
    let mut edges = vec![a];
    let mut p = 1.0f64;
    while p <= a {
        p *= 2.0;
    }
    while p < b {
        edges.push(p);
        p *= 2.0;
    }
    edges.push(b);
    let pass = |eps: f64| -> f64 {
        edges
            .windows(2)
            .map(|w| simpson_outer(f, w[0], w[1], eps))
            .sum()
    };
    let rough = pass(1e-6);
    let budget = 1e-13 * rough.abs().max(1e-12) / (edges.len() - 1) as f64;
    pass(budget)
}

fn simpson_outer<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, eps: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, eps, 48)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    eps: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let refined = left + right;
    if depth == 0 || (refined - whole).abs() <= 15.0 * eps {
        return refined + (refined - whole) / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * eps, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * eps, depth - 1)
}

/// Chi-square statistic of observed counts against equal expected mass.
pub fn chi_square_equal_bins(counts: &[u64], total: u64) -> f64 {
    let expected = total as f64 / counts.len() as f64;
    counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum()
}

/// Bin index of `x` against sorted interior edges.
pub fn bin_index(edges: &[f64], x: f64) -> usize {
    edges.partition_point(|e| *e < x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wide_tracks_f64_within_range() {
        let a = Wide::from_f64(3.5);
        let b = Wide::from_f64(-1.25);
        assert_eq!(a.mul(b).to_f64(), 3.5 * -1.25);
        assert_eq!(a.add(b).to_f64(), 2.25);
        assert!(a.abs_ge(b));
        let big = Wide::from_f64(1e300).mul(Wide::from_f64(1e300));
        assert!((big.log2_abs() - 600.0 * 10f64.log2()).abs() < 1e-9);
        assert!(big.abs_ge(Wide::from_f64(f64::MAX)));
    }

    #[test]
    fn wide_shift_doubles() {
        let x = Wide::from_f64(10.0).shift_up(10);
        assert_eq!(x.to_f64(), 10.0 * 1024.0);
    }

    #[test]
    fn gaussian_member_matches_normal_quantiles() {
        // beta = 2 gives a standard normal density.
        let oracle = DensityOracle::new(2.0);
        assert!((oracle.cdf(0.0) - 0.5).abs() <= 1e-12);
        assert!((oracle.cdf(1.959963984540054) - 0.975).abs() <= 1e-9);
        assert!((oracle.quantile(0.975) - 1.959963984540054).abs() <= 1e-7);
        assert!((oracle.second_moment() - 1.0).abs() <= 1e-9);
    }
}
