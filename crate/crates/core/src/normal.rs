//! Normal-distribution helpers: CDF and rectangle probabilities of a
//! bivariate normal.

use libm::erfc;

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Standard normal CDF.
#[inline]
pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Standard normal density.
#[inline]
pub fn density(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `P(lo < Z <= hi)` for a standard normal, evaluated on the tail nearer to
/// the interval so small probabilities keep their relative precision.
#[inline]
pub fn interval_prob(lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    if lo > 0.0 {
        cdf(-lo) - cdf(-hi)
    } else {
        cdf(hi) - cdf(lo)
    }
}

// 8-point Gauss-Legendre rule on [-1, 1].
const GL_NODES: [f64; 8] = [
    -0.960_289_856_497_536_3,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_3,
    0.222_381_034_453_374_5,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Standardized coordinates beyond this carry less than 1e-19 of the mass.
const TAIL: f64 = 9.0;

/// Composite 8-point Gauss-Legendre integral of `f` over `[a, b]` using
/// panels no wider than `max_panel`.
pub fn gauss_legendre(a: f64, b: f64, max_panel: f64, f: impl Fn(f64) -> f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let panels = ((b - a) / max_panel).ceil().max(1.0) as usize;
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * h;
        let mid = lo + 0.5 * h;
        let half = 0.5 * h;
        let mut s = 0.0;
        for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS.iter()) {
            s += w * f(mid + half * x);
        }
        total += s * half;
    }
    total
}

/// Probability that a bivariate normal with standardized correlation `rho`
/// falls in the standardized rectangle `(z1lo, z1hi] x (z2lo, z2hi]`.
///
/// Uncorrelated rectangles factor into 1-D CDF differences. Otherwise the
/// outer integral over `z2` (clipped to the +-9 sigma band) uses composite
/// Gauss-Legendre with panels no wider than the conditional spread, and the inner `z1` integral is the
/// exact conditional CDF difference, so infinite bounds need no truncation.
pub fn rect_prob_standard(rho: f64, z1: (f64, f64), z2: (f64, f64)) -> f64 {
    if rho == 0.0 {
        return interval_prob(z1.0, z1.1) * interval_prob(z2.0, z2.1);
    }
    let a = z2.0.max(-TAIL);
    let b = z2.1.min(TAIL);
    if b <= a {
        return 0.0;
    }
    let s = (1.0 - rho * rho).sqrt();
    gauss_legendre(a, b, s.min(1.0), |t| {
        let m = rho * t;
        density(t) * interval_prob((z1.0 - m) / s, (z1.1 - m) / s)
    })
}
