//! Small numerical helpers: Gauss-Legendre quadrature and Hoeffding/Chernoff sample sizes.

const GL5_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL5_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189,
    0.478_628_670_499_366,
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
];

/// Composite five-point Gauss-Legendre rule on `pieces` equal sub-intervals.
pub fn gauss_legendre(f: impl Fn(f64) -> f64, a: f64, b: f64, pieces: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let pieces = pieces.max(1);
    let h = (b - a) / pieces as f64;
    let mut total = 0.0;
    for p in 0..pieces {
        let mid = a + (p as f64 + 0.5) * h;
        let half = 0.5 * h;
        for (x, w) in GL5_NODES.iter().zip(GL5_WEIGHTS) {
            total += w * f(mid + half * x);
        }
    }
    total * 0.5 * h
}

/// Draws needed so that a Bernoulli mean is within `radius` of its expectation
/// with probability `1 - delta` (Hoeffding).
pub fn hoeffding_samples(radius: f64, delta: f64) -> u64 {
    ((2.0 / delta).ln() / (2.0 * radius * radius)).ceil() as u64
}

/// Draws needed so that a Bernoulli mean `m >= floor` is within relative
/// error `rho` with probability `1 - delta` (multiplicative Chernoff,
/// `2 exp(-rho^2 floor n / 3)`).
pub fn chernoff_samples(rho: f64, floor: f64, delta: f64) -> u64 {
    (3.0 * (2.0 / delta).ln() / (rho * rho * floor)).ceil() as u64
}
