//! Small numeric and RNG helpers shared across the crate.

/// One step of the splitmix64 generator. Used to derive independent child
/// seeds from a root seed so that parallel work (trees, folds, bootstrap
/// replicates) is reproducible regardless of scheduling order.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed for stream `stream` from a root seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream.wrapping_add(0xA076_1D64_78BD_642F)))
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Inverse of the logistic function; `p` must lie strictly in (0, 1).
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population variance (divides by `n`).
pub fn population_variance(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
}

/// Sample variance (divides by `n - 1`); requires at least two values.
pub fn sample_variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

/// Sorts a float slice by total order (NaN sorts last).
pub fn sort_f64(v: &mut [f64]) {
    v.sort_by(|a, b| a.total_cmp(b));
}

/// Type-6 quantile of an ascending-sorted slice: the index is `q * (n + 1)`;
/// fractional indices interpolate linearly and indices outside `[1, n]` clamp
/// to the extremes. With `n = 2` values `{1, 3}` and `q ∈ {0.025, 0.975}` this
/// yields the full span `[1, 3]`.
pub fn quantile_type6(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    assert!((0.0..=1.0).contains(&q), "quantile level out of range");
    let n = sorted.len() as f64;
    let h = q * (n + 1.0);
    if h <= 1.0 {
        return sorted[0];
    }
    if h >= n {
        return sorted[sorted.len() - 1];
    }
    let lo = h.floor() as usize; // 1-based
    let frac = h - h.floor();
    sorted[lo - 1] + frac * (sorted[lo] - sorted[lo - 1])
}

/// Type-7 quantile of an ascending-sorted slice: the index is
/// `1 + q * (n - 1)` with linear interpolation. With values `{1, 2, 3, 4}` the
/// 25th percentile is 1.75.
pub fn quantile_type7(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    assert!((0.0..=1.0).contains(&q), "quantile level out of range");
    let n = sorted.len();
    let h = q * (n as f64 - 1.0);
    let lo = h.floor() as usize;
    let frac = h - h.floor();
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

/// Evenly log-spaced grid between `10^lo` and `10^hi` inclusive.
pub fn logspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(count >= 2);
    (0..count)
        .map(|i| {
            let t = i as f64 / (count - 1) as f64;
            10f64.powf(lo + t * (hi - lo))
        })
        .collect()
}
