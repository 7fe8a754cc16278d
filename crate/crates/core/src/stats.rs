//! Descriptive statistics and the two-sided hypothesis tests used by the
//! drift detector.

use statrs::distribution::{ContinuousCDF, FisherSnedecor, Normal, StudentsT};

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance (n - 1 denominator).
pub fn variance(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

pub fn std_dev(x: &[f64]) -> f64 {
    variance(x).sqrt()
}

/// Lag-1 sample autocorrelation; zero for constant or too-short input.
pub fn acf1(x: &[f64]) -> f64 {
    if x.len() < 3 {
        return 0.0;
    }
    let m = mean(x);
    let den: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
    if den <= 0.0 {
        return 0.0;
    }
    let num: f64 = x.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
    (num / den).clamp(-1.0, 1.0)
}

/// Linear-interpolation quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn sorted(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

fn two_sided_normal(z: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    (2.0 * n.cdf(-z.abs())).clamp(0.0, 1.0)
}

/// Summary moments of one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    pub n: usize,
}

impl Moments {
    pub fn of(x: &[f64]) -> Self {
        Self { mean: mean(x), variance: variance(x), n: x.len() }
    }
}

/// Welch's unequal-variance t-test on the difference of means.
pub fn welch_t_test(a: Moments, b: Moments) -> f64 {
    let se2 = a.variance / a.n as f64 + b.variance / b.n as f64;
    let diff = a.mean - b.mean;
    if se2 <= 0.0 {
        return if diff == 0.0 { 1.0 } else { 0.0 };
    }
    let t = diff / se2.sqrt();
    let va = a.variance / a.n as f64;
    let vb = b.variance / b.n as f64;
    let mut df = se2 * se2;
    let den = va * va / (a.n as f64 - 1.0) + vb * vb / (b.n as f64 - 1.0);
    df = if den > 0.0 { df / den } else { (a.n + b.n - 2) as f64 };
    let dist = StudentsT::new(0.0, 1.0, df.max(1.0)).expect("valid t");
    (2.0 * dist.cdf(-t.abs())).clamp(0.0, 1.0)
}

/// Two-sided F-test on the ratio of variances. Zero variance on exactly one
/// side rejects outright; zero on both sides is indistinguishable.
pub fn f_test(a: Moments, b: Moments) -> f64 {
    match (a.variance > 0.0, b.variance > 0.0) {
        (false, false) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let f = a.variance / b.variance;
    let dist = FisherSnedecor::new((a.n - 1) as f64, (b.n - 1) as f64).expect("valid F");
    let lower = dist.cdf(f);
    (2.0 * lower.min(1.0 - lower)).clamp(0.0, 1.0)
}

/// Survival function of the Kolmogorov distribution, `P(K > lambda)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Jacobi theta form, fast for small arguments.
        let pi2 = std::f64::consts::PI.powi(2);
        let mut s = 0.0;
        for j in 1..=20 {
            let k = (2 * j - 1) as f64;
            s += (-k * k * pi2 / (8.0 * lambda * lambda)).exp();
        }
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0)
    } else {
        let mut s = 0.0;
        for j in 1..=100 {
            let jf = j as f64;
            let term = (-2.0 * jf * jf * lambda * lambda).exp();
            s += if j % 2 == 1 { term } else { -term };
            if term < 1e-17 {
                break;
            }
        }
        (2.0 * s).clamp(0.0, 1.0)
    }
}

/// Largest absolute gap between the empirical CDFs of two sorted samples.
pub fn ks_statistic_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Two-sample Kolmogorov-Smirnov test; returns `(D, p)` using the
/// asymptotic distribution with the Stephens small-sample correction.
pub fn ks_two_sample(a_sorted: &[f64], b_sorted: &[f64]) -> (f64, f64) {
    let d = ks_statistic_sorted(a_sorted, b_sorted);
    let (na, nb) = (a_sorted.len() as f64, b_sorted.len() as f64);
    let ne = (na * nb / (na + nb)).sqrt();
    (d, kolmogorov_sf((ne + 0.12 + 0.11 / ne) * d))
}

/// One-sample KS test against a continuous CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(x: &[f64], cdf: F) -> (f64, f64) {
    let s = sorted(x);
    let n = s.len() as f64;
    let d = s
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    let sq = n.sqrt();
    (d, kolmogorov_sf((sq + 0.12 + 0.11 / sq) * d))
}

/// KS check of `x` against a normal with the sample's own mean and
/// standard deviation.
pub fn ks_normality(x: &[f64]) -> (f64, f64) {
    let m = mean(x);
    let s = std_dev(x);
    if !(s > 0.0) {
        return (1.0, 0.0);
    }
    let n = Normal::new(m, s).expect("valid normal");
    ks_one_sample(x, |v| n.cdf(v))
}

/// Fisher-z test on the difference of two correlation coefficients.
pub fn fisher_z_test(r_a: f64, n_a: usize, r_b: f64, n_b: usize) -> f64 {
    let clip = |r: f64| r.clamp(-0.999_999, 0.999_999);
    let za = clip(r_a).atanh();
    let zb = clip(r_b).atanh();
    let se = (1.0 / (n_a as f64 - 3.0) + 1.0 / (n_b as f64 - 3.0)).sqrt();
    two_sided_normal((za - zb) / se)
}
