//! Shared statistics helpers for the integration suites.

/// Sample mean and standard error of the mean.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Sample variance (unbiased).
pub fn variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Pearson chi-square statistic for observed counts against expected
/// probabilities.
pub fn chi_square_stat(counts: &[u64], probs: &[f64]) -> f64 {
    let total: u64 = counts.iter().sum();
    counts
        .iter()
        .zip(probs)
        .map(|(&c, &p)| {
            let expect = total as f64 * p;
            (c as f64 - expect).powi(2) / expect
        })
        .sum()
}

/// Two-sample Kolmogorov-Smirnov test. Returns true when the samples are
/// compatible at the given level (asymptotic critical value).
pub fn ks_two_sample_accepts(a: &[f64], b: &[f64], level: f64) -> bool {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let mut d: f64 = 0.0;
    let (mut i, mut j) = (0usize, 0usize);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        let fa = i as f64 / n;
        let fb = j as f64 / m;
        d = d.max((fa - fb).abs());
    }
    let critical = (-(level / 2.0).ln() / 2.0).sqrt() * ((n + m) / (n * m)).sqrt();
    d < critical
}

/// Slope of the least-squares line through (x, y) pairs.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Standard error of a δ-weighted chain mean by batch means over `batches`
/// contiguous blocks.
pub fn batch_means_se(values: &[f64], weights: &[f64], batches: usize) -> f64 {
    assert_eq!(values.len(), weights.len());
    let block = values.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| {
            let lo = b * block;
            let hi = lo + block;
            let w: f64 = weights[lo..hi].iter().sum();
            let s: f64 = values[lo..hi]
                .iter()
                .zip(&weights[lo..hi])
                .map(|(v, w)| v * w)
                .sum();
            s / w
        })
        .collect();
    mean_and_se(&means).1
}
