//! Small statistics helpers used by the validators and the evaluation sweep.

use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use crate::rng::rng_for;

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Ranks starting at 1, ties get the average rank.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// Spearman rank correlation; 0 when either input is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

/// Bessel function of the first kind, order zero, via
/// `J0(x) = (1/pi) * integral_0^pi cos(x sin t) dt` (composite Simpson, 2000 panels).
pub fn bessel_j0(x: f64) -> f64 {
    let n = 2000;
    let h = std::f64::consts::PI / n as f64;
    let f = |t: f64| (x * t.sin()).cos();
    let mut s = f(0.0) + f(std::f64::consts::PI);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(i as f64 * h);
    }
    s * h / 3.0 / std::f64::consts::PI
}

/// Pearson chi-square goodness of fit against a uniform histogram; returns `(statistic, p)`.
pub fn chi2_uniform(counts: &[u64]) -> (f64, f64) {
    let total: u64 = counts.iter().sum();
    let expect = total as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).expect("dof > 0");
    (stat, 1.0 - dist.cdf(stat))
}

/// One-sided paired t-test of `mean(diffs) > 0`; returns `(t, p)`.
pub fn paired_t_greater(diffs: &[f64]) -> (f64, f64) {
    let n = diffs.len();
    if n < 2 {
        return (f64::NAN, 1.0);
    }
    let sd = std_dev(diffs);
    let m = mean(diffs);
    if sd == 0.0 {
        return if m > 0.0 { (f64::INFINITY, 0.0) } else { (f64::NAN, 1.0) };
    }
    let t = m / (sd / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("dof > 0");
    (t, 1.0 - dist.cdf(t))
}

/// Percentile bootstrap interval of the mean over paired rows: every resample draws
/// one shared set of row indices and applies it to all `columns`.
pub fn paired_bootstrap_ci(columns: &[Vec<f64>], resamples: usize, level: f64, seed: u64) -> Vec<(f64, f64)> {
    let n = columns.first().map_or(0, |c| c.len());
    if n == 0 {
        return vec![(f64::NAN, f64::NAN); columns.len()];
    }
    let mut rng = rng_for(seed, &[0xB007]);
    let mut means: Vec<Vec<f64>> = vec![Vec::with_capacity(resamples); columns.len()];
    let mut pick = vec![0usize; n];
    for _ in 0..resamples {
        pick.iter_mut().for_each(|p| *p = rng.random_range(0..n));
        for (col, out) in columns.iter().zip(means.iter_mut()) {
            out.push(pick.iter().map(|&i| col[i]).sum::<f64>() / n as f64);
        }
    }
    let lo_q = (1.0 - level) / 2.0;
    means
        .into_iter()
        .map(|mut m| {
            m.sort_by(f64::total_cmp);
            (quantile_sorted(&m, lo_q), quantile_sorted(&m, 1.0 - lo_q))
        })
        .collect()
}

fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}
