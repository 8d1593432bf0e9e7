//! Pearson and Spearman correlation, Shapiro-Wilk normality (Royston's AS R94
//! approximation) and the Mann-Whitney U test.

use std::cmp::Ordering;

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Exact,
    Asymptotic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
    /// Second sample size for two-sample tests.
    pub m: Option<usize>,
    pub method: Method,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Alternative {
    #[default]
    TwoSided,
    /// First sample tends to be smaller.
    Less,
    /// First sample tends to be larger.
    Greater,
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("valid parameters")
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation (divides by `n`).
pub fn population_sd(xs: &[f64]) -> f64 {
    let mu = mean(xs);
    (xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Sample standard deviation (divides by `n - 1`); zero for fewer than two values.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mu = mean(xs);
    (xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::param(format!(
            "pearson: lengths differ ({} vs {})",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::param("pearson: need at least two points"));
    }
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson's r with a two-sided t-test of `r = 0`.
pub fn pearson_test(xs: &[f64], ys: &[f64]) -> Result<TestResult> {
    let r = pearson(xs, ys)?;
    let n = xs.len();
    let p_value = if n < 3 {
        1.0
    } else if r.abs() >= 1.0 {
        0.0
    } else {
        let df = (n - 2) as f64;
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
        (2.0 * dist.cdf(-t.abs())).min(1.0)
    };
    Ok(TestResult {
        statistic: r,
        p_value,
        n,
        m: None,
        method: Method::Exact,
    })
}

/// Midranks (1-based) of `xs`.
pub fn midranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    pearson(&midranks(xs), &midranks(ys))
}

/// Evaluates `c[0] + c[1] x + c[2] x^2 + ...`.
fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

/// Shapiro-Wilk W and its p-value, for `3 <= n <= 5000`.
pub fn shapiro_wilk(sample: &[f64]) -> Result<TestResult> {
    const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056];
    const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
    const C3: [f64; 4] = [0.5440, -0.39978, 0.025054, -6.714e-4];
    const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
    const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
    const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];
    const G: [f64; 2] = [-2.273, 0.459];

    let n = sample.len();
    if !(3..=5000).contains(&n) {
        return Err(Error::param(format!("shapiro_wilk: n = {n} outside [3, 5000]")));
    }
    if sample.iter().any(|x| !x.is_finite()) {
        return Err(Error::param("shapiro_wilk: non-finite value"));
    }
    let mut x = sample.to_vec();
    x.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    if x[n - 1] - x[0] <= 0.0 {
        return Err(Error::ZeroVariance);
    }

    // Coefficients a_1..a_{n/2} for the upper half of the order statistics.
    let half = n / 2;
    let an = n as f64;
    let mut a = vec![0.0; half];
    if n == 3 {
        a[0] = std::f64::consts::FRAC_1_SQRT_2;
    } else {
        let normal = standard_normal();
        let m: Vec<f64> = (1..=half)
            .map(|i| normal.inverse_cdf((i as f64 - 0.375) / (an + 0.25)))
            .collect();
        let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
        let ssumm2 = summ2.sqrt();
        let rsn = 1.0 / an.sqrt();
        let a1 = poly(&C1, rsn) - m[0] / ssumm2;
        let (first, fac) = if n > 5 {
            let a2 = -m[1] / ssumm2 + poly(&C2, rsn);
            let fac = ((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1])
                / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2))
                .sqrt();
            a[1] = a2;
            (2, fac)
        } else {
            let fac = ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)).sqrt();
            (1, fac)
        };
        a[0] = a1;
        for i in first..half {
            a[i] = -m[i] / fac;
        }
    }

    let mu = mean(&x);
    let ssq: f64 = x.iter().map(|v| (v - mu) * (v - mu)).sum();
    let numer: f64 = (0..half).map(|i| a[i] * (x[n - 1 - i] - x[i])).sum();
    let w = (numer * numer / ssq).min(1.0);

    let p_value = if n == 3 {
        use std::f64::consts::{FRAC_PI_3, PI};
        (6.0 / PI * (w.sqrt().asin() - FRAC_PI_3)).max(0.0)
    } else {
        let mut w1 = (1.0 - w).ln();
        let (m, s) = if n <= 11 {
            let gamma = poly(&G, an);
            if w1 >= gamma {
                return Ok(TestResult {
                    statistic: w,
                    p_value: 1e-99,
                    n,
                    m: None,
                    method: Method::Asymptotic,
                });
            }
            w1 = -(gamma - w1).ln();
            (poly(&C3, an), poly(&C4, an).exp())
        } else {
            let ln_n = an.ln();
            (poly(&C5, ln_n), poly(&C6, ln_n).exp())
        };
        Normal::new(m, s).expect("positive scale").sf(w1)
    };
    Ok(TestResult {
        statistic: w,
        p_value: p_value.clamp(0.0, 1.0),
        n,
        m: None,
        method: if n == 3 {
            Method::Exact
        } else {
            Method::Asymptotic
        },
    })
}

/// True when `ln(sizes)` passes Shapiro-Wilk at level `alpha`.
pub fn lognormal_check(sizes: &[f64], alpha: f64) -> Result<bool> {
    if let Some(bad) = sizes.iter().find(|&&s| s.is_nan() || s <= 0.0) {
        return Err(Error::param(format!("lognormal_check: size {bad} is not positive")));
    }
    let logs: Vec<f64> = sizes.iter().map(|s| s.ln()).collect();
    Ok(shapiro_wilk(&logs)?.p_value > alpha)
}

/// Two-sided Mann-Whitney U test; `statistic` is U of the first sample.
pub fn mann_whitney(a: &[f64], b: &[f64]) -> Result<TestResult> {
    mann_whitney_with(a, b, Alternative::TwoSided)
}

/// Mann-Whitney U with midranks for ties. Uses the exact permutation
/// distribution when `n * m <= 400`, otherwise the tie-corrected normal
/// approximation with continuity correction.
pub fn mann_whitney_with(a: &[f64], b: &[f64], alternative: Alternative) -> Result<TestResult> {
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        return Err(Error::param("mann_whitney: empty sample"));
    }
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return Err(Error::param("mann_whitney: NaN in sample"));
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let rank_sum_a: f64 = ranks[..n].iter().sum();
    let u = rank_sum_a - (n * (n + 1)) as f64 / 2.0;
    let nm = (n * m) as f64;

    let (p_value, method) = if n * m <= 400 {
        (exact_u_p_value(&ranks, n, u, alternative), Method::Exact)
    } else {
        let total = (n + m) as f64;
        let mut ties = 0.0;
        let mut sorted = pooled.clone();
        sorted.sort_by(|x, y| x.partial_cmp(y).expect("no NaN"));
        let mut i = 0;
        while i < sorted.len() {
            let mut j = i;
            while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
                j += 1;
            }
            let t = (j - i + 1) as f64;
            ties += t * t * t - t;
            i = j + 1;
        }
        let var = nm / 12.0 * ((total + 1.0) - ties / (total * (total - 1.0)));
        let p = if var <= 0.0 {
            1.0
        } else {
            let sd = var.sqrt();
            let mu = nm / 2.0;
            let upper = |stat: f64| standard_normal().sf((stat - mu - 0.5) / sd);
            match alternative {
                Alternative::Greater => upper(u),
                Alternative::Less => upper(nm - u),
                Alternative::TwoSided => 2.0 * upper(u.max(nm - u)),
            }
        };
        (p, Method::Asymptotic)
    };
    Ok(TestResult {
        statistic: u,
        p_value: p_value.clamp(0.0, 1.0),
        n,
        m: Some(m),
        method,
    })
}

/// Exact permutation p-value of U for the first `n` of the pooled `ranks`.
/// Works with doubled ranks so midranks stay integral.
fn exact_u_p_value(ranks: &[f64], n: usize, u: f64, alternative: Alternative) -> f64 {
    let total = ranks.len();
    let m = total - n;
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    // Enumerate over the smaller group; U_b = nm - U_a.
    let pick = n.min(m);
    let max_sum: usize = {
        let mut sorted = doubled.clone();
        sorted.sort_unstable_by(|x, y| y.cmp(x));
        sorted[..pick].iter().sum()
    };
    // counts[j][s]: number of j-subsets with doubled rank sum s.
    let mut counts = vec![vec![0.0f64; max_sum + 1]; pick + 1];
    counts[0][0] = 1.0;
    for &r in &doubled {
        for j in (1..=pick).rev() {
            let (lo, hi) = counts.split_at_mut(j);
            let prev = &lo[j - 1];
            let cur = &mut hi[0];
            for s in (r..=max_sum).rev() {
                let c = prev[s - r];
                if c != 0.0 {
                    cur[s] += c;
                }
            }
        }
    }
    let dist = &counts[pick];
    let total_count: f64 = dist.iter().sum();
    // Doubled U of the picked group for doubled rank sum s.
    let offset = pick * (pick + 1);
    let nm2 = 2 * n * m;
    let u2_a = (2.0 * u).round() as i64;
    // Probability mass over doubled U_a values.
    let mut pmf = vec![0.0f64; nm2 + 1];
    for (s, &c) in dist.iter().enumerate() {
        if c == 0.0 || s < offset {
            continue;
        }
        let u2_pick = s - offset;
        let u2 = if pick == n { u2_pick } else { nm2 - u2_pick };
        pmf[u2] += c;
    }
    let le = |v: i64| -> f64 {
        pmf.iter()
            .enumerate()
            .filter(|&(x, _)| (x as i64) <= v)
            .map(|(_, c)| c)
            .sum::<f64>()
            / total_count
    };
    let ge = |v: i64| -> f64 {
        pmf.iter()
            .enumerate()
            .filter(|&(x, _)| (x as i64) >= v)
            .map(|(_, c)| c)
            .sum::<f64>()
            / total_count
    };
    match alternative {
        Alternative::Less => le(u2_a),
        Alternative::Greater => ge(u2_a),
        // |U - nm/2| >= observed; symmetric in the two samples even when
        // the tie pattern makes the null distribution asymmetric.
        Alternative::TwoSided => {
            let dev = (2 * u2_a - nm2 as i64).abs();
            pmf.iter()
                .enumerate()
                .filter(|&(x, _)| (2 * x as i64 - nm2 as i64).abs() >= dev)
                .map(|(_, c)| c)
                .sum::<f64>()
                / total_count
        }
    }
}
