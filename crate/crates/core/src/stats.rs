//! Small statistics helpers for the experiment driver and its tests.

/// Sample mean and normal-approximation 95% confidence half-width.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * (var / n as f64).sqrt())
}

/// One-sided sign test: probability of at least `wins` successes out of
/// `wins + losses` fair coin flips. Ties are excluded by the caller.
pub fn sign_test_p(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    let ln2 = std::f64::consts::LN_2;
    // ln C(n, k) accumulated incrementally from k = wins upward.
    let ln_choose = |n: usize, k: usize| -> f64 {
        let mut acc = 0.0;
        for i in 0..k {
            acc += ((n - i) as f64).ln() - ((i + 1) as f64).ln();
        }
        acc
    };
    let mut ln_c = ln_choose(n, wins);
    let mut p = 0.0;
    for k in wins..=n {
        p += (ln_c - n as f64 * ln2).exp();
        if k < n {
            ln_c += ((n - k) as f64).ln() - ((k + 1) as f64).ln();
        }
    }
    p.min(1.0)
}

/// Centered three-point moving average with replicated ends.
pub fn smooth3(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    if n < 3 {
        return xs.to_vec();
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(n - 1);
            (xs[lo] + xs[i] + xs[hi]) / 3.0
        })
        .collect()
}

/// True iff the sequence strictly increases everywhere.
pub fn strictly_increasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] > w[0])
}

/// True iff the first differences change sign exactly once, from positive to
/// negative: the sequence rises to a single peak and then falls.
pub fn unimodal_rise_fall(xs: &[f64]) -> bool {
    if xs.len() < 3 {
        return false;
    }
    let diffs: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    let mut sign_changes = 0;
    let mut saw_positive = false;
    let mut last_sign = 0i8;
    for d in diffs {
        let sign = if d > 0.0 {
            1
        } else if d < 0.0 {
            -1
        } else {
            continue;
        };
        if sign == 1 {
            saw_positive = true;
        }
        if last_sign != 0 && sign != last_sign {
            sign_changes += 1;
            if sign == 1 {
                return false; // fell then rose again
            }
        }
        last_sign = sign;
    }
    saw_positive && sign_changes == 1
}
