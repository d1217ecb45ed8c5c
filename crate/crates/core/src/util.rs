//! Small shared helpers: CSV float formatting and rank statistics.

/// Format with 10 significant digits, shortest-form (trailing zeros trimmed).
/// Falls back to scientific notation far from unity.
pub fn fmt_sig10(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    let s = if (-4..15).contains(&mag) {
        let decimals = (9 - mag).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        return format!("{x:.9e}");
    };
    // trim trailing zeros after the decimal point
    if s.contains('.') {
        let t = s.trim_end_matches('0').trim_end_matches('.');
        t.to_string()
    } else {
        s
    }
}

/// Ranks with ties assigned their average rank (1-based).
fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation. Returns None for fewer than 2 points or zero variance.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let mx = rx.iter().sum::<f64>() / n as f64;
    let my = ry.iter().sum::<f64>() / n as f64;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        let dx = rx[i] - mx;
        let dy = ry[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Isotonic (non-decreasing) regression by pool-adjacent-violators, unit weights.
pub fn isotonic_non_decreasing(ys: &[f64]) -> Vec<f64> {
    // (value, count) blocks
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(ys.len());
    for &y in ys {
        blocks.push((y, 1));
        while blocks.len() >= 2 {
            let m = blocks.len();
            if blocks[m - 2].0 <= blocks[m - 1].0 {
                break;
            }
            let (v1, c1) = blocks[m - 2];
            let (v2, c2) = blocks[m - 1];
            blocks.truncate(m - 2);
            let c = c1 + c2;
            blocks.push(((v1 * c1 as f64 + v2 * c2 as f64) / c as f64, c));
        }
    }
    let mut out = Vec::with_capacity(ys.len());
    for (v, c) in blocks {
        out.extend(std::iter::repeat(v).take(c));
    }
    out
}

/// `n` geometrically spaced integers in [lo, hi], deduplicated after rounding.
pub fn geomspace_ints(lo: usize, hi: usize, n: usize) -> Vec<usize> {
    assert!(lo >= 1 && hi >= lo && n >= 1);
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = ((lo as f64).ln(), (hi as f64).ln());
    let mut out: Vec<usize> = (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp().round() as usize)
        .collect();
    out.dedup();
    out
}
