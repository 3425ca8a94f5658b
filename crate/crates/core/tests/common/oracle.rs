//! Closed-form reference values that share no code with `echo_core::stats`.

use std::f64::consts::PI;

fn ln_factorial(n: u32) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

/// erfc from the all-positive series erf(x) = 2/√π e^{-x²} Σ 2ⁿ x^{2n+1} / (2n+1)!!.
pub fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    if x > 26.0 {
        return 0.0;
    }
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    while term > 1e-18 * sum {
        n += 1.0;
        term *= 2.0 * x * x / (2.0 * n + 1.0);
        sum += term;
    }
    1.0 - 2.0 / PI.sqrt() * (-x * x).exp() * sum
}

pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / 2f64.sqrt())
}

/// χ² upper tail via the finite Poisson sum (even dof) or erfc plus a finite
/// half-integer sum (odd dof).
pub fn chi2_sf(x: f64, k: u32) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let h = x / 2.0;
    if k.is_multiple_of(2) {
        (0..k / 2)
            .map(|j| (-h + j as f64 * h.ln() - ln_factorial(j)).exp())
            .sum()
    } else {
        let mut total = erfc(h.sqrt());
        let mut ln_gamma_half = PI.sqrt().ln();
        for j in 1..=(k - 1) / 2 {
            ln_gamma_half += (j as f64 - 0.5).ln();
            total += (-h + (j as f64 - 0.5) * h.ln() - ln_gamma_half).exp();
        }
        total
    }
}

/// Pearson statistic by direct double sum over a dense table.
pub fn chi2_brute(table: &[Vec<u64>]) -> f64 {
    let rows: Vec<f64> = table.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
    let cols: Vec<f64> = (0..table[0].len())
        .map(|j| table.iter().map(|r| r[j]).sum::<u64>() as f64)
        .collect();
    let n: f64 = rows.iter().sum();
    let mut chi2 = 0.0;
    for (i, r) in table.iter().enumerate() {
        for (j, &o) in r.iter().enumerate() {
            if cols[j] == 0.0 {
                continue;
            }
            let e = rows[i] * cols[j] / n;
            chi2 += (o as f64 - e).powi(2) / e;
        }
    }
    chi2
}

/// Consensus set by the definition, with percentages rounded in floating
/// point: ids with 2·count ≥ N, else the top id and every id whose rounded
/// percentage is within `tol` points of it. `none` is never kept.
pub fn consensus(counts: &[(String, u64)], n: u64, none: Option<&str>, tol: u64) -> std::collections::BTreeSet<String> {
    let eligible: Vec<&(String, u64)> = counts.iter().filter(|(h, c)| *c > 0 && Some(h.as_str()) != none).collect();
    let majority: std::collections::BTreeSet<String> =
        eligible.iter().filter(|(_, c)| 2 * c >= n).map(|(h, _)| h.clone()).collect();
    if !majority.is_empty() {
        return majority;
    }
    let pct = |c: u64| (c as f64 * 100.0 / n as f64 + 0.5).floor() as i64;
    let Some(top) = eligible.iter().map(|(_, c)| pct(*c)).max() else {
        return Default::default();
    };
    eligible
        .iter()
        .filter(|(_, c)| pct(*c) >= top - tol as i64)
        .map(|(h, _)| h.clone())
        .collect()
}
