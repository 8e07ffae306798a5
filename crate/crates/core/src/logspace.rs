//! Log-domain combinatorics.

/// `ln n!` for `n < len`, built by cumulative summation.
#[derive(Clone, Debug)]
pub struct LnFactorial(Vec<f64>);

impl LnFactorial {
    pub fn new(max_n: usize) -> Self {
        let mut table = Vec::with_capacity(max_n + 1);
        let mut acc = 0.0f64;
        table.push(0.0);
        for k in 1..=max_n {
            acc += (k as f64).ln();
            table.push(acc);
        }
        LnFactorial(table)
    }

    pub fn get(&self, n: usize) -> f64 {
        self.0[n]
    }

    pub fn ln_binomial(&self, n: usize, k: usize) -> f64 {
        if k > n {
            return f64::NEG_INFINITY;
        }
        self.0[n] - self.0[k] - self.0[n - k]
    }

    /// `ln (n! / ∏ kᵢ!)`; the counts must sum to `n`.
    pub fn ln_multinomial(&self, counts: &[usize]) -> f64 {
        let n: usize = counts.iter().sum();
        self.0[n] - counts.iter().map(|&k| self.0[k]).sum::<f64>()
    }
}

/// `ln Σ exp(xᵢ)`, `-∞` for an empty or all-`-∞` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
