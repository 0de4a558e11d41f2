use std::fmt::{self, Write as _};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::NUM_CLASSES;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
}

impl Metrics {
    pub fn get(&self, i: usize) -> f64 {
        [self.accuracy, self.micro_f1, self.macro_f1][i]
    }

    fn from_array(a: [f64; 3]) -> Self {
        Self { accuracy: a[0], micro_f1: a[1], macro_f1: a[2] }
    }
}

pub const METRIC_KEYS: [&str; 3] = ["acc", "micro_f1", "macro_f1"];

/// `m[gold][pred]` counts.
pub fn confusion(preds: &[usize], golds: &[usize]) -> Result<[[usize; NUM_CLASSES]; NUM_CLASSES]> {
    if preds.len() != golds.len() {
        return Err(Error::contract(format!("{} predictions for {} gold labels", preds.len(), golds.len())));
    }
    if preds.is_empty() {
        return Err(Error::contract("metrics over zero predictions"));
    }
    let mut m = [[0usize; NUM_CLASSES]; NUM_CLASSES];
    for (&p, &g) in preds.iter().zip(golds) {
        if p >= NUM_CLASSES || g >= NUM_CLASSES {
            return Err(Error::contract(format!("label out of range: pred {p}, gold {g}")));
        }
        m[g][p] += 1;
    }
    Ok(m)
}

/// With `skip_absent`, classes that occur in neither gold nor predicted
/// labels are left out of the macro average instead of scoring 0.
fn from_confusion(m: &[[usize; NUM_CLASSES]; NUM_CLASSES], skip_absent: bool) -> Metrics {
    let n: usize = m.iter().flatten().sum();
    let correct: usize = (0..NUM_CLASSES).map(|c| m[c][c]).sum();
    let wrong = n - correct;
    // pooled over classes every error is one FP and one FN
    let micro = 2.0 * correct as f64 / (2.0 * correct as f64 + 2.0 * wrong as f64);
    let mut macro_sum = 0.0;
    let mut classes = 0;
    for c in 0..NUM_CLASSES {
        let tp = m[c][c];
        let fp: usize = (0..NUM_CLASSES).filter(|&g| g != c).map(|g| m[g][c]).sum();
        let fn_: usize = (0..NUM_CLASSES).filter(|&p| p != c).map(|p| m[c][p]).sum();
        let denom = 2 * tp + fp + fn_;
        if denom > 0 {
            macro_sum += 2.0 * tp as f64 / denom as f64;
        }
        if denom > 0 || !skip_absent {
            classes += 1;
        }
    }
    Metrics { accuracy: correct as f64 / n as f64, micro_f1: micro, macro_f1: macro_sum / classes as f64 }
}

/// Accuracy, micro-F1 and macro-F1 (a class with no gold and no predicted
/// instances scores F1 = 0).
pub fn metrics(preds: &[usize], golds: &[usize]) -> Result<Metrics> {
    Ok(from_confusion(&confusion(preds, golds)?, false))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BootstrapCi {
    pub accuracy: Interval,
    pub micro_f1: Interval,
    pub macro_f1: Interval,
}

impl BootstrapCi {
    pub fn get(&self, i: usize) -> Interval {
        [self.accuracy, self.micro_f1, self.macro_f1][i]
    }
}

/// Linear-interpolation percentile of sorted values, `q` in `[0, 1]`.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Percentile (2.5, 97.5) intervals from `b` resamples with replacement.
/// A class missing from a resample is left out of that resample's macro-F1.
pub fn bootstrap_ci(preds: &[usize], golds: &[usize], b: usize, seed: u64) -> Result<BootstrapCi> {
    confusion(preds, golds)?;
    if b < 100 {
        return Err(Error::contract(format!("bootstrap needs >= 100 resamples, got {b}")));
    }
    let n = preds.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples: [Vec<f64>; 3] = [Vec::with_capacity(b), Vec::with_capacity(b), Vec::with_capacity(b)];
    for _ in 0..b {
        let mut m = [[0usize; NUM_CLASSES]; NUM_CLASSES];
        for _ in 0..n {
            let i = rng.gen_range(0..n);
            m[golds[i]][preds[i]] += 1;
        }
        let r = from_confusion(&m, true);
        for (k, s) in samples.iter_mut().enumerate() {
            s.push(r.get(k));
        }
    }
    let mut out = [Interval { lower: 0.0, upper: 0.0 }; 3];
    for (k, s) in samples.iter_mut().enumerate() {
        s.sort_by(f64::total_cmp);
        out[k] = Interval { lower: percentile(s, 0.025), upper: percentile(s, 0.975) };
    }
    Ok(BootstrapCi { accuracy: out[0], micro_f1: out[1], macro_f1: out[2] })
}

/// Outcome of one training seed.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedMetrics {
    pub seed: u64,
    pub test: Metrics,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub best_val_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub per_seed: Vec<SeedMetrics>,
    pub mean: Metrics,
    /// Population standard deviation over seeds.
    pub std: Metrics,
    /// Metrics over test predictions pooled across seeds.
    pub pooled: Metrics,
    pub ci: Option<BootstrapCi>,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl MetricsReport {
    /// Aggregate seeds; `pooled` holds the concatenated test predictions and
    /// gold labels of every seed.
    pub fn aggregate(per_seed: Vec<SeedMetrics>, pooled: (&[usize], &[usize]), bootstrap: usize) -> Result<Self> {
        if per_seed.is_empty() {
            return Err(Error::contract("no seeds to aggregate"));
        }
        let mut mean = [0.0; 3];
        let mut std = [0.0; 3];
        for k in 0..3 {
            let vals: Vec<f64> = per_seed.iter().map(|s| s.test.get(k)).collect();
            (mean[k], std[k]) = mean_std(&vals);
        }
        let ci =
            if bootstrap > 0 { Some(bootstrap_ci(pooled.0, pooled.1, bootstrap, per_seed[0].seed)?) } else { None };
        Ok(Self {
            per_seed,
            mean: Metrics::from_array(mean),
            std: Metrics::from_array(std),
            pooled: metrics(pooled.0, pooled.1)?,
            ci,
        })
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.per_seed.iter().map(|s| s.seed).collect()
    }

    /// Machine-readable `key=value` lines.
    pub fn key_values(&self) -> String {
        let mut out = String::new();
        let seeds: Vec<String> = self.seeds().iter().map(u64::to_string).collect();
        let _ = writeln!(out, "seeds={}", seeds.join(","));
        let _ = writeln!(out, "n_seeds={}", self.per_seed.len());
        for (k, key) in METRIC_KEYS.iter().enumerate() {
            let _ = writeln!(out, "{key}_mean={}", self.mean.get(k));
            let _ = writeln!(out, "{key}_std={}", self.std.get(k));
            let _ = writeln!(out, "{key}_pooled={}", self.pooled.get(k));
            if let Some(ci) = &self.ci {
                let iv = ci.get(k);
                let _ = writeln!(out, "{key}_ci={},{}", iv.lower, iv.upper);
            }
        }
        for s in &self.per_seed {
            for (k, key) in METRIC_KEYS.iter().enumerate() {
                let _ = writeln!(out, "seed{}_{key}={}", s.seed, s.test.get(k));
            }
            let _ = writeln!(out, "seed{}_best_epoch={}", s.seed, s.best_epoch);
            let _ = writeln!(out, "seed{}_epochs_run={}", s.seed, s.epochs_run);
            let _ = writeln!(out, "seed{}_best_val_loss={}", s.seed, s.best_val_loss);
        }
        out
    }
}

/// Human-readable summary followed by the `key=value` block.
impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "metric      mean      std       (over {} seeds)", self.per_seed.len())?;
        for (k, name) in ["accuracy", "micro-F1", "macro-F1"].iter().enumerate() {
            write!(f, "{name:<11} {:<9.4} {:<9.4}", self.mean.get(k), self.std.get(k))?;
            if let Some(ci) = &self.ci {
                let iv = ci.get(k);
                write!(f, " 95% CI ({:.4}, {:.4}) around pooled {:.4}", iv.lower, iv.upper, self.pooled.get(k))?;
            }
            writeln!(f)?;
        }
        writeln!(f)?;
        write!(f, "{}", self.key_values())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let g = [0, 1, 2, 2];
        assert_eq!(metrics(&g, &g).unwrap(), Metrics { accuracy: 1.0, micro_f1: 1.0, macro_f1: 1.0 });
    }

    #[test]
    fn all_negative_predictions() {
        let m = metrics(&[0, 0, 0], &[0, 1, 2]).unwrap();
        assert_eq!(m.accuracy, 1.0 / 3.0);
        assert_eq!(m.micro_f1, m.accuracy);
        // class 0: P = 1/3, R = 1, F1 = 0.5; the others score 0
        assert!((m.macro_f1 - 0.5 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert!(metrics(&[0], &[0, 1]).is_err());
        assert!(metrics(&[], &[]).is_err());
        assert!(metrics(&[3], &[0]).is_err());
        assert!(bootstrap_ci(&[0], &[0], 10, 0).is_err());
    }

    #[test]
    fn degenerate_bootstrap() {
        let g = vec![1, 0, 2, 2, 1];
        let ci = bootstrap_ci(&g, &g, 200, 3).unwrap();
        for k in 0..3 {
            assert_eq!(ci.get(k), Interval { lower: 1.0, upper: 1.0 });
        }
        assert_eq!(bootstrap_ci(&g, &g, 200, 3).unwrap(), ci);
    }

    #[test]
    fn population_std() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }

    #[test]
    fn percentile_interpolates() {
        assert_eq!(percentile(&[0.0, 1.0, 2.0, 3.0, 4.0], 0.5), 2.0);
        assert!((percentile(&[0.0, 10.0], 0.025) - 0.25).abs() < 1e-15);
    }
}
