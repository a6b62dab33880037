//! Seeded augmentation, oversampling and splitting. Every random draw comes
//! from a ChaCha8 stream seeded by the caller, so outputs are pure functions
//! of `(dataset, parameters, seed)`.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{BeatRecord, Dataset, EcgError, NUM_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { noise_sigma: 0.05, seed: 0 }
    }
}

/// Add `N(0, sigma²)` to every sample and clamp to `[0, 1]`. Samples are
/// drawn record by record, sample by sample.
pub fn add_gaussian_noise(ds: &Dataset, cfg: &AugmentConfig) -> Result<Dataset, EcgError> {
    if !(cfg.noise_sigma.is_finite() && cfg.noise_sigma >= 0.0) {
        return Err(EcgError::Parameter(format!("noise sigma must be >= 0, got {}", cfg.noise_sigma)));
    }
    let normal = Normal::new(0.0, cfg.noise_sigma).expect("sigma checked");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let records = ds
        .records
        .iter()
        .map(|r| BeatRecord {
            samples: r.samples.iter().map(|&x| (x + normal.sample(&mut rng)).clamp(0.0, 1.0)).collect(),
            label: r.label,
        })
        .collect();
    Ok(ds.derive(records, format!("gaussian_noise(sigma={}, seed={})", cfg.noise_sigma, cfg.seed)))
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Oversample every class up to the largest class count with SMOTE.
///
/// A synthetic beat is `x + u·(n − x)` where `x` is a uniformly chosen
/// member of the class, `n` one of its `k` nearest same-class neighbours
/// (Euclidean, ties by position) and `u ~ U[0, 1)`. Originals come first,
/// then synthetic beats class by class. Absent classes stay absent.
pub fn smote_resample(ds: &Dataset, k: usize, seed: u64) -> Result<Dataset, EcgError> {
    if k == 0 {
        return Err(EcgError::Parameter("SMOTE k must be >= 1".into()));
    }
    if ds.is_empty() {
        return Err(EcgError::Empty);
    }
    let counts = ds.class_counts();
    let target = *counts.iter().max().unwrap();
    for (class, &n) in counts.iter().enumerate() {
        if n > 0 && n < target && n < 2 {
            return Err(EcgError::SmoteClass { class: class as u8, count: n });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = ds.records.clone();
    for (class, &n) in counts.iter().enumerate() {
        if n == 0 || n == target {
            continue;
        }
        let members: Vec<&BeatRecord> = ds.records.iter().filter(|r| r.label as usize == class).collect();
        let kk = k.min(n - 1);
        let mut neighbours: HashMap<usize, Vec<usize>> = HashMap::new();
        for _ in 0..target - n {
            let i = rng.random_range(0..n);
            let nn = neighbours.entry(i).or_insert_with(|| {
                let mut others: Vec<(f64, usize)> =
                    (0..n).filter(|&j| j != i).map(|j| (dist2(&members[i].samples, &members[j].samples), j)).collect();
                others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                others.into_iter().take(kk).map(|(_, j)| j).collect()
            });
            let j = nn[rng.random_range(0..nn.len())];
            let u: f64 = rng.random_range(0.0..1.0);
            let (x, y) = (&members[i].samples, &members[j].samples);
            let samples = x.iter().zip(y).map(|(a, b)| a + u * (b - a)).collect();
            records.push(BeatRecord { samples, label: class as u8 });
        }
    }
    Ok(ds.derive(records, format!("smote(k={k}, seed={seed})")))
}

/// Split each class into `round(train_frac × count)` training records and
/// the rest for validation, after a seeded shuffle; both halves are then
/// shuffled again.
pub fn stratified_split(ds: &Dataset, train_frac: f64, seed: u64) -> Result<(Dataset, Dataset), EcgError> {
    if !(0.0..=1.0).contains(&train_frac) {
        return Err(EcgError::Parameter(format!("train fraction must be in [0, 1], got {train_frac}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for class in 0..NUM_CLASSES {
        let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.records[i].label as usize == class).collect();
        idx.shuffle(&mut rng);
        let n_train = (train_frac * idx.len() as f64).round() as usize;
        train.extend_from_slice(&idx[..n_train]);
        val.extend_from_slice(&idx[n_train..]);
    }
    train.shuffle(&mut rng);
    val.shuffle(&mut rng);
    let pick = |ix: &[usize]| ix.iter().map(|&i| ds.records[i].clone()).collect();
    let note = |part: &str| format!("stratified_split(train_frac={train_frac}, seed={seed}) {part}");
    Ok((ds.derive(pick(&train), note("train")), ds.derive(pick(&val), note("val"))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecg::BEAT_LEN;

    fn constant_beat(v: f64, label: u8) -> BeatRecord {
        BeatRecord::new(vec![v; BEAT_LEN], label).unwrap()
    }

    fn with_counts(counts: [usize; NUM_CLASSES]) -> Dataset {
        let mut recs = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            for i in 0..n {
                let s = (0..BEAT_LEN).map(|t| ((t * (i + 1) + c * 31) % 97) as f64 / 97.0).collect();
                recs.push(BeatRecord::new(s, c as u8).unwrap());
            }
        }
        Dataset::new(recs, "test")
    }

    #[test]
    fn zero_noise_is_identity() {
        let ds = with_counts([3, 2, 0, 0, 1]);
        let out = add_gaussian_noise(&ds, &AugmentConfig { noise_sigma: 0.0, seed: 4 }).unwrap();
        assert_eq!(out.records, ds.records);
        assert_eq!(out.provenance.len(), 2);
    }

    #[test]
    fn noise_statistics() {
        let ds = Dataset::new((0..10_000).map(|i| constant_beat(0.5, (i % 5) as u8)).collect(), "flat");
        let out = add_gaussian_noise(&ds, &AugmentConfig { noise_sigma: 0.05, seed: 17 }).unwrap();
        let deltas: Vec<f64> =
            out.records.iter().flat_map(|r| r.samples.iter().map(|v| v - 0.5)).filter(|d| d.abs() < 0.5).collect();
        let n = deltas.len() as f64;
        let mean = deltas.iter().sum::<f64>() / n;
        let sd = (deltas.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 0.002, "mean {mean}");
        assert!((sd - 0.05).abs() < 0.05 * 0.05, "sd {sd}");
        let again = add_gaussian_noise(&ds, &AugmentConfig { noise_sigma: 0.05, seed: 17 }).unwrap();
        assert_eq!(again, out);
        assert!(add_gaussian_noise(&ds, &AugmentConfig { noise_sigma: -1.0, seed: 0 }).is_err());
    }

    #[test]
    fn smote_balances_counts() {
        let ds = with_counts([100, 10, 100, 100, 100]);
        let out = smote_resample(&ds, 5, 9).unwrap();
        assert_eq!(out.class_counts(), [100; 5]);
        assert_eq!(&out.records[..ds.len()], &ds.records[..]);
    }

    #[test]
    fn smote_two_points_stay_on_segment() {
        let ds = Dataset::new(
            vec![
                constant_beat(0.2, 1),
                constant_beat(0.6, 1),
                constant_beat(0.0, 0),
                constant_beat(0.1, 0),
                constant_beat(0.3, 0),
                constant_beat(0.4, 0),
            ],
            "t",
        );
        let out = smote_resample(&ds, 1, 3).unwrap();
        assert_eq!(out.class_counts()[1], 4);
        for r in out.records.iter().filter(|r| r.label == 1) {
            assert!(r.samples.iter().all(|&v| (0.2..=0.6).contains(&v)));
        }
    }

    #[test]
    fn smote_rejects_singletons() {
        let ds = with_counts([5, 1, 5, 5, 5]);
        assert!(matches!(smote_resample(&ds, 5, 0), Err(EcgError::SmoteClass { class: 1, count: 1 })));
        assert!(smote_resample(&with_counts([5, 2, 5, 5, 5]), 0, 0).is_err());
    }

    #[test]
    fn split_is_stratified_and_exhaustive() {
        let ds = with_counts([100, 0, 0, 0, 0]);
        let (t, v) = stratified_split(&ds, 0.8, 1).unwrap();
        assert_eq!((t.len(), v.len()), (80, 20));
        let ds = with_counts([50, 50, 0, 0, 0]);
        let (t, v) = stratified_split(&ds, 0.8, 1).unwrap();
        assert_eq!(t.class_counts(), [40, 40, 0, 0, 0]);
        assert_eq!(v.class_counts(), [10, 10, 0, 0, 0]);
        let mut all: Vec<String> = t.records.iter().chain(&v.records).map(|r| format!("{r:?}")).collect();
        let mut orig: Vec<String> = ds.records.iter().map(|r| format!("{r:?}")).collect();
        all.sort();
        orig.sort();
        assert_eq!(all, orig);
    }
}
