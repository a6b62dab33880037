//! Synthetic heartbeats for demos and tests.
//!
//! Each class is a sum of Gaussian bumps (P, Q, R, S, T waves) with
//! per-beat jitter in position, width and amplitude, plus baseline wander
//! and sensor noise. Beats are min-max normalized to `[0, 1]` and zero
//! padded after a random end point, like segmented beat collections.
//!
//! | label | morphology                                   |
//! |-------|----------------------------------------------|
//! | 0     | normal: P wave, narrow QRS, upright T        |
//! | 1     | premature: early narrow QRS, next beat close |
//! | 2     | ventricular: wide QRS, inverted T            |
//! | 3     | fusion: intermediate QRS, low T              |
//! | 4     | paced: pacing spike then wide QRS            |

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{BeatRecord, Dataset, BEAT_LEN, NUM_CLASSES};

/// `(centre, width, amplitude)` over normalized time `[0, 1)`.
type Bump = (f64, f64, f64);

fn template(class: u8) -> &'static [Bump] {
    match class {
        0 => {
            &[(0.15, 0.025, 0.12), (0.27, 0.008, -0.10), (0.30, 0.012, 1.0), (0.33, 0.010, -0.20), (0.55, 0.050, 0.30)]
        }
        1 => &[(0.20, 0.010, 0.95), (0.23, 0.010, -0.15), (0.42, 0.040, 0.25), (0.80, 0.012, 0.90)],
        2 => &[(0.28, 0.040, 1.0), (0.36, 0.030, -0.45), (0.58, 0.060, -0.35)],
        3 => &[(0.14, 0.020, 0.06), (0.29, 0.022, 0.80), (0.34, 0.020, -0.30), (0.56, 0.050, 0.18)],
        _ => &[(0.25, 0.003, 0.60), (0.31, 0.035, 0.90), (0.37, 0.025, -0.25), (0.62, 0.060, 0.25)],
    }
}

/// One synthetic beat of class `label`.
pub fn synthetic_beat(rng: &mut impl Rng, label: u8) -> BeatRecord {
    let noise = Normal::new(0.0, 0.01).unwrap();
    let bumps: Vec<Bump> = template(label)
        .iter()
        .map(|&(c, w, a)| {
            (c + rng.random_range(-0.02..0.02), w * rng.random_range(0.85..1.15), a * rng.random_range(0.85..1.15))
        })
        .collect();
    let wander_amp = rng.random_range(0.0..0.05);
    let wander_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let raw: Vec<f64> = (0..BEAT_LEN)
        .map(|i| {
            let t = i as f64 / BEAT_LEN as f64;
            let wave: f64 = bumps.iter().map(|&(c, w, a)| a * (-(t - c) * (t - c) / (2.0 * w * w)).exp()).sum();
            wave + wander_amp * (std::f64::consts::TAU * t + wander_phase).sin() + noise.sample(rng)
        })
        .collect();
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let end = rng.random_range(BEAT_LEN * 3 / 4..=BEAT_LEN);
    let samples = raw
        .iter()
        .enumerate()
        .map(|(i, &v)| if i < end { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 })
        .collect();
    BeatRecord { samples, label }
}

/// `counts[c]` beats of each class in seeded random order.
pub fn synthetic_dataset(counts: [usize; NUM_CLASSES], seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<u8> = (0..NUM_CLASSES).flat_map(|c| std::iter::repeat_n(c as u8, counts[c])).collect();
    labels.shuffle(&mut rng);
    let records = labels.into_iter().map(|l| synthetic_beat(&mut rng, l)).collect();
    Dataset::new(records, format!("synthetic(counts={counts:?}, seed={seed})"))
}
