//! Spectral metrics against direct-DFT oracles.

mod common;

use common::{oracle_mel_distance, oracle_stft_distance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reencoder_core::spectral::{MelDistance, MelDistanceConfig, MultiResolutionStft, StftDistanceConfig};

fn signal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-0.5f32..0.5)).collect()
}

#[test]
fn stft_distance_matches_direct_dft() {
    let cfg = StftDistanceConfig::default();
    let res: Vec<_> = cfg.resolutions.iter().map(|r| (r.fft_size, r.hop, r.window_length)).collect();
    let mr = MultiResolutionStft::new(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in [300, 1000, 2047] {
        let a = signal(&mut rng, n);
        let b: Vec<f32> = a.iter().map(|&v| 0.8 * v + rng.gen_range(-0.1f32..0.1)).collect();
        let (fast, slow) = (mr.distance(&a, &b).unwrap(), oracle_stft_distance(&a, &b, &res));
        assert!((fast - slow).abs() <= 1e-5 * slow, "n={n}: {fast} vs {slow}");
    }
}

#[test]
fn mel_distance_matches_direct_dft() {
    let cfg = MelDistanceConfig::default();
    let md = MelDistance::new(8000, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for n in [512, 1500] {
        let (a, b) = (signal(&mut rng, n), signal(&mut rng, n));
        let fast = md.distance(&a, &b).unwrap();
        let slow = oracle_mel_distance(&a, &b, 8000, cfg.fft_size, cfg.hop, cfg.mel_bins);
        assert!((fast - slow).abs() <= 1e-5 * slow, "n={n}: {fast} vs {slow}");
    }
}

#[test]
fn distances_vanish_only_on_identity() {
    let mr = MultiResolutionStft::new(&StftDistanceConfig::default()).unwrap();
    let md = MelDistance::new(8000, &MelDistanceConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = signal(&mut rng, 3000);
    assert_eq!(mr.distance(&x, &x).unwrap(), 0.0);
    assert_eq!(md.distance(&x, &x).unwrap(), 0.0);
    let y = signal(&mut rng, 3000);
    assert!(mr.distance(&x, &y).unwrap() > 0.0);
}
