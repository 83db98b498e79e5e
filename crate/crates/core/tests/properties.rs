use proptest::prelude::*;
use univnet::discriminators::{reshape2d, SubDiscriminatorId, SubScore};
use univnet::dsp::{stft_magnitude, AudioBuffer, MelSpectrogram, NormStats, StftParams, SAMPLE_RATE};
use univnet::losses::{aux_loss, discriminator_loss, generator_adversarial_loss};
use univnet::tensor::Tensor;

fn signal(len: usize, seed: u64) -> Vec<f32> {
    // cheap deterministic pseudo-noise in [-0.5, 0.5)
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (0..len)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 40) as f32 / (1u64 << 24) as f32 - 0.5
        })
        .collect()
}

fn scores(maps: &[Vec<f64>]) -> Vec<SubScore<f64>> {
    maps.iter()
        .enumerate()
        .map(|(i, m)| SubScore {
            map: Tensor::new(m.clone(), &[m.len()]).unwrap(),
            source: SubDiscriminatorId::Period(i + 2),
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn stft_frame_count(len in 600usize..6000, which in 0usize..4) {
        let params = [
            StftParams::FEATURE,
            StftParams::new(512, 50, 240),
            StftParams::new(1024, 120, 600),
            StftParams::new(256, 64, 256),
        ][which];
        prop_assume!(len >= params.min_len());
        let x = AudioBuffer::new(signal(len, len as u64), SAMPLE_RATE).unwrap();
        let s = stft_magnitude(&x, params).unwrap();
        prop_assert_eq!(s.n_frames, len / params.hop + 1);
        prop_assert_eq!(s.n_bins, params.n_fft / 2 + 1);
        prop_assert_eq!(s.mag.len(), s.n_frames * s.n_bins);
        prop_assert!(s.mag.iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn aux_loss_is_nonnegative_and_zero_on_identity(len in 600usize..3000, seed in any::<u64>(), gain in 0.0f64..2.0) {
        let sets = [StftParams::new(256, 64, 128), StftParams::new(512, 100, 256)];
        let x = Tensor::<f64>::new(signal(len, seed).iter().map(|&v| v as f64).collect(), &[len]).unwrap();
        let y = Tensor::<f64>::new(signal(len, seed ^ 1).iter().map(|&v| v as f64 * gain).collect(), &[len]).unwrap();
        let same = aux_loss(&x, &x, &sets).unwrap();
        prop_assert_eq!(same.total.item(), 0.0);
        let diff = aux_loss(&x, &y, &sets).unwrap();
        prop_assert!(diff.total.item() >= 0.0);
        prop_assert!(diff.total.item().is_finite());
    }

    #[test]
    fn reshape2d_layout(len in 1usize..200, which in 0usize..5, seed in any::<u64>()) {
        let p = [2usize, 3, 5, 7, 11][which];
        prop_assume!(len >= p);
        let x: Vec<f64> = signal(len, seed).iter().map(|&v| v as f64).collect();
        let y = reshape2d(&Tensor::new(x.clone(), &[len]).unwrap(), p).unwrap();
        let rows = len.div_ceil(p);
        prop_assert_eq!(y.shape(), &[1, rows, p]);
        let v = y.to_vec();
        for j in 0..rows * p {
            let src = if j < len { j } else { 2 * (len - 1) - j };
            prop_assert_eq!(v[j], x[src]);
        }
    }

    #[test]
    fn duplicating_every_sub_discriminator_keeps_lsgan_losses(
        pairs in prop::collection::vec(
            (prop::collection::vec(-2.0f64..2.0, 1..6), prop::collection::vec(-2.0f64..2.0, 1..6)),
            1..5,
        ),
    ) {
        let real: Vec<Vec<f64>> = pairs.iter().map(|p| p.0.clone()).collect();
        let fake: Vec<Vec<f64>> = pairs.iter().map(|p| p.1.clone()).collect();
        let l_d = discriminator_loss(&scores(&real), &scores(&fake)).unwrap().item();
        let l_g = generator_adversarial_loss(&scores(&fake)).unwrap().item();
        prop_assert!(l_d >= 0.0 && l_g >= 0.0);
        let twice = |v: &[Vec<f64>]| v.iter().chain(v).cloned().collect::<Vec<_>>();
        let l_d2 = discriminator_loss(&scores(&twice(&real)), &scores(&twice(&fake))).unwrap().item();
        let l_g2 = generator_adversarial_loss(&scores(&twice(&fake))).unwrap().item();
        prop_assert!((l_d2 - l_d).abs() < 1e-12);
        prop_assert!((l_g2 - l_g).abs() < 1e-12);
    }

    #[test]
    fn normalization_round_trips(frames in 1usize..20, seed in any::<u64>()) {
        let n_mels = 100;
        let data: Vec<f32> = signal(frames * n_mels, seed).iter().map(|v| v * 10.0 - 4.0).collect();
        let mel = MelSpectrogram::new(data.clone(), frames, n_mels, false).unwrap();
        let stats = NormStats {
            mean: signal(n_mels, seed ^ 7),
            std: signal(n_mels, seed ^ 9).iter().map(|v| v + 1.0).collect(),
        };
        let back = mel.normalize(&stats).unwrap().denormalize(&stats).unwrap();
        prop_assert!(back.data.iter().zip(&data).all(|(a, b)| (a - b).abs() < 1e-4));
        prop_assert!(!back.normalized);
    }
}
