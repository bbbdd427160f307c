use proptest::prelude::*;

use pdet::detect::{detect_acf, detect_fourier, detect_hybrid};
use pdet::model::{UNet, UNetConfig};
use pdet::nn::Tensor;
use pdet::signal::{fit_length, zscore, FrequencyBand, TimeSeries};
use pdet::spectral::{dft_power, normalize_band, spectral_entropy, NormalizedSpectrum};
use pdet::train::{mae, pearson, rmse};

fn band() -> FrequencyBand {
    FrequencyBand::new(0.5, 4.0).unwrap()
}

fn window(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, n)
}

/// Windows with a clear in-band tone so detectors have a well-separated peak.
fn toned(n: usize) -> impl Strategy<Value = Vec<f64>> {
    (0.6f64..3.8, window(n)).prop_map(move |(f, noise)| {
        (0..n).map(|t| 20.0 * (2.0 * std::f64::consts::PI * f * t as f64 / 25.0).sin() + 0.1 * noise[t]).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn detectors_ignore_positive_scale(x in toned(200), s in 0.01f64..100.0) {
        let a = TimeSeries::new(x.clone(), 25.0).unwrap();
        let b = TimeSeries::new(x.iter().map(|v| v * s).collect(), 25.0).unwrap();
        prop_assert_eq!(detect_fourier(&a, band(), 512).unwrap().freq_hz, detect_fourier(&b, band(), 512).unwrap().freq_hz);
        prop_assert_eq!(detect_acf(&a, band()).unwrap().freq_hz, detect_acf(&b, band()).unwrap().freq_hz);
        prop_assert_eq!(detect_hybrid(&a, band(), 512).unwrap().freq_hz, detect_hybrid(&b, band(), 512).unwrap().freq_hz);
    }

    #[test]
    fn power_spectrum_ignores_circular_shift(x in window(64), k in 0usize..64) {
        let mut shifted = x.clone();
        shifted.rotate_left(k);
        let a = dft_power(&TimeSeries::new(x, 25.0).unwrap(), 64).unwrap();
        let b = dft_power(&TimeSeries::new(shifted, 25.0).unwrap(), 64).unwrap();
        let scale = a.power().iter().fold(1e-12f64, |m, v| m.max(*v));
        for (p, q) in a.power().iter().zip(b.power()) {
            prop_assert!((p - q).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn entropy_within_bounds(w in prop::collection::vec(0.0f64..1e3, 1..100)) {
        prop_assume!(w.iter().sum::<f64>() > 0.0);
        let p = NormalizedSpectrum::from_weights(&w, 0, 256, 25.0).unwrap();
        let h = spectral_entropy(&p);
        prop_assert!(h >= 0.0 && h <= (w.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn band_probabilities_sum_to_one(x in window(200)) {
        let ts = TimeSeries::new(x, 25.0).unwrap();
        if let Ok(p) = normalize_band(&dft_power(&ts, 256).unwrap(), band()) {
            prop_assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rmse_at_least_mae(p in window(20), q in window(20)) {
        prop_assert!(rmse(&p, &q).unwrap() >= mae(&p, &q).unwrap() - 1e-12);
    }

    #[test]
    fn pearson_affine_invariant(p in window(20), q in window(20), a in 0.1f64..10.0, b in -50.0f64..50.0) {
        let Ok(rho) = pearson(&p, &q) else { return Ok(()) };
        let pa: Vec<f64> = p.iter().map(|v| a * v + b).collect();
        prop_assert!((pearson(&pa, &q).unwrap() - rho).abs() < 1e-9);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&rho));
    }

    #[test]
    fn zscore_has_zero_mean_unit_variance(x in window(50)) {
        let ts = TimeSeries::new(x, 25.0).unwrap();
        prop_assume!(ts.mean_var().1 > 1e-6);
        let z = zscore(&ts).unwrap();
        let (m, v) = z.mean_var();
        prop_assert!(m.abs() < 1e-9 && (v - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fit_length_keeps_centre(x in prop::collection::vec(-1.0f64..1.0, 1..300), n in 1usize..300) {
        let y = fit_length(&x, n);
        prop_assert_eq!(y.len(), n);
        if x.len() <= n {
            prop_assert_eq!(y.iter().filter(|v| **v != 0.0).count(), x.iter().filter(|v| **v != 0.0).count());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn model_output_bounded(x in prop::collection::vec(-1e3f32..1e3, 64), seed in 0u64..1000) {
        let m = UNet::<f32>::new(UNetConfig::new(4).unwrap(), seed).unwrap();
        let y = m.predict(Tensor::from_vec([1, 1, 64], x).unwrap()).unwrap();
        prop_assert!(y.data().iter().all(|v| v.is_finite() && v.abs() <= 1.0));
    }
}
