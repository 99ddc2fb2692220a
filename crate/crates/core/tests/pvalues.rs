//! Conformal p-values produced inside a running pipeline are uniform when
//! the stream is exchangeable.

use icm_drift::betting::{BettingPreset, CautiousConfig};
use icm_drift::ensemble::{Ensemble, EnsembleConfig};
use icm_drift::martingale::MartingaleConfig;
use icm_drift::stream::{generate_sea, inject_label_noise, ConceptSchedule, NoiseSpec};
use icm_drift::FeatureSchema;

/// Largest gap between the empirical CDF of `sample` and the uniform CDF.
fn ks_statistic(mut sample: Vec<f64>) -> f64 {
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    sample
        .iter()
        .enumerate()
        .map(|(i, &x)| ((i + 1) as f64 / n - x).max(x - i as f64 / n))
        .fold(0.0, f64::max)
}

#[test]
fn pipeline_pvalues_are_uniform_under_exchangeability() {
    for seed in 0..3 {
        let data: Vec<_> =
            generate_sea(3_200, ConceptSchedule::sequential(1, 3_200).unwrap(), seed)
                .unwrap()
                .collect();
        let data: Vec<_> = inject_label_noise(data, NoiseSpec::new(0.1, seed).unwrap())
            .collect::<Result<_, _>>()
            .unwrap();
        let config = EnsembleConfig::new(
            &[200],
            CautiousConfig::preset(BettingPreset::Mihnn),
            MartingaleConfig::new(0.01, 10.0).unwrap(),
            seed,
        )
        .unwrap();
        let mut ensemble = Ensemble::new(&FeatureSchema::sea(), config).unwrap();
        let mut pvalues = Vec::new();
        for z in &data {
            let result = ensemble.step(z).unwrap();
            if !result.alarms.is_empty() {
                break;
            }
            if let Some(trace) = ensemble.pipelines()[0].last_trace() {
                assert!(trace.pvalue > 0.0 && trace.pvalue <= 1.0);
                pvalues.push(trace.pvalue);
            }
        }
        assert!(pvalues.len() > 2_000);
        // 1% critical value of the one-sample KS statistic.
        let critical = 1.628 / (pvalues.len() as f64).sqrt();
        let d = ks_statistic(pvalues);
        assert!(
            d < critical,
            "seed {seed}: D = {d:.4}, critical {critical:.4}"
        );
    }
}
