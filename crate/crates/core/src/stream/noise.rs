use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LabeledInstance;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// How a noisy instance's label is perturbed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// The label is inverted.
    #[default]
    Flip,
    /// The label is replaced by a uniformly drawn class, so it only changes
    /// half of the time for binary labels.
    Resample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub rate: f64,
    pub seed: u64,
    #[serde(default)]
    pub mode: NoiseMode,
}

impl NoiseSpec {
    pub fn new(rate: f64, seed: u64) -> Result<Self> {
        Self::with_mode(rate, seed, NoiseMode::Flip)
    }

    pub fn with_mode(rate: f64, seed: u64, mode: NoiseMode) -> Result<Self> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::Config(format!("noise rate {rate} outside [0, 1]")));
        }
        Ok(NoiseSpec { rate, seed, mode })
    }
}

/// Iterator adapter perturbing binary labels. Two uniforms are drawn for
/// every instance whatever the rate, so streams with different rates stay
/// aligned draw for draw.
#[derive(Debug, Clone)]
pub struct LabelNoise<I> {
    inner: I,
    spec: NoiseSpec,
    rng: ChaCha8Rng,
}

pub fn inject_label_noise<I>(stream: I, spec: NoiseSpec) -> LabelNoise<I::IntoIter>
where
    I: IntoIterator<Item = LabeledInstance>,
{
    LabelNoise {
        inner: stream.into_iter(),
        spec,
        rng: rng::stream(spec.seed, Purpose::Noise, 0),
    }
}

impl<I: Iterator<Item = LabeledInstance>> Iterator for LabelNoise<I> {
    type Item = Result<LabeledInstance>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut z = self.inner.next()?;
        if z.label > 1 {
            return Some(Err(Error::UnsupportedLabel(z.label)));
        }
        let coin: f64 = self.rng.gen();
        let replacement = self.rng.gen_range(0..2u32);
        if coin < self.spec.rate {
            z.label = match self.spec.mode {
                NoiseMode::Flip => 1 - z.label,
                NoiseMode::Resample => replacement,
            };
        }
        Some(Ok(z))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        self.inner.size_hint()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::{generate_sea, ConceptSchedule};

    fn clean(n: u64) -> Vec<LabeledInstance> {
        generate_sea(n, ConceptSchedule::sequential(4, 1_000).unwrap(), 21)
            .unwrap()
            .collect()
    }

    fn noisy(input: &[LabeledInstance], spec: NoiseSpec) -> Vec<LabeledInstance> {
        inject_label_noise(input.to_vec(), spec)
            .collect::<Result<_>>()
            .unwrap()
    }

    #[test]
    fn zero_rate_is_identity() {
        let input = clean(5_000);
        assert_eq!(noisy(&input, NoiseSpec::new(0.0, 1).unwrap()), input);
    }

    #[test]
    fn full_rate_flips_everything() {
        let input = clean(5_000);
        let out = noisy(&input, NoiseSpec::new(1.0, 1).unwrap());
        for (a, b) in input.iter().zip(&out) {
            assert_eq!(a.label, 1 - b.label);
            assert_eq!(a.features, b.features);
            assert_eq!(a.timestamp, b.timestamp);
        }
    }

    #[test]
    fn flip_count_within_six_sigma() {
        // Binomial(100000, 0.1): mean 10,000, sd sqrt(9,000) ~ 94.9, 6 sd ~ 569.
        let input = clean(100_000);
        let out = noisy(&input, NoiseSpec::new(0.1, 77).unwrap());
        let flipped = input
            .iter()
            .zip(&out)
            .filter(|(a, b)| a.label != b.label)
            .count();
        assert!((9_400..=10_600).contains(&flipped), "{flipped}");
    }

    #[test]
    fn resample_changes_about_half_the_selected_labels() {
        // Effective flip probability 0.05: mean 5,000, sd ~ 68.9.
        let input = clean(100_000);
        let spec = NoiseSpec::with_mode(0.1, 77, NoiseMode::Resample).unwrap();
        let out = noisy(&input, spec);
        let flipped = input
            .iter()
            .zip(&out)
            .filter(|(a, b)| a.label != b.label)
            .count();
        assert!((4_587..=5_413).contains(&flipped), "{flipped}");
    }

    #[test]
    fn non_binary_labels_are_rejected() {
        let input = vec![LabeledInstance::new(1, vec![0.0], 2)];
        let err = inject_label_noise(input, NoiseSpec::new(0.5, 1).unwrap())
            .next()
            .unwrap()
            .unwrap_err();
        assert!(matches!(err, Error::UnsupportedLabel(2)));
    }

    #[test]
    fn rate_is_validated() {
        assert!(NoiseSpec::new(-0.1, 0).is_err());
        assert!(NoiseSpec::new(1.1, 0).is_err());
    }
}
