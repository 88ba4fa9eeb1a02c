//! Feature-space augmentation. The corpus is pre-extracted features, so the
//! transforms operate there: additive Gaussian noise, random temporal crop to
//! at least half length, and frame dropout to the window feature mean.
//! Labels follow frame selection and masks are preserved as-is.

use crate::rng::Rng;

use super::window::WindowSample;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentPolicy {
    pub noise_prob: f64,
    pub noise_sigma: f64,
    pub crop_prob: f64,
    pub frame_dropout_prob: f64,
}

impl AugmentPolicy {
    /// Identity policy: no transform ever fires.
    pub fn off() -> Self {
        AugmentPolicy {
            noise_prob: 0.0,
            noise_sigma: 0.0,
            crop_prob: 0.0,
            frame_dropout_prob: 0.0,
        }
    }

    pub fn is_off(&self) -> bool {
        self.noise_prob == 0.0 && self.crop_prob == 0.0 && self.frame_dropout_prob == 0.0
    }

    pub fn validate(&self) -> crate::Result<()> {
        for (name, p) in [
            ("noise_prob", self.noise_prob),
            ("crop_prob", self.crop_prob),
            ("frame_dropout_prob", self.frame_dropout_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(crate::Error::Config(format!(
                    "augment {name} {p} outside [0, 1]"
                )));
            }
        }
        if self.noise_sigma < 0.0 {
            return Err(crate::Error::Config("noise_sigma must be nonnegative".into()));
        }
        Ok(())
    }
}

impl Default for AugmentPolicy {
    /// Mild defaults used by training when augmentation is enabled.
    fn default() -> Self {
        AugmentPolicy {
            noise_prob: 0.5,
            noise_sigma: 0.05,
            crop_prob: 0.25,
            frame_dropout_prob: 0.25,
        }
    }
}

fn crop(sample: &mut WindowSample, rng: &mut Rng) {
    let len = sample.len();
    let min_len = len.div_ceil(2);
    if min_len >= len {
        return;
    }
    let new_len = min_len + rng.below(len - min_len + 1);
    let start = rng.below(len - new_len + 1);
    let end = start + new_len;
    let d = sample.dim;
    sample.features = sample.features[start * d..end * d].to_vec();
    sample.frame_ids = sample.frame_ids[start..end].to_vec();
    sample.va = sample.va[start..end].to_vec();
    sample.va_mask = sample.va_mask[start..end].to_vec();
    sample.expr = sample.expr[start..end].to_vec();
    sample.expr_mask = sample.expr_mask[start..end].to_vec();
    sample.au = sample.au[start..end].to_vec();
    sample.au_mask = sample.au_mask[start..end].to_vec();
}

fn add_noise(sample: &mut WindowSample, sigma: f64, rng: &mut Rng) {
    if sigma == 0.0 {
        return;
    }
    for v in sample.features.iter_mut() {
        *v += sigma * rng.normal();
    }
}

fn frame_dropout(sample: &mut WindowSample, rng: &mut Rng) {
    let len = sample.len();
    let d = sample.dim;
    // At most 10% of frames are replaced.
    let max_drop = len / 10;
    if max_drop == 0 {
        return;
    }
    let drop_count = rng.below(max_drop + 1);
    if drop_count == 0 {
        return;
    }
    let mut mean = vec![0.0; d];
    for t in 0..len {
        for (c, m) in mean.iter_mut().enumerate() {
            *m += sample.features[t * d + c];
        }
    }
    for m in mean.iter_mut() {
        *m /= len as f64;
    }
    // Partial Fisher-Yates picks distinct frames.
    let mut order: Vec<usize> = (0..len).collect();
    for i in 0..drop_count {
        let j = i + rng.below(len - i);
        order.swap(i, j);
    }
    for &t in order.iter().take(drop_count) {
        sample.features[t * d..(t + 1) * d].copy_from_slice(&mean);
    }
}

/// Apply the policy's transforms, each gated on its own probability, in the
/// fixed order crop, noise, frame dropout.
pub fn augment_window(sample: &WindowSample, policy: &AugmentPolicy, rng: &mut Rng) -> WindowSample {
    let mut out = sample.clone();
    if policy.crop_prob > 0.0 && rng.chance(policy.crop_prob) {
        crop(&mut out, rng);
    }
    if policy.noise_prob > 0.0 && rng.chance(policy.noise_prob) {
        add_noise(&mut out, policy.noise_sigma, rng);
    }
    if policy.frame_dropout_prob > 0.0 && rng.chance(policy.frame_dropout_prob) {
        frame_dropout(&mut out, rng);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::AU_UNITS;

    fn sample(len: usize, dim: usize) -> WindowSample {
        let mut rng = Rng::new(50);
        WindowSample {
            video_id: "v".into(),
            frame_ids: (10..10 + len as u64).collect(),
            features: (0..len * dim).map(|_| rng.uniform(-1.0, 1.0)).collect(),
            dim,
            va: (0..len).map(|i| [i as f64 / len as f64, 0.1]).collect(),
            va_mask: (0..len).map(|i| i % 3 != 0).collect(),
            expr: (0..len).map(|i| (i % 8) as u8).collect(),
            expr_mask: vec![true; len],
            au: vec![[1; AU_UNITS]; len],
            au_mask: (0..len).map(|i| i % 2 == 0).collect(),
        }
    }

    #[test]
    fn off_policy_is_identity() {
        let s = sample(12, 4);
        let mut rng = Rng::new(51);
        let out = augment_window(&s, &AugmentPolicy::off(), &mut rng);
        assert_eq!(out, s);
    }

    #[test]
    fn crop_keeps_labels_aligned_and_contiguous() {
        let s = sample(20, 3);
        let policy = AugmentPolicy {
            crop_prob: 1.0,
            ..AugmentPolicy::off()
        };
        let mut rng = Rng::new(52);
        for _ in 0..50 {
            let out = augment_window(&s, &policy, &mut rng);
            assert!(out.len() >= s.len().div_ceil(2));
            assert!(out.len() <= s.len());
            // Contiguous subsequence of the original frames.
            let start = s
                .frame_ids
                .iter()
                .position(|&f| f == out.frame_ids[0])
                .expect("crop must keep original frames");
            for (i, &f) in out.frame_ids.iter().enumerate() {
                assert_eq!(f, s.frame_ids[start + i]);
                assert_eq!(out.expr[i], s.expr[start + i]);
                assert_eq!(out.va[i], s.va[start + i]);
                assert_eq!(out.va_mask[i], s.va_mask[start + i]);
                assert_eq!(out.au_mask[i], s.au_mask[start + i]);
            }
        }
    }

    #[test]
    fn noise_changes_features_only() {
        let s = sample(10, 4);
        let policy = AugmentPolicy {
            noise_prob: 1.0,
            noise_sigma: 0.1,
            ..AugmentPolicy::off()
        };
        let mut rng = Rng::new(53);
        let out = augment_window(&s, &policy, &mut rng);
        assert_ne!(out.features, s.features);
        assert_eq!(out.frame_ids, s.frame_ids);
        assert_eq!(out.va, s.va);
        assert_eq!(out.va_mask, s.va_mask);
        assert_eq!(out.expr, s.expr);
        assert_eq!(out.au, s.au);
        assert_eq!(out.au_mask, s.au_mask);
    }

    #[test]
    fn frame_dropout_bounded_and_preserves_masks() {
        let s = sample(30, 2);
        let policy = AugmentPolicy {
            frame_dropout_prob: 1.0,
            ..AugmentPolicy::off()
        };
        let mut rng = Rng::new(54);
        for _ in 0..50 {
            let out = augment_window(&s, &policy, &mut rng);
            let changed = (0..s.len())
                .filter(|&t| out.features[t * 2..(t + 1) * 2] != s.features[t * 2..(t + 1) * 2])
                .count();
            assert!(changed <= s.len() / 10, "dropped {changed} frames");
            assert_eq!(out.va_mask, s.va_mask);
            assert_eq!(out.expr, s.expr);
        }
    }

    #[test]
    fn deterministic_given_rng_state() {
        let s = sample(16, 3);
        let policy = AugmentPolicy::default();
        let a = augment_window(&s, &policy, &mut Rng::new(55));
        let b = augment_window(&s, &policy, &mut Rng::new(55));
        assert_eq!(a, b);
    }
}
