//! Synthetic dataset generator for desk-scale verification: per-class
//! Gaussian feature clusters with temporal smoothing, and labels that stay
//! consistent across the three tasks (VA anchors, the class itself, and a
//! class-conditional action-unit pattern).

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::{AU_UNITS, EXPR_CLASSES};

use super::feature::{write_feature_file, FeatureSequence};
use super::labels::{write_label_file, AuTrack, ExprTrack, LabelSet, VaTrack};
use super::manifest::{write_manifest, ManifestRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub classes: usize,
    pub videos_per_class: usize,
    pub frames_per_video: usize,
    /// One entry per feature stream; merged dim is the sum.
    pub stream_dims: Vec<usize>,
    /// Std-dev of the smoothed per-frame feature noise.
    pub feature_noise: f64,
    /// Centroid magnitude; cluster distance scales with it.
    pub separation: f64,
    pub va_noise: f64,
    pub au_flip_prob: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            classes: EXPR_CLASSES,
            videos_per_class: 8,
            frames_per_video: 16,
            stream_dims: vec![8, 8],
            feature_noise: 0.2,
            separation: 3.0,
            va_noise: 0.35,
            au_flip_prob: 0.05,
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn total_dim(&self) -> usize {
        self.stream_dims.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.classes > EXPR_CLASSES {
            return Err(Error::Config(format!(
                "classes {} outside 1..={EXPR_CLASSES}",
                self.classes
            )));
        }
        if self.videos_per_class == 0 || self.frames_per_video == 0 {
            return Err(Error::Config("empty synthetic dataset".into()));
        }
        if self.stream_dims.is_empty() || self.stream_dims.len() > 2 {
            return Err(Error::Config("stream_dims must list 1 or 2 streams".into()));
        }
        if self.stream_dims.contains(&0) {
            return Err(Error::Config("stream dims must be positive".into()));
        }
        if self.total_dim() < self.classes {
            return Err(Error::Config(format!(
                "merged dim {} too small for {} separable classes",
                self.total_dim(),
                self.classes
            )));
        }
        if self.feature_noise < 0.0 || self.va_noise < 0.0 {
            return Err(Error::Config("noise levels must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.au_flip_prob) {
            return Err(Error::Config("au_flip_prob outside [0, 1]".into()));
        }
        Ok(())
    }

    /// Class centroid in merged feature space.
    pub fn centroid(&self, class: usize) -> Vec<f64> {
        let d = self.total_dim();
        (0..d)
            .map(|i| if i % self.classes == class { self.separation } else { 0.0 })
            .collect()
    }

    /// Class anchor on a valence/arousal circle of radius 0.7.
    pub fn va_anchor(&self, class: usize) -> [f64; 2] {
        let angle = std::f64::consts::TAU * class as f64 / self.classes as f64 + 0.5;
        [0.7 * angle.cos(), 0.7 * angle.sin()]
    }

    /// Deterministic class-conditional action-unit bit pattern.
    pub fn au_pattern(&self, class: usize) -> [u8; AU_UNITS] {
        std::array::from_fn(|u| u8::from(((class + 1) * (u + 3)) % 5 < 2))
    }
}

/// One generated video: merged features plus labels.
pub struct SynthVideo {
    pub video_id: String,
    pub class: usize,
    pub streams: Vec<FeatureSequence>,
    pub labels: LabelSet,
}

/// AR(1)-smoothed standard normal track.
fn smooth_noise(rng: &mut Rng, len: usize) -> Vec<f64> {
    const ALPHA: f64 = 0.8;
    let scale = (1.0 - ALPHA * ALPHA).sqrt();
    let mut out = Vec::with_capacity(len);
    let mut state = rng.normal();
    out.push(state);
    for _ in 1..len {
        state = ALPHA * state + scale * rng.normal();
        out.push(state);
    }
    out
}

pub fn generate_video(spec: &SynthSpec, class: usize, index: usize) -> SynthVideo {
    let global = class * spec.videos_per_class + index;
    let mut rng = Rng::for_step(spec.seed, rng::stream::SYNTH, global as u64);
    let t = spec.frames_per_video;
    let d = spec.total_dim();
    let video_id = format!("c{class}v{index:03}");
    let frame_ids: Vec<u64> = (0..t as u64).collect();

    let centroid = spec.centroid(class);
    let mut noise_tracks = Vec::with_capacity(d);
    for _ in 0..d {
        noise_tracks.push(smooth_noise(&mut rng, t));
    }
    let mut merged = vec![0.0; t * d];
    for ti in 0..t {
        for c in 0..d {
            merged[ti * d + c] =
                ((centroid[c] + spec.feature_noise * noise_tracks[c][ti]) as f32) as f64;
        }
    }

    // The VA wiggle is a linear readout of the same smoothed noise that
    // perturbs the features, so within-window variation stays predictable
    // from the inputs. Averaging k unit-variance tracks and rescaling by
    // sqrt(k) keeps the readout at unit variance.
    let anchor = spec.va_anchor(class);
    let half = d / 2;
    let readout = |ti: usize, lo: usize, hi: usize| -> f64 {
        let k = hi - lo;
        let mean: f64 = (lo..hi).map(|c| noise_tracks[c][ti]).sum::<f64>() / k as f64;
        mean * (k as f64).sqrt()
    };
    let mut va = Vec::with_capacity(t);
    for ti in 0..t {
        let v = (anchor[0] + spec.va_noise * readout(ti, 0, half)).clamp(-1.0, 1.0);
        let a = (anchor[1] + spec.va_noise * readout(ti, half, d)).clamp(-1.0, 1.0);
        // Stored at 6 decimals in the label format; quantize now so the
        // in-memory dataset equals its own round trip.
        va.push([
            (v * 1e6).round() / 1e6,
            (a * 1e6).round() / 1e6,
        ]);
    }

    let pattern = spec.au_pattern(class);
    let au: Vec<[u8; AU_UNITS]> = (0..t)
        .map(|_| {
            std::array::from_fn(|u| {
                if rng.chance(spec.au_flip_prob) {
                    1 - pattern[u]
                } else {
                    pattern[u]
                }
            })
        })
        .collect();

    let labels = LabelSet {
        frame_ids: frame_ids.clone(),
        va: VaTrack {
            values: va,
            mask: vec![true; t],
        },
        expr: ExprTrack {
            classes: vec![class as u8; t],
            mask: vec![true; t],
        },
        au: AuTrack {
            bits: au,
            mask: vec![true; t],
        },
    };

    // Split the merged features into the configured streams.
    let mut streams = Vec::with_capacity(spec.stream_dims.len());
    let mut offset = 0;
    for (s, &sd) in spec.stream_dims.iter().enumerate() {
        let mut data = Vec::with_capacity(t * sd);
        for ti in 0..t {
            data.extend_from_slice(&merged[ti * d + offset..ti * d + offset + sd]);
        }
        let _ = s;
        streams.push(
            FeatureSequence::new(video_id.clone(), frame_ids.clone(), data, sd)
                .expect("generated stream is valid"),
        );
        offset += sd;
    }

    SynthVideo {
        video_id,
        class,
        streams,
        labels,
    }
}

/// Generate the dataset in memory, value-identical to loading the files
/// `synthesize_dataset` writes (features pass through f32, VA through the
/// 6-decimal label format).
pub fn generate_dataset(spec: &SynthSpec, split: &str) -> Result<super::LoadedDataset> {
    spec.validate()?;
    let mut videos = Vec::new();
    for class in 0..spec.classes {
        for index in 0..spec.videos_per_class {
            let v = generate_video(spec, class, index);
            let mut features = v.streams[0].clone();
            for s in &v.streams[1..] {
                features = super::feature::merge_streams(&features, s)?;
            }
            videos.push(super::VideoData {
                features,
                labels: v.labels,
            });
        }
    }
    Ok(super::LoadedDataset {
        split: split.into(),
        videos,
        d_v: spec.total_dim(),
        stream_dims: spec.stream_dims.clone(),
    })
}

/// Generate the dataset under `out_dir` and write its manifest. Returns the
/// manifest path. Fully deterministic: same spec and seed, same bytes.
pub fn synthesize_dataset(spec: &SynthSpec, out_dir: &Path) -> Result<PathBuf> {
    spec.validate()?;
    let feat_dir = out_dir.join("features");
    let label_dir = out_dir.join("labels");
    fs::create_dir_all(&feat_dir)?;
    fs::create_dir_all(&label_dir)?;

    let mut records = Vec::new();
    for class in 0..spec.classes {
        for index in 0..spec.videos_per_class {
            let video = generate_video(spec, class, index);
            let mut feature_paths = Vec::new();
            for (s, stream) in video.streams.iter().enumerate() {
                let rel = PathBuf::from(format!("features/{}.s{s}.afsq", video.video_id));
                write_feature_file(&out_dir.join(&rel), stream)?;
                feature_paths.push(rel);
            }
            let label_rel = PathBuf::from(format!("labels/{}.labels", video.video_id));
            write_label_file(&out_dir.join(&label_rel), &video.labels)?;
            records.push(ManifestRecord {
                video_id: video.video_id,
                feature_paths,
                label_path: label_rel,
            });
        }
    }
    let manifest_path = out_dir.join("manifest.tsv");
    write_manifest(&manifest_path, &records)?;
    Ok(manifest_path)
}
