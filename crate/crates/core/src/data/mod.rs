//! On-disk formats, windowing, stream merging, balanced sampling,
//! augmentation, and the synthetic dataset generator.

pub mod augment;
pub mod feature;
pub mod labels;
pub mod manifest;
pub mod sampler;
pub mod synth;
pub mod window;

pub use augment::{augment_window, AugmentPolicy};
pub use feature::{merge_streams, read_feature_file, write_feature_file, FeatureSequence};
pub use labels::{read_label_file, write_label_file, LabelSet, TaskKind};
pub use manifest::{load_dataset, parse_manifest, write_manifest, DatasetManifest, ManifestRecord};
pub use sampler::{window_class_key, BalancedStream, UniformStream};
pub use synth::{generate_dataset, synthesize_dataset, SynthSpec};
pub use window::{extract_window, make_windows, windows_for_dataset, Window, WindowSample};

use crate::{AU_UNITS, EXPR_CLASSES};

/// Features and labels of one video, frames aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoData {
    pub features: FeatureSequence,
    pub labels: LabelSet,
}

/// A fully loaded split.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub split: String,
    pub videos: Vec<VideoData>,
    /// Merged feature dimension, identical across videos.
    pub d_v: usize,
    /// Per-stream dims before merging.
    pub stream_dims: Vec<usize>,
}

impl LoadedDataset {
    pub fn total_frames(&self) -> usize {
        self.videos.iter().map(|v| v.features.len()).sum()
    }

    /// Valid-frame count per expression class, for loss weighting and
    /// histogram summaries.
    pub fn expr_counts(&self) -> [usize; EXPR_CLASSES] {
        let mut counts = [0; EXPR_CLASSES];
        for video in &self.videos {
            let track = &video.labels.expr;
            for i in 0..track.classes.len() {
                if track.mask[i] {
                    counts[track.classes[i] as usize] += 1;
                }
            }
        }
        counts
    }

    /// Positive/negative cell counts per action unit over valid frames.
    pub fn au_counts(&self) -> ([usize; AU_UNITS], [usize; AU_UNITS]) {
        let mut pos = [0; AU_UNITS];
        let mut neg = [0; AU_UNITS];
        for video in &self.videos {
            let track = &video.labels.au;
            for i in 0..track.bits.len() {
                if track.mask[i] {
                    for u in 0..AU_UNITS {
                        if track.bits[i][u] == 1 {
                            pos[u] += 1;
                        } else {
                            neg[u] += 1;
                        }
                    }
                }
            }
        }
        (pos, neg)
    }

    /// Valid frames per task across the split.
    pub fn valid_frames(&self, task: TaskKind) -> usize {
        self.videos.iter().map(|v| v.labels.valid_frames(task)).sum()
    }
}
