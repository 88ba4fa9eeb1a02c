//! Windowing: bounded-length contiguous slices of a video, never crossing
//! video boundaries, plus extraction of owned training samples.

use crate::error::{Error, Result};
use crate::AU_UNITS;

use super::labels::LabelSet;
use super::{LoadedDataset, VideoData};

/// One window into a dataset video.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub video: usize,
    pub start: usize,
    pub len: usize,
}

/// Window starts for one video of `t` frames: full windows at multiples of
/// `stride`, then one shorter tail window if frames would otherwise be
/// dropped and (when labels are given) the tail has at least one valid
/// labeled frame.
pub fn make_windows(
    t: usize,
    labels: Option<&LabelSet>,
    win_len: usize,
    stride: usize,
) -> Result<Vec<(usize, usize)>> {
    if win_len == 0 || stride == 0 {
        return Err(Error::Contract("win_len and stride must be at least 1".into()));
    }
    let mut out = Vec::new();
    let mut start = 0;
    let mut covered = 0;
    while start + win_len <= t {
        out.push((start, win_len));
        covered = start + win_len;
        start += stride;
    }
    if covered < t && start < t {
        let tail_len = t - start;
        let tail_ok = match labels {
            None => true,
            Some(ls) => (start..t).any(|i| ls.va.mask[i] || ls.expr.mask[i] || ls.au.mask[i]),
        };
        if tail_ok {
            out.push((start, tail_len));
        }
    }
    Ok(out)
}

/// All windows over a dataset, in video order.
pub fn windows_for_dataset(
    ds: &LoadedDataset,
    win_len: usize,
    stride: usize,
) -> Result<Vec<Window>> {
    let mut out = Vec::new();
    for (v, video) in ds.videos.iter().enumerate() {
        for (start, len) in make_windows(video.features.len(), Some(&video.labels), win_len, stride)? {
            out.push(Window {
                video: v,
                start,
                len,
            });
        }
    }
    Ok(out)
}

/// Owned copy of one window's features and labels, the unit fed to the model.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub video_id: String,
    pub frame_ids: Vec<u64>,
    /// len x dim, row-major.
    pub features: Vec<f64>,
    pub dim: usize,
    pub va: Vec<[f64; 2]>,
    pub va_mask: Vec<bool>,
    pub expr: Vec<u8>,
    pub expr_mask: Vec<bool>,
    pub au: Vec<[u8; AU_UNITS]>,
    pub au_mask: Vec<bool>,
}

impl WindowSample {
    pub fn len(&self) -> usize {
        self.frame_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_ids.is_empty()
    }
}

pub fn extract_sample(video: &VideoData, start: usize, len: usize) -> WindowSample {
    let f = &video.features;
    let l = &video.labels;
    let end = start + len;
    WindowSample {
        video_id: f.video_id.clone(),
        frame_ids: f.frame_ids[start..end].to_vec(),
        features: f.features[start * f.dim..end * f.dim].to_vec(),
        dim: f.dim,
        va: l.va.values[start..end].to_vec(),
        va_mask: l.va.mask[start..end].to_vec(),
        expr: l.expr.classes[start..end].to_vec(),
        expr_mask: l.expr.mask[start..end].to_vec(),
        au: l.au.bits[start..end].to_vec(),
        au_mask: l.au.mask[start..end].to_vec(),
    }
}

pub fn extract_window(ds: &LoadedDataset, w: &Window) -> WindowSample {
    extract_sample(&ds.videos[w.video], w.start, w.len)
}
