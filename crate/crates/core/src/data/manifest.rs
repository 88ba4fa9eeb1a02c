//! Split manifests: one record per line,
//! `video_id<TAB>featpathA[<TAB>featpathB]<TAB>labelpath`.
//! Paths are resolved relative to the manifest's directory. Loading a
//! manifest opens and validates every referenced file.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::feature::{merge_streams, read_feature_file};
use super::labels::read_label_file;
use super::{LoadedDataset, VideoData};

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub video_id: String,
    pub feature_paths: Vec<PathBuf>,
    pub label_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    /// Derived from the manifest file stem.
    pub split: String,
    pub base_dir: PathBuf,
    pub records: Vec<ManifestRecord>,
}

pub fn parse_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Config(format!("manifest {} does not exist", path.display()))
        } else {
            Error::Io(e)
        }
    })?;
    let split = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "unnamed".into());
    let base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut records = Vec::new();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let line_start = offset;
        offset += line.len() as u64;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != 3 && fields.len() != 4 {
            return Err(Error::format(
                line_start,
                format!(
                    "manifest record needs 3 or 4 tab-separated fields, got {}",
                    fields.len()
                ),
            ));
        }
        let feature_paths = fields[1..fields.len() - 1]
            .iter()
            .map(PathBuf::from)
            .collect();
        records.push(ManifestRecord {
            video_id: fields[0].to_string(),
            feature_paths,
            label_path: PathBuf::from(fields[fields.len() - 1]),
        });
    }
    if records.is_empty() {
        return Err(Error::Config(format!(
            "manifest {} lists no records",
            path.display()
        )));
    }
    Ok(DatasetManifest {
        split,
        base_dir,
        records,
    })
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn open_input(base: &Path, p: &Path) -> Result<PathBuf> {
    let full = resolve(base, p);
    if !full.exists() {
        return Err(Error::Config(format!(
            "referenced file {} does not exist",
            full.display()
        )));
    }
    Ok(full)
}

/// Load every video in the manifest: read feature stream(s), merge them,
/// read labels, and check frame alignment between features and labels.
pub fn load_dataset(manifest: &DatasetManifest) -> Result<LoadedDataset> {
    let mut videos = Vec::with_capacity(manifest.records.len());
    let mut d_v = None;
    let mut stream_dims: Option<Vec<usize>> = None;
    for rec in &manifest.records {
        let mut streams = Vec::new();
        for p in &rec.feature_paths {
            let full = open_input(&manifest.base_dir, p)?;
            streams.push(read_feature_file(&full)?);
        }
        let dims: Vec<usize> = streams.iter().map(|s| s.dim).collect();
        match &stream_dims {
            None => stream_dims = Some(dims),
            Some(expected) if *expected != dims => {
                return Err(Error::Config(format!(
                    "video {}: stream dims {dims:?} differ from {expected:?}",
                    rec.video_id
                )));
            }
            _ => {}
        }
        let mut features = streams.remove(0);
        for s in streams {
            features = merge_streams(&features, &s)?;
        }
        if features.video_id != rec.video_id {
            return Err(Error::Config(format!(
                "manifest video id {:?} does not match file id {:?}",
                rec.video_id, features.video_id
            )));
        }
        match d_v {
            None => d_v = Some(features.dim),
            Some(d) if d != features.dim => {
                return Err(Error::Config(format!(
                    "video {}: merged dim {} differs from {}",
                    rec.video_id, features.dim, d
                )));
            }
            _ => {}
        }
        let label_path = open_input(&manifest.base_dir, &rec.label_path)?;
        let labels = read_label_file(&label_path)?;
        if labels.frame_ids != features.frame_ids {
            let row = labels
                .frame_ids
                .iter()
                .zip(features.frame_ids.iter())
                .position(|(a, b)| a != b)
                .unwrap_or_else(|| labels.len().min(features.len()));
            return Err(Error::Alignment { row });
        }
        videos.push(VideoData { features, labels });
    }
    Ok(LoadedDataset {
        split: manifest.split.clone(),
        videos,
        d_v: d_v.unwrap(),
        stream_dims: stream_dims.unwrap(),
    })
}

/// Write a manifest; paths are stored as given (normally relative).
pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut out = String::new();
    for rec in records {
        let mut fields = vec![rec.video_id.clone()];
        for p in &rec.feature_paths {
            fields.push(p.to_string_lossy().into_owned());
        }
        fields.push(rec.label_path.to_string_lossy().into_owned());
        out.push_str(&fields.join("\t"));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}
