use super::PipelineConfig;
use crate::error::{Error, Result};
use crate::geometry::{depth_from_raw, ImageData, PinholeCameraIntrinsic, RgbdImage};
use crate::io;
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

/// An RGB-D sequence in memory. Frames whose depth has no valid pixel are
/// `None`.
#[derive(Debug, Clone)]
pub struct RgbdSequence {
    pub intrinsic: PinholeCameraIntrinsic,
    pub frames: Vec<Option<RgbdImage>>,
}

impl RgbdSequence {
    pub fn valid_frames(&self) -> usize {
        self.frames.iter().filter(|f| f.is_some()).count()
    }
}

/// Sorted frame numbers of the files `dir/*.ext` whose stem is a number.
fn frame_numbers(dir: &Path, ext: &str) -> Result<BTreeSet<u64>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut numbers = BTreeSet::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some(ext) {
            continue;
        }
        if let Some(n) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<u64>().ok()) {
            numbers.insert(n);
        }
    }
    Ok(numbers)
}

fn missing(path: PathBuf) -> Error {
    Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "missing frame"))
}

/// Frame file paths `(color, depth)` of a dataset directory laid out as
/// `intrinsic.txt`, `color/<n>.ppm`, `depth/<n>.pgm` with consecutive `<n>`.
pub fn frame_paths(dir: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let color_dir = dir.join("color");
    let depth_dir = dir.join("depth");
    let colors = frame_numbers(&color_dir, "ppm")?;
    let depths = frame_numbers(&depth_dir, "pgm")?;
    let name = |n: u64, ext: &str| format!("{n:06}.{ext}");
    let all: BTreeSet<u64> = colors.union(&depths).copied().collect();
    let (Some(&first), Some(&last)) = (all.first(), all.last()) else {
        return Err(Error::invalid(format!("no frames found under {}", dir.display())));
    };
    let mut paths = Vec::new();
    for n in first..=last {
        let color = color_dir.join(name(n, "ppm"));
        let depth = depth_dir.join(name(n, "pgm"));
        if !colors.contains(&n) {
            return Err(missing(color));
        }
        if !depths.contains(&n) {
            return Err(missing(depth));
        }
        for p in [&color, &depth] {
            if !p.is_file() {
                return Err(Error::invalid(format!("{} must use 6-digit zero-padded frame numbers", p.display())));
            }
        }
        paths.push((color, depth));
    }
    Ok(paths)
}

/// Loads a dataset directory. All files are read and checked before any
/// frame is converted.
pub fn load_sequence(dir: &Path, config: &PipelineConfig) -> Result<RgbdSequence> {
    config.validate()?;
    let intrinsic = io::read_intrinsic(dir.join("intrinsic.txt"))?;
    let paths = frame_paths(dir)?;
    let mut raw = Vec::with_capacity(paths.len());
    for (color_path, depth_path) in &paths {
        let color = io::read_image(color_path)?;
        let depth = io::read_image(depth_path)?;
        if !matches!(depth.data(), ImageData::U16(_)) {
            return Err(Error::invalid(format!("{}: depth must be 16-bit", depth_path.display())));
        }
        if !matches!(color.data(), ImageData::U8(_)) {
            return Err(Error::invalid(format!("{}: color must be 8-bit", color_path.display())));
        }
        for (p, img) in [(color_path, &color), (depth_path, &depth)] {
            if img.width() != intrinsic.width || img.height() != intrinsic.height {
                return Err(Error::invalid(format!(
                    "{} is {}x{}, intrinsic expects {}x{}",
                    p.display(),
                    img.width(),
                    img.height(),
                    intrinsic.width,
                    intrinsic.height
                )));
            }
        }
        raw.push((color, depth));
    }
    let mut frames = Vec::with_capacity(raw.len());
    for (i, (color, depth)) in raw.into_iter().enumerate() {
        let rgbd = RgbdImage::new(color, depth_from_raw(&depth, config.depth_scale, config.depth_trunc)?)?;
        if rgbd.valid_depth_count() == 0 {
            log::warn!("frame {i} ({}) has no valid depth; skipped", paths[i].1.display());
            frames.push(None);
        } else {
            frames.push(Some(rgbd));
        }
    }
    Ok(RgbdSequence { intrinsic, frames })
}
