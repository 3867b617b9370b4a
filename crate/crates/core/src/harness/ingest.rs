//! Video ingestion: numbered frame directories, or container files decoded
//! through an external `ffmpeg`.

use std::path::{Path, PathBuf};
use std::process::Command;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::perception::{FrameSource, PerceptionError};

use super::HarnessError;

const FRAME_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];
const CONTAINER_EXTENSIONS: [&str; 5] = ["mp4", "avi", "mov", "mkv", "webm"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoEntry {
    pub video_id: String,
    pub frame_count: u32,
    /// `[height, width]`
    pub resolution: [u32; 2],
    /// SHA-256 over the frame bytes in order.
    pub checksum: String,
}

enum Frames {
    Files(Vec<PathBuf>),
    Decoded(Vec<RgbImage>),
}

/// An ingested video: 1-indexed frames plus their metadata.
pub struct Video {
    pub entry: VideoEntry,
    pub path: PathBuf,
    frames: Frames,
}

impl FrameSource for Video {
    fn len(&self) -> u32 {
        self.entry.frame_count
    }

    fn frame(&self, t: u32) -> Result<RgbImage, PerceptionError> {
        let i = t.checked_sub(1).map(|i| i as usize);
        match &self.frames {
            Frames::Files(files) => {
                let path = i.and_then(|i| files.get(i)).ok_or_else(|| PerceptionError::Missing(format!("frame {t}")))?;
                image::open(path)
                    .map(|img| img.to_rgb8())
                    .map_err(|e| PerceptionError::Missing(format!("frame {t} ({}): {e}", path.display())))
            }
            Frames::Decoded(frames) => {
                i.and_then(|i| frames.get(i)).cloned().ok_or_else(|| PerceptionError::Missing(format!("frame {t}")))
            }
        }
    }

    fn source(&self) -> String {
        self.path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
    }
}

fn extension(p: &Path) -> Option<String> {
    p.extension().map(|e| e.to_string_lossy().to_lowercase())
}

/// Numeric part of a frame file name, used for ordering (`frame_0010.png` → 10).
fn frame_number(p: &Path) -> Option<u64> {
    let stem = p.file_stem()?.to_string_lossy();
    let digits: String = stem.chars().rev().take_while(char::is_ascii_digit).collect();
    digits.chars().rev().collect::<String>().parse().ok()
}

/// Every video under `dir`: sub-directories holding frames and container files, sorted by id.
pub fn list_videos(dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir)? {
        let p = e?.path();
        if p.is_dir() || extension(&p).is_some_and(|x| CONTAINER_EXTENSIONS.contains(&x.as_str())) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

pub fn video_id(path: &Path) -> String {
    let name = if path.is_dir() { path.file_name() } else { path.file_stem() };
    name.map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn ingest_video(path: &Path) -> Result<Video, HarnessError> {
    if path.is_dir() {
        ingest_frame_dir(path)
    } else if path.is_file() {
        ingest_container(path)
    } else {
        Err(HarnessError::Ingest(format!("{} does not exist", path.display())))
    }
}

fn ingest_frame_dir(dir: &Path) -> Result<Video, HarnessError> {
    let mut files: Vec<(u64, PathBuf)> = Vec::new();
    for e in std::fs::read_dir(dir)? {
        let p = e?.path();
        if !extension(&p).is_some_and(|x| FRAME_EXTENSIONS.contains(&x.as_str())) {
            continue;
        }
        let n = frame_number(&p)
            .ok_or_else(|| HarnessError::Ingest(format!("{}: frame file name has no number", p.display())))?;
        files.push((n, p));
    }
    files.sort();
    if files.is_empty() {
        return Err(HarnessError::Ingest(format!("{} holds no frames", dir.display())));
    }
    if let Some(w) = files.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(HarnessError::Ingest(format!("{}: two frames numbered {}", dir.display(), w[0].0)));
    }
    let mut hasher = Sha256::new();
    let mut resolution = None;
    for (i, (_, p)) in files.iter().enumerate() {
        let index = i + 1;
        let (w, h) = image::image_dimensions(p)
            .map_err(|e| HarnessError::Ingest(format!("frame {index} ({}) is unreadable: {e}", p.display())))?;
        match resolution {
            None => resolution = Some([h, w]),
            Some(r) if r != [h, w] => {
                return Err(HarnessError::Ingest(format!(
                    "frame {index} is {h}x{w} but frame 1 is {}x{}",
                    r[0], r[1]
                )))
            }
            _ => {}
        }
        hasher.update(std::fs::read(p)?);
    }
    let files: Vec<PathBuf> = files.into_iter().map(|(_, p)| p).collect();
    Ok(Video {
        entry: VideoEntry {
            video_id: video_id(dir),
            frame_count: files.len() as u32,
            resolution: resolution.expect("non-empty"),
            checksum: hex::encode(hasher.finalize()),
        },
        path: dir.to_path_buf(),
        frames: Frames::Files(files),
    })
}

fn ingest_container(path: &Path) -> Result<Video, HarnessError> {
    let probe = Command::new("ffprobe")
        .args(["-v", "error", "-select_streams", "v:0", "-show_entries", "stream=width,height", "-of", "csv=p=0"])
        .arg(path)
        .output()
        .map_err(|e| HarnessError::Ingest(format!("cannot run ffprobe for {}: {e}", path.display())))?;
    let dims = String::from_utf8_lossy(&probe.stdout);
    let (w, h) = dims
        .trim()
        .split_once(',')
        .and_then(|(w, h)| Some((w.parse::<u32>().ok()?, h.parse::<u32>().ok()?)))
        .ok_or_else(|| HarnessError::Ingest(format!("{}: ffprobe found no video stream", path.display())))?;
    let decoded = Command::new("ffmpeg")
        .args(["-v", "error", "-i"])
        .arg(path)
        .args(["-f", "rawvideo", "-pix_fmt", "rgb24", "-"])
        .output()
        .map_err(|e| HarnessError::Ingest(format!("cannot run ffmpeg for {}: {e}", path.display())))?;
    if !decoded.status.success() {
        return Err(HarnessError::Ingest(format!(
            "{}: ffmpeg failed: {}",
            path.display(),
            String::from_utf8_lossy(&decoded.stderr).trim()
        )));
    }
    let size = (w * h * 3) as usize;
    if size == 0 || decoded.stdout.len() % size != 0 {
        return Err(HarnessError::Ingest(format!("{}: decoded stream is not a whole number of frames", path.display())));
    }
    let frames: Vec<RgbImage> = decoded
        .stdout
        .chunks(size)
        .map(|c| RgbImage::from_raw(w, h, c.to_vec()).expect("chunk matches frame size"))
        .collect();
    Ok(Video {
        entry: VideoEntry {
            video_id: video_id(path),
            frame_count: frames.len() as u32,
            resolution: [h, w],
            checksum: hex::encode(Sha256::digest(std::fs::read(path)?)),
        },
        path: path.to_path_buf(),
        frames: Frames::Decoded(frames),
    })
}
