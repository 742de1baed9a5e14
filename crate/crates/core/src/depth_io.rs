//! Depth maps on disk: 16-bit grayscale PNG in millimeters (0 = missing)
//! plus a JSON sidecar `{"width","height","unit":"mm"}`.

use crate::camera_projection::DepthMap;
use image::{DynamicImage, ImageBuffer, ImageFormat, Luma};
use serde::{Deserialize, Serialize};
use std::io::Cursor;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DepthIoError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("png codec error: {0}")]
    Codec(String),
    #[error("expected a 16-bit single-channel png, found {0}")]
    PixelFormat(String),
    #[error("sidecar mismatch: {0}")]
    Sidecar(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthSidecar {
    pub width: u32,
    pub height: u32,
    pub unit: String,
}

/// Meters to the stored millimeter code. Depths that would round to 0 are
/// stored as 1 mm; anything beyond 65.535 m saturates.
pub fn depth_to_code(depth_m: f64) -> u16 {
    (depth_m * 1000.0).round().clamp(1.0, u16::MAX as f64) as u16
}

pub fn encode_depth_png(dm: &DepthMap) -> Result<Vec<u8>, DepthIoError> {
    let data: Vec<u16> = dm
        .depth
        .iter()
        .map(|d| d.map(depth_to_code).unwrap_or(0))
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(dm.width, dm.height, data)
        .ok_or_else(|| DepthIoError::Codec("buffer size does not match dimensions".into()))?;
    let mut out = Cursor::new(Vec::new());
    DynamicImage::ImageLuma16(buf)
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| DepthIoError::Codec(e.to_string()))?;
    Ok(out.into_inner())
}

pub fn decode_depth_png(bytes: &[u8]) -> Result<DepthMap, DepthIoError> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| DepthIoError::Codec(e.to_string()))?;
    let buf = match img {
        DynamicImage::ImageLuma16(buf) => buf,
        other => return Err(DepthIoError::PixelFormat(format!("{:?}", other.color()))),
    };
    let (width, height) = buf.dimensions();
    let depth = buf
        .into_raw()
        .into_iter()
        .map(|v| (v != 0).then(|| v as f64 / 1000.0))
        .collect();
    Ok(DepthMap {
        width,
        height,
        depth,
        provenance: None,
    })
}

pub fn sidecar_path(png_path: &Path) -> PathBuf {
    png_path.with_extension("json")
}

/// Writes the PNG and its sidecar next to it.
pub fn save_depth_png(dm: &DepthMap, path: &Path) -> Result<(), DepthIoError> {
    let bytes = encode_depth_png(dm)?;
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |source| DepthIoError::Io { path: p, source }
    };
    std::fs::write(path, bytes).map_err(io(path))?;
    let sidecar = DepthSidecar {
        width: dm.width,
        height: dm.height,
        unit: "mm".into(),
    };
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    std::fs::write(&side, text + "\n").map_err(io(&side))?;
    Ok(())
}

/// Reads a depth PNG; when a sidecar exists its dimensions and unit are
/// checked against the image.
pub fn load_depth_png(path: &Path) -> Result<DepthMap, DepthIoError> {
    let bytes = std::fs::read(path).map_err(|source| DepthIoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let dm = decode_depth_png(&bytes)?;
    let side = sidecar_path(path);
    if let Ok(text) = std::fs::read_to_string(&side) {
        let meta: DepthSidecar =
            serde_json::from_str(&text).map_err(|e| DepthIoError::Sidecar(e.to_string()))?;
        if meta.unit != "mm" || meta.width != dm.width || meta.height != dm.height {
            return Err(DepthIoError::Sidecar(format!(
                "{}x{} {} vs image {}x{}",
                meta.width, meta.height, meta.unit, dm.width, dm.height
            )));
        }
    }
    Ok(dm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_in_millimeters() {
        let mut dm = DepthMap::empty(5, 3);
        dm.set(0, 0, Some(1.2344));
        dm.set(4, 2, Some(80.0));
        dm.set(2, 1, Some(0.0001));
        let back = decode_depth_png(&encode_depth_png(&dm).unwrap()).unwrap();
        assert_eq!(back.get(0, 0), Some(1.234));
        assert_eq!(back.get(4, 2), Some(65.535));
        assert_eq!(back.get(2, 1), Some(0.001));
        assert_eq!(back.present_count(), 3);
    }

    #[test]
    fn files_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        let mut dm = DepthMap::empty(4, 2);
        dm.set(1, 1, Some(3.5));
        save_depth_png(&dm, &path).unwrap();
        let side: DepthSidecar =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("d.json")).unwrap()).unwrap();
        assert_eq!(side, DepthSidecar { width: 4, height: 2, unit: "mm".into() });
        assert_eq!(load_depth_png(&path).unwrap().get(1, 1), Some(3.5));

        std::fs::write(dir.path().join("d.json"), r#"{"width":9,"height":2,"unit":"mm"}"#).unwrap();
        assert!(matches!(load_depth_png(&path), Err(DepthIoError::Sidecar(_))));
    }

    #[test]
    fn rejects_garbage_and_8bit() {
        assert!(matches!(decode_depth_png(b"not a png"), Err(DepthIoError::Codec(_))));
        let gray8 = DynamicImage::ImageLuma8(ImageBuffer::from_raw(2, 2, vec![0u8; 4]).unwrap());
        let mut out = Cursor::new(Vec::new());
        gray8.write_to(&mut out, ImageFormat::Png).unwrap();
        assert!(matches!(decode_depth_png(out.get_ref()), Err(DepthIoError::PixelFormat(_))));
    }
}
