//! File formats: JSON helpers, raw little-endian float blobs, binary PPM and
//! latent stacks with JSON sidecars.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::diffusion::MultiViewLatent;
use crate::error::{Error, Result};
use crate::gsplat::Image;

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::file(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::file(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::file(path, e))
}

/// Pretty-printed UTF-8 JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::parse(path, e))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::parse(path, e))
}

pub fn write_f64_le(path: &Path, values: &[f64]) -> Result<()> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_bytes(path, &bytes)
}

pub fn read_f64_le(path: &Path) -> Result<Vec<f64>> {
    let bytes = read_bytes(path)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::parse(path, "length is not a multiple of 8"));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn write_f32_le(path: &Path, values: &[f64]) -> Result<()> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| (*v as f32).to_le_bytes()).collect();
    write_bytes(path, &bytes)
}

pub fn read_f32_le(path: &Path) -> Result<Vec<f64>> {
    let bytes = read_bytes(path)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::parse(path, "length is not a multiple of 4"));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect())
}

/// 8-bit quantization used by every image writer.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary PPM (P6, maxval 255).
pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.pixels.iter().flat_map(|p| p.map(quantize)));
    out
}

pub fn write_ppm(path: &Path, img: &Image) -> Result<()> {
    write_bytes(path, &encode_ppm(img))
}

pub fn decode_ppm(bytes: &[u8]) -> std::result::Result<Image, String> {
    // header: magic, width, height, maxval separated by whitespace, comments allowed
    let mut fields = Vec::new();
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err("truncated header".into());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    i += 1;
    if fields[0] != "P6" {
        return Err(format!("unsupported magic {}", fields[0]));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|e| format!("bad header field {s}: {e}"));
    let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval != 255 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    let data = bytes.get(i..i + w * h * 3).ok_or("truncated pixel data")?;
    Ok(Image {
        width: w,
        height: h,
        pixels: data
            .chunks_exact(3)
            .map(|c| [c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0])
            .collect(),
    })
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    decode_ppm(&read_bytes(path)?).map_err(|e| Error::parse(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentHeader {
    #[serde(rename = "F")]
    pub views: usize,
    pub h: usize,
    pub w: usize,
    #[serde(rename = "C")]
    pub channels: usize,
}

/// Writes `<stem>.bin` (little-endian f32) and `<stem>.json`.
pub fn save_latent(stem: &Path, z: &MultiViewLatent) -> Result<()> {
    write_f32_le(&stem.with_extension("bin"), &z.data)?;
    write_json(
        &stem.with_extension("json"),
        &LatentHeader {
            views: z.views,
            h: z.height,
            w: z.width,
            channels: z.channels,
        },
    )
}

pub fn load_latent(stem: &Path) -> Result<MultiViewLatent> {
    let head: LatentHeader = read_json(&stem.with_extension("json"))?;
    let data = read_f32_le(&stem.with_extension("bin"))?;
    MultiViewLatent::from_data(head.views, head.h, head.w, head.channels, data)
        .map_err(|e| Error::parse(stem.with_extension("bin"), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_header_and_quantization() {
        let img = Image {
            width: 2,
            height: 1,
            pixels: vec![[0.0, 0.5, 1.0], [0.2, 0.999, 0.001]],
        };
        let bytes = encode_ppm(&img);
        assert_eq!(&bytes[..11], b"P6\n2 1\n255\n");
        assert_eq!(&bytes[11..], &[0, 128, 255, 51, 255, 0]);
        let back = decode_ppm(&bytes).unwrap();
        assert_eq!(back.pixels[0], [0.0, 128.0 / 255.0, 1.0]);
        assert!(decode_ppm(b"P3\n1 1\n255\n").is_err());
        assert!(decode_ppm(b"P6\n2 2\n255\nabc").is_err());
    }

    #[test]
    fn latent_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let z = MultiViewLatent::from_data(2, 1, 2, 3, (0..12).map(|v| v as f64 * 0.25 - 1.0).collect()).unwrap();
        let stem = dir.path().join("z");
        save_latent(&stem, &z).unwrap();
        let head: serde_json::Value = read_json(&stem.with_extension("json")).unwrap();
        assert_eq!(head, serde_json::json!({"F": 2, "h": 1, "w": 2, "C": 3}));
        assert_eq!(load_latent(&stem).unwrap(), z);
        assert_eq!(std::fs::metadata(stem.with_extension("bin")).unwrap().len(), 48);
    }

    #[test]
    fn missing_file_reports_path() {
        let err = read_f64_le(Path::new("/nonexistent/weights.bin")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/weights.bin"));
    }
}
