//! Image input and output: binary PGM/PPM and raw little-endian tensors with
//! a JSON sidecar. The bytes around the pixels are kept so a decoded file
//! matches its source exactly.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use iflow_core::layers::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Pnm,
    Raw,
}

/// Sidecar of a raw tensor file: pixels are stored height × width ×
/// channels, one or two little-endian bytes each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawHeader {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// "u8" or "u16"
    pub dtype: String,
}

/// Everything needed to write the file back besides the pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageHeader {
    pub kind: Kind,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub maxval: u32,
    /// Bytes before the pixels (PNM only).
    pub prefix: Vec<u8>,
    /// Bytes after the pixels (PNM only).
    pub suffix: Vec<u8>,
    /// Sidecar text verbatim (raw only).
    pub sidecar: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub header: ImageHeader,
    /// Row-major, channels interleaved.
    pub pixels: Vec<u16>,
}

impl Image {
    pub fn range(&self) -> (i64, i64) {
        (0, i64::from(self.header.maxval) + 1)
    }

    fn wide(&self) -> bool {
        self.header.maxval > 255
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn is_pnm(path: &Path, bytes: &[u8]) -> bool {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    matches!(ext.as_str(), "pgm" | "ppm" | "pnm") || bytes.starts_with(b"P5") || bytes.starts_with(b"P6")
}

pub fn read(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if is_pnm(path, &bytes) {
        parse_pnm(&bytes).with_context(|| format!("parsing {}", path.display()))
    } else {
        let side = sidecar_path(path);
        let text = fs::read_to_string(&side)
            .with_context(|| format!("raw input needs a sidecar header at {}", side.display()))?;
        parse_raw(&bytes, &text).with_context(|| format!("parsing {}", path.display()))
    }
}

pub fn write(path: &Path, img: &Image) -> Result<()> {
    fs::write(path, to_bytes(img)).with_context(|| format!("writing {}", path.display()))?;
    if let Some(side) = &img.header.sidecar {
        let p = sidecar_path(path);
        fs::write(&p, side).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

pub fn to_bytes(img: &Image) -> Vec<u8> {
    let mut out = img.header.prefix.clone();
    let wide = img.wide();
    for &p in &img.pixels {
        match (img.header.kind, wide) {
            (_, false) => out.push(p as u8),
            (Kind::Pnm, true) => out.extend_from_slice(&p.to_be_bytes()),
            (Kind::Raw, true) => out.extend_from_slice(&p.to_le_bytes()),
        }
    }
    out.extend_from_slice(&img.header.suffix);
    out
}

fn parse_pnm(bytes: &[u8]) -> Result<Image> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => bail!("only binary PGM (P5) and PPM (P6) are supported"),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in &mut fields {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        ensure!(pos > start, "malformed header at byte {start}");
        *f = std::str::from_utf8(&bytes[start..pos])?.parse()?;
    }
    ensure!(bytes.get(pos).is_some_and(u8::is_ascii_whitespace), "header must end in whitespace");
    pos += 1;
    let [width, height, maxval] = fields;
    ensure!(width > 0 && height > 0, "empty image");
    ensure!((1..=65535).contains(&maxval), "maxval {maxval} outside [1, 65535]");
    let wide = maxval > 255;
    let n = width * height * channels;
    let need = n * if wide { 2 } else { 1 };
    ensure!(bytes.len() >= pos + need, "pixel data truncated");
    let body = &bytes[pos..pos + need];
    let pixels: Vec<u16> = if wide {
        body.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    } else {
        body.iter().map(|&b| u16::from(b)).collect()
    };
    if let Some(p) = pixels.iter().find(|&&p| u32::from(p) > maxval as u32) {
        bail!("pixel value {p} exceeds maxval {maxval}");
    }
    Ok(Image {
        header: ImageHeader {
            kind: Kind::Pnm,
            width,
            height,
            channels,
            maxval: maxval as u32,
            prefix: bytes[..pos].to_vec(),
            suffix: bytes[pos + need..].to_vec(),
            sidecar: None,
        },
        pixels,
    })
}

fn parse_raw(bytes: &[u8], sidecar: &str) -> Result<Image> {
    let h: RawHeader = serde_json::from_str(sidecar).context("sidecar header")?;
    ensure!(h.width > 0 && h.height > 0 && h.channels > 0, "empty shape in sidecar");
    let (size, maxval) = match h.dtype.as_str() {
        "u8" => (1, 255),
        "u16" => (2, 65535),
        d => bail!("unknown dtype {d:?}; expected \"u8\" or \"u16\""),
    };
    let n = h.width * h.height * h.channels;
    ensure!(
        bytes.len() == n * size,
        "raw file holds {} bytes, sidecar shape needs {}",
        bytes.len(),
        n * size
    );
    let pixels = if size == 1 {
        bytes.iter().map(|&b| u16::from(b)).collect()
    } else {
        bytes.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect()
    };
    Ok(Image {
        header: ImageHeader {
            kind: Kind::Raw,
            width: h.width,
            height: h.height,
            channels: h.channels,
            maxval,
            prefix: Vec::new(),
            suffix: Vec::new(),
            sidecar: Some(sidecar.to_string()),
        },
        pixels,
    })
}

/// Cut the image into `tile × tile` patches, one sample each. Patches that
/// run past the border repeat the edge pixels.
pub fn to_tiles(img: &Image, tile: usize) -> Vec<Tensor> {
    let ImageHeader {
        width, height, channels, ..
    } = img.header;
    let mut out = Vec::new();
    for ty in (0..height).step_by(tile) {
        for tx in (0..width).step_by(tile) {
            let mut data = Vec::with_capacity(channels * tile * tile);
            for c in 0..channels {
                for dy in 0..tile {
                    let y = (ty + dy).min(height - 1);
                    for dx in 0..tile {
                        let x = (tx + dx).min(width - 1);
                        data.push(i64::from(img.pixels[(y * width + x) * channels + c]));
                    }
                }
            }
            out.push(Tensor::new(channels, tile * tile, data).expect("tile shape"));
        }
    }
    out
}

pub fn from_tiles(header: ImageHeader, tile: usize, tiles: &[Tensor]) -> Result<Image> {
    let (w, h, c) = (header.width, header.height, header.channels);
    let per_row = w.div_ceil(tile);
    ensure!(tiles.len() == per_row * h.div_ceil(tile), "tile count does not match the image shape");
    let mut pixels = vec![0u16; w * h * c];
    for (i, t) in tiles.iter().enumerate() {
        ensure!(t.channels() == c && t.positions() == tile * tile, "tile {i} has the wrong shape");
        let (ty, tx) = ((i / per_row) * tile, (i % per_row) * tile);
        for ch in 0..c {
            let plane = t.channel(ch);
            for dy in 0..tile.min(h - ty) {
                for dx in 0..tile.min(w - tx) {
                    let v = plane[dy * tile + dx];
                    ensure!((0..=i64::from(header.maxval)).contains(&v), "decoded value {v} out of range");
                    pixels[((ty + dy) * w + tx + dx) * c + ch] = v as u16;
                }
            }
        }
    }
    Ok(Image { header, pixels })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pnm_with_comment_round_trips() {
        let mut bytes = b"P5\n# a comment\n3 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 1, 2, 3, 4, 255]);
        let img = parse_pnm(&bytes).unwrap();
        assert_eq!((img.header.width, img.header.height, img.header.channels), (3, 2, 1));
        assert_eq!(to_bytes(&img), bytes);
    }

    #[test]
    fn sixteen_bit_ppm() {
        let mut bytes = b"P6 1 1 1000 ".to_vec();
        bytes.extend_from_slice(&[0, 1, 3, 0xe8, 0, 0]);
        let img = parse_pnm(&bytes).unwrap();
        assert_eq!(img.pixels, vec![1, 1000, 0]);
        assert_eq!(img.range(), (0, 1001));
        assert_eq!(to_bytes(&img), bytes);
    }

    #[test]
    fn bad_headers() {
        assert!(parse_pnm(b"P2 1 1 255 0").is_err());
        assert!(parse_pnm(b"P5 2 2 255 \x00").is_err());
        assert!(parse_pnm(b"P5 1 1 100 \xff").is_err());
        assert!(parse_raw(&[0; 5], r#"{"width":2,"height":2,"channels":1,"dtype":"u8"}"#).is_err());
        assert!(parse_raw(&[0; 4], r#"{"width":2,"height":2,"channels":1,"dtype":"f32"}"#).is_err());
    }

    #[test]
    fn tiles_cover_ragged_edges() {
        let side = r#"{"width":5,"height":3,"channels":2,"dtype":"u8"}"#;
        let bytes: Vec<u8> = (0..30).collect();
        let img = parse_raw(&bytes, side).unwrap();
        let tiles = to_tiles(&img, 4);
        assert_eq!(tiles.len(), 2);
        let back = from_tiles(img.header.clone(), 4, &tiles).unwrap();
        assert_eq!(back, img);
        assert_eq!(to_bytes(&back), bytes);
    }
}
