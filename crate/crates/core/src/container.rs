//! Binary container for [`Patch`] files.
//!
//! Layout (all integers little-endian):
//! `"WKH1"` magic, `u16` format version, `u8` quality tag, `u8` image
//! channels, `u32` height, `u32` width, `u32` JSON header length, the JSON
//! header (`domain_tag`, `assumed_floor_height` or null), then the raw
//! payloads: image `f32`, height `f32`, instances `u32`, and floors `u16`
//! (floor-count quality only). Saving the same patch twice produces
//! byte-identical files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::patch::{validate_patch, Patch, QualityClass, Violation};

pub const MAGIC: [u8; 4] = *b"WKH1";
pub const FORMAT_VERSION: u16 = 1;

/// Errors raised while reading or writing patch containers.
#[derive(Debug, thiserror::Error)]
pub enum ContainerError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected WKH1")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u16),
    #[error("unknown quality class byte {0}")]
    UnknownQuality(u8),
    #[error("payload length mismatch: {0}")]
    PayloadLengthMismatch(String),
    #[error("malformed header json: {0}")]
    HeaderJson(#[from] serde_json::Error),
    #[error("patch fails validation: {}", format_violations(.0))]
    Validation(Vec<Violation>),
}

fn format_violations(vs: &[Violation]) -> String {
    vs.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Serialize, Deserialize)]
struct JsonHeader {
    domain_tag: String,
    assumed_floor_height: Option<f32>,
}

/// Writes a patch to `path`. The patch must pass [`validate_patch`].
pub fn save_patch(patch: &Patch, path: &Path) -> Result<(), ContainerError> {
    let violations = validate_patch(patch);
    if !violations.is_empty() {
        return Err(ContainerError::Validation(violations));
    }
    let (h, w) = patch.dims();
    let header = serde_json::to_vec(&JsonHeader {
        domain_tag: patch.domain_tag.clone(),
        assumed_floor_height: patch.assumed_floor_height,
    })?;

    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&[patch.quality.as_byte(), patch.channels() as u8])?;
    out.write_all(&(h as u32).to_le_bytes())?;
    out.write_all(&(w as u32).to_le_bytes())?;
    out.write_all(&(header.len() as u32).to_le_bytes())?;
    out.write_all(&header)?;
    for v in patch.image.iter() {
        out.write_all(&v.to_le_bytes())?;
    }
    for v in patch.height.iter() {
        out.write_all(&v.to_le_bytes())?;
    }
    for v in patch.instances.iter() {
        out.write_all(&v.to_le_bytes())?;
    }
    if patch.quality == QualityClass::Low {
        let floors = patch
            .floors
            .as_ref()
            .expect("validated low patch has floors");
        for v in floors.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a patch from `path` and validates it before returning.
pub fn load_patch(path: &Path) -> Result<Patch, ContainerError> {
    let mut rd = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    read_exact_or_mismatch(&mut rd, &mut magic, "magic")?;
    if magic != MAGIC {
        return Err(ContainerError::BadMagic);
    }
    let version = u16::from_le_bytes(read_array(&mut rd, "format version")?);
    if version != FORMAT_VERSION {
        return Err(ContainerError::UnsupportedVersion(version));
    }
    let mut tags = [0u8; 2];
    read_exact_or_mismatch(&mut rd, &mut tags, "quality/channels")?;
    let quality =
        QualityClass::from_byte(tags[0]).ok_or(ContainerError::UnknownQuality(tags[0]))?;
    let channels = tags[1] as usize;
    let h = u32::from_le_bytes(read_array(&mut rd, "height dim")?) as usize;
    let w = u32::from_le_bytes(read_array(&mut rd, "width dim")?) as usize;
    let header_len = u32::from_le_bytes(read_array(&mut rd, "header length")?) as usize;

    let mut header_bytes = vec![0u8; header_len];
    read_exact_or_mismatch(&mut rd, &mut header_bytes, "json header")?;
    let header: JsonHeader = serde_json::from_slice(&header_bytes)?;

    let image = Array3::from_shape_vec(
        (channels, h, w),
        read_f32s(&mut rd, channels * h * w, "image")?,
    )
    .expect("shape matches read length");
    let height = Array2::from_shape_vec((h, w), read_f32s(&mut rd, h * w, "height")?)
        .expect("shape matches read length");
    let instances = Array2::from_shape_vec((h, w), read_u32s(&mut rd, h * w, "instances")?)
        .expect("shape matches read length");
    let floors = if quality == QualityClass::Low {
        Some(
            Array2::from_shape_vec((h, w), read_u16s(&mut rd, h * w, "floors")?)
                .expect("shape matches read length"),
        )
    } else {
        None
    };

    let patch = Patch {
        image,
        height,
        instances,
        floors,
        quality,
        domain_tag: header.domain_tag,
        assumed_floor_height: header.assumed_floor_height,
    };
    let violations = validate_patch(&patch);
    if !violations.is_empty() {
        return Err(ContainerError::Validation(violations));
    }
    Ok(patch)
}

fn read_exact_or_mismatch<R: Read>(
    rd: &mut R,
    buf: &mut [u8],
    what: &str,
) -> Result<(), ContainerError> {
    rd.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            ContainerError::PayloadLengthMismatch(format!("file ends inside {what}"))
        } else {
            ContainerError::Io(e)
        }
    })
}

fn read_array<R: Read, const N: usize>(rd: &mut R, what: &str) -> Result<[u8; N], ContainerError> {
    let mut buf = [0u8; N];
    read_exact_or_mismatch(rd, &mut buf, what)?;
    Ok(buf)
}

fn read_f32s<R: Read>(rd: &mut R, n: usize, what: &str) -> Result<Vec<f32>, ContainerError> {
    let mut bytes = vec![0u8; n * 4];
    read_exact_or_mismatch(rd, &mut bytes, what)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn read_u32s<R: Read>(rd: &mut R, n: usize, what: &str) -> Result<Vec<u32>, ContainerError> {
    let mut bytes = vec![0u8; n * 4];
    read_exact_or_mismatch(rd, &mut bytes, what)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn read_u16s<R: Read>(rd: &mut R, n: usize, what: &str) -> Result<Vec<u16>, ContainerError> {
    let mut bytes = vec![0u8; n * 2];
    read_exact_or_mismatch(rd, &mut bytes, what)?;
    Ok(bytes
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect())
}
