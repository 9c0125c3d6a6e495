//! IDX container format (big-endian) for MNIST images and labels.

use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw image tensor: `count` images of `rows x cols` bytes, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn count(&self) -> usize {
        self.pixels.len().checked_div(self.rows * self.cols).unwrap_or(0)
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }
}

fn read_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("truncated header: missing {what}")))
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = read_u32(bytes, 0, "magic number")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "bad image magic number {magic:#010x}, expected {IMAGES_MAGIC:#010x}"
        )));
    }
    let count = read_u32(bytes, 4, "image count")? as usize;
    let rows = read_u32(bytes, 8, "row count")? as usize;
    let cols = read_u32(bytes, 12, "column count")? as usize;
    let body = &bytes[16..];
    let expected = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::Format("image dimensions overflow".into()))?;
    if body.len() != expected {
        return Err(Error::Format(format!(
            "image payload has {} bytes, header promises {expected}",
            body.len()
        )));
    }
    Ok(IdxImages {
        rows,
        cols,
        pixels: body.to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_u32(bytes, 0, "magic number")?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format(format!(
            "bad label magic number {magic:#010x}, expected {LABELS_MAGIC:#010x}"
        )));
    }
    let count = read_u32(bytes, 4, "label count")? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(Error::Format(format!(
            "label payload has {} bytes, header promises {count}",
            body.len()
        )));
    }
    Ok(body.to_vec())
}

pub fn write_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.count() as u32).to_be_bytes());
    out.extend_from_slice(&(images.rows as u32).to_be_bytes());
    out.extend_from_slice(&(images.cols as u32).to_be_bytes());
    out.extend_from_slice(&images.pixels);
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_images() -> Vec<u8> {
        let mut b = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3];
        b.extend(1u8..=12);
        b
    }

    #[test]
    fn parses_header_and_payload() {
        let imgs = parse_idx_images(&tiny_images()).unwrap();
        assert_eq!((imgs.count(), imgs.rows, imgs.cols), (2, 2, 3));
        assert_eq!(imgs.image(1), &[7, 8, 9, 10, 11, 12]);
        let labels = parse_idx_labels(&[0, 0, 8, 1, 0, 0, 0, 3, 4, 5, 9]).unwrap();
        assert_eq!(labels, vec![4, 5, 9]);
    }

    #[test]
    fn empty_file_is_a_format_error() {
        assert!(matches!(parse_idx_images(&[]), Err(Error::Format(_))));
        assert!(matches!(parse_idx_labels(&[]), Err(Error::Format(_))));
    }

    #[test]
    fn bad_magic_and_truncation_are_rejected() {
        let mut b = tiny_images();
        b[3] = 1;
        assert!(parse_idx_images(&b).is_err());
        let b = tiny_images();
        assert!(parse_idx_images(&b[..b.len() - 1]).is_err());
        assert!(parse_idx_labels(&[0, 0, 8, 1, 0, 0, 0, 3, 4]).is_err());
        // image magic in a label file
        assert!(parse_idx_labels(&tiny_images()).is_err());
    }

    #[test]
    fn writer_reproduces_source_bytes() {
        let src = tiny_images();
        assert_eq!(write_idx_images(&parse_idx_images(&src).unwrap()), src);
        let src = vec![0, 0, 8, 1, 0, 0, 0, 2, 7, 1];
        assert_eq!(write_idx_labels(&parse_idx_labels(&src).unwrap()), src);
    }
}
