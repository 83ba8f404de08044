//! Binary greymap (P5, maxval 255) exports for quick visual inspection.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use hpotts_core::{ImageGrid, LabelField};

use crate::error::{Error, Result};

/// Class `k` of `K` maps to `⌊255·k/(K−1)⌋`; a single class maps to 0.
pub fn label_bytes(labels: &LabelField) -> Vec<u8> {
    let k = labels.classes();
    labels
        .labels()
        .iter()
        .map(|&l| if k <= 1 { 0 } else { (255 * l / (k - 1)) as u8 })
        .collect()
}

/// Intensities in [0, 1] map to `⌊255·v⌋` of the first channel, clamped.
pub fn image_bytes(image: &ImageGrid) -> Vec<u8> {
    image.voxels().map(|v| (255.0 * v[0]).floor().clamp(0.0, 255.0) as u8).collect()
}

pub fn write_pgm<W: Write>(mut out: W, height: usize, width: usize, pixels: &[u8]) -> Result<()> {
    write!(out, "P5\n{width} {height}\n255\n")?;
    out.write_all(pixels)?;
    out.flush()?;
    Ok(())
}

fn write_file(path: &Path, height: usize, width: usize, pixels: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_pgm(BufWriter::new(file), height, width, pixels).map_err(|e| match e {
        Error::Stream(source) => Error::io(path, source),
        other => other,
    })
}

pub fn export_labels_pgm(labels: &LabelField, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), labels.height(), labels.width(), &label_bytes(labels))
}

pub fn export_image_pgm(image: &ImageGrid, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), image.height(), image.width(), &image_bytes(image))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_export() {
        let labels = LabelField::new(2, 2, 2, vec![0, 1, 1, 0]).unwrap();
        let mut buf = Vec::new();
        write_pgm(&mut buf, 2, 2, &label_bytes(&labels)).unwrap();
        assert_eq!(buf, b"P5\n2 2\n255\n\x00\xff\xff\x00");
        let four = LabelField::new(1, 4, 4, vec![0, 1, 2, 3]).unwrap();
        assert_eq!(label_bytes(&four), vec![0, 85, 170, 255]);
    }

    #[test]
    fn image_export_floors() {
        let image = ImageGrid::from_scalar(2, 2, vec![0.5; 4]).unwrap();
        assert_eq!(image_bytes(&image), vec![127; 4]);
        let edges = ImageGrid::from_scalar(1, 3, vec![0.0, 1.0, 0.999]).unwrap();
        assert_eq!(image_bytes(&edges), vec![0, 255, 254]);
    }

    #[test]
    fn header_uses_width_then_height() {
        let mut buf = Vec::new();
        write_pgm(&mut buf, 2, 3, &[0; 6]).unwrap();
        assert!(buf.starts_with(b"P5\n3 2\n255\n"));
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let labels = LabelField::uniform(1, 1, 1, 0).unwrap();
        let err = export_labels_pgm(&labels, "/nonexistent-dir/x.pgm").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
