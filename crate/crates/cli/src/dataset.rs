//! Labelled image directories.
//!
//! A dataset directory holds P6 images, optional P5 masks and an
//! `index.tsv` with one row per image:
//!
//! ```text
//! image<TAB>label<TAB>mask
//! img_0000.ppm	1	mask_0000.pgm
//! img_0001.ppm	0	-
//! ```
//!
//! Paths are relative to the directory; `-` means no mask. Lines starting
//! with `#` and a leading `image` header row are ignored.

use std::fmt::Write as _;
use std::path::Path;

use patchscope_core::evaluation::LabeledImage;
use patchscope_core::Tensor;

use crate::error::{Error, Result};
use crate::pnm::{self, quantize};
use crate::{read_file, write_file};

pub const INDEX: &str = "index.tsv";

pub fn read_dataset(dir: &Path) -> Result<Vec<LabeledImage>> {
    let index = dir.join(INDEX);
    let text = String::from_utf8(read_file(&index)?).map_err(|_| Error::Format(format!("{}: not UTF-8", index.display())))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') || (lineno == 0 && line.starts_with("image\t")) {
            continue;
        }
        let bad = |m: &str| Error::Format(format!("{}:{}: {m}", index.display(), lineno + 1));
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(bad("expected 3 tab-separated columns"));
        }
        let label: usize = cols[1].parse().map_err(|_| bad("label is not an integer"))?;
        let image = pnm::read_image(&dir.join(cols[0]))?;
        let mask = match cols[2] {
            "-" => None,
            m => Some(pnm::read_mask(&dir.join(m))?),
        };
        out.push(LabeledImage::new(image, label, mask).map_err(|e| bad(&e.to_string()))?);
    }
    if out.is_empty() {
        return Err(Error::Format(format!("{}: no images listed", index.display())));
    }
    Ok(out)
}

/// Writes images, masks and the index; returns the relative file names.
pub fn write_dataset(dir: &Path, data: &[LabeledImage]) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut index = String::from("image\tlabel\tmask\n");
    let mut files = vec![INDEX.to_string()];
    for (i, item) in data.iter().enumerate() {
        let img = format!("img_{i:04}.ppm");
        pnm::write_image(&dir.join(&img), &item.image)?;
        files.push(img.clone());
        let mask = match &item.mask {
            Some(m) => {
                let name = format!("mask_{i:04}.pgm");
                pnm::write_mask(&dir.join(&name), m)?;
                files.push(name.clone());
                name
            }
            None => "-".into(),
        };
        writeln!(index, "{img}\t{}\t{mask}", item.label).unwrap();
    }
    write_file(&dir.join(INDEX), index.as_bytes())?;
    Ok(files)
}

/// Rounds pixel values to the 8-bit grid, so in-memory data matches what
/// a round trip through image files yields.
pub fn quantize_image(t: &Tensor) -> Result<Tensor> {
    Ok(t.map(|v| quantize(v) as f32 / 255.0)?)
}

pub fn quantize_dataset(data: Vec<LabeledImage>) -> Result<Vec<LabeledImage>> {
    data.into_iter()
        .map(|mut d| {
            d.image = quantize_image(&d.image)?;
            Ok(d)
        })
        .collect()
}
