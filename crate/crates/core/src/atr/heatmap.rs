//! Relevance matrix export as CSV and 8-bit grayscale PGM.

use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};

use super::RelevanceMatrix;
use crate::error::{Error, Result};
use crate::format::write_atomic;

/// Gray level used when every entry is equal.
const MID_GRAY: u8 = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapOutcome {
    pub csv: PathBuf,
    pub pgm: PathBuf,
    /// Set when max == min and the image was filled with mid-gray.
    pub degenerate_range: bool,
}

/// Writes `<stem>.csv` and `<stem>.pgm`. Row `i` of both files is target
/// frame `i`; the image is normalized per matrix to the full 0..=255 range.
pub fn heatmap_export(matrix: &RelevanceMatrix, stem: &Path) -> Result<HeatmapOutcome> {
    matrix.validate()?;
    let n = matrix.frames();
    let csv_path = stem.with_extension("csv");
    let pgm_path = stem.with_extension("pgm");

    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for row in &matrix.a {
        writer
            .write_record(row.iter().map(|v| v.to_string()))
            .map_err(|e| csv_error(&csv_path, e))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| csv_error(&csv_path, e.into_error().into()))?;
    write_atomic(&csv_path, &bytes)?;

    let flat: Vec<f64> = matrix.a.iter().flatten().copied().collect();
    let min = flat.iter().copied().fold(f64::INFINITY, f64::min);
    let max = flat.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let degenerate_range = max <= min;
    let pixels: Vec<u8> = if degenerate_range {
        log::warn!("{}: constant relevance matrix, writing mid-gray heatmap", matrix.clip_id);
        vec![MID_GRAY; flat.len()]
    } else {
        flat.iter()
            .map(|v| ((v - min) / (max - min) * 255.0).round() as u8)
            .collect()
    };

    let mut pgm = Vec::new();
    PnmEncoder::new(&mut pgm)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(&pixels, n as u32, n as u32, ExtendedColorType::L8)
        .map_err(|e| Error::InvalidFormat {
            path: pgm_path.clone(),
            detail: e.to_string(),
        })?;
    write_atomic(&pgm_path, &pgm)?;

    Ok(HeatmapOutcome {
        csv: csv_path,
        pgm: pgm_path,
        degenerate_range,
    })
}

/// Reads a headerless square CSV matrix as written by [`heatmap_export`].
pub fn read_matrix_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let row = record
            .iter()
            .map(|field| {
                field.trim().parse::<f64>().map_err(|e| Error::InvalidFormat {
                    path: path.to_path_buf(),
                    detail: format!("{field:?}: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn csv_error(path: &Path, err: csv::Error) -> Error {
    if err.is_io_error() {
        match err.into_kind() {
            csv::ErrorKind::Io(source) => Error::io(path, source),
            _ => unreachable!(),
        }
    } else {
        Error::InvalidFormat {
            path: path.to_path_buf(),
            detail: err.to_string(),
        }
    }
}
