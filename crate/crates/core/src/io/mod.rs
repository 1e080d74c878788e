//! On-disk formats: tensors, cameras, point annotations, checkpoints,
//! result tables and PGM renders.

mod annotations;
mod camera_file;
mod checkpoint;
mod pgm;
mod results;
mod tensor_file;

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub use annotations::{parse_annotations, read_annotations, write_annotations, encode_annotations};
pub use camera_file::{encode_camera, parse_camera, read_camera, write_camera};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use pgm::{encode_pgm, PgmScale};
pub use results::{encode_results_csv, format_results_table, parse_results_csv, ResultRow};
pub use tensor_file::{decode_tensor, encode_tensor, read_tensor, write_tensor, DType};

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes `bytes`, creating parent directories as needed.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
