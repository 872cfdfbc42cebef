//! File formats exchanged with the model adapter and between CLI stages.

pub mod png;
pub mod ztf;

use std::path::Path;

use crate::error::{Error, Result};

pub use self::png::{
    decode_image, decode_mask, encode_image, encode_mask, read_image, read_mask, write_image,
    write_mask,
};
pub use self::ztf::{decode_tensor, encode_tensor, read_tensor, write_tensor, Tensor};

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn create_dir_all(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}
