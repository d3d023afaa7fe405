use std::path::Path;

use fedlens_core::data::{ClientDataset, Samples};
use fedlens_core::linalg::Matrix;

use super::{DecodeError, Reader};
use crate::error::{CliError, Result};

/// An unsigned-byte IDX array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

/// Parses an IDX file holding unsigned bytes (type code 0x08) with
/// `expect_dims` dimensions.
pub fn parse_idx(bytes: &[u8], expect_dims: usize) -> Result<IdxArray, DecodeError> {
    let mut r = Reader::new(bytes);
    let magic = r.u32_be("magic")?;
    let want = 0x0800 | expect_dims as u32;
    if magic != want {
        return Err((0, format!("bad magic 0x{magic:08x}, expected 0x{want:08x}")));
    }
    let mut dims = Vec::with_capacity(expect_dims);
    for _ in 0..expect_dims {
        dims.push(r.u32_be("dimension")? as usize);
    }
    let len: usize = dims.iter().product();
    let data = r.take(len, "data")?.to_vec();
    r.finish("data")?;
    Ok(IdxArray { dims, data })
}

fn read(path: &Path, dims: usize) -> Result<IdxArray> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    parse_idx(&bytes, dims).map_err(|(offset, msg)| CliError::Format { path: path.into(), offset, msg })
}

/// Loads an image/label IDX pair as a training split (the test split is
/// empty). Images are flattened row-major; pixels are divided by 255 when
/// `normalize` is set. With `max_per_class`, only the first that many
/// samples of each class are kept. Classes are `0..=max label`.
pub fn load_idx(images: &Path, labels: &Path, max_per_class: Option<usize>, normalize: bool) -> Result<ClientDataset> {
    let img = read(images, 3)?;
    let lab = read(labels, 1)?;
    let n = img.dims[0];
    if lab.dims[0] != n {
        return Err(CliError::Format {
            path: labels.into(),
            offset: 4,
            msg: format!("{} labels for {n} images", lab.dims[0]),
        });
    }
    let dim = img.dims[1] * img.dims[2];
    let num_classes = lab.data.iter().copied().max().map_or(0, |m| m as usize + 1);
    let mut seen = vec![0usize; num_classes];
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (i, &label) in lab.data.iter().enumerate() {
        let label = label as usize;
        if max_per_class.is_some_and(|k| seen[label] >= k) {
            continue;
        }
        seen[label] += 1;
        let scale = if normalize { 1.0 / 255.0 } else { 1.0 };
        x.extend(img.data[i * dim..(i + 1) * dim].iter().map(|&p| p as f64 * scale));
        y.push(label);
    }
    let rows = y.len();
    let train = Samples::new(Matrix::new(rows, dim, x)?, y, num_classes)?;
    let test = Samples::new(Matrix::new(0, dim, Vec::new())?, Vec::new(), num_classes)?;
    Ok(ClientDataset { client_id: 0, train, test })
}
