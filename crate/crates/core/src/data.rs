//! Datasets: synthetic spiked streams, IDX image files, numeric CSV, and the
//! PCA surrogate for the unknown true subspace of real data.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, DVectorView, SymmetricEigen};
use rand::Rng;

use crate::error::IdxErrorKind;
use crate::model::SpikedModel;
use crate::{Error, Real, Result};

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
const IDX_HEADER_LEN: u64 = 16;

/// Relative eigenvalue threshold defining the effective rank in PCA.
pub const EFFECTIVE_RANK_TOLERANCE: f64 = 1e-12;

/// `N` samples of dimension `n`.
///
/// Samples are stored one per column (an `n x N` matrix) so streaming over
/// them reads contiguous memory.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMatrix<T: Real> {
    data: DMatrix<T>,
    mean: DVector<T>,
    centered: bool,
    image_shape: Option<(usize, usize)>,
}

impl<T: Real> DatasetMatrix<T> {
    /// From an `N x n` matrix with one sample per row.
    pub fn from_rows(rows: &DMatrix<T>) -> Self {
        Self::from_columns(rows.transpose())
    }

    /// From an `n x N` matrix with one sample per column.
    pub fn from_columns(data: DMatrix<T>) -> Self {
        Self {
            mean: DVector::zeros(data.nrows()),
            data,
            centered: false,
            image_shape: None,
        }
    }

    pub fn with_image_shape(mut self, rows: usize, cols: usize) -> Self {
        self.image_shape = Some((rows, cols));
        self
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn sample(&self, i: usize) -> DVectorView<'_, T> {
        self.data.column(i)
    }

    /// `n x N`, one sample per column.
    pub fn columns(&self) -> &DMatrix<T> {
        &self.data
    }

    /// `N x n`, one sample per row.
    pub fn to_rows(&self) -> DMatrix<T> {
        self.data.transpose()
    }

    /// Mean subtracted by [`center`]; zero for uncentered data.
    pub fn mean(&self) -> &DVector<T> {
        &self.mean
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    /// `(rows, cols)` of the source images, if any.
    pub fn image_shape(&self) -> Option<(usize, usize)> {
        self.image_shape
    }
}

fn idx_err(offset: u64, kind: IdxErrorKind) -> Error {
    Error::Idx { offset, kind }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    match bytes.get(offset..offset + 4) {
        Some(b) => Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]])),
        None => Err(idx_err(
            bytes.len() as u64,
            IdxErrorKind::Truncated {
                expected: IDX_HEADER_LEN,
                found: bytes.len() as u64,
            },
        )),
    }
}

/// Parses an IDX3 unsigned-byte image container already in memory.
pub fn parse_idx_images<T: Real>(bytes: &[u8]) -> Result<DatasetMatrix<T>> {
    let magic = read_u32(bytes, 0)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(idx_err(
            0,
            IdxErrorKind::WrongMagic {
                expected: IDX_IMAGE_MAGIC,
                found: magic,
            },
        ));
    }
    let count = read_u32(bytes, 4)? as u64;
    let rows = read_u32(bytes, 8)? as u64;
    let cols = read_u32(bytes, 12)? as u64;
    let payload = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .filter(|&v| v <= usize::MAX as u64 - IDX_HEADER_LEN)
        .ok_or_else(|| idx_err(4, IdxErrorKind::CountOverflow))?;
    let expected = IDX_HEADER_LEN + payload;
    let found = bytes.len() as u64;
    if found < expected {
        return Err(idx_err(found, IdxErrorKind::Truncated { expected, found }));
    }
    if found > expected {
        return Err(idx_err(expected, IdxErrorKind::TrailingBytes { expected, found }));
    }
    let n = (rows * cols) as usize;
    let full = T::lit(255.0);
    let pixels = &bytes[IDX_HEADER_LEN as usize..];
    // column-major n x N: sample i occupies pixels[i*n..(i+1)*n]
    let data = DMatrix::from_iterator(n, count as usize, pixels.iter().map(|&b| T::lit(f64::from(b)) / full));
    Ok(DatasetMatrix::from_columns(data).with_image_shape(rows as usize, cols as usize))
}

/// Loads an IDX3 image file; pixels are scaled to `[0, 1]` and each image is
/// flattened row-major.
pub fn load_idx_images<T: Real>(path: impl AsRef<Path>) -> Result<DatasetMatrix<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx_images(&bytes)
}

/// Parses comma-separated numbers. A first line containing any non-numeric
/// cell is taken as a header; blank lines are skipped.
pub fn parse_csv_matrix<T: Real>(text: &str) -> Result<DatasetMatrix<T>> {
    let mut values: Vec<T> = Vec::new();
    let mut width: Option<usize> = None;
    let mut rows = 0usize;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: std::result::Result<Vec<f64>, _> = cells.iter().map(|c| c.parse::<f64>()).collect();
        let parsed = match parsed {
            Ok(p) => p,
            Err(_) if idx == 0 => continue,
            Err(_) => {
                let bad = cells.iter().find(|c| c.parse::<f64>().is_err()).copied().unwrap_or("");
                return Err(Error::Csv {
                    line: line_no,
                    reason: format!("non-numeric cell `{bad}`"),
                });
            }
        };
        match width {
            None => width = Some(parsed.len()),
            Some(w) if w != parsed.len() => {
                return Err(Error::Csv {
                    line: line_no,
                    reason: format!("expected {w} fields, found {}", parsed.len()),
                })
            }
            Some(_) => {}
        }
        values.extend(parsed.into_iter().map(T::lit));
        rows += 1;
    }
    let width = width.unwrap_or(0);
    // row-major values of an N x n matrix are the column-major values of n x N
    Ok(DatasetMatrix::from_columns(DMatrix::from_vec(width, rows, values)))
}

pub fn load_csv_matrix<T: Real>(path: impl AsRef<Path>) -> Result<DatasetMatrix<T>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv_matrix(&text)
}

/// Formats an `N x n` matrix (one sample per row) as CSV using shortest
/// round-trip decimal formatting.
pub fn format_csv_matrix<T: Real>(rows: &DMatrix<T>, header: Option<&[String]>) -> String {
    let mut out = String::new();
    if let Some(h) = header {
        out.push_str(&h.join(","));
        out.push('\n');
    }
    for i in 0..rows.nrows() {
        for j in 0..rows.ncols() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&rows[(i, j)].to_string());
        }
        out.push('\n');
    }
    out
}

/// Writes `rows` as CSV, atomically (temporary file, then rename).
pub fn save_csv_matrix<T: Real>(path: impl AsRef<Path>, rows: &DMatrix<T>, header: Option<&[String]>) -> Result<()> {
    write_atomic(path.as_ref(), format_csv_matrix(rows, header).as_bytes())
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::param("path", format!("{} has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Subtracts column means. Applying it twice is the same as once; the
/// recorded mean accumulates so that `sample + mean` recovers the raw data.
pub fn center<T: Real>(ds: &DatasetMatrix<T>) -> DatasetMatrix<T> {
    let mut out = ds.clone();
    let n_samples = ds.n_samples();
    if n_samples == 0 {
        out.centered = true;
        return out;
    }
    let mean = ds.data.column_mean();
    for mut col in out.data.column_iter_mut() {
        col -= &mean;
    }
    out.mean = &ds.mean + mean;
    out.centered = true;
    out
}

/// Principal components of a centered dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca<T: Real> {
    /// `n x k`, orthonormal, ordered by decreasing variance.
    pub basis: DMatrix<T>,
    /// All eigenvalues of the sample covariance, descending.
    pub eigenvalues: Vec<T>,
    pub effective_rank: usize,
}

/// Top-`k` eigenvectors of `(1/N) X^T X`. Each eigenvector is signed so its
/// largest-magnitude entry is positive.
pub fn pca<T: Real>(ds: &DatasetMatrix<T>, k: usize) -> Result<Pca<T>> {
    if !ds.is_centered() {
        return Err(Error::param("dataset", "PCA requires centered data"));
    }
    let (n, big_n) = (ds.dim(), ds.n_samples());
    if big_n == 0 || n == 0 {
        return Err(Error::Empty("dataset"));
    }
    if k > n.min(big_n) {
        return Err(Error::RankExceeded {
            requested: k,
            effective_rank: n.min(big_n),
        });
    }
    let cov = (&ds.data * ds.data.transpose()) / T::from_usize_lossy(big_n);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let eigenvalues: Vec<T> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let top = eigenvalues[0].max(T::zero());
    let threshold = T::lit(EFFECTIVE_RANK_TOLERANCE) * top;
    let effective_rank = if top > T::zero() {
        eigenvalues.iter().take_while(|&&v| v >= threshold).count()
    } else {
        0
    };
    if k > effective_rank {
        return Err(Error::RankExceeded {
            requested: k,
            effective_rank,
        });
    }
    let mut basis = DMatrix::zeros(n, k);
    for (j, &src) in order.iter().take(k).enumerate() {
        let v = eig.eigenvectors.column(src);
        let pivot = v.iter().fold(T::zero(), |best, &x| if x.abs() > best.abs() { x } else { best });
        let sign = if pivot < T::zero() { -T::one() } else { T::one() };
        basis.column_mut(j).copy_from(&(v * sign));
    }
    Ok(Pca {
        basis,
        eigenvalues,
        effective_rank,
    })
}

/// Top-`k` principal subspace, used in place of the unknown true basis.
pub fn pca_surrogate<T: Real>(ds: &DatasetMatrix<T>, k: usize) -> Result<DMatrix<T>> {
    pca(ds, k).map(|p| p.basis)
}

/// Lazily generated samples from a spiked model.
pub struct SpikedStream<'a, T: Real, R: Rng> {
    model: &'a SpikedModel<T>,
    remaining: usize,
    rng: R,
}

impl<T: Real, R: Rng> Iterator for SpikedStream<'_, T, R> {
    type Item = DVector<T>;

    fn next(&mut self) -> Option<DVector<T>> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        Some(self.model.sample(&mut self.rng).0)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining, Some(self.remaining))
    }
}

impl<T: Real, R: Rng> ExactSizeIterator for SpikedStream<'_, T, R> {}

pub fn spiked_stream<T: Real, R: Rng>(model: &SpikedModel<T>, count: usize, rng: R) -> SpikedStream<'_, T, R> {
    SpikedStream {
        model,
        remaining: count,
        rng,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{orthonormality_defect, reconstruction_error};
    use crate::rng::{gaussian_matrix, stream};

    fn idx_bytes(magic: u32, counts: [u32; 3], payload: &[u8]) -> Vec<u8> {
        let mut b = magic.to_be_bytes().to_vec();
        for c in counts {
            b.extend_from_slice(&c.to_be_bytes());
        }
        b.extend_from_slice(payload);
        b
    }

    #[test]
    fn idx_scales_bytes() {
        let bytes = idx_bytes(0x803, [2, 2, 2], &[0, 255, 0, 255, 0, 255, 0, 255]);
        let ds: DatasetMatrix<f64> = parse_idx_images(&bytes).unwrap();
        assert_eq!((ds.n_samples(), ds.dim()), (2, 4));
        assert_eq!(ds.sample(1).as_slice(), &[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(ds.image_shape(), Some((2, 2)));
        assert!(!ds.is_centered());
    }

    #[test]
    fn idx_flattens_row_major() {
        let bytes = idx_bytes(0x803, [1, 2, 3], &[0, 51, 102, 153, 204, 255]);
        let ds: DatasetMatrix<f64> = parse_idx_images(&bytes).unwrap();
        assert_eq!(ds.sample(0).as_slice(), &[0.0, 0.2, 0.4, 0.6, 0.8, 1.0]);
    }

    #[test]
    fn idx_wrong_magic() {
        let err = parse_idx_images::<f64>(&idx_bytes(0x801, [1, 1, 1], &[0])).unwrap_err();
        assert!(matches!(
            err,
            Error::Idx {
                offset: 0,
                kind: IdxErrorKind::WrongMagic {
                    expected: 0x803,
                    found: 0x801
                }
            }
        ));
        assert!(err.to_string().contains("0x00000801"));
    }

    #[test]
    fn idx_length_must_match() {
        let short = idx_bytes(0x803, [2, 2, 2], &[0; 7]);
        assert!(matches!(
            parse_idx_images::<f64>(&short),
            Err(Error::Idx {
                offset: 23,
                kind: IdxErrorKind::Truncated { expected: 24, found: 23 }
            })
        ));
        let long = idx_bytes(0x803, [2, 2, 2], &[0; 9]);
        assert!(matches!(
            parse_idx_images::<f64>(&long),
            Err(Error::Idx {
                offset: 24,
                kind: IdxErrorKind::TrailingBytes { .. }
            })
        ));
        assert!(matches!(
            parse_idx_images::<f64>(&[0, 0, 8]),
            Err(Error::Idx {
                kind: IdxErrorKind::Truncated { .. },
                ..
            })
        ));
    }

    #[test]
    fn idx_count_overflow() {
        let bytes = idx_bytes(0x803, [u32::MAX, u32::MAX, u32::MAX], &[]);
        assert!(matches!(
            parse_idx_images::<f64>(&bytes),
            Err(Error::Idx {
                offset: 4,
                kind: IdxErrorKind::CountOverflow
            })
        ));
    }

    #[test]
    fn csv_basic_and_header() {
        let ds: DatasetMatrix<f64> = parse_csv_matrix("1,2\n3,4").unwrap();
        assert_eq!(ds.to_rows(), DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let ds: DatasetMatrix<f64> = parse_csv_matrix("a,b\r\n1,2\r\n3,4\r\n").unwrap();
        assert_eq!(ds.n_samples(), 2);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        assert!(matches!(parse_csv_matrix::<f64>("1,2\n3"), Err(Error::Csv { line: 2, .. })));
        assert!(matches!(parse_csv_matrix::<f64>("1,2\n3,x"), Err(Error::Csv { line: 2, .. })));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let rows: DMatrix<f64> = gaussian_matrix(5, 3, &mut stream(1, 0));
        let rows = rows.map(|v| v * 1e-7 + 1.0 / 3.0);
        let text = format_csv_matrix(&rows, Some(&["a".into(), "b".into(), "c".into()]));
        let back: DatasetMatrix<f64> = parse_csv_matrix(&text).unwrap();
        assert_eq!(back.to_rows(), rows);
    }

    #[test]
    fn centering() {
        let zero = DatasetMatrix::<f64>::from_rows(&DMatrix::zeros(3, 2));
        assert_eq!(center(&zero).to_rows(), DMatrix::zeros(3, 2));
        let rows = DMatrix::from_row_slice(3, 2, &[5.0, 1.0, 5.0, 2.0, 5.0, 6.0]);
        let c = center(&DatasetMatrix::from_rows(&rows));
        assert_eq!(c.to_rows().column(0).amax(), 0.0);
        assert_eq!(c.mean()[0], 5.0);
        let twice = center(&c);
        assert!((twice.to_rows() - c.to_rows()).amax() < 1e-15);
        assert!((twice.mean() - c.mean()).amax() < 1e-15);
    }

    #[test]
    fn pca_recovers_plane() {
        let mut rng = stream(2, 0);
        let plane: DMatrix<f64> = gaussian_matrix(6, 2, &mut rng);
        let coeffs: DMatrix<f64> = gaussian_matrix(2, 50, &mut rng);
        let ds = center(&DatasetMatrix::from_columns(plane * coeffs));
        let basis = pca_surrogate(&ds, 2).unwrap();
        assert!(orthonormality_defect(&basis) < 1e-10);
        let err = reconstruction_error(&basis, &ds.to_rows()).unwrap();
        let total = ds.columns().norm_squared();
        assert!(err / total < 1e-18, "{}", err / total);
        assert!(matches!(pca_surrogate(&ds, 3), Err(Error::RankExceeded { effective_rank: 2, .. })));
    }

    #[test]
    fn pca_on_axis_samples() {
        let rows = DMatrix::from_row_slice(2, 3, &[2.0, 0.0, 0.0, -2.0, 0.0, 0.0]);
        let ds = center(&DatasetMatrix::from_rows(&rows));
        let b = pca_surrogate(&ds, 1).unwrap();
        assert_eq!(b.column(0).as_slice(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn pca_requires_centering() {
        let ds = DatasetMatrix::<f64>::from_rows(&DMatrix::identity(3, 3));
        assert!(pca(&ds, 1).is_err());
    }

    #[test]
    fn stream_is_lazy_and_replayable() {
        let model = SpikedModel::new(DMatrix::identity(4, 1), DVector::from_element(1, 1.0), 1.0).unwrap();
        assert_eq!(spiked_stream(&model, 0, stream(3, 0)).count(), 0);
        let a: Vec<_> = spiked_stream(&model, 5, stream(3, 0)).collect();
        let b: Vec<_> = spiked_stream(&model, 5, stream(3, 0)).collect();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
    }
}
