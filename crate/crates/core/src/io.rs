//! Matrix files: headerless CSV and a little-endian binary layout.
//!
//! Binary layout: the 4-byte magic `ISM1`, then `N` and `d` as u64 LE, then
//! `N·d` f64 LE values in row-major order.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::config::fmt_f64;
use crate::error::{Error, Result};
use crate::nn::LabeledData;
use crate::tensor::PointCloud;

pub const BINARY_MAGIC: &[u8; 4] = b"ISM1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    Csv,
    Binary,
}

impl MatrixFormat {
    /// Binary for `.bin`/`.ism` extensions, CSV otherwise.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin" | "ism") => Self::Binary,
            _ => Self::Csv,
        }
    }
}

/// Parses a headerless numeric CSV into rows of equal length.
fn parse_csv(text: &str) -> Result<(Vec<f64>, usize, usize)> {
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let mut count = 0;
        for (column, cell) in line.split(',').enumerate() {
            let cell = cell.trim();
            let v: f64 = cell.parse().map_err(|_| Error::NonNumericCell {
                line: line_no,
                column: column + 1,
                text: cell.to_string(),
            })?;
            values.push(v);
            count += 1;
        }
        match width {
            None => width = Some(count),
            Some(w) if w != count => {
                return Err(Error::RaggedCsv {
                    line: line_no,
                    expected: w,
                    got: count,
                })
            }
            _ => {}
        }
        rows += 1;
    }
    match width {
        Some(w) => Ok((values, rows, w)),
        None => Err(Error::CorruptHeader("empty CSV file".into())),
    }
}

pub fn read_csv(path: &Path) -> Result<PointCloud> {
    let (values, rows, cols) = parse_csv(&fs::read_to_string(path)?)?;
    PointCloud::new(Array2::from_shape_vec((rows, cols), values).expect("shape checked"))
}

/// CSV whose last column holds non-negative integer class labels.
pub fn read_labeled_csv(path: &Path) -> Result<LabeledData> {
    let (values, rows, cols) = parse_csv(&fs::read_to_string(path)?)?;
    if cols < 2 {
        return Err(Error::DimensionTooSmall {
            what: "labeled CSV columns",
            got: cols,
            min: 2,
        });
    }
    let mut features = Vec::with_capacity(rows * (cols - 1));
    let mut labels = Vec::with_capacity(rows);
    for (i, row) in values.chunks(cols).enumerate() {
        features.extend_from_slice(&row[..cols - 1]);
        let label = row[cols - 1];
        if label < 0.0 || label.fract() != 0.0 || !label.is_finite() {
            return Err(Error::NonNumericCell {
                line: i + 1,
                column: cols,
                text: label.to_string(),
            });
        }
        labels.push(label as usize);
    }
    let features =
        PointCloud::new(Array2::from_shape_vec((rows, cols - 1), features).expect("shape checked"))?;
    LabeledData::new(features, labels)
}

pub fn read_binary(path: &Path) -> Result<PointCloud> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut header = [0u8; 20];
    let mut filled = 0;
    while filled < header.len() {
        match reader.read(&mut header[filled..])? {
            0 => {
                return Err(Error::CorruptHeader(format!(
                    "file holds only {filled} header bytes"
                )))
            }
            k => filled += k,
        }
    }
    if &header[..4] != BINARY_MAGIC {
        return Err(Error::CorruptHeader("bad magic bytes".into()));
    }
    let n = u64::from_le_bytes(header[4..12].try_into().expect("8 bytes"));
    let d = u64::from_le_bytes(header[12..20].try_into().expect("8 bytes"));
    let count = n
        .checked_mul(d)
        .and_then(|c| usize::try_from(c).ok())
        .ok_or_else(|| Error::CorruptHeader(format!("shape {n}×{d} overflows")))?;
    let expected_bytes = count as u64 * 8;
    let actual_bytes = fs::metadata(path)?.len().saturating_sub(20);
    if actual_bytes != expected_bytes {
        return Err(Error::CorruptHeader(format!(
            "header declares {n}×{d} values ({expected_bytes} bytes) but payload has {actual_bytes}"
        )));
    }
    let mut bytes = Vec::with_capacity(count * 8);
    reader.read_to_end(&mut bytes)?;
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    PointCloud::new(Array2::from_shape_vec((n as usize, d as usize), values).expect("size checked"))
}

/// Reads by content: binary if the file starts with the magic, CSV otherwise.
pub fn read_matrix(path: &Path) -> Result<PointCloud> {
    let mut magic = [0u8; 4];
    let is_binary = File::open(path)?.read_exact(&mut magic).is_ok() && &magic == BINARY_MAGIC;
    if is_binary {
        read_binary(path)
    } else {
        read_csv(path)
    }
}

/// Writes `path` via a temporary sibling and a rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, write: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidParameter(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp: PathBuf = path.with_file_name(tmp_name);
    let result = (|| {
        let mut out = BufWriter::new(File::create(&tmp)?);
        write(&mut out)?;
        out.into_inner().map_err(|e| e.into_error())?.sync_all()
    })();
    match result {
        Ok(()) => fs::rename(&tmp, path).map_err(Error::from),
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e.into())
        }
    }
}

pub fn write_csv(path: &Path, x: &PointCloud) -> Result<()> {
    write_atomic(path, |out| {
        for row in x.view().rows() {
            let line: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    })
}

pub fn write_labeled_csv(path: &Path, data: &LabeledData) -> Result<()> {
    write_atomic(path, |out| {
        for (row, label) in data.features.view().rows().into_iter().zip(&data.labels) {
            let mut line: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
            line.push(label.to_string());
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    })
}

pub fn write_binary(path: &Path, x: &PointCloud) -> Result<()> {
    write_atomic(path, |out| {
        out.write_all(BINARY_MAGIC)?;
        out.write_all(&(x.n_points() as u64).to_le_bytes())?;
        out.write_all(&(x.dim() as u64).to_le_bytes())?;
        for &v in x.view().iter() {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    })
}

/// Writes in the format implied by the extension.
pub fn write_matrix(path: &Path, x: &PointCloud) -> Result<()> {
    match MatrixFormat::from_path(path) {
        MatrixFormat::Csv => write_csv(path, x),
        MatrixFormat::Binary => write_binary(path, x),
    }
}

/// Counts non-empty lines, for callers that want a size before parsing.
pub fn count_rows(path: &Path) -> Result<usize> {
    let reader = BufReader::new(File::open(path)?);
    let mut n = 0;
    for line in reader.lines() {
        if !line?.trim().is_empty() {
            n += 1;
        }
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::sample_gaussian;
    use ndarray::array;

    #[test]
    fn csv_and_binary_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let x = sample_gaussian(&[0.0, 1e-9, 3e20], &[1.0, 1e-12, 1e30], 17, 2).unwrap();
        for name in ["x.csv", "x.bin"] {
            let path = dir.path().join(name);
            write_matrix(&path, &x).unwrap();
            assert_eq!(read_matrix(&path).unwrap(), x, "{name}");
        }
        assert_eq!(count_rows(&dir.path().join("x.csv")).unwrap(), 17);
    }

    #[test]
    fn labeled_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.csv");
        let data = LabeledData::new(
            PointCloud::new(array![[1.0, 2.0], [3.5, -1.0]]).unwrap(),
            vec![1, 0],
        )
        .unwrap();
        write_labeled_csv(&path, &data).unwrap();
        assert_eq!(read_labeled_csv(&path).unwrap(), data);
        fs::write(&path, "1,2,0.5\n").unwrap();
        assert!(matches!(
            read_labeled_csv(&path),
            Err(Error::NonNumericCell { column: 3, .. })
        ));
    }

    #[test]
    fn malformed_files_are_data_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "1,2\n3\n").unwrap();
        assert!(matches!(
            read_csv(&path),
            Err(Error::RaggedCsv {
                line: 2,
                expected: 2,
                got: 1
            })
        ));
        fs::write(&path, "1,x\n").unwrap();
        assert!(matches!(
            read_csv(&path),
            Err(Error::NonNumericCell {
                line: 1,
                column: 2,
                ..
            })
        ));
        fs::write(&path, "1,NaN\n").unwrap();
        assert!(matches!(
            read_csv(&path),
            Err(Error::NonFiniteInput { row: 0, col: 1 })
        ));
        fs::write(&path, "\n\n").unwrap();
        assert!(matches!(read_csv(&path), Err(Error::CorruptHeader(_))));

        let bin = dir.path().join("bad.bin");
        let mut bytes = BINARY_MAGIC.to_vec();
        bytes.extend(3u64.to_le_bytes());
        bytes.extend(2u64.to_le_bytes());
        bytes.extend(1.0f64.to_le_bytes());
        fs::write(&bin, &bytes).unwrap();
        assert!(matches!(read_matrix(&bin), Err(Error::CorruptHeader(_))));
        fs::write(&bin, b"ISM1\x01").unwrap();
        assert!(matches!(read_binary(&bin), Err(Error::CorruptHeader(_))));
        fs::write(&bin, b"XXXXxxxxxxxxxxxxxxxxxxxx").unwrap();
        assert!(matches!(read_binary(&bin), Err(Error::CorruptHeader(_))));
    }

    #[test]
    fn failed_write_leaves_no_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        let err = write_atomic(&path, |_| Err(std::io::Error::other("boom")));
        assert!(err.is_err());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }
}
