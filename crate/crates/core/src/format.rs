//! On-disk formats: dataset CSV and packed binary, result tables, and
//! precision-matrix serialization.
//!
//! The binary dataset format is a 16-byte header (`DPQRBIN1` magic, row and
//! column counts as little-endian u32) followed by row-major little-endian
//! f64 values; each row stores `x0..xp` then `y`. The CSV format carries the
//! same layout with a one-line header.

use crate::data::Dataset;
use crate::error::{DpqrError, Result};
use crate::inference::IntervalReport;
use crate::sim::{AggregateRow, MetricRow};
use ndarray::{Array1, Array2};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const BINARY_MAGIC: &[u8; 8] = b"DPQRBIN1";

pub fn write_dataset_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    let dim = data.dim();
    let mut header: Vec<String> = (0..dim).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    writeln!(w, "{}", header.join(","))?;
    for i in 0..data.n() {
        let mut fields: Vec<String> = data.x().row(i).iter().map(|v| format!("{v}")).collect();
        fields.push(format!("{}", data.y()[i]));
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

pub fn read_dataset_csv(path: &Path) -> Result<Dataset> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| DpqrError::MalformedFile("empty dataset file".into()))??;
    let cols = header.split(',').count();
    if cols < 2 {
        return Err(DpqrError::MalformedFile("dataset needs x0 and y columns".into()));
    }
    let dim = cols - 1;
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols {
            return Err(DpqrError::MalformedFile(format!(
                "row {} has {} fields, expected {cols}",
                lineno + 2,
                fields.len()
            )));
        }
        for f in &fields[..dim] {
            xs.push(parse_f64(f, lineno + 2)?);
        }
        ys.push(parse_f64(fields[dim], lineno + 2)?);
    }
    let n = ys.len();
    let x = Array2::from_shape_vec((n, dim), xs)
        .map_err(|e| DpqrError::MalformedFile(e.to_string()))?;
    Dataset::new(x, Array1::from_vec(ys))
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| DpqrError::MalformedFile(format!("bad number '{s}' on line {line}")))
}

pub fn write_dataset_binary(data: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(BINARY_MAGIC)?;
    let rows = data.n() as u32;
    let cols = (data.dim() + 1) as u32;
    w.write_all(&rows.to_le_bytes())?;
    w.write_all(&cols.to_le_bytes())?;
    for i in 0..data.n() {
        for v in data.x().row(i).iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&data.y()[i].to_le_bytes())?;
    }
    Ok(())
}

pub fn read_dataset_binary(path: &Path) -> Result<Dataset> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut header = [0u8; 16];
    r.read_exact(&mut header)
        .map_err(|_| DpqrError::MalformedFile("binary header truncated".into()))?;
    if &header[..8] != BINARY_MAGIC {
        return Err(DpqrError::MalformedFile("bad magic in binary dataset".into()));
    }
    let rows = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    if cols < 2 {
        return Err(DpqrError::MalformedFile("binary dataset needs x0 and y".into()));
    }
    let mut payload = vec![0u8; rows * cols * 8];
    r.read_exact(&mut payload)
        .map_err(|_| DpqrError::MalformedFile("binary payload truncated".into()))?;
    let dim = cols - 1;
    let mut xs = Vec::with_capacity(rows * dim);
    let mut ys = Vec::with_capacity(rows);
    for i in 0..rows {
        let base = i * cols * 8;
        for j in 0..dim {
            let at = base + j * 8;
            xs.push(f64::from_le_bytes(payload[at..at + 8].try_into().unwrap()));
        }
        let at = base + dim * 8;
        ys.push(f64::from_le_bytes(payload[at..at + 8].try_into().unwrap()));
    }
    let x = Array2::from_shape_vec((rows, dim), xs)
        .map_err(|e| DpqrError::MalformedFile(e.to_string()))?;
    Dataset::new(x, Array1::from_vec(ys))
}

pub const METRIC_HEADER: &str =
    "design,model,noise,p,N,n,m,eps,delta,rep,seed,l2,cov_j1,cov_j100,width_mean,secs";

fn opt_bool(b: Option<bool>) -> String {
    match b {
        Some(true) => "1".into(),
        Some(false) => "0".into(),
        None => String::new(),
    }
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

pub fn write_metric_rows(rows: &[MetricRow], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{METRIC_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{:.3}",
            r.design,
            r.model,
            r.noise,
            r.p,
            r.n_total,
            r.n_local,
            r.m,
            r.eps,
            r.delta,
            r.rep,
            r.seed,
            if r.l2.is_nan() { String::new() } else { format!("{}", r.l2) },
            opt_bool(r.cov_j1),
            opt_bool(r.cov_j100),
            opt_f64(r.width_mean),
            r.secs
        )?;
    }
    Ok(())
}

pub fn write_aggregate_rows(rows: &[AggregateRow], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "cell,mean,std,count")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.cell, r.mean, r.std, r.count)?;
    }
    Ok(())
}

pub fn write_intervals(reports: &[IntervalReport], covered: Option<&[bool]>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "j,lower,upper,level,method,sigma_hat,covered")?;
    for (idx, r) in reports.iter().enumerate() {
        let cov = covered
            .and_then(|c| c.get(idx))
            .map(|b| if *b { "1".to_string() } else { "0".to_string() })
            .unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.coordinate,
            r.lower,
            r.upper,
            r.level,
            r.method.name(),
            if r.sigma_hat.is_nan() { String::new() } else { format!("{}", r.sigma_hat) },
            cov
        )?;
    }
    Ok(())
}

/// Dense row-major CSV of a square matrix.
pub fn write_matrix_csv(m: &Array2<f64>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut values = Vec::new();
    let mut ncols = None;
    let mut nrows = 0;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        match ncols {
            None => ncols = Some(fields.len()),
            Some(c) if c != fields.len() => {
                return Err(DpqrError::MalformedFile(format!("ragged matrix row {}", lineno + 1)))
            }
            _ => {}
        }
        for f in fields {
            values.push(parse_f64(f, lineno + 1)?);
        }
        nrows += 1;
    }
    let ncols = ncols.ok_or_else(|| DpqrError::MalformedFile("empty matrix file".into()))?;
    Array2::from_shape_vec((nrows, ncols), values)
        .map_err(|e| DpqrError::MalformedFile(e.to_string()))
}

/// Sparse triplets `i,j,value` for entries with magnitude above `threshold`.
pub fn write_matrix_triplets(m: &Array2<f64>, threshold: f64, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "i,j,value")?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if m[(i, j)].abs() > threshold {
                writeln!(w, "{},{},{}", i, j, m[(i, j)])?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{streams, RngStream};
    use crate::sim::{generate, ModelKind, NoiseFamily, SimDesign};
    use tempfile::tempdir;

    fn sample_dataset() -> Dataset {
        let d = SimDesign::new("io", ModelKind::Homoscedastic, NoiseFamily::Normal, 4, 30, 1)
            .unwrap();
        let mut rng = RngStream::new(7, streams::DATA);
        generate(&d, &mut rng).unwrap()
    }

    #[test]
    fn csv_roundtrip_preserves_values() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let data = sample_dataset();
        write_dataset_csv(&data, &path).unwrap();
        let back = read_dataset_csv(&path).unwrap();
        assert_eq!(back.n(), data.n());
        assert_eq!(back.dim(), data.dim());
        for i in 0..data.n() {
            assert_eq!(back.y()[i].to_bits(), data.y()[i].to_bits());
            for j in 0..data.dim() {
                assert_eq!(back.x()[(i, j)].to_bits(), data.x()[(i, j)].to_bits());
            }
        }
    }

    #[test]
    fn binary_roundtrip_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("data.bin");
        let data = sample_dataset();
        write_dataset_binary(&data, &path).unwrap();
        let back = read_dataset_binary(&path).unwrap();
        for i in 0..data.n() {
            assert_eq!(back.y()[i].to_bits(), data.y()[i].to_bits());
        }
        // header is exactly 16 bytes plus 8 bytes per value
        let len = std::fs::metadata(&path).unwrap().len() as usize;
        assert_eq!(len, 16 + data.n() * (data.dim() + 1) * 8);
    }

    #[test]
    fn corrupt_binary_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("data.bin");
        std::fs::write(&path, b"NOTMAGIC\x01\x00\x00\x00\x02\x00\x00\x00").unwrap();
        assert!(read_dataset_binary(&path).is_err());
    }

    #[test]
    fn matrix_csv_roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("w.csv");
        let mut m = Array2::<f64>::eye(3);
        m[(0, 2)] = -0.125;
        write_matrix_csv(&m, &path).unwrap();
        let back = read_matrix_csv(&path).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn ragged_matrix_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("w.csv");
        std::fs::write(&path, "1,2\n3\n").unwrap();
        assert!(read_matrix_csv(&path).is_err());
    }
}
