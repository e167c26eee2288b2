//! Text file formats: delimited datasets, matrices, edge lists, and the
//! tables and reports written by the command-line tool.
//!
//! Datasets are comma- or tab-delimited with a header row
//! `z,x1,...,xd,y1,...,yd`. Node and row indices in all text formats are
//! 1-based.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::clime::CvSelection;
use crate::data::PairedDataset;
use crate::error::{Error, Result};
use crate::graph::EdgeSet;
use crate::stepdown::CalibrationRow;

fn detect_delimiter(header: &str) -> char {
    if header.contains('\t') {
        '\t'
    } else {
        ','
    }
}

fn parse_f64(field: &str, row: usize) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Parse {
        row,
        message: format!("cannot parse number from {field:?}"),
    })
}

/// Reads a paired dataset. Time indices outside `[0,1]` are rescaled
/// affinely onto `[0,1]` (and the rescale is logged).
pub fn read_paired_dataset(path: &Path) -> Result<PairedDataset> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::Parse {
        row: 1,
        message: "empty file".into(),
    })?;
    let delim = detect_delimiter(header);
    let cols: Vec<&str> = header.split(delim).map(str::trim).collect();
    if cols.first().map(|c| c.to_ascii_lowercase()) != Some("z".into()) {
        return Err(Error::Parse {
            row: 1,
            message: format!("first column must be z, got {:?}", cols.first().unwrap_or(&"")),
        });
    }
    let n_vars = cols.len() - 1;
    if n_vars == 0 || n_vars % 2 != 0 {
        return Err(Error::Parse {
            row: 1,
            message: format!("expected columns z,x1..xd,y1..yd, got {} data columns", n_vars),
        });
    }
    let d = n_vars / 2;
    for j in 0..d {
        let want_x = format!("x{}", j + 1);
        let want_y = format!("y{}", j + 1);
        if !cols[1 + j].eq_ignore_ascii_case(&want_x) {
            return Err(Error::Parse {
                row: 1,
                message: format!("expected column {want_x}, got {:?}", cols[1 + j]),
            });
        }
        if !cols[1 + d + j].eq_ignore_ascii_case(&want_y) {
            return Err(Error::Parse {
                row: 1,
                message: format!("expected column {want_y}, got {:?}", cols[1 + d + j]),
            });
        }
    }

    let mut z = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (idx, line) in lines {
        let row = idx + 1; // 1-based file row
        let fields: Vec<&str> = line.split(delim).collect();
        if fields.len() != cols.len() {
            return Err(Error::Parse {
                row,
                message: format!("expected {} fields, got {}", cols.len(), fields.len()),
            });
        }
        z.push(parse_f64(fields[0], row)?);
        for f in &fields[1..=d] {
            xs.push(parse_f64(f, row)?);
        }
        for f in &fields[d + 1..] {
            ys.push(parse_f64(f, row)?);
        }
    }
    let n = z.len();
    if n < 2 {
        return Err(Error::Parse {
            row: n + 1,
            message: format!("need at least 2 observations, got {n}"),
        });
    }
    let (zmin, zmax) = z
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if zmin < 0.0 || zmax > 1.0 {
        if zmax <= zmin {
            return Err(Error::Data("time indices are constant and outside [0,1]".into()));
        }
        log::info!("rescaling time indices from [{zmin}, {zmax}] to [0, 1]");
        for v in z.iter_mut() {
            *v = (*v - zmin) / (zmax - zmin);
        }
    }
    let zv = DVector::from_vec(z);
    let x = DMatrix::from_row_slice(n, d, &xs);
    let y = DMatrix::from_row_slice(n, d, &ys);
    PairedDataset::new(zv, x, y)
}

pub fn write_paired_dataset(path: &Path, ds: &PairedDataset) -> Result<()> {
    let d = ds.d();
    let mut out = String::from("z");
    for j in 0..d {
        write!(out, ",x{}", j + 1).unwrap();
    }
    for j in 0..d {
        write!(out, ",y{}", j + 1).unwrap();
    }
    out.push('\n');
    for i in 0..ds.n() {
        write!(out, "{}", ds.z()[i]).unwrap();
        for j in 0..d {
            write!(out, ",{}", ds.x()[(i, j)]).unwrap();
        }
        for j in 0..d {
            write!(out, ",{}", ds.y()[(i, j)]).unwrap();
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes a matrix as delimited rows (no header).
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut out = String::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{:.12e}", m[(i, j)]).unwrap();
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let delim = detect_delimiter(line);
        let row: Vec<f64> = line
            .split(delim)
            .map(|f| parse_f64(f, idx + 1))
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Parse {
                    row: idx + 1,
                    message: format!("expected {} fields, got {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse { row: 1, message: "empty matrix file".into() });
    }
    let (nr, nc) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

/// Writes an edge list, one `j k` pair per line, 1-based.
pub fn write_edge_list(path: &Path, es: &EdgeSet) -> Result<()> {
    let mut out = String::new();
    for (j, k) in es.iter() {
        writeln!(out, "{} {}", j + 1, k + 1).unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a 1-based edge list on `d` nodes.
pub fn read_edge_list(path: &Path, d: usize) -> Result<EdgeSet> {
    let text = fs::read_to_string(path)?;
    let mut es = EdgeSet::empty(d);
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = idx + 1;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 2 {
            return Err(Error::Parse {
                row,
                message: format!("expected two node indices, got {line:?}"),
            });
        }
        let j: usize = parts[0].parse().map_err(|_| Error::Parse {
            row,
            message: format!("bad node index {:?}", parts[0]),
        })?;
        let k: usize = parts[1].parse().map_err(|_| Error::Parse {
            row,
            message: format!("bad node index {:?}", parts[1]),
        })?;
        if j == 0 || k == 0 || j > d || k > d {
            return Err(Error::Parse {
                row,
                message: format!("node index out of range 1..={d} in {line:?}"),
            });
        }
        es.insert(j - 1, k - 1)?;
    }
    Ok(es)
}

pub fn write_cv_table(path: &Path, sel: &CvSelection) -> Result<()> {
    let mut out = String::from("lambda,cv,sd\n");
    for row in &sel.table {
        writeln!(out, "{},{},{}", row.lambda, row.cv, row.sd).unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_calibration_table(path: &Path, rows: &[CalibrationRow]) -> Result<()> {
    let mut out = String::from("n,lambda,type_i,power\n");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.n, r.lambda, r.type_i, r.power).unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}

/// JSON report of a test run.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TestReport {
    pub procedure: String,
    pub property: String,
    pub n: usize,
    pub d: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub h: f64,
    pub b_boot: usize,
    pub seed: u64,
    pub reject: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_rej: Option<usize>,
    pub quantiles: Vec<f64>,
    pub iterations: usize,
    /// union of rejected edges across the grid, 1-based pairs
    pub rejected_edges: Vec<(usize, usize)>,
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Data(format!("serialization failed: {e}")))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        row: e.line(),
        message: format!("bad JSON: {e}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    fn sample(seed: u64) -> PairedDataset {
        let path = data::generate_precision_path(8, 1, false, seed).unwrap();
        let lx = data::generate_nuisance(8, seed + 1).unwrap();
        let ly = data::generate_nuisance(8, seed + 2).unwrap();
        data::sample_dataset(&path, &lx, &ly, 20, 0.5, seed + 3).unwrap()
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tmp();
        let p = dir.path().join("ds.csv");
        let ds = sample(1);
        write_paired_dataset(&p, &ds).unwrap();
        let back = read_paired_dataset(&p).unwrap();
        assert_eq!(back.n(), ds.n());
        assert_eq!(back.d(), ds.d());
        assert!((back.x() - ds.x()).amax() < 1e-12);
        assert!((back.z() - ds.z()).amax() < 1e-12);
    }

    #[test]
    fn tab_delimited_dataset_is_accepted() {
        let dir = tmp();
        let p = dir.path().join("ds.tsv");
        fs::write(&p, "z\tx1\ty1\n0.1\t1.0\t2.0\n0.9\t-1.0\t0.5\n").unwrap();
        let ds = read_paired_dataset(&p).unwrap();
        assert_eq!(ds.n(), 2);
        assert_eq!(ds.d(), 1);
        assert!((ds.y()[(1, 0)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_times_are_rescaled() {
        let dir = tmp();
        let p = dir.path().join("ds.csv");
        fs::write(&p, "z,x1,y1\n10,1,2\n20,3,4\n30,5,6\n").unwrap();
        let ds = read_paired_dataset(&p).unwrap();
        assert!((ds.z()[0] - 0.0).abs() < 1e-12);
        assert!((ds.z()[1] - 0.5).abs() < 1e-12);
        assert!((ds.z()[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn parse_errors_name_the_row() {
        let dir = tmp();
        let p = dir.path().join("bad.csv");
        fs::write(&p, "z,x1,y1\n0.1,1,2\n0.5,oops,4\n").unwrap();
        match read_paired_dataset(&p) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn bad_header_is_rejected() {
        let dir = tmp();
        let p = dir.path().join("bad.csv");
        fs::write(&p, "t,x1,y1\n0.1,1,2\n").unwrap();
        assert!(matches!(read_paired_dataset(&p), Err(Error::Parse { row: 1, .. })));
        fs::write(&p, "z,x1,x2,y1\n0.1,1,2,3\n").unwrap();
        assert!(matches!(read_paired_dataset(&p), Err(Error::Parse { row: 1, .. })));
    }

    #[test]
    fn matrix_round_trip() {
        let dir = tmp();
        let p = dir.path().join("m.csv");
        let m = DMatrix::from_row_slice(2, 3, &[1.5, -2.0, 0.25, 0.0, 1e-9, 3.0]);
        write_matrix(&p, &m).unwrap();
        let back = read_matrix(&p).unwrap();
        assert!((back - m).amax() < 1e-15);
    }

    #[test]
    fn edge_list_round_trip_is_one_based() {
        let dir = tmp();
        let p = dir.path().join("edges.txt");
        let es = EdgeSet::from_edges(5, [(0, 1), (2, 4)]).unwrap();
        write_edge_list(&p, &es).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text, "1 2\n3 5\n");
        let back = read_edge_list(&p, 5).unwrap();
        assert_eq!(back, es);
    }

    #[test]
    fn edge_list_range_check() {
        let dir = tmp();
        let p = dir.path().join("edges.txt");
        fs::write(&p, "1 6\n").unwrap();
        assert!(read_edge_list(&p, 5).is_err());
        fs::write(&p, "0 2\n").unwrap();
        assert!(read_edge_list(&p, 5).is_err());
    }

    #[test]
    fn json_round_trip() {
        let dir = tmp();
        let p = dir.path().join("report.json");
        let r = TestReport {
            procedure: "max-degree".into(),
            property: "max-degree>3".into(),
            n: 100,
            d: 10,
            alpha: 0.05,
            lambda: 0.4,
            h: 0.3,
            b_boot: 500,
            seed: 7,
            reject: true,
            d_rej: Some(4),
            quantiles: vec![1.2],
            iterations: 1,
            rejected_edges: vec![(1, 2)],
        };
        write_json(&p, &r).unwrap();
        let back: TestReport = read_json(&p).unwrap();
        assert_eq!(back.procedure, r.procedure);
        assert_eq!(back.d_rej, Some(4));
        assert_eq!(back.rejected_edges, vec![(1, 2)]);
    }
}
