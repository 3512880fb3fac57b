//! CSV matrices and JSON documents on disk.
//!
//! Data matrices are stored with samples as rows and channels as columns.
//! Values are written with 17 significant digits so that a save/load round
//! trip is exact.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{NmcaError, Result};
use crate::nmca::{NmcaModel, TrainConfig, TrainTrace};
use crate::numerics::{self, Matrix};
use crate::synth::{DistortionKind, GroundTruth, MultiviewDataset};

fn parse_error(path: &Path, row: usize, col: usize, msg: impl Into<String>) -> NmcaError {
    NmcaError::Parse { file: path.display().to_string(), row, col, msg: msg.into() }
}

/// Reads a CSV of numbers into a row-major table. A first row containing
/// any non-numeric cell is treated as a header and skipped. Row and column
/// numbers in errors are 1-based and count the header.
pub fn read_csv_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => NmcaError::Io(io),
            other => parse_error(path, 0, 0, format!("{other:?}")),
        })?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 1;
        let record = record.map_err(|e| parse_error(path, line, 0, e.to_string()))?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let parsed: Vec<std::result::Result<f64, _>> = record.iter().map(str::parse::<f64>).collect();
        if idx == 0 && parsed.iter().any(|p| p.is_err()) {
            width = Some(record.len());
            continue;
        }
        let mut row = Vec::with_capacity(record.len());
        for (c, (cell, value)) in record.iter().zip(parsed).enumerate() {
            match value {
                Ok(v) if v.is_finite() => row.push(v),
                _ => return Err(parse_error(path, line, c + 1, format!("`{cell}` is not a finite number"))),
            }
        }
        match width {
            Some(w) if w != row.len() => {
                return Err(parse_error(path, line, row.len().min(w) + 1, format!("expected {w} columns, found {}", row.len())))
            }
            None => width = Some(row.len()),
            _ => {}
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_error(path, 0, 0, "no data rows"));
    }
    Ok(rows)
}

/// Reads a samples-as-rows CSV into a `channels x samples` matrix.
pub fn read_samples_csv(path: &Path) -> Result<Matrix> {
    let rows = read_csv_rows(path)?;
    Ok(numerics::from_nested(&rows)?.transpose())
}

fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_rows(path: &Path, rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut out = String::new();
    for row in rows {
        let cells: Vec<String> = row.into_iter().map(format_value).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes a `channels x samples` matrix with one sample per line.
pub fn write_samples_csv(path: &Path, m: &Matrix) -> Result<()> {
    write_rows(path, m.column_iter().map(|c| c.iter().copied().collect()))
}

/// Writes a matrix in its natural orientation, one matrix row per line.
pub fn write_matrix_csv(path: &Path, m: &Matrix) -> Result<()> {
    write_rows(path, m.row_iter().map(|r| r.iter().copied().collect()))
}

pub fn read_matrix_csv(path: &Path) -> Result<Matrix> {
    numerics::from_nested(&read_csv_rows(path)?)
}

/// Loads one view per file. All files must have the same number of rows.
pub fn load_views_csv<P: AsRef<Path>>(paths: &[P]) -> Result<MultiviewDataset> {
    if paths.is_empty() {
        return Err(NmcaError::InvalidConfig("no view files given".into()));
    }
    let mut views = Vec::with_capacity(paths.len());
    for p in paths {
        let p = p.as_ref();
        let view = read_samples_csv(p)?;
        if let Some(first) = views.first().map(Matrix::ncols) {
            if view.ncols() != first {
                return Err(parse_error(p, view.ncols().min(first) + 1, 0, format!("{} samples, expected {first}", view.ncols())));
            }
        }
        views.push(view);
    }
    MultiviewDataset::new(views, None)
}

pub fn view_file(dir: &Path, q: usize) -> PathBuf {
    dir.join(format!("view{}.csv", q + 1))
}

/// The consecutive `view1.csv`, `view2.csv`, ... files in `dir`.
pub fn view_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let files: Vec<PathBuf> = (0..).map(|q| view_file(dir, q)).take_while(|p| p.is_file()).collect();
    if files.is_empty() {
        return Err(NmcaError::InvalidConfig(format!("no view1.csv in {}", dir.display())));
    }
    Ok(files)
}

pub fn save_views_csv(dataset: &MultiviewDataset, dir: &Path) -> Result<()> {
    if dataset.views.is_empty() || dataset.samples() == 0 {
        return Err(NmcaError::InvalidConfig("dataset is empty".into()));
    }
    fs::create_dir_all(dir)?;
    for (q, v) in dataset.views.iter().enumerate() {
        write_samples_csv(&view_file(dir, q), v)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DistortionFile {
    distortions: Vec<Vec<DistortionKind>>,
    permutations: Vec<Vec<usize>>,
}

/// Writes `S.csv`, `C1.csv`, ..., `A1.csv`, ... and `distortions.json`.
pub fn save_truth_csv(truth: &GroundTruth, dir: &Path) -> Result<()> {
    if truth.num_views() == 0 || truth.shared.ncols() == 0 {
        return Err(NmcaError::InvalidConfig("ground truth is empty".into()));
    }
    fs::create_dir_all(dir)?;
    write_samples_csv(&dir.join("S.csv"), &truth.shared)?;
    for q in 0..truth.num_views() {
        if truth.private[q].nrows() > 0 {
            write_samples_csv(&dir.join(format!("C{}.csv", q + 1)), &truth.private[q])?;
        }
        write_matrix_csv(&dir.join(format!("A{}.csv", q + 1)), &truth.mixing[q])?;
    }
    let meta = DistortionFile { distortions: truth.distortions.clone(), permutations: truth.permutations.clone() };
    fs::write(dir.join("distortions.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

pub fn load_truth_dir(dir: &Path) -> Result<GroundTruth> {
    let shared = read_samples_csv(&dir.join("S.csv"))?;
    let meta: DistortionFile = serde_json::from_str(&fs::read_to_string(dir.join("distortions.json"))?)?;
    let q_count = meta.distortions.len();
    if meta.permutations.len() != q_count {
        return Err(NmcaError::Shape("distortions and permutations disagree on the number of views".into()));
    }
    let n = shared.ncols();
    let mut private = Vec::with_capacity(q_count);
    let mut mixing = Vec::with_capacity(q_count);
    for q in 0..q_count {
        let c_path = dir.join(format!("C{}.csv", q + 1));
        let c = if c_path.is_file() { read_samples_csv(&c_path)? } else { Matrix::zeros(0, n) };
        if c.ncols() != n {
            return Err(NmcaError::Shape(format!("C{} has {} samples, S has {n}", q + 1, c.ncols())));
        }
        let a = read_matrix_csv(&dir.join(format!("A{}.csv", q + 1)))?;
        let latent = shared.nrows() + c.nrows();
        if a.ncols() != latent || a.nrows() != meta.distortions[q].len() || meta.permutations[q].len() != latent {
            return Err(NmcaError::Shape(format!("view {} truth files have inconsistent sizes", q + 1)));
        }
        private.push(c);
        mixing.push(a);
    }
    Ok(GroundTruth { shared, private, mixing, permutations: meta.permutations, distortions: meta.distortions })
}

/// Views from `view*.csv` in `dir`, with the truth from `truth_dir` when
/// given.
pub fn load_dataset_dir(dir: &Path, truth_dir: Option<&Path>) -> Result<MultiviewDataset> {
    let data = load_views_csv(&view_files(dir)?)?;
    let truth = truth_dir.map(load_truth_dir).transpose()?;
    MultiviewDataset::new(data.views, truth)
}

/// Trained model together with the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub config: TrainConfig,
    pub model: NmcaModel,
    #[serde(default)]
    pub trace: TrainTrace,
}

impl ModelFile {
    pub fn load(path: &Path) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(&fs::read_to_string(path)?)?;
        file.model.validate()?;
        Ok(file)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Two-column `x,h` CSV of a composition probe.
pub fn write_probe_csv(path: &Path, probe: &[(f64, f64)]) -> Result<()> {
    let mut out = String::from("x,h\n");
    for (x, h) in probe {
        out.push_str(&format!("{},{}\n", format_value(*x), format_value(*h)));
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_views, SynthConfig};

    fn small() -> MultiviewDataset {
        generate_views(&SynthConfig { samples: 50, ..SynthConfig::benchmark(4) }).unwrap()
    }

    #[test]
    fn views_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let data = small();
        save_views_csv(&data, dir.path()).unwrap();
        let back = load_views_csv(&view_files(dir.path()).unwrap()).unwrap();
        assert_eq!(back.views, data.views);
        assert!(back.truth.is_none());
        let text = fs::read_to_string(dir.path().join("view1.csv")).unwrap();
        assert_eq!(text.lines().count(), 50);
        assert_eq!(text.lines().next().unwrap().split(',').count(), 3);
    }

    #[test]
    fn output_is_deterministic() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let data = small();
        for d in [&a, &b] {
            save_views_csv(&data, d.path()).unwrap();
            save_truth_csv(data.truth.as_ref().unwrap(), d.path()).unwrap();
        }
        for name in ["view1.csv", "view2.csv", "S.csv", "C2.csv", "A1.csv", "distortions.json"] {
            assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
        }
    }

    #[test]
    fn truth_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data = small();
        let truth = data.truth.as_ref().unwrap();
        save_truth_csv(truth, dir.path()).unwrap();
        assert_eq!(&load_truth_dir(dir.path()).unwrap(), truth);
    }

    #[test]
    fn header_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.csv");
        fs::write(&p, "a,b\n1,2\n3,4\n5,6\n").unwrap();
        let m = read_samples_csv(&p).unwrap();
        assert_eq!(m, Matrix::from_row_slice(2, 3, &[1.0, 3.0, 5.0, 2.0, 4.0, 6.0]));
    }

    #[test]
    fn parse_errors_locate_the_cell() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.csv");
        fs::write(&p, "1,2\n3,x\n").unwrap();
        match read_samples_csv(&p) {
            Err(NmcaError::Parse { row, col, .. }) => assert_eq!((row, col), (2, 2)),
            other => panic!("{other:?}"),
        }
        fs::write(&p, "1,2\n3\n").unwrap();
        assert!(matches!(read_samples_csv(&p), Err(NmcaError::Parse { row: 2, .. })));
        fs::write(&p, "").unwrap();
        assert!(matches!(read_samples_csv(&p), Err(NmcaError::Parse { .. })));
    }

    #[test]
    fn mismatched_sample_counts() {
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        fs::write(&p1, "1,2\n3,4\n").unwrap();
        fs::write(&p2, "1,2\n3,4\n5,6\n").unwrap();
        assert!(matches!(load_views_csv(&[p1, p2]), Err(NmcaError::Parse { .. })));
    }

    #[test]
    fn empty_dataset_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let empty = MultiviewDataset { views: vec![], truth: None };
        assert!(matches!(save_views_csv(&empty, dir.path()), Err(NmcaError::InvalidConfig(_))));
    }

    #[test]
    fn probe_csv_has_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("probe.csv");
        write_probe_csv(&p, &[(0.0, 1.0), (0.5, 2.0)]).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(read_csv_rows(&p).unwrap(), vec![vec![0.0, 1.0], vec![0.5, 2.0]]);
    }
}
