//! File formats: dataset CSV with a JSON sidecar, candidate tables, JSON reports.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, DatasetSplits, ScenarioSpec, Split};
use crate::error::{Error, Result};
use crate::selection::SelectionResult;

/// Sidecar record for a set of dataset CSVs. `y` in the CSVs is standardized
/// with these constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub scenario: String,
    pub true_function: String,
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    pub y_mean: f64,
    pub y_std: f64,
}

impl DatasetMeta {
    pub fn new(spec: &ScenarioSpec, splits: &DatasetSplits) -> Self {
        Self {
            scenario: spec.scenario.to_string(),
            true_function: spec.true_function.to_string(),
            n: spec.n,
            d: spec.d,
            seed: spec.seed,
            y_mean: splits.train.y_mean,
            y_std: splits.train.y_std,
        }
    }
}

pub fn dataset_header(d: usize) -> Vec<String> {
    let mut h = vec!["x".to_string(), "y".to_string()];
    h.extend((1..=d).map(|j| format!("z{j}")));
    h.push("split".into());
    h
}

pub fn write_dataset_csv<W: Write>(data: &Dataset, w: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    wtr.write_record(dataset_header(data.dim()))?;
    let split = data.split.to_string();
    for i in 0..data.len() {
        let mut rec = vec![data.x[i].to_string(), data.y[i].to_string()];
        rec.extend((0..data.dim()).map(|j| data.z[(i, j)].to_string()));
        rec.push(split.clone());
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn dataset_to_csv_string(data: &Dataset) -> Result<String> {
    let mut buf = Vec::new();
    write_dataset_csv(data, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

fn parse_f64(field: &str, row: usize, col: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("row {row}: column {col}: not a number: {field:?}")))?;
    if !v.is_finite() {
        return Err(Error::Config(format!("row {row}: column {col}: non-finite value")));
    }
    Ok(v)
}

/// Reads one split written by [`write_dataset_csv`]. All rows must carry the
/// same split label.
pub fn read_dataset_csv<R: Read>(r: R, y_mean: f64, y_std: f64) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header = rdr.headers()?.clone();
    let names: Vec<&str> = header.iter().collect();
    if names.len() < 4 {
        return Err(Error::Config("dataset header needs x, y, at least one z column and split".into()));
    }
    let d = names.len() - 3;
    let expected = dataset_header(d);
    if names != expected {
        return Err(Error::Config(format!("unexpected dataset header {names:?}")));
    }
    let (mut x, mut y, mut z) = (Vec::new(), Vec::new(), Vec::new());
    let mut split: Option<Split> = None;
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != names.len() {
            return Err(Error::Config(format!("row {row}: expected {} fields, got {}", names.len(), rec.len())));
        }
        x.push(parse_f64(&rec[0], row, "x")?);
        y.push(parse_f64(&rec[1], row, "y")?);
        for j in 0..d {
            z.push(parse_f64(&rec[2 + j], row, &expected[2 + j])?);
        }
        let s: Split = rec[d + 2].parse()?;
        match split {
            None => split = Some(s),
            Some(prev) if prev != s => {
                return Err(Error::Config(format!("row {row}: mixed splits {prev} and {s}")));
            }
            _ => {}
        }
    }
    let split = split.ok_or_else(|| Error::Config("dataset has no rows".into()))?;
    let n = x.len();
    Dataset::new(x, y, DMatrix::from_row_slice(n, d, &z), y_mean, y_std, split)
}

/// Writes `contents` to a temporary file beside `path` and renames it into place.
pub fn atomic_write(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let name = path.file_name().ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// File stem shared by the three split CSVs and the sidecar.
pub fn dataset_stem(spec: &ScenarioSpec) -> String {
    format!("{}_{}_n{}_seed{}", spec.scenario, spec.true_function, spec.n, spec.seed)
}

/// Writes `<stem>_{train,valid,test}.csv` and `<stem>_meta.json` into `dir`.
pub fn write_dataset_files(dir: &Path, spec: &ScenarioSpec, splits: &DatasetSplits) -> Result<Vec<PathBuf>> {
    let stem = dataset_stem(spec);
    let mut written = Vec::new();
    for data in [&splits.train, &splits.valid, &splits.test] {
        let path = dir.join(format!("{stem}_{}.csv", data.split));
        atomic_write(&path, dataset_to_csv_string(data)?.as_bytes())?;
        written.push(path);
    }
    let meta = DatasetMeta::new(spec, splits);
    let path = dir.join(format!("{stem}_meta.json"));
    atomic_write(&path, to_json_pretty(&meta)?.as_bytes())?;
    written.push(path);
    Ok(written)
}

pub fn read_dataset_files(dir: &Path, stem: &str) -> Result<(DatasetMeta, DatasetSplits)> {
    let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(dir.join(format!("{stem}_meta.json")))?)?;
    let read = |split: &str| -> Result<Dataset> {
        let f = fs::File::open(dir.join(format!("{stem}_{split}.csv")))?;
        read_dataset_csv(f, meta.y_mean, meta.y_std)
    };
    let splits = DatasetSplits { train: read("train")?, valid: read("valid")?, test: read("test")? };
    Ok((meta, splits))
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn read_report_json(s: &str) -> Result<SelectionResult> {
    let result: SelectionResult = serde_json::from_str(s)?;
    result.validate()?;
    Ok(result)
}

/// `label,itc,identifiable,keic,ratio,chosen`; untested rows leave the
/// criterion columns empty.
pub fn candidates_csv(result: &SelectionResult) -> Result<String> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    wtr.write_record(["label", "itc", "identifiable", "keic", "ratio", "chosen"])?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for row in &result.candidates {
        wtr.write_record([
            row.kernel.label(),
            opt(row.itc.as_ref().map(|r| r.itc_value)),
            row.itc.as_ref().map_or(String::new(), |r| r.identifiable.to_string()),
            opt(row.keic.as_ref().map(|r| r.keic_value)),
            opt(row.ratio),
            row.chosen.to_string(),
        ])?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, Scenario, TrueFunction};

    #[test]
    fn csv_round_trip_is_exact() {
        let spec = ScenarioSpec::new(Scenario::LW, TrueFunction::Sin, 25, 3);
        let splits = generate(&spec).unwrap();
        let text = dataset_to_csv_string(&splits.valid).unwrap();
        assert!(text.starts_with("x,y,z1,z2,z3,z4,z5,z6,split\n"));
        assert!(!text.contains('\r'));
        assert_eq!(text.lines().count(), 26);
        let back = read_dataset_csv(text.as_bytes(), splits.train.y_mean, splits.train.y_std).unwrap();
        assert_eq!(back, splits.valid);
    }

    #[test]
    fn malformed_csv_rejected() {
        for bad in [
            "",
            "x,y,split\n",
            "x,y,z1\n1,2,3\n",
            "x,y,z2,split\n1,2,3,train\n",
            "x,y,z1,split\n1,2,nan,train\n",
            "x,y,z1,split\n1,2,3,train\n1,2,3,test\n",
            "x,y,z1,split\n1,2,3,holdout\n",
            "x,y,z1,split\n",
        ] {
            assert!(read_dataset_csv(bad.as_bytes(), 0.0, 1.0).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ScenarioSpec::new(Scenario::LS, TrueFunction::Abs, 30, 8);
        let splits = generate(&spec).unwrap();
        let paths = write_dataset_files(dir.path(), &spec, &splits).unwrap();
        assert_eq!(paths.len(), 4);
        let (meta, back) = read_dataset_files(dir.path(), &dataset_stem(&spec)).unwrap();
        assert_eq!(meta.seed, 8);
        assert_eq!(back, splits);
    }
}
