//! File formats.
//!
//! A dataset directory holds `labels.csv` (`id,label`, label `1`, `2` or
//! empty) and one `series/<id>.csv` per sample with `T` rows and `p`
//! columns, no header. Simulated datasets add `truth.json`. Floats are
//! written in Rust's shortest round-trip form, so reading a file back gives
//! the same bits.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::{Method, Prediction, TrainedModel};
use crate::dtrace::DifferenceStack;
use crate::error::{Error, Result};
use crate::nll::Priors;
use crate::screening::{rank_frequencies, ScreeningResult};
use crate::simulate::{GroundTruth, SimDesign, GENERATOR_ID};
use crate::spectral::{ClassLabel, FourierGrid, MultivariateSeries};
use crate::tilde::{realify, RealAugmented};
use crate::{CMatrix, RMatrix};

pub const LABELS_FILE: &str = "labels.csv";
pub const SERIES_DIR: &str = "series";
pub const TRUTH_FILE: &str = "truth.json";
pub const MODEL_FORMAT: &str = "specdiff-model";
pub const MODEL_VERSION: u32 = 1;

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn parse_err(path: &Path, line: usize, detail: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        detail: detail.into(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
            parse_err(path, line, format!("expected {expected_len} fields, found {len}"))
        }
        other => parse_err(path, line, format!("{other:?}")),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_all(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn read_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Reads a headerless numeric CSV into a row-major list of rows.
pub fn read_matrix_csv(path: &Path) -> Result<RMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let row = rec
            .iter()
            .enumerate()
            .map(|(c, field)| match field.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                Ok(v) => Err(parse_err(path, line, format!("column {}: non-finite value {v}", c + 1))),
                Err(_) => Err(parse_err(path, line, format!("column {}: not a number: {field:?}", c + 1))),
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(path, 1, "file has no rows"));
    }
    let cols = rows[0].len();
    Ok(RMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn write_matrix_csv(path: &Path, m: &RMatrix) -> Result<()> {
    let mut out = String::new();
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    write_all(path, &out)
}

/// A series file (`T` rows, `p` columns), optionally mean-centered per
/// channel.
pub fn read_series_csv(path: &Path, label: Option<ClassLabel>, center: bool) -> Result<MultivariateSeries> {
    let m = read_matrix_csv(path)?;
    let series = MultivariateSeries::new(m.transpose(), label)
        .map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
    Ok(if center { series.centered() } else { series })
}

pub fn write_series_csv(path: &Path, series: &MultivariateSeries) -> Result<()> {
    write_matrix_csv(path, &series.values().transpose())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelRow {
    pub id: String,
    pub label: Option<ClassLabel>,
}

pub fn read_labels_csv(path: &Path) -> Result<Vec<LabelRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != ["id", "label"] {
        return Err(parse_err(path, 1, format!("expected header id,label, found {:?}", header.as_slice())));
    }
    let mut rows = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let id = rec[0].to_string();
        if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
            return Err(parse_err(path, line, format!("invalid id {id:?}")));
        }
        if !seen.insert(id.clone()) {
            return Err(parse_err(path, line, format!("duplicate id {id:?}")));
        }
        let label = match &rec[1] {
            "" => None,
            "1" => Some(ClassLabel::One),
            "2" => Some(ClassLabel::Two),
            other => return Err(parse_err(path, line, format!("label must be 1, 2 or empty, found {other:?}"))),
        };
        rows.push(LabelRow { id, label });
    }
    Ok(rows)
}

pub fn write_labels_csv(path: &Path, rows: &[LabelRow]) -> Result<()> {
    let mut out = String::from("id,label\n");
    for r in rows {
        let l = r.label.map(|l| l.as_u8().to_string()).unwrap_or_default();
        out.push_str(&format!("{},{l}\n", r.id));
    }
    write_all(path, &out)
}

/// Samples with their ids, in `labels.csv` order.
#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub ids: Vec<String>,
    pub samples: Vec<MultivariateSeries>,
    pub truth: Option<TruthFile>,
}

impl LoadedDataset {
    /// Series length shared by all samples.
    pub fn series_len(&self) -> Result<usize> {
        let t = self.samples.first().ok_or_else(|| Error::input("dataset is empty"))?.len();
        if let Some((i, s)) = self.samples.iter().enumerate().find(|(_, s)| s.len() != t) {
            return Err(Error::input(format!(
                "sample {} has length {}, expected {t}",
                self.ids[i],
                s.len()
            )));
        }
        Ok(t)
    }

    pub fn grid(&self) -> Result<FourierGrid> {
        FourierGrid::new(self.series_len()?)
    }
}

pub fn series_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(SERIES_DIR).join(format!("{id}.csv"))
}

/// Loads a dataset directory; `truth.json` is read when present.
pub fn load_dataset(dir: &Path, center: bool) -> Result<LoadedDataset> {
    let rows = read_labels_csv(&dir.join(LABELS_FILE))?;
    if rows.is_empty() {
        return Err(Error::input(format!("{} lists no samples", dir.join(LABELS_FILE).display())));
    }
    let samples = crate::par::try_map_slice(&rows, |r| read_series_csv(&series_path(dir, &r.id), r.label, center))?;
    let truth_path = dir.join(TRUTH_FILE);
    let truth = if truth_path.exists() { Some(read_truth(&truth_path)?) } else { None };
    Ok(LoadedDataset {
        ids: rows.into_iter().map(|r| r.id).collect(),
        samples,
        truth,
    })
}

/// Ids `s0000`, `s0001`, ... wide enough for `n`.
pub fn default_ids(n: usize) -> Vec<String> {
    let width = n.saturating_sub(1).to_string().len().max(4);
    (0..n).map(|i| format!("s{i:0width$}")).collect()
}

pub fn write_dataset(dir: &Path, ids: &[String], samples: &[MultivariateSeries], truth: Option<&TruthFile>) -> Result<()> {
    if ids.len() != samples.len() {
        return Err(Error::dim("one id per sample required"));
    }
    fs::create_dir_all(dir.join(SERIES_DIR)).map_err(|e| Error::io(dir, e))?;
    let rows: Vec<LabelRow> = ids
        .iter()
        .zip(samples)
        .map(|(id, s)| LabelRow {
            id: id.clone(),
            label: s.label(),
        })
        .collect();
    write_labels_csv(&dir.join(LABELS_FILE), &rows)?;
    crate::par::try_map_indexed(samples.len(), |i| write_series_csv(&series_path(dir, &ids[i]), &samples[i]))?;
    if let Some(t) = truth {
        write_json(&dir.join(TRUTH_FILE), t)?;
    }
    Ok(())
}

/// Contents of `truth.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub generator: String,
    pub design: SimDesign,
    pub truth: GroundTruth,
}

impl TruthFile {
    pub fn new(design: SimDesign, truth: GroundTruth) -> Self {
        TruthFile {
            generator: GENERATOR_ID.to_string(),
            design,
            truth,
        }
    }
}

pub fn read_truth(path: &Path) -> Result<TruthFile> {
    read_json(path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    write_all(path, &text)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_string(path)?).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// A complex `p x p` matrix as row-major real and imaginary blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub k: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl FrameRecord {
    pub fn from_augmented(k: usize, m: &RealAugmented) -> Self {
        let c = m.complexify();
        let p = c.nrows();
        let mut re = Vec::with_capacity(p * p);
        let mut im = Vec::with_capacity(p * p);
        for i in 0..p {
            for j in 0..p {
                re.push(c[(i, j)].re);
                im.push(c[(i, j)].im);
            }
        }
        FrameRecord { k, re, im }
    }

    pub fn to_augmented(&self, p: usize) -> Result<RealAugmented> {
        if self.re.len() != p * p || self.im.len() != p * p {
            return Err(Error::input(format!("frame k={} does not hold {p}x{p} blocks", self.k)));
        }
        let c = CMatrix::from_fn(p, p, |i, j| nalgebra::Complex::new(self.re[i * p + j], self.im[i * p + j]));
        Ok(realify(&c))
    }
}

/// On-disk model layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub method: Method,
    pub p: usize,
    #[serde(rename = "T")]
    pub series_len: usize,
    pub n_freq: usize,
    pub bandwidth: usize,
    pub lambda: f64,
    pub priors: Priors,
    pub screening: ScreeningResult,
    pub sdm1: Vec<FrameRecord>,
    pub stack: Vec<FrameRecord>,
}

impl ModelFile {
    pub fn from_model(model: &TrainedModel) -> Self {
        let frames = |f: &[RealAugmented]| f.iter().enumerate().map(|(i, m)| FrameRecord::from_augmented(i + 1, m)).collect();
        ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            method: model.method,
            p: model.channels(),
            series_len: model.series_len,
            n_freq: model.stack().len(),
            bandwidth: model.bandwidth,
            lambda: model.lambda,
            priors: model.priors(),
            screening: model.screening.clone(),
            sdm1: frames(model.sdm1()),
            stack: frames(model.stack().frames()),
        }
    }

    pub fn into_model(self) -> Result<TrainedModel> {
        if self.format != MODEL_FORMAT || self.version != MODEL_VERSION {
            return Err(Error::input(format!(
                "unsupported model format {} version {}",
                self.format, self.version
            )));
        }
        let unpack = |frames: &[FrameRecord], what: &str| -> Result<Vec<RealAugmented>> {
            if frames.len() != self.n_freq || frames.iter().enumerate().any(|(i, f)| f.k != i + 1) {
                return Err(Error::input(format!("{what} must list k = 1..={} in order", self.n_freq)));
            }
            frames.iter().map(|f| f.to_augmented(self.p)).collect()
        };
        let sdm1 = unpack(&self.sdm1, "sdm1")?;
        let stack = DifferenceStack::new(unpack(&self.stack, "stack")?)?;
        let priors = Priors::new(self.priors.pi1, self.priors.pi2)?;
        TrainedModel::new(
            self.method,
            self.series_len,
            self.bandwidth,
            self.lambda,
            priors,
            sdm1,
            stack,
            self.screening,
        )
    }
}

pub fn write_model(path: &Path, model: &TrainedModel) -> Result<()> {
    write_json(path, &ModelFile::from_model(model))
}

pub fn read_model(path: &Path) -> Result<TrainedModel> {
    read_json::<ModelFile>(path)?
        .into_model()
        .map_err(|e| Error::input(format!("{}: {e}", path.display())))
}

/// `k,omega,d_k,rank,selected`, rank 1 being the largest norm.
pub fn write_screening_csv(path: &Path, screening: &ScreeningResult, grid: &FourierGrid) -> Result<()> {
    let mut rank = vec![0; screening.d.len()];
    for (r, k) in rank_frequencies(&screening.d).into_iter().enumerate() {
        rank[k - 1] = r + 1;
    }
    let mut out = String::from("k,omega,d_k,rank,selected\n");
    for (i, d) in screening.d.iter().enumerate() {
        let k = i + 1;
        out.push_str(&format!(
            "{k},{},{},{},{}\n",
            fmt_f64(grid.omega(k)),
            fmt_f64(*d),
            rank[i],
            u8::from(screening.is_selected(k))
        ));
    }
    write_all(path, &out)
}

/// `id,label,score,posterior`.
pub fn write_predictions_csv(path: &Path, ids: &[String], preds: &[Prediction]) -> Result<()> {
    if ids.len() != preds.len() {
        return Err(Error::dim("one id per prediction required"));
    }
    let mut out = String::from("id,label,score,posterior\n");
    for (id, p) in ids.iter().zip(preds) {
        out.push_str(&format!("{id},{},{},{}\n", p.label.as_u8(), fmt_f64(p.score), fmt_f64(p.posterior)));
    }
    write_all(path, &out)
}

/// 8-bit grayscale levels of `m`, row-major, scaled linearly so the minimum
/// maps to 0 and the maximum to 255. A constant matrix maps to all zeros.
pub fn grayscale_levels(m: &RMatrix) -> Vec<u8> {
    let (lo, hi) = (m.min(), m.max());
    let span = hi - lo;
    let mut out = Vec::with_capacity(m.len());
    for row in m.row_iter() {
        for &v in row.iter() {
            let level = if span > 0.0 { (255.0 * (v - lo) / span).round() } else { 0.0 };
            out.push(level as u8);
        }
    }
    out
}

/// Plain (ASCII) PGM rendering of `m`.
pub fn write_pgm(path: &Path, m: &RMatrix, title: &str) -> Result<()> {
    let levels = grayscale_levels(m);
    let mut out = String::from("P2\n");
    out.push_str(&format!("# {title}\n"));
    out.push_str(&format!(
        "# row-major; level = round(255 * (v - min) / (max - min)), min = {}, max = {}; constant matrix -> 0\n",
        fmt_f64(m.min()),
        fmt_f64(m.max())
    ));
    out.push_str(&format!("{} {}\n255\n", m.ncols(), m.nrows()));
    for row in levels.chunks(m.ncols().max(1)) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    write_all(path, &out)
}
