//! Dataset ingestion (IDX, CSV vectors) and report/plot emission.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mc::ComparisonReport;
use crate::postprocess::ErrorBarSet;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

pub const REPORT_FORMAT: &str = "ekfprop-report";
pub const REPORT_VERSION: u32 = 1;

/// Input vectors with components in `[0, 1]` and their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub vectors: Vec<DVector<f64>>,
    pub labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(vectors: Vec<DVector<f64>>, labels: Vec<usize>) -> Result<Self> {
        if vectors.len() != labels.len() {
            return Err(Error::shape(format!("{} vectors but {} labels", vectors.len(), labels.len())));
        }
        Ok(LabeledDataset { vectors, labels })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Items `offset..offset+limit`, clipped to the dataset end.
    pub fn slice(&self, offset: usize, limit: Option<usize>) -> LabeledDataset {
        let start = offset.min(self.len());
        let end = limit.map_or(self.len(), |l| start.saturating_add(l).min(self.len()));
        LabeledDataset { vectors: self.vectors[start..end].to_vec(), labels: self.labels[start..end].to_vec() }
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path).and_then(|mut f| f.read_to_end(&mut raw)).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&GZIP_MAGIC) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out).map_err(|e| Error::format(path, format!("gzip: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(path, "truncated IDX header"))
}

/// Reads an IDX image/label pair (optionally gzip-compressed). Pixels are
/// scaled by 1/255 and images flattened row-major.
pub fn read_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = read_maybe_gz(ip)?;
    let labels = read_maybe_gz(lp)?;

    let magic = be_u32(&images, 0, ip)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(ip, format!("bad IDX image magic {magic:#010x}")));
    }
    let count = be_u32(&images, 4, ip)? as usize;
    let rows = be_u32(&images, 8, ip)? as usize;
    let cols = be_u32(&images, 12, ip)? as usize;
    let pixels = rows * cols;
    let body = &images[16..];
    if body.len() != count * pixels {
        return Err(Error::format(
            ip,
            format!("expected {} pixel bytes for {count} images, found {}", count * pixels, body.len()),
        ));
    }

    let magic = be_u32(&labels, 0, lp)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(lp, format!("bad IDX label magic {magic:#010x}")));
    }
    let label_count = be_u32(&labels, 4, lp)? as usize;
    let label_body = &labels[8..];
    if label_body.len() != label_count {
        return Err(Error::format(lp, format!("expected {label_count} label bytes, found {}", label_body.len())));
    }
    if label_count != count {
        return Err(Error::shape(format!("{count} images but {label_count} labels")));
    }

    let vectors = body
        .chunks_exact(pixels.max(1))
        .take(count)
        .map(|img| DVector::from_iterator(pixels, img.iter().map(|&b| f64::from(b) / 255.0)))
        .collect();
    LabeledDataset::new(vectors, label_body.iter().map(|&b| usize::from(b)).collect())
}

/// Writes an IDX pair from raw bytes. Files ending in `.gz` are compressed.
pub fn write_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    rows: usize,
    cols: usize,
    images: &[Vec<u8>],
    labels: &[u8],
) -> Result<()> {
    if images.len() != labels.len() || images.iter().any(|i| i.len() != rows * cols) {
        return Err(Error::shape("image bytes do not match the declared shape or label count"));
    }
    let mut img = Vec::with_capacity(16 + images.len() * rows * cols);
    for v in [IDX_IMAGES_MAGIC, images.len() as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    images.iter().for_each(|i| img.extend_from_slice(i));
    let mut lab = Vec::with_capacity(8 + labels.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    write_maybe_gz(images_path.as_ref(), &img)?;
    write_maybe_gz(labels_path.as_ref(), &lab)
}

fn write_maybe_gz(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let result = if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(file, Compression::default());
        enc.write_all(bytes).and_then(|_| enc.finish().map(|_| ()))
    } else {
        let mut w = BufWriter::new(file);
        w.write_all(bytes).and_then(|_| w.flush())
    };
    result.map_err(|e| Error::io(path, e))
}

/// Reads headerless CSV rows of equal arity as vectors.
pub fn read_vectors_csv(path: impl AsRef<Path>) -> Result<Vec<DVector<f64>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(BufReader::new(file));
    let mut out = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::format(path, e.to_string()))?;
        let values = record
            .iter()
            .enumerate()
            .map(|(col, cell)| {
                cell.parse::<f64>().map_err(|_| {
                    Error::format(path, format!("row {}, column {}: {cell:?} is not a number", row_idx + 1, col + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push(DVector::from_vec(values));
    }
    if out.is_empty() {
        return Err(Error::format(path, "no rows"));
    }
    Ok(out)
}

pub fn write_vectors_csv(vectors: &[DVector<f64>], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w =
        csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for v in vectors {
        w.write_record(v.iter().map(|x| x.to_string())).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// A dense matrix stored as nested rows with its shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixDoc {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Vec<f64>>,
}

impl From<&DMatrix<f64>> for MatrixDoc {
    fn from(m: &DMatrix<f64>) -> Self {
        MatrixDoc {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.row_iter().map(|r| r.iter().copied().collect()).collect(),
        }
    }
}

impl MatrixDoc {
    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows || self.data.iter().any(|r| r.len() != self.cols) {
            return Err(Error::shape(format!(
                "matrix document declares {}x{} but holds different data",
                self.rows, self.cols
            )));
        }
        Ok(DMatrix::from_fn(self.rows, self.cols, |i, j| self.data[i][j]))
    }
}

/// Output belief plus derived error bars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationSection {
    pub output_mean: Vec<f64>,
    pub output_cov: MatrixDoc,
    pub sigma_raw: Vec<f64>,
    pub sigma_truncated: Vec<f64>,
    pub sigma_mult: f64,
    pub truncate: bool,
    pub bar_low: Vec<f64>,
    pub bar_high: Vec<f64>,
}

impl PropagationSection {
    pub fn new(cov: &DMatrix<f64>, bars: &ErrorBarSet) -> Self {
        PropagationSection {
            output_mean: bars.center.iter().copied().collect(),
            output_cov: cov.into(),
            sigma_raw: bars.sigma_raw.iter().copied().collect(),
            sigma_truncated: bars.sigma_truncated.iter().copied().collect(),
            sigma_mult: bars.multiplier,
            truncate: bars.truncated,
            bar_low: bars.bar_low.iter().copied().collect(),
            bar_high: bars.bar_high.iter().copied().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSection {
    pub samples: usize,
    pub mean: Vec<f64>,
    pub cov: MatrixDoc,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSection {
    pub ekf_std: Vec<f64>,
    pub mc_std: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmse: Option<Vec<f64>>,
    pub stats: ComparisonReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseSection {
    pub label: usize,
    pub count: usize,
    pub rmse: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ekf_std: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub variance: f64,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSection {
    pub curves: Vec<SweepCurve>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmse: Option<Vec<f64>>,
}

/// Machine-readable result of one CLI command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format: String,
    pub version: u32,
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    /// Scalar diagonal of `Σ₀` when it was given by variance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_variance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Calibration sample count behind `Q`, when process noise was used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sample_count: Option<usize>,
    /// Role → path of every input file.
    pub files: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp_unix: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub propagation: Option<PropagationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monte_carlo: Option<MonteCarloSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<ComparisonSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmse: Option<RmseSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

impl Report {
    pub fn new(command: impl Into<String>) -> Self {
        Report {
            format: REPORT_FORMAT.to_string(),
            version: REPORT_VERSION,
            command: command.into(),
            mode: None,
            input_variance: None,
            seed: None,
            noise_sample_count: None,
            files: BTreeMap::new(),
            timestamp_unix: None,
            propagation: None,
            monte_carlo: None,
            comparison: None,
            rmse: None,
            sweep: None,
        }
    }
}

pub fn write_report(report: &Report, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, report).map_err(|e| Error::format(path, e.to_string()))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_report(path: impl AsRef<Path>) -> Result<Report> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let report: Report =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::format(path, e.to_string()))?;
    if report.format != REPORT_FORMAT {
        return Err(Error::format(path, format!("unexpected format tag {:?}", report.format)));
    }
    Ok(report)
}

/// Error-bar plot data: one row per output component.
pub fn write_plot_data(bars: &ErrorBarSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let wrap = |e: csv::Error| Error::format(path, e.to_string());
    w.write_record(["index", "prediction", "sigma_raw", "sigma_truncated", "bar_low", "bar_high"]).map_err(wrap)?;
    for i in 0..bars.center.len() {
        w.write_record([
            i.to_string(),
            bars.center[i].to_string(),
            bars.sigma_raw[i].to_string(),
            bars.sigma_truncated[i].to_string(),
            bars.bar_low[i].to_string(),
            bars.bar_high[i].to_string(),
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Named per-component series side by side: `index,<name>,...`.
pub fn write_series_csv(series: &[(String, Vec<f64>)], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let len = series.first().map_or(0, |(_, v)| v.len());
    if series.iter().any(|(_, v)| v.len() != len) {
        return Err(Error::shape("plot series have differing lengths"));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let wrap = |e: csv::Error| Error::format(path, e.to_string());
    let header: Vec<&str> = std::iter::once("index").chain(series.iter().map(|(n, _)| n.as_str())).collect();
    w.write_record(&header).map_err(wrap)?;
    for i in 0..len {
        let row: Vec<String> =
            std::iter::once(i.to_string()).chain(series.iter().map(|(_, v)| v[i].to_string())).collect();
        w.write_record(&row).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
