//! On-disk formats: manifests, run configuration, series CSVs and JSON documents.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use funbipart::em::EmConfig;
use funbipart::signal::{AlignedSeries, CycleBand, MultivariateSeries};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MANIFEST_VERSION: &str = "1";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Shortest round-trip scientific notation, e.g. `1.25e-1`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:e}")
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// JSON formatter that writes every float in scientific notation.
struct Scientific<'a>(serde_json::ser::PrettyFormatter<'a>);

impl serde_json::ser::Formatter for Scientific<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        write!(writer, "{value:e}")
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(
        &mut out,
        Scientific(serde_json::ser::PrettyFormatter::with_indent(b"  ")),
    );
    value
        .serialize(&mut ser)
        .expect("in-memory JSON serialization cannot fail");
    out.push(b'\n');
    out
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_bytes(path, &to_json(value))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_input(path)?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.to_owned(),
        source,
    })
}

/// Reads a file named on the command line; a missing file is a usage error.
pub fn read_input(path: &Path) -> Result<String> {
    if !path.is_file() {
        return Err(CliError::Usage(format!("{}: no such file", path.display())));
    }
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_owned(),
        source,
    })
}

/// Writes rows of string fields as RFC 4180 CSV.
pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let csv_err = |source| CliError::Csv {
        path: path.to_owned(),
        source,
    };
    let mut w = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::Necessary)
        .from_writer(Vec::new());
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io {
        path: path.to_owned(),
        source: e.into_error(),
    })?;
    write_bytes(path, &bytes)
}

pub fn strings<I: IntoIterator<Item = S>, S: Into<String>>(items: I) -> Vec<String> {
    items.into_iter().map(Into::into).collect()
}

/// Lowercase hex SHA-256 of the canonical JSON form of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let digest = Sha256::digest(to_json(value));
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    #[default]
    Raw,
    /// Filtered, trimmed and cropped to a cycle start; periods are known.
    Aligned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectEntry {
    pub id: String,
    pub csv_path: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub covariates: BTreeMap<String, f64>,
    /// Required for aligned archives.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period_frames: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: String,
    pub sample_rate_hz: f64,
    pub dim_names: Vec<String>,
    pub alignment_dim: String,
    #[serde(default)]
    pub stage: Stage,
    pub subjects: Vec<SubjectEntry>,
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        let usage = |m: String| Err(CliError::Usage(m));
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return usage(format!(
                "sample_rate_hz must be positive, got {}",
                self.sample_rate_hz
            ));
        }
        if self.dim_names.is_empty() {
            return usage("manifest lists no dimensions".into());
        }
        if !self.dim_names.contains(&self.alignment_dim) {
            return usage(format!(
                "alignment_dim {:?} is not one of the dimensions",
                self.alignment_dim
            ));
        }
        if self.subjects.is_empty() {
            return usage("manifest lists no subjects".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.subjects {
            if !seen.insert(s.id.as_str()) {
                return usage(format!("duplicate subject id {:?}", s.id));
            }
            if self.stage == Stage::Aligned && !s.period_frames.is_some_and(|p| p > 0.0) {
                return usage(format!("aligned subject {:?} has no period", s.id));
            }
        }
        Ok(())
    }

    pub fn alignment_index(&self) -> usize {
        self.dim_names
            .iter()
            .position(|d| d == &self.alignment_dim)
            .expect("validated manifest")
    }
}

/// A manifest and the directory its CSV paths are relative to.
#[derive(Debug, Clone)]
pub struct Archive {
    pub manifest: Manifest,
    pub root: PathBuf,
}

impl Archive {
    /// Accepts a manifest file or a directory containing `manifest.json`.
    pub fn open(path: &Path) -> Result<Self> {
        let file = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_owned()
        };
        let manifest: Manifest = read_json(&file)?;
        manifest.validate()?;
        let root = file.parent().map(Path::to_owned).unwrap_or_default();
        Ok(Self { manifest, root })
    }

    pub fn load(&self, subject: &SubjectEntry) -> Result<MultivariateSeries<f64>> {
        let path = self.root.join(&subject.csv_path);
        read_series_csv(&path, &subject.id, &self.manifest)
    }

    pub fn load_aligned(&self, subject: &SubjectEntry) -> Result<AlignedSeries<f64>> {
        let series = self.load(subject)?;
        let period_frames = subject
            .period_frames
            .ok_or_else(|| CliError::Usage(format!("subject {:?} has no period", subject.id)))?;
        Ok(AlignedSeries {
            series,
            period_frames,
            alignment_dim: self.manifest.alignment_index(),
        })
    }
}

/// Reads a `t,<dim_1>,…,<dim_J>` file; columns are matched by name.
pub fn read_series_csv(
    path: &Path,
    id: &str,
    manifest: &Manifest,
) -> Result<MultivariateSeries<f64>> {
    if !path.is_file() {
        return Err(CliError::Data(format!(
            "subject {id}: {} not found",
            path.display()
        )));
    }
    let csv_err = |source| CliError::Csv {
        path: path.to_owned(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = reader.headers().map_err(csv_err)?.clone();
    if header.get(0) != Some("t") {
        return Err(CliError::Data(format!(
            "{}: first column must be t",
            path.display()
        )));
    }
    let columns = manifest
        .dim_names
        .iter()
        .map(|d| {
            header
                .iter()
                .position(|h| h == d)
                .ok_or_else(|| CliError::Data(format!("{}: missing column {d:?}", path.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut channels = vec![Vec::new(); columns.len()];
    let mut last_t = f64::NEG_INFINITY;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let parse = |c: usize| -> Result<f64> {
            let field = record.get(c).unwrap_or("");
            field.trim().parse::<f64>().map_err(|_| {
                CliError::Data(format!(
                    "{}: row {}: cannot parse {field:?}",
                    path.display(),
                    row + 2
                ))
            })
        };
        let t = parse(0)?;
        if !(t > last_t) {
            return Err(CliError::Data(format!(
                "{}: time column is not increasing at row {}",
                path.display(),
                row + 2
            )));
        }
        last_t = t;
        for (ch, &c) in channels.iter_mut().zip(&columns) {
            ch.push(parse(c)?);
        }
    }
    Ok(MultivariateSeries::new(
        id,
        channels,
        manifest.sample_rate_hz,
        manifest.dim_names.clone(),
    )?)
}

pub fn write_series_csv(path: &Path, series: &MultivariateSeries<f64>) -> Result<()> {
    let mut header = vec!["t".to_string()];
    header.extend(series.dim_names.iter().cloned());
    let rows: Vec<Vec<String>> = (0..series.n_frames())
        .map(|t| {
            let mut row = vec![fmt_f64(t as f64 / series.sample_rate_hz)];
            row.extend(series.channels.iter().map(|c| fmt_f64(c[t])));
            row
        })
        .collect();
    write_csv(path, &header, &rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Preprocessing {
    pub lowpass_hz: f64,
    pub lowpass_order: usize,
    pub trim_seconds: f64,
    pub bandpass: CycleBand,
}

impl Default for Preprocessing {
    fn default() -> Self {
        Self {
            lowpass_hz: 10.0,
            lowpass_order: 2,
            trim_seconds: 1.0,
            bandpass: CycleBand::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Degrees {
    pub signal_candidates: Vec<usize>,
    pub residual_candidates: Vec<usize>,
    /// Subjects used for degree selection; all when empty.
    pub reference_subjects: Vec<String>,
}

impl Default for Degrees {
    fn default() -> Self {
        Self {
            signal_candidates: (12..=18).collect(),
            residual_candidates: (8..=12).collect(),
            reference_subjects: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub k_max: usize,
    pub l_max: usize,
}

impl Default for Grid {
    fn default() -> Self {
        Self { k_max: 3, l_max: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preprocessing: Preprocessing,
    pub degrees: Degrees,
    pub em: EmConfig,
    pub grid: Grid,
    pub output_dir: Option<String>,
    pub grid_size: usize,
    pub diagnostics_level: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preprocessing: Preprocessing::default(),
            degrees: Degrees::default(),
            em: EmConfig::default(),
            grid: Grid::default(),
            output_dir: None,
            grid_size: funbipart::metrics::DEFAULT_GRID_SIZE,
            diagnostics_level: 0.05,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let config = match path {
            Some(p) => read_json(p)?,
            None => Self::default(),
        };
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let usage = |m: &str| Err(CliError::Usage(m.into()));
        if self.degrees.signal_candidates.is_empty() || self.degrees.residual_candidates.is_empty()
        {
            return usage("degree candidate lists must not be empty");
        }
        if self.grid.k_max == 0 || self.grid.l_max == 0 {
            return usage("k_max and l_max must be at least 1");
        }
        if self.grid_size < 2 {
            return usage("grid_size must be at least 2");
        }
        if !(self.diagnostics_level > 0.0 && self.diagnostics_level < 1.0) {
            return usage("diagnostics_level must lie in (0, 1)");
        }
        self.em
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))
    }

    /// Output directory: the flag wins over the config file.
    pub fn output_dir(&self, flag: Option<&Path>) -> Result<PathBuf> {
        flag.map(Path::to_owned)
            .or_else(|| self.output_dir.as_ref().map(PathBuf::from))
            .ok_or_else(|| CliError::Usage("no output directory: pass --out".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_through_json() {
        let values = vec![0.1, -1.0 / 3.0, 1e-300, 12345.678, f64::MIN_POSITIVE, 0.0];
        let text = to_json(&values);
        let back: Vec<f64> = serde_json::from_slice(&text).unwrap();
        assert_eq!(values, back);
        assert!(String::from_utf8(text).unwrap().contains("1e-1"));
    }

    #[test]
    fn config_defaults_and_unknown_fields() {
        let c: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus": 1}"#).is_err());
        let c: RunConfig =
            serde_json::from_str(r#"{"em": {"c": 2.5}, "grid": {"k_max": 2, "l_max": 4}}"#)
                .unwrap();
        assert_eq!(c.grid.l_max, 4);
        assert_eq!(config_hash(&c), config_hash(&c.clone()));
        assert_ne!(config_hash(&c), config_hash(&RunConfig::default()));
    }
}
