//! File formats: prediction and label CSVs, JSON documents with fixed
//! 17-significant-digit floats.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::ser::Formatter;

use crate::dataset::LabeledPredictions;
use crate::error::{Error, Result};

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn reader(path: &Path, header: bool) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, message: message.into() }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, csv::Position::line);
    parse_error(path, line, e.to_string())
}

/// Reads an `n x C` probability matrix: one row per line, comma separated.
/// Returns the row-major values and `C`.
pub fn read_probs(path: &Path, header: bool) -> Result<(Vec<f64>, usize)> {
    let mut rdr = reader(path, header)?;
    let mut values = Vec::new();
    let mut classes = None;
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, csv::Position::line);
        if record.iter().all(str::is_empty) {
            continue;
        }
        let width = *classes.get_or_insert(record.len());
        if record.len() != width {
            return Err(parse_error(path, line, format!("expected {width} columns, found {}", record.len())));
        }
        for field in &record {
            let x: f64 = field
                .parse()
                .map_err(|_| parse_error(path, line, format!("not a number: {field:?}")))?;
            values.push(x);
        }
    }
    match classes {
        Some(c) => Ok((values, c)),
        None => Err(parse_error(path, 1, "no prediction rows")),
    }
}

/// Reads one non-negative integer label per line.
pub fn read_labels(path: &Path, header: bool) -> Result<Vec<usize>> {
    let mut rdr = reader(path, header)?;
    let mut labels = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, csv::Position::line);
        if record.iter().all(str::is_empty) {
            continue;
        }
        if record.len() != 1 {
            return Err(parse_error(path, line, format!("expected 1 column, found {}", record.len())));
        }
        let y: usize = record[0]
            .parse()
            .map_err(|_| parse_error(path, line, format!("not a class index: {:?}", &record[0])))?;
        labels.push(y);
    }
    Ok(labels)
}

pub fn read_predictions(probs: &Path, labels_path: &Path, header: bool) -> Result<LabeledPredictions> {
    let (values, classes) = read_probs(probs, header)?;
    let labels = read_labels(labels_path, header)?;
    let rows = values.len() / classes;
    if rows != labels.len() {
        return Err(Error::Validation(format!(
            "{} has {rows} rows but {} has {} labels",
            probs.display(),
            labels_path.display(),
            labels.len()
        )));
    }
    LabeledPredictions::new(values, labels, classes).map_err(|e| match e {
        Error::Domain(m) => Error::Validation(m),
        other => other,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

/// Writes a probability matrix as CSV with shortest round-trip decimals.
pub fn write_probs(path: &Path, probs: &[f64], classes: usize) -> Result<()> {
    let mut w = create(path)?;
    let res: io::Result<()> = (|| {
        for row in probs.chunks_exact(classes) {
            for (j, x) in row.iter().enumerate() {
                if j > 0 {
                    w.write_all(b",")?;
                }
                write!(w, "{x:?}")?;
            }
            w.write_all(b"\n")?;
        }
        w.flush()
    })();
    res.map_err(io_err(path))
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut w = create(path)?;
    let res: io::Result<()> = (|| {
        for y in labels {
            writeln!(w, "{y}")?;
        }
        w.flush()
    })();
    res.map_err(io_err(path))
}

/// Writes arbitrary text (already formatted CSV, reports).
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(io_err(path))
}

/// Compact JSON formatter printing every float with 17 significant digits.
struct SigDigits;

impl Formatter for SigDigits {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }
}

/// Serializes `value` as one line of JSON with 17-significant-digit floats.
pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SigDigits);
    value.serialize(&mut ser).expect("in-memory JSON serialization");
    String::from_utf8(buf).expect("JSON is UTF-8")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = to_json_string(value);
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(io_err(path))?;
    serde_json::from_reader(io::BufReader::new(file)).map_err(|source| Error::Json { path: path.to_path_buf(), source })
}

/// `path` with its extension replaced (or appended) by `ext`.
pub fn sibling(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}
