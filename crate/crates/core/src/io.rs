//! CSV and JSON artifact I/O.
//!
//! Datasets are CSV with a required header row: the first `d_0` columns are
//! the input, the remaining `d_L` columns the label vector. Feature dumps are
//! CSV with one vector per row. Lines starting with `#` are comments, which is
//! where writers put provenance metadata.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::neuralnet::LabeledDataset;

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input)
}

fn io_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Numeric rows of a headed CSV; row numbers in errors count the header as 1.
pub fn read_matrix<R: Read>(input: R, context: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = reader(input);
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::parse(context, 1, e))?
        .iter()
        .map(str::to_owned)
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::parse(context, 1, "missing header row"));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| {
            let row = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(context, row, e)
        })?;
        let row = rec.position().map_or(rows.len() + 2, |p| p.line() as usize);
        if rec.len() != header.len() {
            return Err(Error::parse(
                context,
                row,
                format!("expected {} columns, found {}", header.len(), rec.len()),
            ));
        }
        let values = rec
            .iter()
            .enumerate()
            .map(|(col, t)| {
                t.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    Error::parse(context, row, format!("column {}: not a finite number: {t:?}", col + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(values);
    }
    Ok((header, rows))
}

pub fn write_matrix<W: Write>(out: W, header: &[String], rows: &[Vec<f64>], comments: &[String]) -> Result<()> {
    let mut out = out;
    for c in comments {
        for line in c.lines() {
            writeln!(out, "# {line}")?;
        }
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header).map_err(io_err)?;
    for row in rows {
        w.write_record(row.iter().map(f64::to_string)).map_err(io_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(input: R, input_dim: usize) -> Result<LabeledDataset> {
    let (header, rows) = read_matrix(input, "dataset")?;
    if header.len() <= input_dim {
        return Err(Error::parse(
            "dataset",
            1,
            format!(
                "{} columns cannot hold a {input_dim}-dimensional input and a label",
                header.len()
            ),
        ));
    }
    let (inputs, labels) = rows
        .into_iter()
        .map(|mut r| {
            let y = r.split_off(input_dim);
            (r, y)
        })
        .unzip();
    LabeledDataset::new(inputs, labels)
}

pub fn write_dataset<W: Write>(out: W, data: &LabeledDataset, comments: &[String]) -> Result<()> {
    let d0 = data.input_dim().unwrap_or(0);
    let dl = data.label_dim().unwrap_or(0);
    let mut header: Vec<String> = (1..=d0).map(|i| format!("x{i}")).collect();
    header.extend((1..=dl).map(|i| format!("y{i}")));
    let rows: Vec<Vec<f64>> = data
        .inputs
        .iter()
        .zip(&data.labels)
        .map(|(x, y)| x.iter().chain(y).copied().collect())
        .collect();
    write_matrix(out, &header, &rows, comments)
}

pub fn read_features<R: Read>(input: R) -> Result<Vec<Vec<f64>>> {
    read_matrix(input, "features").map(|(_, rows)| rows)
}

pub fn write_features<W: Write>(out: W, features: &[Vec<f64>], comments: &[String]) -> Result<()> {
    let d = features.first().map_or(0, Vec::len);
    let header: Vec<String> = (1..=d).map(|i| format!("f{i}")).collect();
    write_matrix(out, &header, features, comments)
}

pub fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let f = fs::File::create(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    Ok(std::io::BufWriter::new(f))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(std::io::BufReader::new(open(path)?))?)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_round_trip_with_comments() {
        let data = LabeledDataset::from_classes(vec![vec![0.5, -1.25], vec![3.0, 0.1]], &[1, 0], 2).unwrap();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &data, &["seed 3\nmore".into()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# seed 3\n# more\nx1,x2,y1,y2\n"));
        assert_eq!(read_dataset(buf.as_slice(), 2).unwrap(), data);
    }

    #[test]
    fn malformed_row_reports_its_line() {
        let text = "x1,y1,y2\n0.5,1,0\n0.1,zero,1\n";
        match read_dataset(text.as_bytes(), 1) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
        let short = "x1,y1,y2\n0.5,1\n";
        assert!(matches!(
            read_dataset(short.as_bytes(), 1),
            Err(Error::Parse { row: 2, .. })
        ));
    }

    #[test]
    fn label_must_be_distribution() {
        let text = "x1,y1,y2\n0.5,0.7,0.7\n";
        assert!(read_dataset(text.as_bytes(), 1).is_err());
    }

    #[test]
    fn features_round_trip() {
        let f = vec![vec![0.1, 0.2, 0.30000000000000004], vec![1e-17, 5.0, 6.0]];
        let mut buf = Vec::new();
        write_features(&mut buf, &f, &[]).unwrap();
        assert_eq!(read_features(buf.as_slice()).unwrap(), f);
    }
}
