use std::path::Path;

use super::{Dataset, Task};
use crate::error::{Error, Result};
use crate::nn::{Target, Tensor};

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => parse_err(path, line, format!("{other:?}")),
    }
}

/// Reads a classification dataset with header `f0,...,fN,label`.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let header = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names.last() != Some(&"label") {
        return Err(parse_err(
            path,
            1,
            format!("header '{}' must end with a 'label' column", names.join(",")),
        ));
    }
    let dim = names.len() - 1;
    if dim == 0 {
        return Err(parse_err(path, 1, "header has no feature columns"));
    }
    if let Some((i, bad)) = names[..dim].iter().enumerate().find(|(i, n)| **n != format!("f{i}")) {
        return Err(parse_err(path, 1, format!("column {i} is '{bad}', expected 'f{i}'")));
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != dim + 1 {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, found {}", dim + 1, record.len()),
            ));
        }
        for (i, field) in record.iter().take(dim).enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(path, line, format!("f{i}: '{field}' is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, format!("f{i}: non-finite value")));
            }
            data.push(v);
        }
        let label = &record[dim];
        labels.push(
            label
                .trim()
                .parse::<usize>()
                .map_err(|_| parse_err(path, line, format!("label '{label}' is not a class index")))?,
        );
    }
    if labels.is_empty() {
        return Err(parse_err(path, 2, "file has no samples"));
    }
    let classes = labels.iter().max().map_or(1, |m| m + 1);
    Dataset::new(
        Tensor::new(vec![labels.len(), dim], data)?,
        Target::Classes(labels),
        Task::Classification { classes },
    )
}

/// Writes a flat classification dataset in the format read by [`load_csv`].
/// Values use the shortest representation that parses back bitwise.
pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let Target::Classes(labels) = ds.targets() else {
        return Err(Error::InvalidArgument(
            "only classification datasets can be saved as CSV".into(),
        ));
    };
    let dim: usize = ds.sample_shape().iter().product();
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header: Vec<String> = (0..dim).map(|i| format!("f{i}")).collect();
    header.push("label".into());
    writer.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (row, label) in ds.inputs().data().chunks(dim).zip(labels) {
        let mut fields: Vec<String> = row.iter().map(f64::to_string).collect();
        fields.push(label.to_string());
        writer.write_record(&fields).map_err(|e| csv_err(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}
