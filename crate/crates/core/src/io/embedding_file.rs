//! Embedding point files: CSV with header `x,y,z,label` (one coordinate
//! column per embedded dimension).

use std::io::{Read, Write};
use std::path::Path;

use super::IoError;
use crate::analytics::EmbeddingResult;
use crate::types::Intent;

const AXES: [&str; 3] = ["x", "y", "z"];

pub fn write_points<W: Write>(points: &[Vec<f64>], labels: &[Intent], out: W) -> Result<(), IoError> {
    let dims = points.first().map_or(3, Vec::len);
    if dims > AXES.len() {
        return Err(IoError::Invalid(format!("{dims} embedded dimensions, at most 3 supported")));
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = AXES[..dims].to_vec();
    header.push("label");
    w.write_record(&header).map_err(|e| IoError::Invalid(e.to_string()))?;
    for (p, label) in points.iter().zip(labels) {
        let mut row: Vec<String> = p.iter().map(|v| v.to_string()).collect();
        row.push(label.as_str().to_string());
        w.write_record(&row).map_err(|e| IoError::Invalid(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_embedding(result: &EmbeddingResult, path: &Path) -> Result<(), IoError> {
    let file = std::fs::File::create(path).map_err(IoError::file(path))?;
    write_points(&result.points, &result.labels, std::io::BufWriter::new(file))
}

pub fn read_points<R: Read>(input: R) -> Result<(Vec<Vec<f64>>, Vec<Intent>), IoError> {
    let mut r = csv::Reader::from_reader(input);
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| IoError::Invalid(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let n = record.len();
        if n < 2 {
            return Err(IoError::malformed(line, "expected coordinates and a label"));
        }
        let coords = (0..n - 1)
            .map(|i| record[i].parse::<f64>().map_err(|e| IoError::malformed(line, e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let label = record[n - 1].parse::<Intent>().map_err(|e| IoError::malformed(line, e.to_string()))?;
        points.push(coords);
        labels.push(label);
    }
    Ok((points, labels))
}
