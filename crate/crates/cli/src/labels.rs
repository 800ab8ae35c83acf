//! Frame label files: a `FRAMES <hop-seconds> <C>` header, then one line per
//! frame of `C` symbols from `{0, 1, -}`, where `-` marks an unannotated cell.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use nmfseg::neural::LabelMatrix;

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct LabelFile {
    pub hop_seconds: f64,
    /// `C × T`; zero where unannotated.
    pub values: Array2<u8>,
    /// `C × T`.
    pub annotated: Array2<bool>,
}

impl LabelFile {
    pub fn classes(&self) -> usize {
        self.values.nrows()
    }

    pub fn frames(&self) -> usize {
        self.values.ncols()
    }

    /// Class-level mask for the loss: a class is annotated when every frame
    /// is, and masked when no frame is. Partial annotation is rejected.
    pub fn to_label_matrix(&self, path: &Path) -> Result<LabelMatrix, CliError> {
        let mut mask = Vec::with_capacity(self.classes());
        for (c, row) in self.annotated.rows().into_iter().enumerate() {
            let n = row.iter().filter(|&&a| a).count();
            if n != 0 && n != row.len() {
                return Err(CliError::format(
                    path,
                    format!("class {c} is annotated on {n} of {} frames", row.len()),
                ));
            }
            mask.push(n == row.len());
        }
        LabelMatrix::new(self.values.clone(), mask).map_err(|e| CliError::format(path, e.to_string()))
    }
}

pub fn format_labels(values: &Array2<u8>, annotated: Option<&Array2<bool>>, hop_seconds: f64) -> String {
    let (c, t) = values.dim();
    let mut out = String::with_capacity(16 + t * 2 * c);
    let _ = writeln!(out, "FRAMES {hop_seconds} {c}");
    for f in 0..t {
        for k in 0..c {
            if k > 0 {
                out.push(' ');
            }
            let known = annotated.is_none_or(|a| a[[k, f]]);
            out.push(match (known, values[[k, f]]) {
                (false, _) => '-',
                (true, 0) => '0',
                _ => '1',
            });
        }
        out.push('\n');
    }
    out
}

pub fn write_labels(
    path: &Path,
    values: &Array2<u8>,
    annotated: Option<&Array2<bool>>,
    hop_seconds: f64,
) -> Result<(), CliError> {
    fs::write(path, format_labels(values, annotated, hop_seconds)).map_err(|e| CliError::io(path, e))
}

pub fn parse_labels(text: &str, path: &Path) -> Result<LabelFile, CliError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| CliError::format(path, "empty label file"))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    let (hop_seconds, classes) = match parts.as_slice() {
        ["FRAMES", hop, c] => (
            hop.parse::<f64>().ok().filter(|h| *h > 0.0 && h.is_finite()),
            c.parse::<usize>().ok().filter(|c| *c > 0),
        ),
        _ => (None, None),
    };
    let (Some(hop_seconds), Some(classes)) = (hop_seconds, classes) else {
        return Err(CliError::format(path, format!("bad header {header:?}")));
    };
    let mut values = Vec::new();
    let mut annotated = Vec::new();
    let mut frames = 0;
    for (i, line) in lines.enumerate() {
        let symbols: Vec<&str> = line.split_whitespace().collect();
        if symbols.len() != classes {
            return Err(CliError::format(
                path,
                format!("line {}: expected {classes} symbols, found {}", i + 2, symbols.len()),
            ));
        }
        for s in symbols {
            let (v, a) = match s {
                "0" => (0, true),
                "1" => (1, true),
                "-" => (0, false),
                other => {
                    return Err(CliError::format(path, format!("line {}: bad symbol {other:?}", i + 2)))
                }
            };
            values.push(v);
            annotated.push(a);
        }
        frames += 1;
    }
    // Stored frame-major; transpose into C × T.
    let values = Array2::from_shape_vec((frames, classes), values).unwrap().reversed_axes();
    let annotated = Array2::from_shape_vec((frames, classes), annotated).unwrap().reversed_axes();
    Ok(LabelFile {
        hop_seconds,
        values: values.as_standard_layout().to_owned(),
        annotated: annotated.as_standard_layout().to_owned(),
    })
}

pub fn read_labels(path: &Path) -> Result<LabelFile, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_labels(&text, path)
}
