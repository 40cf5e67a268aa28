//! Text and binary formats: point lists, fields with a JSON sidecar.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gff::{Field, SamplingMethod};
use crate::lattice::{Point, WalkModel, Window};

#[derive(Debug, Error, PartialEq)]
pub enum FormatError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("empty point list")]
    Empty,
    #[error("field data has {got} bytes, expected {expected}")]
    Length { got: usize, expected: usize },
    #[error("field value {index} is not finite")]
    NotFinite { index: usize },
    #[error("sidecar: {0}")]
    Sidecar(String),
}

/// Parses integer coordinate pairs, one per line, separated by whitespace
/// or a comma. Blank lines and `#` comments are skipped.
pub fn parse_points(text: &str) -> Result<Vec<Point>, FormatError> {
    let mut points = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| FormatError::Line { line: i + 1, message };
        let fields: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
        if fields.len() != 2 {
            return Err(err(format!("expected two integers, found {}", fields.len())));
        }
        let mut p = [0i64; 2];
        for (slot, f) in p.iter_mut().zip(&fields) {
            *slot = f.parse().map_err(|e| err(format!("'{f}': {e}")))?;
            if slot.unsigned_abs() > 1 << 40 {
                return Err(err(format!("coordinate {f} out of range")));
            }
        }
        points.push(p);
    }
    Ok(points)
}

/// A non-empty point list in path order.
pub fn parse_path(text: &str) -> Result<Vec<Point>, FormatError> {
    let path = parse_points(text)?;
    if path.is_empty() {
        return Err(FormatError::Empty);
    }
    Ok(path)
}

pub fn format_points(points: &[Point]) -> String {
    points.iter().map(|p| format!("{} {}\n", p[0], p[1])).collect()
}

/// Metadata stored next to a raw field file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSidecar {
    pub rows: usize,
    pub cols: usize,
    /// Always `"f64le"`, row-major from the lower-left corner.
    pub dtype: String,
    pub mass_scale: u64,
    pub window: Window,
    pub method: SamplingMethod,
    pub seed: u64,
}

pub const FIELD_DTYPE: &str = "f64le";

impl FieldSidecar {
    pub fn of(field: &Field) -> Self {
        Self {
            rows: field.window.side,
            cols: field.window.side,
            dtype: FIELD_DTYPE.into(),
            mass_scale: field.model.mass_scale(),
            window: field.window,
            method: field.method,
            seed: field.seed,
        }
    }

    pub fn parse(text: &str) -> Result<Self, FormatError> {
        let sidecar: Self = serde_json::from_str(text).map_err(|e| FormatError::Sidecar(e.to_string()))?;
        sidecar.validate()?;
        Ok(sidecar)
    }

    pub fn validate(&self) -> Result<(), FormatError> {
        if self.dtype != FIELD_DTYPE {
            return Err(FormatError::Sidecar(format!("unsupported dtype '{}'", self.dtype)));
        }
        if self.rows != self.window.side || self.cols != self.window.side {
            return Err(FormatError::Sidecar(format!(
                "{}×{} does not match window side {}",
                self.rows, self.cols, self.window.side
            )));
        }
        WalkModel::new(self.mass_scale).map_err(|e| FormatError::Sidecar(e.to_string()))?;
        Window::new(self.window.kind, self.window.side, self.window.center)
            .map_err(|e| FormatError::Sidecar(e.to_string()))?;
        Ok(())
    }
}

pub fn encode_field(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Decodes raw little-endian doubles, checking the count against the sidecar.
pub fn decode_field(bytes: &[u8], sidecar: &FieldSidecar) -> Result<Field, FormatError> {
    sidecar.validate()?;
    let expected = sidecar.rows.checked_mul(sidecar.cols).and_then(|n| n.checked_mul(8)).unwrap_or(usize::MAX);
    if bytes.len() != expected {
        return Err(FormatError::Length { got: bytes.len(), expected });
    }
    let values: Vec<f64> =
        bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(FormatError::NotFinite { index });
    }
    Ok(Field {
        window: sidecar.window,
        model: WalkModel::new(sidecar.mass_scale).map_err(|e| FormatError::Sidecar(e.to_string()))?,
        values,
        seed: sidecar.seed,
        method: sidecar.method,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gff::sample_field;

    #[test]
    fn points_round_trip() {
        let pts = vec![[0, 0], [-3, 17], [1 << 30, -(1 << 30)]];
        assert_eq!(parse_points(&format_points(&pts)).unwrap(), pts);
        assert_eq!(parse_points("# header\n1, 2\n\n 3\t4 # tail\n").unwrap(), vec![[1, 2], [3, 4]]);
    }

    #[test]
    fn bad_lines_are_located() {
        assert_eq!(
            parse_points("1 2\n3\n"),
            Err(FormatError::Line { line: 2, message: "expected two integers, found 1".into() })
        );
        assert!(matches!(parse_points("1 x"), Err(FormatError::Line { line: 1, .. })));
        assert_eq!(parse_path("# nothing\n"), Err(FormatError::Empty));
    }

    #[test]
    fn field_round_trip() {
        let model = WalkModel::new(4).unwrap();
        let window = Window::torus(8).unwrap();
        let field = sample_field(&model, &window, 3, SamplingMethod::Spectral).unwrap();
        let sidecar = FieldSidecar::parse(&serde_json::to_string(&FieldSidecar::of(&field)).unwrap()).unwrap();
        let back = decode_field(&encode_field(&field.values), &sidecar).unwrap();
        assert_eq!(back, field);
        assert!(matches!(decode_field(&[0; 16], &sidecar), Err(FormatError::Length { .. })));
    }
}
