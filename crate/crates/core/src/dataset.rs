//! Labelled sample files: a `label,f0,...,f{d-1}` header followed by one
//! comma-separated record per sample, features in `[0, 1]`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Tensor,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Self {
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.samples.first().map(|s| s.x.len())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse {
                location, message, ..
            } => Error::Parse {
                file: path.display().to_string(),
                location,
                message,
            },
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let parse_err = |location: String, message: String| Error::Parse {
            file: "<dataset>".into(),
            location,
            message,
        };
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = reader
            .headers()
            .map_err(|e| parse_err("line 1".into(), e.to_string()))?
            .clone();
        if header.is_empty() || &header[0] != "label" {
            return Err(parse_err("line 1".into(), "header must start with `label`".into()));
        }
        let dim = header.len() - 1;
        for (i, name) in header.iter().skip(1).enumerate() {
            if name != format!("f{i}") {
                return Err(parse_err(
                    "line 1".into(),
                    format!("expected column f{i}, found {name:?}"),
                ));
            }
        }
        if dim == 0 {
            return Err(parse_err("line 1".into(), "no feature columns".into()));
        }
        let mut samples = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                parse_err(format!("line {line}"), e.to_string())
            })?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let loc = |col: usize| format!("line {line} column {col}");
            let label: usize = record[0]
                .parse()
                .map_err(|_| parse_err(loc(0), format!("bad label {:?}", &record[0])))?;
            let mut x = Vec::with_capacity(dim);
            for c in 1..record.len() {
                let v: f64 = record[c]
                    .parse()
                    .map_err(|_| parse_err(loc(c), format!("bad feature {:?}", &record[c])))?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(parse_err(loc(c), format!("feature {v} outside [0, 1]")));
                }
                x.push(v);
            }
            samples.push(Sample {
                x: Tensor::vector(x)?,
                label,
            });
        }
        Ok(Self { samples })
    }

    pub fn to_csv(&self) -> String {
        let dim = self.dim().unwrap_or(0);
        let mut out = String::from("label");
        for i in 0..dim {
            out.push_str(&format!(",f{i}"));
        }
        out.push('\n');
        for s in &self.samples {
            out.push_str(&s.label.to_string());
            for v in s.x.as_slice() {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Checks labels and dimensions against a model.
    pub fn check_against(&self, input_dim: usize, num_classes: usize) -> Result<()> {
        for (i, s) in self.samples.iter().enumerate() {
            if s.x.len() != input_dim {
                return Err(Error::InvalidDataset(format!(
                    "sample {i}: {} features, model expects {input_dim}",
                    s.x.len()
                )));
            }
            if s.label >= num_classes {
                return Err(Error::InvalidDataset(format!(
                    "sample {i}: label {} out of range for {num_classes} classes",
                    s.label
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_roundtrip() {
        let text = "label,f0,f1\n0,0.25,1\n1,0,0.5\n";
        let d = Dataset::parse(text).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.samples[1].label, 1);
        assert_eq!(d.samples[0].x.as_slice(), &[0.25, 1.0]);
        assert_eq!(Dataset::parse(&d.to_csv()).unwrap(), d);
    }

    #[test]
    fn rejects_out_of_range_feature() {
        let err = Dataset::parse("label,f0\n0,1.5\n").unwrap_err();
        assert!(err.to_string().contains("outside"), "{err}");
    }

    #[test]
    fn rejects_bad_header() {
        assert!(Dataset::parse("y,f0\n0,0.5\n").is_err());
        assert!(Dataset::parse("label,f1\n0,0.5\n").is_err());
    }

    #[test]
    fn rejects_ragged_rows() {
        assert!(Dataset::parse("label,f0,f1\n0,0.5\n").is_err());
    }
}
