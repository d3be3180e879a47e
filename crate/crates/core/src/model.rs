//! Dense/ReLU classifier with exact reverse-mode input gradients.
//!
//! Models are immutable after construction and can be shared freely across
//! attack workers; every evaluation allocates its own scratch buffers.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{self, LossKind};
use crate::tensor::{argmax, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum LayerSpec {
    /// `out = weights · in + bias`, with `weights` stored as `[out_dim][in_dim]`.
    Dense {
        weights: Vec<Vec<f64>>,
        bias: Vec<f64>,
    },
    #[serde(rename = "ReLU")]
    Relu,
}

impl LayerSpec {
    pub fn dense(weights: Vec<Vec<f64>>, bias: Vec<f64>) -> Self {
        LayerSpec::Dense { weights, bias }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel")]
pub struct ModelSpec {
    layers: Vec<LayerSpec>,
    input_dim: usize,
    num_classes: usize,
}

#[derive(Deserialize)]
struct RawModel {
    layers: Vec<LayerSpec>,
    input_dim: usize,
    num_classes: usize,
}

impl TryFrom<RawModel> for ModelSpec {
    type Error = Error;

    fn try_from(raw: RawModel) -> Result<Self> {
        ModelSpec::new(raw.layers, raw.input_dim, raw.num_classes)
    }
}

/// Loss value, input gradient and logits at one input point.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub logits: Vec<f64>,
    pub loss: f64,
    pub gradient: Vec<f64>,
}

impl ModelSpec {
    pub fn new(layers: Vec<LayerSpec>, input_dim: usize, num_classes: usize) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidModel("input_dim must be positive".into()));
        }
        if num_classes < 2 {
            return Err(Error::InvalidModel(format!(
                "num_classes must be at least 2, got {num_classes}"
            )));
        }
        let mut width = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            if let LayerSpec::Dense { weights, bias } = layer {
                if weights.is_empty() || weights.len() != bias.len() {
                    return Err(Error::InvalidModel(format!(
                        "layers[{i}]: {} weight rows but {} bias entries",
                        weights.len(),
                        bias.len()
                    )));
                }
                if let Some((r, row)) = weights.iter().enumerate().find(|(_, r)| r.len() != width) {
                    return Err(Error::InvalidModel(format!(
                        "layers[{i}].weights[{r}]: expected {width} columns, got {}",
                        row.len()
                    )));
                }
                let finite = weights.iter().flatten().chain(bias).all(|v| v.is_finite());
                if !finite {
                    return Err(Error::InvalidModel(format!(
                        "layers[{i}]: non-finite parameter"
                    )));
                }
                width = bias.len();
            }
        }
        if width != num_classes {
            return Err(Error::InvalidModel(format!(
                "final layer width {width} does not match num_classes {num_classes}"
            )));
        }
        Ok(Self {
            layers,
            input_dim,
            num_classes,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::Shape {
                expected: vec![self.input_dim],
                got: vec![x.len()],
            });
        }
        Ok(())
    }

    /// Raw logits (no softmax).
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 1 {
            return Err(Error::Shape {
                expected: vec![self.input_dim],
                got: x.shape().to_vec(),
            });
        }
        let logits = self.logits(x.as_slice())?;
        Tensor::vector(logits)
    }

    /// Slice-level forward pass.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut act = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            act = apply(layer, &act);
            if act.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericLayer { layer: i });
            }
        }
        Ok(act)
    }

    pub fn predict(&self, x: &Tensor) -> Result<usize> {
        Ok(argmax(self.forward(x)?.as_slice()))
    }

    /// Attack loss at `x` and its exact gradient with respect to `x`.
    ///
    /// The ReLU derivative at a zero pre-activation is taken to be 0.
    pub fn input_gradient(&self, x: &Tensor, y: usize, loss: LossKind) -> Result<(f64, Tensor)> {
        let eval = self.evaluate(x.as_slice(), y, loss)?;
        Ok((eval.loss, Tensor::new(x.shape().to_vec(), eval.gradient)?))
    }

    /// Forward and backward pass in one go; the attack loop uses this directly.
    pub fn evaluate(&self, x: &[f64], y: usize, loss: LossKind) -> Result<Evaluation> {
        self.check_input(x)?;
        if y >= self.num_classes {
            return Err(Error::Contract(format!(
                "label {y} out of range for {} classes",
                self.num_classes
            )));
        }
        // inputs[i] is the input to layer i
        let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len() + 1);
        inputs.push(x.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let out = apply(layer, inputs.last().expect("non-empty"));
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericLayer { layer: i });
            }
            inputs.push(out);
        }
        let logits = inputs.pop().expect("non-empty");
        let value = loss::loss_value(loss, &logits, y);
        let mut grad = loss::loss_grad_logits(loss, &logits, y);

        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &inputs[i];
            grad = match layer {
                LayerSpec::Dense { weights, .. } => {
                    let mut g = vec![0.0; input.len()];
                    for (row, &go) in weights.iter().zip(&grad) {
                        if go == 0.0 {
                            continue;
                        }
                        for (gi, &w) in g.iter_mut().zip(row) {
                            *gi += w * go;
                        }
                    }
                    g
                }
                LayerSpec::Relu => grad
                    .iter()
                    .zip(input)
                    .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
                    .collect(),
            };
            if grad.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericLayer { layer: i });
            }
        }
        if !value.is_finite() {
            return Err(Error::NumericLayer {
                layer: self.layers.len(),
            });
        }
        Ok(Evaluation {
            logits,
            loss: value,
            gradient: grad,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("model serialises");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
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

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            let inner = e.into_inner();
            Error::Parse {
                file: "<model>".into(),
                location: format!("{field} (line {} column {})", inner.line(), inner.column()),
                message: inner.to_string(),
            }
        })
    }
}

fn apply(layer: &LayerSpec, input: &[f64]) -> Vec<f64> {
    match layer {
        LayerSpec::Dense { weights, bias } => weights
            .iter()
            .zip(bias)
            .map(|(row, &b)| b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>())
            .collect(),
        LayerSpec::Relu => input.iter().map(|&z| if z > 0.0 { z } else { 0.0 }).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity2() -> ModelSpec {
        ModelSpec::new(
            vec![LayerSpec::dense(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0])],
            2,
            2,
        )
        .unwrap()
    }

    #[test]
    fn identity_forward() {
        let m = identity2();
        let x = Tensor::vector(vec![0.3, 0.7]).unwrap();
        assert_eq!(m.forward(&x).unwrap().as_slice(), &[0.3, 0.7]);
        assert_eq!(m.predict(&x).unwrap(), 1);
    }

    #[test]
    fn single_class_rejected() {
        let r = ModelSpec::new(vec![LayerSpec::dense(vec![vec![1.0, -1.0]], vec![0.5])], 2, 1);
        assert!(matches!(r, Err(Error::InvalidModel(_))));
    }

    #[test]
    fn inconsistent_dims_rejected() {
        let r = ModelSpec::new(
            vec![LayerSpec::dense(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0])],
            3,
            2,
        );
        assert!(r.is_err());
        let r = ModelSpec::new(vec![LayerSpec::dense(vec![vec![1.0]], vec![0.0, 1.0])], 1, 2);
        assert!(r.is_err());
    }

    #[test]
    fn shape_error_on_wrong_input() {
        let m = identity2();
        let x = Tensor::vector(vec![0.1, 0.2, 0.3]).unwrap();
        assert!(matches!(m.forward(&x), Err(Error::Shape { .. })));
    }

    #[test]
    fn tie_predicts_lowest_index() {
        let m = identity2();
        let x = Tensor::vector(vec![0.5, 0.5]).unwrap();
        assert_eq!(m.predict(&x).unwrap(), 0);
    }

    #[test]
    fn linear_ll_gradient_is_weight_difference() {
        let w0 = vec![0.5, -1.0, 2.0];
        let w1 = vec![-0.25, 3.0, 1.0];
        let m = ModelSpec::new(
            vec![LayerSpec::dense(vec![w0.clone(), w1.clone()], vec![0.1, -0.2])],
            3,
            2,
        )
        .unwrap();
        for x in [[0.1, 0.2, 0.3], [0.9, 0.5, 0.0]] {
            let x = Tensor::vector(x.to_vec()).unwrap();
            let (_, g) = m.input_gradient(&x, 0, LossKind::LL).unwrap();
            let expect: Vec<f64> = w0.iter().zip(&w1).map(|(a, b)| a - b).collect();
            assert_eq!(g.as_slice(), expect.as_slice());
            let (_, g) = m.input_gradient(&x, 1, LossKind::LL).unwrap();
            let expect: Vec<f64> = w0.iter().zip(&w1).map(|(a, b)| b - a).collect();
            assert_eq!(g.as_slice(), expect.as_slice());
        }
    }

    #[test]
    fn relu_kink_uses_zero_subgradient() {
        // hidden pre-activation is exactly 0 at x = 0.5
        let m = ModelSpec::new(
            vec![
                LayerSpec::dense(vec![vec![2.0]], vec![-1.0]),
                LayerSpec::Relu,
                LayerSpec::dense(vec![vec![1.0], vec![-1.0]], vec![0.0, 0.0]),
            ],
            1,
            2,
        )
        .unwrap();
        let x = Tensor::vector(vec![0.5]).unwrap();
        let (v, g) = m.input_gradient(&x, 0, LossKind::LL).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(g.as_slice(), &[0.0]);
        let x = Tensor::vector(vec![0.75]).unwrap();
        let (_, g) = m.input_gradient(&x, 0, LossKind::LL).unwrap();
        assert_eq!(g.as_slice(), &[4.0]);
    }

    #[test]
    fn label_out_of_range() {
        let m = identity2();
        let x = Tensor::vector(vec![0.5, 0.5]).unwrap();
        assert!(m.input_gradient(&x, 2, LossKind::CE).is_err());
    }

    #[test]
    fn overflow_reports_layer() {
        let m = ModelSpec::new(
            vec![
                LayerSpec::dense(vec![vec![1e300], vec![1e300]], vec![0.0, 0.0]),
                LayerSpec::dense(vec![vec![1e300, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0]),
            ],
            1,
            2,
        )
        .unwrap();
        let x = Tensor::vector(vec![1.0]).unwrap();
        match m.forward(&x) {
            Err(Error::NumericLayer { layer }) => assert_eq!(layer, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_json_reports_field_path() {
        let text = r#"{"layers":[{"kind":"Dense","weights":[[1.0,"x"]],"bias":[0.0]}],"input_dim":2,"num_classes":2}"#;
        match ModelSpec::from_json(text) {
            Err(Error::Parse { location, .. }) => assert!(location.contains("layers[0]"), "{location}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_structure_is_rejected_on_load() {
        let text = r#"{"layers":[{"kind":"Dense","weights":[[1.0,2.0]],"bias":[0.0]}],"input_dim":2,"num_classes":2}"#;
        assert!(ModelSpec::from_json(text).is_err());
    }
}
