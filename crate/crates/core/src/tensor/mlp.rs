use super::params::{InitKind, ParamSpec, ParamStore};
use super::tape::{Tape, Var};
use super::Scalar;
use crate::error::{config_err, Result};

/// Layer-norm epsilon, shared with the feature normalizers.
pub const LAYER_NORM_EPS: f64 = 1e-8;

/// Shape of a ReLU MLP: `sizes = [input, hidden.., output]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpSpec {
    pub sizes: Vec<usize>,
    pub layer_norm: bool,
    /// Adds the raw input to the (normalized) output.
    pub residual: bool,
}

impl MlpSpec {
    pub fn new(input: usize, hidden: usize, hidden_layers: usize, output: usize) -> Self {
        let mut sizes = vec![input];
        sizes.extend(std::iter::repeat_n(hidden, hidden_layers));
        sizes.push(output);
        Self {
            sizes,
            layer_norm: true,
            residual: false,
        }
    }

    pub fn without_norm(mut self) -> Self {
        self.layer_norm = false;
        self
    }

    pub fn with_residual(mut self) -> Self {
        self.residual = true;
        self
    }

    pub fn input_width(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.sizes.last().expect("mlp has at least one layer")
    }
}

/// An MLP bound to parameter ids inside a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    weights: Vec<usize>,
    biases: Vec<usize>,
    norm: Option<(usize, usize)>,
}

impl Mlp {
    /// Appends the parameter declarations for `spec` under `prefix`; ids are
    /// positions in `specs`.
    pub fn declare(spec: MlpSpec, prefix: &str, specs: &mut Vec<ParamSpec>) -> Result<Self> {
        if spec.sizes.len() < 2 {
            return config_err(format!(
                "{prefix}: an MLP needs at least input and output sizes"
            ));
        }
        if spec.residual && spec.input_width() != spec.output_width() {
            return config_err(format!(
                "{prefix}: residual MLP needs equal widths, got {} -> {}",
                spec.input_width(),
                spec.output_width()
            ));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (k, pair) in spec.sizes.windows(2).enumerate() {
            weights.push(specs.len());
            specs.push(ParamSpec {
                name: format!("{prefix}.w{k}"),
                shape: vec![pair[0], pair[1]],
                init: InitKind::Glorot,
            });
            biases.push(specs.len());
            specs.push(ParamSpec {
                name: format!("{prefix}.b{k}"),
                shape: vec![pair[1]],
                init: InitKind::Zeros,
            });
        }
        let norm = if spec.layer_norm {
            let out = spec.output_width();
            let g = specs.len();
            specs.push(ParamSpec {
                name: format!("{prefix}.ln_gamma"),
                shape: vec![out],
                init: InitKind::Ones,
            });
            specs.push(ParamSpec {
                name: format!("{prefix}.ln_beta"),
                shape: vec![out],
                init: InitKind::Zeros,
            });
            Some((g, g + 1))
        } else {
            None
        };
        Ok(Self {
            spec,
            weights,
            biases,
            norm,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn param_ids(&self) -> Vec<usize> {
        let mut ids = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            ids.push(*w);
            ids.push(*b);
        }
        if let Some((g, b)) = self.norm {
            ids.push(g);
            ids.push(b);
        }
        ids
    }

    /// Id of the last weight matrix.
    pub fn final_weight(&self) -> usize {
        *self.weights.last().expect("non-empty")
    }

    pub fn final_bias(&self) -> usize {
        *self.biases.last().expect("non-empty")
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        input: Var,
    ) -> Result<Var> {
        let width = tape.value(input).cols();
        if width != self.spec.input_width() {
            return config_err(format!(
                "MLP expects input width {}, got {width}",
                self.spec.input_width()
            ));
        }
        let last = self.weights.len() - 1;
        let mut h = input;
        for (k, (&w, &b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let wv = tape.param(store, w);
            let bv = tape.param(store, b);
            h = tape.linear(h, wv, bv)?;
            if k < last {
                h = tape.relu(h);
            }
        }
        if let Some((g, b)) = self.norm {
            let gv = tape.param(store, g);
            let bv = tape.param(store, b);
            h = tape.layer_norm(h, gv, bv, LAYER_NORM_EPS)?;
        }
        if self.spec.residual {
            h = tape.add(h, input)?;
        }
        Ok(h)
    }
}
