//! Linear layers, MLPs and layer normalization over a [`Graph`].

use rand_chacha::ChaCha8Rng;

use super::{rng_from_seed, Graph, Matrix, NumericsError, ParamId, ParamStore, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

/// Affine map `x W + b` with `W: in x out`, `b: 1 x out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, NumericsError> {
        let weight = store.insert_uniform(&format!("{name}.weight"), input, output, input, rng)?;
        let bias = store.insert_uniform(&format!("{name}.bias"), 1, output, input, rng)?;
        Ok(Self {
            weight,
            bias,
            input,
            output,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, NumericsError> {
        let cols = g.value(x).cols();
        if cols != self.input {
            return Err(NumericsError::Shape(format!(
                "linear {} expects {} input columns, got {cols}",
                store.name(self.weight),
                self.input
            )));
        }
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let xw = g.matmul(x, w)?;
        g.add_row(xw, b)
    }
}

/// Layer widths (input first) with one activation per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub seed: u64,
}

impl MlpSpec {
    /// ReLU between layers, no activation on the output.
    pub fn relu_hidden(widths: &[usize], seed: u64) -> Self {
        let n = widths.len().saturating_sub(1);
        let activations = (0..n)
            .map(|i| if i + 1 < n { Activation::Relu } else { Activation::None })
            .collect();
        Self {
            widths: widths.to_vec(),
            activations,
            seed,
        }
    }

    fn validate(&self) -> Result<(), NumericsError> {
        if self.widths.len() < 2 {
            return Err(NumericsError::Contract("an MLP needs at least one layer".into()));
        }
        if self.widths.contains(&0) {
            return Err(NumericsError::Contract("MLP widths must be positive".into()));
        }
        if self.activations.len() != self.widths.len() - 1 {
            return Err(NumericsError::Contract(format!(
                "{} activations for {} layers",
                self.activations.len(),
                self.widths.len() - 1
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<(Linear, Activation)>,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, spec: &MlpSpec) -> Result<Self, NumericsError> {
        spec.validate()?;
        let mut rng = rng_from_seed(spec.seed);
        let layers = spec
            .widths
            .windows(2)
            .zip(&spec.activations)
            .enumerate()
            .map(|(i, (w, act))| Ok((Linear::new(store, &format!("{name}.{i}"), w[0], w[1], &mut rng)?, *act)))
            .collect::<Result<_, NumericsError>>()?;
        Ok(Self { layers })
    }

    pub fn output(&self) -> usize {
        self.layers.last().map_or(0, |(l, _)| l.output)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, NumericsError> {
        let mut h = x;
        for (layer, act) in &self.layers {
            h = layer.forward(g, store, h)?;
            if *act == Activation::Relu {
                h = g.relu(h);
            }
        }
        Ok(h)
    }
}

/// Builds an MLP from `spec` into `store` and applies it to a constant input.
pub fn mlp_forward(spec: &MlpSpec, store: &mut ParamStore, name: &str, x: &Matrix) -> Result<Matrix, NumericsError> {
    let mlp = Mlp::new(store, name, spec)?;
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let y = mlp.forward(&mut g, store, xv)?;
    Ok(g.value(y).clone())
}

/// Gain/bias pair for [`Graph::layer_norm`], initialised to ones and zeros.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Result<Self, NumericsError> {
        Ok(Self {
            gain: store.insert(&format!("{name}.gain"), Matrix::filled(1, width, 1.0))?,
            bias: store.insert(&format!("{name}.bias"), Matrix::zeros(1, width))?,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var, NumericsError> {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        g.layer_norm(x, gain, bias)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_layer_passes_input_through() {
        let mut store = ParamStore::new();
        let spec = MlpSpec {
            widths: vec![3, 3],
            activations: vec![Activation::None],
            seed: 1,
        };
        let mlp = Mlp::new(&mut store, "m", &spec).unwrap();
        *store.value_mut(mlp.layers[0].0.weight) = Matrix::identity(3);
        *store.value_mut(mlp.layers[0].0.bias) = Matrix::zeros(1, 3);
        let x = Matrix::from_rows(&[[1.0, -2.0, 3.0], [0.5, 0.0, 9.0]]).unwrap();
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = mlp.forward(&mut g, &store, xv).unwrap();
        assert_eq!(g.value(y), &x);
    }

    #[test]
    fn zero_weights_broadcast_bias() {
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", &MlpSpec::relu_hidden(&[2, 3], 4)).unwrap();
        *store.value_mut(mlp.layers[0].0.weight) = Matrix::zeros(2, 3);
        *store.value_mut(mlp.layers[0].0.bias) = Matrix::row_vector(&[1.0, 2.0, 3.0]);
        let mut g = Graph::new();
        let xv = g.constant(Matrix::filled(4, 2, 8.0));
        let y = mlp.forward(&mut g, &store, xv).unwrap();
        for r in g.value(y).iter_rows() {
            assert_eq!(r, &[1.0, 2.0, 3.0]);
        }
    }

    #[test]
    fn width_mismatch_is_shape_error() {
        let mut store = ParamStore::new();
        let spec = MlpSpec::relu_hidden(&[4, 2], 0);
        let err = mlp_forward(&spec, &mut store, "m", &Matrix::zeros(1, 3)).unwrap_err();
        assert!(matches!(err, NumericsError::Shape(_)));
    }

    #[test]
    fn empty_spec_is_rejected() {
        let mut store = ParamStore::new();
        let spec = MlpSpec {
            widths: vec![4],
            activations: vec![],
            seed: 0,
        };
        assert!(Mlp::new(&mut store, "m", &spec).is_err());
    }
}
