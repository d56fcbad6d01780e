use super::matrix::Matrix;
use super::rng::SeededRng;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Flat views over a parameter (or gradient) collection, in a fixed order.
pub trait Parameters {
    fn slices(&self) -> Vec<&[f64]>;
    fn slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    fn to_flat(&self) -> Vec<f64> {
        self.slices().concat()
    }

    fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let total = self.num_params();
        if flat.len() != total {
            return Err(Error::shape("flat parameter vector", total, flat.len()));
        }
        let mut offset = 0;
        for s in self.slices_mut() {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        }
        Ok(())
    }

    /// Order-sensitive hash of the exact parameter bits.
    fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for s in self.slices() {
            for v in s {
                h ^= v.to_bits();
                h = h.wrapping_mul(0x0000_0100_0000_01b3).rotate_left(5);
            }
            h ^= s.len() as u64;
        }
        h
    }
}

/// Multilayer perceptron: affine layers, hidden activations, identity output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_dims: Vec<usize>,
    /// `weights[i]` has shape `layer_dims[i+1] x layer_dims[i]`.
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    activations: Vec<Activation>,
}

/// Everything [`Mlp::backward`] needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    fingerprint: u64,
    layer_dims: Vec<usize>,
    inputs: Vec<Matrix>,
    pre_activations: Vec<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl Mlp {
    /// Zero-initialised network; hidden layers use `hidden`, the last layer is identity.
    pub fn zeros(layer_dims: &[usize], hidden: Activation) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(Error::Config(format!(
                "mlp needs at least two positive layer sizes, got {layer_dims:?}"
            )));
        }
        let n = layer_dims.len() - 1;
        let weights = (0..n)
            .map(|i| Matrix::zeros(layer_dims[i + 1], layer_dims[i]))
            .collect();
        let biases = (0..n).map(|i| vec![0.0; layer_dims[i + 1]]).collect();
        let activations = (0..n)
            .map(|i| if i + 1 == n { Activation::Identity } else { hidden })
            .collect();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            activations,
        })
    }

    /// He-scaled Gaussian weights (Xavier for non-relu layers) and biases
    /// uniform in `±1/sqrt(fan_in)`, so a zero input does not map to zero.
    pub fn random(layer_dims: &[usize], hidden: Activation, rng: &mut SeededRng) -> Result<Self> {
        let mut mlp = Self::zeros(layer_dims, hidden)?;
        for ((w, b), act) in mlp.weights.iter_mut().zip(&mut mlp.biases).zip(&mlp.activations) {
            let fan_in = w.cols() as f64;
            let gain = if *act == Activation::Relu { 2.0 } else { 1.0 };
            let std = (gain / fan_in).sqrt();
            for v in w.data_mut() {
                *v = std * rng.normal();
            }
            let bound = fan_in.sqrt().recip();
            for v in b.iter_mut() {
                *v = bound * (2.0 * rng.uniform() - 1.0);
            }
        }
        Ok(mlp)
    }

    pub fn from_parts(
        weights: Vec<Matrix>,
        biases: Vec<Vec<f64>>,
        hidden: Activation,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::shape(
                "mlp layers",
                format!("{} bias vectors", weights.len()),
                biases.len(),
            ));
        }
        let mut dims = vec![weights[0].cols()];
        for (i, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.cols() != *dims.last().unwrap() {
                return Err(Error::shape(
                    format!("layer {i} weight columns"),
                    dims.last().unwrap(),
                    w.cols(),
                ));
            }
            if b.len() != w.rows() {
                return Err(Error::shape(format!("layer {i} bias"), w.rows(), b.len()));
            }
            dims.push(w.rows());
        }
        let mut mlp = Self::zeros(&dims, hidden)?;
        mlp.weights = weights;
        mlp.biases = biases;
        Ok(mlp)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn hidden_activation(&self) -> Activation {
        if self.activations.len() > 1 {
            self.activations[0]
        } else {
            Activation::Identity
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn forward(&self, input: &Matrix) -> Result<(Matrix, ForwardCache)> {
        if input.cols() != self.input_dim() {
            return Err(Error::shape(
                "mlp input",
                format!("? x {}", self.input_dim()),
                format!("{} x {}", input.rows(), input.cols()),
            ));
        }
        let mut inputs = Vec::with_capacity(self.weights.len());
        let mut pre_activations = Vec::with_capacity(self.weights.len());
        let mut x = input.clone();
        for ((w, b), act) in self.weights.iter().zip(&self.biases).zip(&self.activations) {
            let mut z = x.matmul_t(w)?;
            for r in 0..z.rows() {
                for (zi, bi) in z.row_mut(r).iter_mut().zip(b) {
                    *zi += bi;
                }
            }
            let mut a = z.clone();
            if *act != Activation::Identity {
                for v in a.data_mut() {
                    *v = act.apply(*v);
                }
            }
            inputs.push(x);
            pre_activations.push(z);
            x = a;
        }
        let cache = ForwardCache {
            fingerprint: self.checksum(),
            layer_dims: self.layer_dims.clone(),
            inputs,
            pre_activations,
        };
        Ok((x, cache))
    }

    pub fn forward_one(&self, input: &[f64]) -> Result<Vec<f64>> {
        let m = Matrix::from_vec(1, input.len(), input.to_vec())?;
        Ok(self.forward(&m)?.0.into_data())
    }

    /// Returns parameter gradients and the gradient with respect to the input.
    pub fn backward(&self, cache: &ForwardCache, upstream: &Matrix) -> Result<(MlpGrads, Matrix)> {
        if cache.layer_dims != self.layer_dims {
            return Err(Error::Cache(format!(
                "cache built for layers {:?}, network has {:?}",
                cache.layer_dims, self.layer_dims
            )));
        }
        if cache.fingerprint != self.checksum() {
            return Err(Error::Cache(
                "parameters changed since the forward pass".into(),
            ));
        }
        let batch = cache.inputs[0].rows();
        if upstream.shape() != (batch, self.output_dim()) {
            return Err(Error::shape(
                "upstream gradient",
                format!("{batch} x {}", self.output_dim()),
                format!("{} x {}", upstream.rows(), upstream.cols()),
            ));
        }
        let mut grads = self.zero_grads();
        let mut delta = upstream.clone();
        for l in (0..self.weights.len()).rev() {
            let act = self.activations[l];
            if act != Activation::Identity {
                for (d, z) in delta
                    .data_mut()
                    .iter_mut()
                    .zip(cache.pre_activations[l].data())
                {
                    *d *= act.derivative(*z);
                }
            }
            delta.t_matmul_acc(&cache.inputs[l], &mut grads.weights[l])?;
            for r in 0..delta.rows() {
                for (g, d) in grads.biases[l].iter_mut().zip(delta.row(r)) {
                    *g += d;
                }
            }
            delta = delta.matmul(&self.weights[l])?;
        }
        Ok((grads, delta))
    }

    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            weights: self
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }
}

impl Parameters for Mlp {
    fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.data());
            out.push(b.as_slice());
        }
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w.data_mut());
            out.push(b.as_mut_slice());
        }
        out
    }
}

impl Parameters for MlpGrads {
    fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.data());
            out.push(b.as_slice());
        }
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w.data_mut());
            out.push(b.as_mut_slice());
        }
        out
    }
}

impl MlpGrads {
    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            for x in s {
                *x *= factor;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_layer_passes_input_through() {
        let mlp = Mlp::from_parts(vec![Matrix::identity(3)], vec![vec![0.0; 3]], Activation::Relu)
            .unwrap();
        let x = Matrix::from_vec(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, -0.5]).unwrap();
        let (y, _) = mlp.forward(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mlp = Mlp::zeros(&[4, 5, 2], Activation::Relu).unwrap();
        let x = Matrix::from_vec(1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(mlp.forward(&x).unwrap().0.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn two_layer_relu_matches_hand_evaluation() {
        // W1 = [[1, -1], [2, 0.5]], b1 = [0.5, -1]; W2 = [[1, -2]], b2 = [0.25]
        let w1 = Matrix::from_vec(2, 2, vec![1.0, -1.0, 2.0, 0.5]).unwrap();
        let w2 = Matrix::from_vec(1, 2, vec![1.0, -2.0]).unwrap();
        let mlp = Mlp::from_parts(vec![w1, w2], vec![vec![0.5, -1.0], vec![0.25]], Activation::Relu)
            .unwrap();
        let x = [1.5, 2.0];
        // hidden pre = (1.5 - 2 + 0.5, 3 + 1 - 1) = (0, 3) -> relu (0, 3)
        let h = [(1.5f64 - 2.0 + 0.5).max(0.0), (3.0f64 + 1.0 - 1.0).max(0.0)];
        let expected = h[0] - 2.0 * h[1] + 0.25;
        let y = mlp.forward_one(&x).unwrap();
        assert_eq!(y, vec![expected]);
        assert_eq!(expected, -5.75);
    }

    #[test]
    fn dimension_mismatch_names_both_shapes() {
        let mlp = Mlp::zeros(&[3, 2], Activation::Relu).unwrap();
        let x = Matrix::zeros(4, 5);
        let err = mlp.forward(&x).unwrap_err().to_string();
        assert!(err.contains("? x 3") && err.contains("4 x 5"), "{err}");
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = SeededRng::new(3);
        let mlp = Mlp::random(&[3, 4, 2], Activation::Tanh, &mut rng).unwrap();
        let x = Matrix::from_vec(2, 3, (0..6).map(|i| i as f64 * 0.3).collect()).unwrap();
        let (_, cache) = mlp.forward(&x).unwrap();
        let (g, dx) = mlp.backward(&cache, &Matrix::zeros(2, 2)).unwrap();
        assert!(g.to_flat().iter().all(|v| *v == 0.0));
        assert!(dx.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_layer_weight_grad_is_outer_product() {
        let w = Matrix::from_vec(2, 3, vec![0.1, 0.2, 0.3, -0.4, 0.5, -0.6]).unwrap();
        let mlp = Mlp::from_parts(vec![w], vec![vec![0.0, 0.0]], Activation::Relu).unwrap();
        let x = [1.0, -2.0, 3.0];
        let up = [0.7, -1.1];
        let (_, cache) = mlp.forward(&Matrix::from_vec(1, 3, x.to_vec()).unwrap()).unwrap();
        let (g, _) = mlp
            .backward(&cache, &Matrix::from_vec(1, 2, up.to_vec()).unwrap())
            .unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(g.weights[0].get(i, j), up[i] * x[j]);
            }
        }
        assert_eq!(g.biases[0], up.to_vec());
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut rng = SeededRng::new(5);
        let mut mlp = Mlp::random(&[2, 3, 1], Activation::Relu, &mut rng).unwrap();
        let (_, cache) = mlp.forward(&Matrix::zeros(1, 2)).unwrap();
        mlp.slices_mut()[0][0] += 1.0;
        assert!(matches!(
            mlp.backward(&cache, &Matrix::zeros(1, 1)),
            Err(Error::Cache(_))
        ));
        let other = Mlp::random(&[2, 4, 1], Activation::Relu, &mut rng).unwrap();
        assert!(matches!(
            other.backward(&cache, &Matrix::zeros(1, 1)),
            Err(Error::Cache(_))
        ));
    }
}
