use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ndcore::{Graph, NodeId, Tensor};

pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];
pub const DEFAULT_EMBED_DIM: usize = 32;

/// Fully connected ReLU network; no activation after the last layer.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingNet {
    sizes: Vec<usize>,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
}

impl EmbeddingNet {
    /// Glorot-uniform weights, zero biases.
    pub fn init(sizes: &[usize], seed: u64) -> Result<Self> {
        check_sizes(sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
            let w = (0..fan_in * fan_out).map(|_| dist.sample(&mut rng)).collect();
            weights.push(Tensor::new(vec![fan_in, fan_out], w)?);
            biases.push(Tensor::zeros(&[fan_out]));
        }
        Ok(EmbeddingNet {
            sizes: sizes.to_vec(),
            weights,
            biases,
        })
    }

    /// Builds a net from explicit per-layer `(weight, bias)` tensors.
    pub fn from_layers(layers: Vec<(Tensor, Tensor)>) -> Result<Self> {
        let mut sizes = Vec::new();
        for (i, (w, b)) in layers.iter().enumerate() {
            if w.shape().len() != 2 || b.shape() != [w.shape()[1]] {
                return Err(Error::Dimension(format!(
                    "layer {i}: weight {:?}, bias {:?}",
                    w.shape(),
                    b.shape()
                )));
            }
            if i == 0 {
                sizes.push(w.shape()[0]);
            } else if w.shape()[0] != sizes[i] {
                return Err(Error::Dimension(format!(
                    "layer {i} expects {} inputs, previous layer gives {}",
                    w.shape()[0],
                    sizes[i]
                )));
            }
            sizes.push(w.shape()[1]);
        }
        check_sizes(&sizes)?;
        let (weights, biases) = layers.into_iter().unzip();
        Ok(EmbeddingNet { sizes, weights, biases })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn embed_dim(&self) -> usize {
        *self.sizes.last().expect("non-empty sizes")
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    /// Parameters in `[w0, b0, w1, b1, ...]` order.
    pub fn params(&self) -> Vec<Tensor> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.clone(), b.clone()])
            .collect()
    }

    pub fn param_names(&self) -> Vec<String> {
        (0..self.num_layers())
            .flat_map(|i| [format!("layer{i}.weight"), format!("layer{i}.bias")])
            .collect()
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.params().iter().map(|p| p.shape().to_vec()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Tensor::len).sum()
    }

    pub fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        if params.len() != 2 * self.num_layers() {
            return Err(Error::Dimension(format!(
                "expected {} parameter tensors, got {}",
                2 * self.num_layers(),
                params.len()
            )));
        }
        for (p, shape) in params.iter().zip(self.param_shapes()) {
            if p.shape() != shape.as_slice() {
                return Err(Error::Dimension(format!(
                    "parameter shape {:?}, expected {shape:?}",
                    p.shape()
                )));
            }
        }
        let mut it = params.into_iter();
        for i in 0..self.num_layers() {
            self.weights[i] = it.next().expect("weight");
            self.biases[i] = it.next().expect("bias");
        }
        Ok(())
    }

    /// All parameter values flattened in `params()` order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.params().into_iter().flat_map(Tensor::into_data).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Dimension(format!(
                "{} values for {} parameters",
                flat.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        let mut params = Vec::new();
        for shape in self.param_shapes() {
            let n: usize = shape.iter().product();
            params.push(Tensor::new(shape, flat[offset..offset + n].to_vec())?);
            offset += n;
        }
        self.set_params(params)
    }

    /// SHA-256 over the parameter bit patterns.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for v in self.flat_params() {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Registers parameters as graph leaves, in `params()` order.
    pub fn register(&self, g: &mut Graph) -> Vec<NodeId> {
        self.params().into_iter().map(|p| g.param(p)).collect()
    }

    /// Forward pass inside a graph using previously registered parameter nodes.
    pub fn forward(&self, g: &mut Graph, params: &[NodeId], input: NodeId) -> Result<NodeId> {
        let cols = g.value(input).cols();
        if g.value(input).shape().len() != 2 || cols != self.input_dim() {
            return Err(Error::Contract(format!(
                "features of shape {:?} do not match input dim {}",
                g.value(input).shape(),
                self.input_dim()
            )));
        }
        let mut h = input;
        for layer in 0..self.num_layers() {
            let z = g.matmul(h, params[2 * layer])?;
            h = g.add(z, params[2 * layer + 1])?;
            if layer + 1 < self.num_layers() {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::Parameter("a net needs at least an input and an output size".into()));
    }
    if sizes.contains(&0) {
        return Err(Error::Parameter(format!("zero-width layer in {sizes:?}")));
    }
    if *sizes.last().unwrap() < 2 {
        return Err(Error::Parameter("embed dim must be >= 2".into()));
    }
    Ok(())
}

/// Embeds a feature matrix (rows are examples).
pub fn embed(net: &EmbeddingNet, features: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let params = net.register(&mut g);
    let x = g.constant(features.clone());
    let out = net.forward(&mut g, &params, x)?;
    Ok(g.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_layer_is_identity() {
        let net = EmbeddingNet::from_layers(vec![(Tensor::identity(3), Tensor::zeros(&[3]))]).unwrap();
        let x = Tensor::matrix(2, 3, vec![1., -2., 3., 0.5, 0., -1.]).unwrap();
        assert_eq!(embed(&net, &x).unwrap(), x);
    }

    #[test]
    fn zero_net_gives_zero_embedding() {
        let net = EmbeddingNet::from_layers(vec![
            (Tensor::zeros(&[4, 5]), Tensor::zeros(&[5])),
            (Tensor::zeros(&[5, 2]), Tensor::zeros(&[2])),
        ])
        .unwrap();
        let x = Tensor::matrix(1, 4, vec![3., 1., 4., 1.]).unwrap();
        assert!(embed(&net, &x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_shape() {
        let net = EmbeddingNet::init(&[6, 8, 4], 1).unwrap();
        let x = Tensor::zeros(&[3, 6]);
        assert_eq!(embed(&net, &x).unwrap().shape(), &[3, 4]);
    }

    #[test]
    fn dim_mismatch_is_contract_error() {
        let net = EmbeddingNet::init(&[6, 8, 4], 1).unwrap();
        assert!(matches!(embed(&net, &Tensor::zeros(&[3, 5])), Err(Error::Contract(_))));
    }

    #[test]
    fn embed_dim_at_least_two() {
        assert!(EmbeddingNet::init(&[6, 1], 1).is_err());
    }

    #[test]
    fn flat_params_roundtrip() {
        let net = EmbeddingNet::init(&[3, 4, 2], 5).unwrap();
        let mut other = EmbeddingNet::init(&[3, 4, 2], 6).unwrap();
        assert_ne!(net.checksum(), other.checksum());
        other.set_flat_params(&net.flat_params()).unwrap();
        assert_eq!(net, other);
        assert_eq!(net.param_count(), 3 * 4 + 4 + 4 * 2 + 2);
    }
}
