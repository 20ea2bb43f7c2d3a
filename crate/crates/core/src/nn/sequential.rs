use super::layers::{Layer, LayerSpec};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Feed-forward stack of layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.forward(&cur)?;
        }
        Ok(cur)
    }

    /// Forward pass keeping every intermediate: `acts[i]` is the input of
    /// layer `i`, the last entry is the output.
    pub fn forward_cached(&self, x: Tensor) -> Result<Vec<Tensor>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x);
        for layer in &self.layers {
            let next = layer.forward(acts.last().expect("nonempty"))?;
            acts.push(next);
        }
        Ok(acts)
    }

    /// Backpropagates `dy` through the cached pass. Returns the input
    /// gradient (if requested) and parameter gradients in [`Self::params`] order.
    pub fn backward(
        &self,
        acts: &[Tensor],
        dy: Tensor,
        need_input_grad: bool,
    ) -> Result<(Option<Tensor>, Vec<Tensor>)> {
        if acts.len() != self.layers.len() + 1 {
            return Err(Error::shape("activation cache does not match network depth"));
        }
        acts.last().expect("nonempty").expect_same_shape(&dy, "network output gradient")?;
        let mut per_layer: Vec<Vec<Tensor>> = vec![Vec::new(); self.layers.len()];
        let mut grad = Some(dy);
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let dy = grad.take().expect("gradient flows");
            // the first layer only needs dx when the caller asks for it
            let need_dx = i > 0 || need_input_grad;
            let (dx, pg) = layer.backward(&acts[i], &dy, need_dx)?;
            per_layer[i] = pg;
            grad = dx;
            if i > 0 && grad.is_none() {
                return Err(Error::Model("missing intermediate gradient".into()));
            }
        }
        Ok((grad.filter(|_| need_input_grad), per_layer.into_iter().flatten().collect()))
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn from_specs(specs: &[LayerSpec]) -> Self {
        Self::new(specs.iter().map(Layer::from_spec).collect())
    }

    /// Concatenated parameters.
    pub fn flat_params(&self) -> Vec<f64> {
        self.params().iter().flat_map(|p| p.data().iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::shape(format!("network has {} parameters, got {}", self.param_count(), flat.len())));
        }
        let mut offset = 0;
        for p in self.params_mut() {
            let n = p.len();
            p.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}
