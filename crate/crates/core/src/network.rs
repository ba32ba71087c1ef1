//! Sequential networks, named parameter collections and the Adam optimizer.

use indexmap::IndexMap;
use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{Cache, Layer, Mode};
use crate::tensor::Tensor;

/// Ordered map from parameter name to tensor (weights, gradients, or moments).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet(IndexMap<String, Tensor>);

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.0.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.0.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.0.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.0.keys()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Total number of scalar values across all tensors.
    pub fn numel(&self) -> usize {
        self.0.values().map(Tensor::len).sum()
    }

    /// Copy with every name prefixed, e.g. `head.` + `0.weight`.
    pub fn prefixed(&self, prefix: &str) -> ParamSet {
        ParamSet(
            self.0
                .iter()
                .map(|(k, v)| (format!("{prefix}{k}"), v.clone()))
                .collect(),
        )
    }

    /// Entries whose name starts with `prefix`, with the prefix stripped.
    pub fn strip_prefix(&self, prefix: &str) -> ParamSet {
        ParamSet(
            self.0
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
                .collect(),
        )
    }

    pub fn extend(&mut self, other: ParamSet) {
        self.0.extend(other.0);
    }
}

impl FromIterator<(String, Tensor)> for ParamSet {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        ParamSet(iter.into_iter().collect())
    }
}

/// A named cut point: the network may be split before layer `index`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Boundary {
    pub name: String,
    pub index: usize,
}

/// Per-layer caches of one forward pass.
#[derive(Clone, Debug)]
pub struct NetCache(Vec<Cache>);

#[derive(Clone, Debug)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    boundaries: Vec<Boundary>,
}

impl Network {
    /// `input_shape` excludes the batch dimension. Fails if the layers do not compose.
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        let net = Network {
            input_shape,
            layers,
            boundaries: Vec::new(),
        };
        net.shapes()?;
        Ok(net)
    }

    pub fn with_boundaries(mut self, boundaries: Vec<Boundary>) -> Self {
        self.boundaries = boundaries;
        self
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn boundaries(&self) -> &[Boundary] {
        &self.boundaries
    }

    pub fn boundary(&self, name: &str) -> Option<usize> {
        self.boundaries.iter().find(|b| b.name == name).map(|b| b.index)
    }

    /// Shape (batch dimension 1) entering each layer, followed by the final output shape.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape = Vec::with_capacity(self.input_shape.len() + 1);
        shape.push(1);
        shape.extend(&self.input_shape);
        let mut out = vec![shape.clone()];
        for layer in &self.layers {
            shape = layer.output_shape(&shape)?;
            out.push(shape.clone());
        }
        Ok(out)
    }

    /// Per-item output shape.
    pub fn output_shape(&self) -> Vec<usize> {
        self.shapes().expect("validated at construction").pop().unwrap()[1..].to_vec()
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.shape().len() != self.input_shape.len() + 1 || input.shape()[1..] != self.input_shape[..] {
            let mut expected = vec![input.batch()];
            expected.extend(&self.input_shape);
            return Err(Error::ShapeMismatch {
                layer: "network input".into(),
                expected,
                actual: input.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<(Tensor, NetCache)> {
        self.check_input(input)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for layer in &mut self.layers {
            let (y, cache) = layer.forward(&x, mode)?;
            caches.push(cache);
            x = y;
        }
        Ok((x, NetCache(caches)))
    }

    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let mut x = input.clone();
        for layer in &self.layers {
            x = layer.infer(&x)?;
        }
        Ok(x)
    }

    /// Returns the input gradient and the gradients of all trainable parameters.
    pub fn backward(&self, cache: &NetCache, grad_out: &Tensor) -> Result<(Tensor, ParamSet)> {
        if cache.0.len() != self.layers.len() {
            return Err(Error::StaleCache {
                layer: format!("network of {} layers", self.layers.len()),
            });
        }
        let mut grad = grad_out.clone();
        let mut named = Vec::new();
        for (i, (layer, c)) in self.layers.iter().zip(&cache.0).enumerate().rev() {
            let (g, params) = layer.backward(c, &grad)?;
            named.extend(params.into_iter().map(|(n, t)| (format!("{i}.{n}"), t)));
            grad = g;
        }
        // Report gradients in parameter order.
        let mut grads = ParamSet::new();
        let mut lookup: IndexMap<String, Tensor> = named.into_iter().collect();
        self.visit_params(&mut |name, _, trainable| {
            if trainable {
                if let Some(t) = lookup.swap_remove(&name) {
                    grads.insert(name, t);
                }
            }
        });
        Ok((grad, grads))
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(String, &Tensor, bool)) {
        for (i, layer) in self.layers.iter().enumerate() {
            layer.visit_params(&format!("{i}."), f);
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(String, &mut Tensor, bool)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_params_mut(&format!("{i}."), f);
        }
    }

    /// All parameters including non-trainable running statistics.
    pub fn params(&self) -> ParamSet {
        let mut out = ParamSet::new();
        self.visit_params(&mut |name, t, _| out.insert(name, t.clone()));
        out
    }

    /// Overwrites every parameter from `params`; names and shapes must match exactly.
    pub fn load_params(&mut self, params: &ParamSet) -> Result<()> {
        let mut err = None;
        let mut seen = 0;
        self.visit_params_mut(&mut |name, t, _| {
            if err.is_some() {
                return;
            }
            match params.get(&name) {
                Some(src) if src.shape() == t.shape() => {
                    t.data_mut().copy_from_slice(src.data());
                    seen += 1;
                }
                Some(src) => {
                    err = Some(Error::ShapeMismatch {
                        layer: format!("parameter `{name}`"),
                        expected: t.shape().to_vec(),
                        actual: src.shape().to_vec(),
                    })
                }
                None => err = Some(Error::UnknownParameter(name)),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if seen != params.len() {
            let known = self.params();
            let extra = params.names().find(|n| known.get(n).is_none()).cloned().unwrap_or_default();
            return Err(Error::UnknownParameter(extra));
        }
        Ok(())
    }

    pub fn init(&mut self, rng: &mut impl Rng) {
        for layer in &mut self.layers {
            layer.init(rng);
        }
    }

    pub fn trainable_count(&self) -> usize {
        self.layers.iter().map(Layer::trainable_count).sum()
    }

    /// Splits off layers `start..end` as a standalone network.
    pub(crate) fn segment(&self, start: usize, end: usize) -> Result<Network> {
        let shapes = self.shapes()?;
        let boundaries = self
            .boundaries
            .iter()
            .filter(|b| b.index > start && b.index <= end)
            .map(|b| Boundary {
                name: b.name.clone(),
                index: b.index - start,
            })
            .collect();
        Ok(Network::new(shapes[start][1..].to_vec(), self.layers[start..end].to_vec())?
            .with_boundaries(boundaries))
    }
}

/// Adam with bias correction. Moments are keyed by parameter name.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: u64,
    first: ParamSet,
    second: ParamSet,
}

impl Adam {
    pub fn new(learning_rate: f32) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: ParamSet::new(),
            second: ParamSet::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor> {
        self.first.get(name)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Tensor> {
        self.second.get(name)
    }

    /// One update of every trainable parameter of `net`.
    pub fn step(&mut self, net: &mut Network, grads: &ParamSet) -> Result<()> {
        let mut problem = None;
        net.visit_params(&mut |name, t, trainable| {
            if trainable && problem.is_none() {
                problem = check_grad(&name, t, grads).err();
            }
        });
        if let Some(e) = problem {
            return Err(e);
        }
        let coef = self.advance();
        let (first, second) = (&mut self.first, &mut self.second);
        net.visit_params_mut(&mut |name, t, trainable| {
            if trainable {
                let g = grads.get(&name).expect("checked above");
                apply_adam(first, second, coef, name, t, g);
            }
        });
        Ok(())
    }

    /// Updates an explicit set of named parameters.
    pub fn update<'a>(
        &mut self,
        params: impl IntoIterator<Item = (String, &'a mut Tensor)>,
        grads: &ParamSet,
    ) -> Result<()> {
        let params: Vec<_> = params.into_iter().collect();
        for (name, p) in &params {
            check_grad(name, p, grads)?;
        }
        let coef = self.advance();
        for (name, p) in params {
            let g = grads.get(&name).expect("checked above");
            apply_adam(&mut self.first, &mut self.second, coef, name, p, g);
        }
        Ok(())
    }

    fn advance(&mut self) -> AdamCoef {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - (self.beta1 as f64).powi(t);
        let c2 = 1.0 - (self.beta2 as f64).powi(t);
        AdamCoef {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            step_size: (self.learning_rate as f64 / c1) as f32,
            c2_sqrt: c2.sqrt() as f32,
        }
    }
}

#[derive(Clone, Copy)]
struct AdamCoef {
    beta1: f32,
    beta2: f32,
    eps: f32,
    step_size: f32,
    c2_sqrt: f32,
}

fn check_grad(name: &str, param: &Tensor, grads: &ParamSet) -> Result<()> {
    let g = grads
        .get(name)
        .ok_or_else(|| Error::MissingGradient(name.to_string()))?;
    if g.shape() != param.shape() {
        return Err(Error::ShapeMismatch {
            layer: format!("gradient of `{name}`"),
            expected: param.shape().to_vec(),
            actual: g.shape().to_vec(),
        });
    }
    Ok(())
}

fn apply_adam(first: &mut ParamSet, second: &mut ParamSet, c: AdamCoef, name: String, p: &mut Tensor, g: &Tensor) {
    if first.get(&name).is_none() {
        first.insert(name.clone(), Tensor::zeros(p.shape()));
        second.insert(name.clone(), Tensor::zeros(p.shape()));
    }
    let m = first.get_mut(&name).unwrap().data_mut();
    let v = second.get_mut(&name).unwrap().data_mut();
    for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
        *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
        *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
        *w -= c.step_size * *mi / (vi.sqrt() / c.c2_sqrt + c.eps);
    }
}

/// Plain gradient descent `w ← w − η·g` over the trainable parameters.
pub fn sgd_step(net: &mut Network, grads: &ParamSet, learning_rate: f32) -> Result<()> {
    let mut err = None;
    net.visit_params_mut(&mut |name, t, trainable| {
        if !trainable || err.is_some() {
            return;
        }
        match grads.get(&name) {
            Some(g) => {
                for (w, gi) in t.data_mut().iter_mut().zip(g.data()) {
                    *w -= learning_rate * gi;
                }
            }
            None => err = Some(Error::MissingGradient(name)),
        }
    });
    err.map_or(Ok(()), Err)
}
