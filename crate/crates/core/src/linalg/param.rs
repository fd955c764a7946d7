use super::Matrix;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// A named tensor with an optional gradient buffer.
///
/// Frozen parameters never own a gradient buffer; asking for one panics.
#[derive(Clone, Debug)]
pub struct Param {
    name: String,
    value: Matrix,
    grad: Option<Matrix>,
    frozen: bool,
    pub l2_weight: f64,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Matrix, frozen: bool) -> Self {
        let grad = (!frozen).then(|| Matrix::zeros(value.rows(), value.cols()));
        Param {
            name: name.into(),
            value,
            grad,
            frozen,
            l2_weight: 0.0,
        }
    }

    pub fn with_l2(mut self, weight: f64) -> Self {
        self.l2_weight = weight;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Matrix {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Matrix {
        &mut self.value
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn grad(&self) -> Option<&Matrix> {
        self.grad.as_ref()
    }

    /// Gradient buffer for writing.
    ///
    /// # Panics
    /// If the parameter is frozen.
    pub fn grad_mut(&mut self) -> &mut Matrix {
        match self.grad.as_mut() {
            Some(g) => g,
            None => panic!("gradient write into frozen parameter `{}`", self.name),
        }
    }

    /// Value and gradient at once, for parameters that are not frozen.
    pub fn value_and_grad_mut(&mut self) -> Option<(&mut Matrix, &mut Matrix)> {
        let grad = self.grad.as_mut()?;
        Some((&mut self.value, grad))
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.fill(0.0);
        }
    }

    pub fn grad_bytes(&self) -> usize {
        self.grad.as_ref().map_or(0, Matrix::bytes)
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, param: Param) -> ParamId {
        assert!(
            self.by_name(param.name()).is_none(),
            "duplicate parameter name `{}`",
            param.name()
        );
        self.params.push(param);
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        self.params[id.0].value()
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.params
            .iter()
            .position(|p| p.name() == name)
            .map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(Param::zero_grad);
    }

    /// Bytes held by gradient buffers.
    pub fn grad_bytes(&self) -> usize {
        self.params.iter().map(Param::grad_bytes).sum()
    }

    pub fn num_trainable(&self) -> usize {
        self.params
            .iter()
            .filter(|p| !p.is_frozen())
            .map(|p| p.value().len())
            .sum()
    }
}
