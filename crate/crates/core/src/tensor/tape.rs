use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Elementwise functions with registered derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Silu,
    Gelu,
    Softplus,
    Sigmoid,
    Exp,
    Log,
    Abs,
    Sqrt,
    Square,
    Neg,
}

pub(crate) enum Op {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv2d {
        x: Var,
        k: Var,
        stride: usize,
        pad: usize,
        depthwise: bool,
    },
    AddBias {
        x: Var,
        b: Var,
    },
    MulBias {
        x: Var,
        s: Var,
    },
    LayerNorm {
        x: Var,
        g: Var,
        b: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Unary {
        x: Var,
        f: Unary,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale {
        x: Var,
        s: f64,
    },
    Gather {
        x: Var,
        index: Vec<usize>,
    },
    Concat {
        xs: Vec<Var>,
    },
    Slice {
        x: Var,
        start: usize,
    },
    Rows {
        x: Var,
        start: usize,
    },
    ConcatRows {
        xs: Vec<Var>,
    },
    Reshape {
        x: Var,
    },
    Scan {
        u: Var,
        delta: Var,
        a: Var,
        b: Var,
        c: Var,
        d: Var,
        states: Vec<f64>,
        decay: Vec<f64>,
    },
    Warp {
        x: Var,
        flow: Var,
    },
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Softmax {
        x: Var,
    },
    Sum {
        x: Var,
    },
    LowerBound {
        x: Var,
        bound: f64,
    },
    Straight {
        x: Var,
    },
    Clamp {
        x: Var,
        lo: f64,
        hi: f64,
    },
    Likelihood {
        y: Var,
        mu: Var,
        sigma: Var,
        floor: f64,
    },
    KernelMap {
        k: Var,
        map: Box<[[f64; 9]; 9]>,
    },
}

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// Records a forward computation so it can be differentiated.
///
/// Parameters are read from the borrowed [`ParamStore`]; each is pulled onto
/// the tape once on first use.
pub struct Tape<'s> {
    store: &'s ParamStore,
    pub(crate) nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    grad_enabled: bool,
}

impl<'s> Tape<'s> {
    /// Tape that records adjoints for trainable parameters and grad inputs.
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
            grad_enabled: true,
        }
    }

    /// Tape for inference: nothing requires a gradient.
    pub fn inference(store: &'s ParamStore) -> Self {
        let mut t = Self::new(store);
        t.grad_enabled = false;
        t
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    /// Input whose gradient is tracked (used by gradient checks).
    pub fn input(&mut self, t: Tensor) -> Var {
        let rg = self.grad_enabled;
        self.leaf(t, rg)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Parameter leaf, created on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let p = self.store.get(id);
        let v = self.leaf(p.tensor.clone(), p.trainable && self.grad_enabled);
        self.param_vars[id.0] = Some(v);
        v
    }

    fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn any_grad(&self, vars: &[Var]) -> bool {
        self.grad_enabled && vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Record a computed value; non-finite outputs are rejected.
    pub(crate) fn push(
        &mut self,
        name: &'static str,
        value: Tensor,
        op: Op,
        inputs: &[Var],
    ) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        let requires_grad = self.any_grad(inputs);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            super::ops::backward_node(&self.nodes, i, &g, &mut grads)?;
        }
        Ok(Grads {
            grads,
            param_vars: self.param_vars.clone(),
        })
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Grads {
    grads: Vec<Option<Vec<f64>>>,
    param_vars: Vec<Option<Var>>,
}

impl Grads {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.param_vars[id.0].and_then(|v| self.wrt(v))
    }

    /// Accumulate parameter gradients into `store` (`Parameter::grad`).
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for (idx, var) in self.param_vars.iter().enumerate() {
            let Some(var) = var else { continue };
            let Some(g) = self.wrt(*var) else { continue };
            let p = store.get_mut(ParamId(idx));
            match &mut p.grad {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(g) {
                        *a += b;
                    }
                }
                None => {
                    p.grad = Some(
                        Tensor::new(p.tensor.shape().to_vec(), g.to_vec())
                            .expect("gradient shape follows parameter"),
                    );
                }
            }
        }
    }
}
