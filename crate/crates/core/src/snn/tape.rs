//! Reverse-mode tape over the fixed layer vocabulary.
//!
//! A forward pass over `T` timesteps appends one node per primitive per
//! step; every node caches what its backward pass needs. [`Tape::backward`]
//! walks the nodes in strict reverse order, which is a reverse topological
//! order because a node can only consume values recorded before it. Temporal
//! credit assignment falls out of the LIF nodes: step `t + 1` consumes
//! `(u_t, o_t)` and pushes gradient back into both.

use crate::error::{Error, Result};
use crate::snn::kernels::{self, ConvGeometry};
use crate::snn::lif::LifParams;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Membrane potential and spike output of one LIF application.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LifOut {
    pub u: Var,
    pub o: Var,
}

#[derive(Debug)]
struct Param {
    weights: Vec<f32>,
    fan_in: usize,
    fan_out: usize,
}

#[derive(Debug)]
enum Op {
    Conv2d {
        x: Var,
        w: ParamId,
        geom: ConvGeometry,
    },
    Linear {
        x: Var,
        w: ParamId,
    },
    AvgPool2 {
        x: Var,
    },
    Upsample2 {
        x: Var,
    },
    Lif {
        x: Var,
        prev: Option<LifOut>,
        params: LifParams,
        u: Var,
    },
    Sigmoid {
        x: Var,
    },
    StraightThrough {
        x: Var,
    },
    Mean {
        xs: Vec<Var>,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    out: Var,
}

#[derive(Debug, Default)]
pub struct Tape {
    values: Vec<Tensor>,
    requires_grad: Vec<bool>,
    nodes: Vec<Node>,
    params: Vec<Param>,
}

/// Gradients of a scalar loss with respect to every recorded value and
/// every parameter slot.
#[derive(Debug)]
pub struct Gradients {
    vars: Vec<Option<Tensor>>,
    params: Vec<Vec<f32>>,
}

impl Gradients {
    /// Gradient w.r.t. a recorded value; `None` if no gradient reached it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.vars.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient w.r.t. the effective weights bound to `p`, accumulated over
    /// every position, sample and timestep the weights were applied at.
    pub fn param(&self, p: ParamId) -> &[f32] {
        &self.params[p.0]
    }

    pub fn into_params(self) -> Vec<Vec<f32>> {
        self.params
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn num_values(&self) -> usize {
        self.values.len()
    }

    fn push_value(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.values.push(t);
        self.requires_grad.push(requires_grad);
        Var(self.values.len() - 1)
    }

    fn push_node(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        let out = self.push_value(value, requires_grad);
        self.nodes.push(Node { op, out });
        out
    }

    /// A leaf that receives no gradient (data).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push_value(t, false)
    }

    /// A leaf that receives a gradient, e.g. to probe an input sensitivity.
    pub fn input_with_grad(&mut self, t: Tensor) -> Var {
        self.push_value(t, true)
    }

    /// Bind a `[fan_in, fan_out]` weight matrix for this forward pass.
    pub fn param(&mut self, weights: Vec<f32>, fan_in: usize, fan_out: usize) -> Result<ParamId> {
        if weights.len() != fan_in * fan_out {
            return Err(Error::shape("Tape::param", &[fan_in, fan_out], &[weights.len()]));
        }
        self.params.push(Param {
            weights,
            fan_in,
            fan_out,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn param_weights(&self, p: ParamId) -> &[f32] {
        &self.params[p.0].weights
    }

    pub fn conv2d(&mut self, x: Var, w: ParamId, geom: ConvGeometry) -> Result<Var> {
        let xt = &self.values[x.0];
        let batch = xt.batch();
        xt.expect_shape("conv2d input", &geom.in_shape(batch))?;
        let p = &self.params[w.0];
        if p.fan_in != geom.fan_in() || p.fan_out != geom.out_channels {
            return Err(Error::shape("conv2d weights", &[geom.fan_in(), geom.out_channels], &[p.fan_in, p.fan_out]));
        }
        let out = kernels::conv2d_forward(xt.data(), batch, &p.weights, &geom)?;
        let value = Tensor::from_vec(&geom.out_shape(batch), out)?;
        Ok(self.push_node(Op::Conv2d { x, w, geom }, value, true))
    }

    pub fn linear(&mut self, x: Var, w: ParamId) -> Result<Var> {
        let xt = &self.values[x.0];
        let batch = xt.batch();
        let p = &self.params[w.0];
        if xt.sample_len() != p.fan_in {
            return Err(Error::shape("linear input", &[batch, p.fan_in], xt.shape()));
        }
        let out = kernels::linear_forward(xt.data(), batch, &p.weights, p.fan_in, p.fan_out)?;
        let value = Tensor::from_vec(&[batch, p.fan_out], out)?;
        Ok(self.push_node(Op::Linear { x, w }, value, true))
    }

    fn dims4(&self, x: Var, context: &'static str) -> Result<[usize; 4]> {
        let s = self.values[x.0].shape();
        match *s {
            [b, c, h, w] => Ok([b, c, h, w]),
            _ => Err(Error::shape(context, &[0, 0, 0, 0], s)),
        }
    }

    pub fn avgpool2(&mut self, x: Var) -> Result<Var> {
        let [b, c, h, w] = self.dims4(x, "avgpool2 input")?;
        let out = kernels::avgpool2_forward(self.values[x.0].data(), b, c, h, w)?;
        let value = Tensor::from_vec(&[b, c, h / 2, w / 2], out)?;
        let rg = self.requires_grad[x.0];
        Ok(self.push_node(Op::AvgPool2 { x }, value, rg))
    }

    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let [b, c, h, w] = self.dims4(x, "upsample2 input")?;
        let out = kernels::upsample2_forward(self.values[x.0].data(), b, c, h, w)?;
        let value = Tensor::from_vec(&[b, c, 2 * h, 2 * w], out)?;
        let rg = self.requires_grad[x.0];
        Ok(self.push_node(Op::Upsample2 { x }, value, rg))
    }

    /// One LIF step driven by input current `x`. `prev` is the previous
    /// step's output on this layer, `None` at `t = 1` (rest state).
    pub fn lif(&mut self, x: Var, prev: Option<LifOut>, params: LifParams) -> Result<LifOut> {
        let xt = &self.values[x.0];
        if !xt.all_finite() {
            return Err(Error::Argument("non-finite input current to LIF".into()));
        }
        let mut u = xt.clone();
        if let Some(p) = prev {
            let (up, op) = (&self.values[p.u.0], &self.values[p.o.0]);
            up.expect_shape("lif previous state", xt.shape())?;
            for ((ui, &upi), &opi) in u.data_mut().iter_mut().zip(up.data()).zip(op.data()) {
                *ui += params.tau_decay * upi * (1.0 - opi);
            }
        }
        let mut o = u.clone();
        for v in o.data_mut() {
            *v = params.fire(*v);
        }
        let rg =
            self.requires_grad[x.0] || prev.is_some_and(|p| self.requires_grad[p.u.0] || self.requires_grad[p.o.0]);
        let u_var = self.push_value(u, rg);
        let o_var = self.push_node(
            Op::Lif {
                x,
                prev,
                params,
                u: u_var,
            },
            o,
            rg,
        );
        Ok(LifOut { u: u_var, o: o_var })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.sigmoid_shifted(x, 0.0)
    }

    /// `sigmoid(x - offset)`.
    pub fn sigmoid_shifted(&mut self, x: Var, offset: f32) -> Var {
        let mut value = self.values[x.0].clone();
        for v in value.data_mut() {
            *v = 1.0 / (1.0 + (offset - *v).exp());
        }
        let rg = self.requires_grad[x.0];
        self.push_node(Op::Sigmoid { x }, value, rg)
    }

    /// Record `value` as the forward output while passing the incoming
    /// gradient back to `x` unchanged (straight-through estimator).
    pub fn straight_through(&mut self, x: Var, value: Tensor) -> Result<Var> {
        value.expect_shape("straight_through value", self.values[x.0].shape())?;
        let rg = self.requires_grad[x.0];
        Ok(self.push_node(Op::StraightThrough { x }, value, rg))
    }

    /// Elementwise mean of equally shaped values.
    pub fn mean(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::Argument("mean over an empty list".into()))?;
        let mut acc = self.values[first.0].clone();
        for v in &xs[1..] {
            acc.add_assign(&self.values[v.0])?;
        }
        acc.scale(1.0 / xs.len() as f32);
        let rg = xs.iter().any(|v| self.requires_grad[v.0]);
        Ok(self.push_node(Op::Mean { xs: xs.to_vec() }, acc, rg))
    }

    /// Reverse pass. `seeds` holds `dL/dv` for the values the loss reads.
    pub fn backward(&self, seeds: Vec<(Var, Tensor)>) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyTape);
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.values.len()];
        for (v, g) in seeds {
            g.expect_shape("backward seed", self.values[v.0].shape())?;
            accumulate(&self.values, &mut grads, v, g.data());
        }
        let mut pgrads: Vec<Vec<f32>> = self.params.iter().map(|p| vec![0.0; p.weights.len()]).collect();

        for node in self.nodes.iter().rev() {
            match &node.op {
                Op::Lif { x, prev, params, u } => {
                    let (gu, go) = (grads[u.0].take(), grads[node.out.0].take());
                    if gu.is_none() && go.is_none() {
                        continue;
                    }
                    let uv = self.values[u.0].data();
                    let mut du = gu.map(Tensor::into_vec).unwrap_or_else(|| vec![0.0; uv.len()]);
                    if let Some(go) = go {
                        for ((d, &g), &ui) in du.iter_mut().zip(go.data()).zip(uv) {
                            *d += g * params.pseudo_grad(ui);
                        }
                    }
                    if let Some(p) = prev {
                        let (up, op) = (self.values[p.u.0].data(), self.values[p.o.0].data());
                        let tau = params.tau_decay;
                        let gup: Vec<f32> = du.iter().zip(op).map(|(&d, &o)| d * tau * (1.0 - o)).collect();
                        let gop: Vec<f32> = du.iter().zip(up).map(|(&d, &u)| -d * tau * u).collect();
                        accumulate(&self.values, &mut grads, p.u, &gup);
                        accumulate(&self.values, &mut grads, p.o, &gop);
                    }
                    if self.requires_grad[x.0] {
                        accumulate(&self.values, &mut grads, *x, &du);
                    }
                    // keep dL/du_t for callers that inspect it
                    grads[u.0] = Some(Tensor::from_vec(self.values[u.0].shape(), du)?);
                    grads[node.out.0] = None;
                }
                op => {
                    let Some(g) = grads[node.out.0].as_ref() else {
                        continue;
                    };
                    let g = g.data().to_vec();
                    self.backward_node(op, node.out, &g, &mut grads, &mut pgrads)?;
                }
            }
        }
        Ok(Gradients {
            vars: grads,
            params: pgrads,
        })
    }

    fn backward_node(
        &self,
        op: &Op,
        out: Var,
        g: &[f32],
        grads: &mut [Option<Tensor>],
        pgrads: &mut [Vec<f32>],
    ) -> Result<()> {
        match op {
            Op::Conv2d { x, w, geom } => {
                let xt = &self.values[x.0];
                let want = self.requires_grad[x.0];
                let gi = kernels::conv2d_backward(
                    xt.data(),
                    xt.batch(),
                    &self.params[w.0].weights,
                    geom,
                    g,
                    &mut pgrads[w.0],
                    want,
                )?;
                if let Some(gi) = gi {
                    accumulate(&self.values, grads, *x, &gi);
                }
            }
            Op::Linear { x, w } => {
                let xt = &self.values[x.0];
                let p = &self.params[w.0];
                let want = self.requires_grad[x.0];
                let gi = kernels::linear_backward(
                    xt.data(),
                    xt.batch(),
                    &p.weights,
                    p.fan_in,
                    p.fan_out,
                    g,
                    &mut pgrads[w.0],
                    want,
                )?;
                if let Some(gi) = gi {
                    accumulate(&self.values, grads, *x, &gi);
                }
            }
            Op::AvgPool2 { x } => {
                if self.requires_grad[x.0] {
                    let [b, c, h, w] = self.dims4(*x, "avgpool2 backward")?;
                    let gi = kernels::avgpool2_backward(g, b, c, h, w)?;
                    accumulate(&self.values, grads, *x, &gi);
                }
            }
            Op::Upsample2 { x } => {
                if self.requires_grad[x.0] {
                    let [b, c, h, w] = self.dims4(*x, "upsample2 backward")?;
                    let gi = kernels::upsample2_backward(g, b, c, h, w)?;
                    accumulate(&self.values, grads, *x, &gi);
                }
            }
            Op::Sigmoid { x } => {
                if self.requires_grad[x.0] {
                    // the node's own output holds sigmoid(x)
                    let s = self.values[out.0].data();
                    let gi: Vec<f32> = g.iter().zip(s).map(|(&gv, &s)| gv * s * (1.0 - s)).collect();
                    accumulate(&self.values, grads, *x, &gi);
                }
            }
            Op::StraightThrough { x } => {
                if self.requires_grad[x.0] {
                    accumulate(&self.values, grads, *x, g);
                }
            }
            Op::Mean { xs } => {
                let inv = 1.0 / xs.len() as f32;
                let gi: Vec<f32> = g.iter().map(|v| v * inv).collect();
                for v in xs {
                    if self.requires_grad[v.0] {
                        accumulate(&self.values, grads, *v, &gi);
                    }
                }
            }
            Op::Lif { .. } => unreachable!("LIF nodes are handled in backward()"),
        }
        Ok(())
    }
}

fn accumulate(values: &[Tensor], grads: &mut [Option<Tensor>], v: Var, g: &[f32]) {
    match &mut grads[v.0] {
        Some(t) => {
            for (a, b) in t.data_mut().iter_mut().zip(g) {
                *a += *b;
            }
        }
        slot @ None => {
            let shape = values[v.0].shape();
            *slot = Some(Tensor::from_vec(shape, g.to_vec()).expect("gradient matches value shape"));
        }
    }
}
