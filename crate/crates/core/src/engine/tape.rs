//! Reverse-mode differentiation tape.
//!
//! Every value produced during a forward pass is appended to the tape as a
//! node. Operations whose inputs require gradients are recorded alongside
//! the data their backward rule needs; [`Tape::backward`] replays the
//! records in exact reverse order.

use crate::error::{contract, Error, Result};

use super::ops::{self, ActivationKind, ConvGeometry, PoolKind};
use super::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// A recorded operation and the saved state its backward rule needs.
pub(crate) enum Op {
    Conv2d {
        x: usize,
        kernel: usize,
        bias: Option<usize>,
        geom: ConvGeometry,
    },
    ConvTranspose2d {
        x: usize,
        kernel: usize,
        bias: Option<usize>,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Activation {
        x: usize,
        kind: ActivationKind,
    },
    Pool {
        x: usize,
        kind: PoolKind,
        window: usize,
        argmax: Vec<usize>,
    },
    MaxDown2 {
        x: usize,
        argmax: Vec<usize>,
    },
    GlobalAvgPool {
        x: usize,
    },
    Concat {
        a: usize,
        b: usize,
    },
    Add {
        a: usize,
        b: usize,
        broadcast: bool,
    },
    Mul {
        a: usize,
        b: usize,
        broadcast: bool,
    },
    Upsample {
        x: usize,
        fy: usize,
        fx: usize,
    },
    Sum {
        x: usize,
    },
    WeightedSum {
        terms: Vec<usize>,
        weights: Vec<f64>,
    },
    /// Scalar loss whose derivative w.r.t. each prediction is
    /// `c_target·y + c_const + c_square·2ŷ`.
    OverlapLoss {
        pred: usize,
        target: usize,
        c_target: f64,
        c_const: f64,
        c_square: f64,
    },
    Bce {
        pred: usize,
        target: usize,
        eps: f64,
    },
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv_transpose2d",
            Op::BatchNorm { .. } => "batch_norm2d",
            Op::Activation { kind, .. } => kind.name(),
            Op::Pool { kind, .. } => match kind {
                PoolKind::Max => "max_pool",
                PoolKind::Avg => "avg_pool",
            },
            Op::MaxDown2 { .. } => "max_pool2x2",
            Op::GlobalAvgPool { .. } => "global_avg_pool",
            Op::Concat { .. } => "concat_channels",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::Upsample { .. } => "upsample_nearest",
            Op::Sum { .. } => "sum",
            Op::WeightedSum { .. } => "weighted_sum",
            Op::OverlapLoss { .. } => "overlap_loss",
            Op::Bce { .. } => "bce_loss",
        }
    }
}

struct Record {
    output: usize,
    op: Op,
}

/// Gradient slots handed to backward rules.
pub(crate) struct Grads<'a> {
    slots: &'a mut [Option<Vec<f64>>],
    requires: &'a [bool],
    values: &'a [Tensor],
}

impl Grads<'_> {
    /// Accumulation buffer for node `id`, or `None` when it needs no gradient.
    pub(crate) fn slot(&mut self, id: usize) -> Option<&mut [f64]> {
        if !self.requires[id] {
            return None;
        }
        let len = self.values[id].numel();
        Some(self.slots[id].get_or_insert_with(|| vec![0.0; len]))
    }
}

#[derive(Default)]
pub struct Tape {
    values: Vec<Tensor>,
    grads: Vec<Option<Vec<f64>>>,
    requires: Vec<bool>,
    producers: Vec<Option<&'static str>>,
    records: Vec<Record>,
    no_grad: bool,
    check_finite: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape that stores values but never records operations.
    pub fn no_grad() -> Self {
        Self {
            no_grad: true,
            ..Self::default()
        }
    }

    /// Fail an operation as soon as it produces a NaN or infinity.
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn is_recording(&self) -> bool {
        !self.no_grad
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of recorded (differentiable) operations.
    pub fn num_records(&self) -> usize {
        self.records.len()
    }

    /// Adds an input node.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        let requires = requires_grad && !self.no_grad;
        self.push_node(value, requires, None)
    }

    /// Shorthand for a leaf that receives gradients.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Shorthand for a leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.requires[v.0]
    }

    /// Accumulated gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::new(self.values[v.0].shape(), g.clone()).expect("grad shape"))
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn push_node(&mut self, value: Tensor, requires: bool, producer: Option<&'static str>) -> Var {
        self.values.push(value);
        self.grads.push(None);
        self.requires.push(requires);
        self.producers.push(producer);
        Var(self.values.len() - 1)
    }

    /// Appends the result of an operation. `inputs` are the node ids the op
    /// reads; the op is recorded only if one of them requires a gradient.
    pub(crate) fn push_op(&mut self, value: Tensor, inputs: &[usize], op: Op) -> Result<Var> {
        let name = op.name();
        if self.check_finite && !value.all_finite() {
            return Err(Error::NonFinite {
                node: self.values.len(),
                op: name,
            });
        }
        let requires = !self.no_grad && inputs.iter().any(|&i| self.requires[i]);
        let out = self.push_node(value, requires, Some(name));
        if requires {
            self.records.push(Record { output: out.0, op });
        }
        Ok(out)
    }

    /// First node (in creation order) holding a NaN or infinity, with the
    /// name of the operation that produced it.
    pub fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        self.values
            .iter()
            .position(|t| !t.all_finite())
            .map(|i| (i, self.producers[i].unwrap_or("input")))
    }

    /// Propagates d(loss)/d(node) to every reachable node that requires a
    /// gradient. Gradients of leaves accumulate across calls until
    /// [`Tape::zero_grad`]; intermediate gradients are released.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        contract!(
            self.values[loss.0].is_scalar(),
            "backward needs a scalar loss, got shape {:?}",
            self.values[loss.0].shape()
        );
        if !self.requires[loss.0] {
            return Ok(());
        }
        match &mut self.grads[loss.0] {
            Some(g) => g[0] += 1.0,
            slot @ None => *slot = Some(vec![1.0]),
        }
        let Tape {
            values,
            grads,
            requires,
            records,
            ..
        } = self;
        for record in records.iter().rev() {
            let Some(upstream) = grads[record.output].take() else {
                continue;
            };
            let mut slots = Grads {
                slots: grads,
                requires,
                values,
            };
            ops::backward(&record.op, record.output, &upstream, values, &mut slots);
        }
        Ok(())
    }
}
