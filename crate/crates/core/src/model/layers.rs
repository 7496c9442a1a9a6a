//! Building blocks: convolution and normalization wrappers, the dilated
//! residual block, the skip-refinement attention block and guided heads.

use crate::engine::{ActivationKind, BatchNormOptions, Conv2dOptions, Mode, RunningStats, Tape, Var};
use crate::error::Result;

use super::params::{BufferId, ParamBuilder, ParamId};

/// Forward-pass state shared by every block.
pub struct Ctx<'a> {
    pub tape: &'a mut Tape,
    /// Learnables bound on `tape`, indexed by [`ParamId`].
    pub vars: &'a [Var],
    pub buffers: &'a mut [RunningStats],
    pub bn: BatchNormOptions,
    pub leaky_slope: f64,
}

impl Ctx<'_> {
    fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn mode(&self) -> Mode {
        self.bn.mode
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub opts: Conv2dOptions,
}

impl Conv {
    pub fn new(b: &mut ParamBuilder, name: &str, k: usize, cin: usize, cout: usize, dilation: usize) -> Self {
        Self {
            kernel: b.uniform_fan_in(format!("{name}.kernel"), &[k, k, cin, cout], k * k * cin),
            bias: b.constant(format!("{name}.bias"), &[cout], 0.0),
            opts: Conv2dOptions::same(dilation),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let (k, b) = (ctx.var(self.kernel), ctx.var(self.bias));
        ctx.tape.conv2d(x, k, Some(b), self.opts)
    }
}

/// 2×2 stride-2 transposed convolution.
#[derive(Clone, Debug)]
pub struct UpConv {
    pub kernel: ParamId,
    pub bias: ParamId,
}

impl UpConv {
    pub fn new(b: &mut ParamBuilder, name: &str, cin: usize, cout: usize) -> Self {
        Self {
            kernel: b.uniform_fan_in(format!("{name}.kernel"), &[2, 2, cout, cin], cin),
            bias: b.constant(format!("{name}.bias"), &[cout], 0.0),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let (k, b) = (ctx.var(self.kernel), ctx.var(self.bias));
        ctx.tape.conv_transpose2d(x, k, Some(b))
    }
}

#[derive(Clone, Debug)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: BufferId,
}

impl Norm {
    pub fn new(b: &mut ParamBuilder, name: &str, c: usize) -> Self {
        Self {
            gamma: b.constant(format!("{name}.gamma"), &[c], 1.0),
            beta: b.constant(format!("{name}.beta"), &[c], 0.0),
            stats: b.buffer(name, c),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let (g, b) = (ctx.var(self.gamma), ctx.var(self.beta));
        ctx.tape.batch_norm2d(x, g, b, &mut ctx.buffers[self.stats.0], ctx.bn)
    }
}

/// Dilated residual block.
///
/// Main path: conv_a → BN_a → conv_b → leaky → BN_b.
/// Shortcut: 1×1 conv_res → BN_res → leaky. The two paths are summed.
#[derive(Clone, Debug)]
pub struct DcrBlock {
    pub conv_a: Conv,
    pub bn_a: Norm,
    pub conv_b: Conv,
    pub bn_b: Norm,
    pub conv_res: Conv,
    pub bn_res: Norm,
}

impl DcrBlock {
    pub fn new(b: &mut ParamBuilder, name: &str, cin: usize, cout: usize, dilation: usize) -> Self {
        Self {
            conv_a: Conv::new(b, &format!("{name}.conv_a"), 3, cin, cout, dilation),
            bn_a: Norm::new(b, &format!("{name}.bn_a"), cout),
            conv_b: Conv::new(b, &format!("{name}.conv_b"), 3, cout, cout, dilation),
            bn_b: Norm::new(b, &format!("{name}.bn_b"), cout),
            conv_res: Conv::new(b, &format!("{name}.conv_res"), 1, cin, cout, dilation),
            bn_res: Norm::new(b, &format!("{name}.bn_res"), cout),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let leaky = ActivationKind::LeakyRelu(ctx.leaky_slope);
        let h = self.conv_a.forward(ctx, x)?;
        let h = self.bn_a.forward(ctx, h)?;
        let h = self.conv_b.forward(ctx, h)?;
        let h = ctx.tape.activation(h, leaky)?;
        let main = self.bn_b.forward(ctx, h)?;

        let r = self.conv_res.forward(ctx, x)?;
        let r = self.bn_res.forward(ctx, r)?;
        let r = ctx.tape.activation(r, leaky)?;
        ctx.tape.add(main, r)
    }
}

/// Skip-connection refinement: pooled-feature fusion gated by a channel
/// attention vector computed from the block input, plus a residual add.
#[derive(Clone, Debug)]
pub struct AsfebBlock {
    pub conv_in: Conv,
    pub bn_in: Norm,
    pub conv_fuse: Conv,
    pub bn_fuse: Norm,
    pub conv_gate: Conv,
    pub bn_gate: Norm,
}

/// Output of [`AsfebBlock::forward_parts`].
pub struct AsfebParts {
    pub output: Var,
    /// Channel attention weights, `N×1×1×C`, in (0, 1).
    pub gate: Var,
}

impl AsfebBlock {
    pub fn new(b: &mut ParamBuilder, name: &str, c: usize) -> Self {
        Self {
            conv_in: Conv::new(b, &format!("{name}.conv_in"), 3, c, c, 1),
            bn_in: Norm::new(b, &format!("{name}.bn_in"), c),
            conv_fuse: Conv::new(b, &format!("{name}.conv_fuse"), 3, 2 * c, c, 1),
            bn_fuse: Norm::new(b, &format!("{name}.bn_fuse"), c),
            conv_gate: Conv::new(b, &format!("{name}.conv_gate"), 3, c, c, 1),
            bn_gate: Norm::new(b, &format!("{name}.bn_gate"), c),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, t: Var) -> Result<Var> {
        Ok(self.forward_parts(ctx, t)?.output)
    }

    pub fn forward_parts(&self, ctx: &mut Ctx, t: Var) -> Result<AsfebParts> {
        let t1 = self.conv_in.forward(ctx, t)?;
        let t1 = self.bn_in.forward(ctx, t1)?;
        let t1 = ctx.tape.relu(t1)?;

        let f1 = ctx.tape.max_pool3x3(t1)?;
        let f2 = ctx.tape.avg_pool3x3(t1)?;
        let f3 = ctx.tape.concat_channels(f1, f2)?;
        let f4 = self.conv_fuse.forward(ctx, f3)?;
        let f4 = self.bn_fuse.forward(ctx, f4)?;
        let f4 = ctx.tape.relu(f4)?;

        let f5 = ctx.tape.global_avg_pool(t)?;
        let f6 = self.conv_gate.forward(ctx, f5)?;
        let f6 = self.bn_gate.forward(ctx, f6)?;
        let gate = ctx.tape.sigmoid(f6)?;

        let f8 = ctx.tape.mul(f4, gate)?;
        let output = ctx.tape.add(f8, t)?;
        Ok(AsfebParts { output, gate })
    }
}

/// Auxiliary prediction: 1×1 conv → sigmoid → nearest upsampling.
#[derive(Clone, Debug)]
pub struct GuidedHead {
    pub conv: Conv,
}

impl GuidedHead {
    pub fn new(b: &mut ParamBuilder, name: &str, c: usize) -> Self {
        Self {
            conv: Conv::new(b, name, 1, c, 1, 1),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var, size: usize) -> Result<Var> {
        let logits = self.conv.forward(ctx, x)?;
        let p = ctx.tape.sigmoid(logits)?;
        ctx.tape.upsample_nearest(p, size, size)
    }
}
