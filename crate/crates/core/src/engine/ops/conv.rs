//! Dilated 2-D convolution and the 2×2 stride-2 transposed convolution.
//!
//! Both are lowered to strided GEMMs, one per kernel tap. When the padding
//! margin is thin the zero-padded input is viewed as a flat pixel sequence:
//! output pixel `(i, j)` of the padded grid reads input pixel
//! `(i, j) + tap offset`, so a single GEMM per tap covers the whole batch and
//! the columns that fall in the padding margin are discarded afterwards.
//! Otherwise each output row gets its own GEMM. Stride-1 forward passes with
//! moderate channel counts use the register-tiled kernel in `direct` instead.

use std::borrow::Cow;

use super::direct::{direct_conv, preferred, DirectConv};
use crate::engine::gemm::{gemm, Layout};
use crate::engine::tape::{Grads, Op, Tape, Var};
use crate::engine::tensor::Tensor;
use crate::error::{contract, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of `dilation·(k−1)/2` per side; preserves extents at stride 1.
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dOptions {
    pub dilation: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl Default for Conv2dOptions {
    fn default() -> Self {
        Self {
            dilation: 1,
            stride: 1,
            padding: Padding::Same,
        }
    }
}

impl Conv2dOptions {
    pub fn same(dilation: usize) -> Self {
        Self {
            dilation,
            ..Self::default()
        }
    }
}

/// Resolved extents of one convolution call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    dilation: usize,
    stride: usize,
    pad_h: usize,
    pad_w: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeometry {
    fn new(x: &[usize], kernel: &[usize], opts: Conv2dOptions) -> Result<Self> {
        if opts.dilation < 1 {
            return Err(Error::Param(format!(
                "dilation must be >= 1, got {}",
                opts.dilation
            )));
        }
        if opts.stride < 1 {
            return Err(Error::Param(format!(
                "stride must be >= 1, got {}",
                opts.stride
            )));
        }
        contract!(x.len() == 4, "conv2d input must be N×H×W×C, got {x:?}");
        contract!(
            kernel.len() == 4,
            "conv2d kernel must be kH×kW×Cin×Cout, got {kernel:?}"
        );
        let (n, h, w, cin) = (x[0], x[1], x[2], x[3]);
        let (kh, kw, kcin, cout) = (kernel[0], kernel[1], kernel[2], kernel[3]);
        contract!(
            kcin == cin,
            "conv2d channel mismatch: input has {cin} channels, kernel expects {kcin}"
        );
        let d = opts.dilation;
        let (pad_h, pad_w) = match opts.padding {
            Padding::Same => {
                contract!(
                    kh % 2 == 1 && kw % 2 == 1,
                    "same padding needs odd kernel extents, got {kh}×{kw}"
                );
                (d * (kh - 1) / 2, d * (kw - 1) / 2)
            }
            Padding::Valid => (0, 0),
        };
        let span_h = d * (kh - 1) + 1;
        let span_w = d * (kw - 1) + 1;
        contract!(
            h + 2 * pad_h >= span_h && w + 2 * pad_w >= span_w,
            "dilated kernel span {span_h}×{span_w} exceeds padded input {}×{}",
            h + 2 * pad_h,
            w + 2 * pad_w
        );
        let ho = (h + 2 * pad_h - span_h) / opts.stride + 1;
        let wo = (w + 2 * pad_w - span_w) / opts.stride + 1;
        Ok(Self {
            n,
            h,
            w,
            cin,
            cout,
            kh,
            kw,
            dilation: d,
            stride: opts.stride,
            pad_h,
            pad_w,
            ho,
            wo,
        })
    }

    fn hp(&self) -> usize {
        self.h + 2 * self.pad_h
    }

    fn wp(&self) -> usize {
        self.w + 2 * self.pad_w
    }

    fn padded(&self) -> bool {
        self.pad_h > 0 || self.pad_w > 0
    }

    /// Whether the GEMM output grid is the whole padded input grid. This
    /// needs stride 1 and pays off only while the padding margin is thin.
    fn flat(&self) -> bool {
        self.stride == 1 && 4 * self.hp() * self.wp() <= 5 * self.ho * self.wo
    }

    /// Row blocks processed by one GEMM each, per tap.
    ///
    /// On a flat grid a single block spans the batch; otherwise there is one
    /// block per output row.
    fn blocks(&self) -> Vec<Block> {
        let (hp, wp) = (self.hp(), self.wp());
        if self.flat() {
            vec![Block {
                in_pixel: 0,
                in_step: 1,
                rows: (self.n - 1) * hp * wp + (self.ho - 1) * wp + self.wo,
                out_pixel: 0,
            }]
        } else {
            let mut blocks = Vec::with_capacity(self.n * self.ho);
            for n in 0..self.n {
                for i in 0..self.ho {
                    blocks.push(Block {
                        in_pixel: (n * hp + i * self.stride) * wp,
                        in_step: self.stride,
                        rows: self.wo,
                        out_pixel: (n * self.ho + i) * self.wo,
                    });
                }
            }
            blocks
        }
    }

    /// Number of pixels in the GEMM output grid.
    fn grid_pixels(&self) -> usize {
        if self.flat() {
            self.n * self.hp() * self.wp()
        } else {
            self.n * self.ho * self.wo
        }
    }

    fn tap_shift(&self, a: usize, b: usize) -> usize {
        self.dilation * a * self.wp() + self.dilation * b
    }

    fn taps(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.kh).flat_map(move |a| (0..self.kw).map(move |b| (a * self.kw + b, a, b)))
    }
}

struct Block {
    in_pixel: usize,
    in_step: usize,
    rows: usize,
    out_pixel: usize,
}

fn pad_input<'a>(x: &'a [f64], g: &ConvGeometry) -> Cow<'a, [f64]> {
    if !g.padded() {
        return Cow::Borrowed(x);
    }
    let (hp, wp, c) = (g.hp(), g.wp(), g.cin);
    let mut out = vec![0.0; g.n * hp * wp * c];
    for n in 0..g.n {
        for i in 0..g.h {
            let src = ((n * g.h + i) * g.w) * c;
            let dst = ((n * hp + i + g.pad_h) * wp + g.pad_w) * c;
            out[dst..dst + g.w * c].copy_from_slice(&x[src..src + g.w * c]);
        }
    }
    Cow::Owned(out)
}

/// Maps a pixel of the GEMM grid back to an output pixel, if it is one.
fn grid_to_out(g: &ConvGeometry) -> impl Fn(usize, usize, usize) -> usize + '_ {
    move |n, i, j| {
        if g.flat() {
            (n * g.hp() + i) * g.wp() + j
        } else {
            (n * g.ho + i) * g.wo + j
        }
    }
}

fn conv_forward(x: &[f64], kernel: &[f64], bias: Option<&[f64]>, g: &ConvGeometry) -> Vec<f64> {
    let xp = pad_input(x, g);
    let cout = g.cout;
    let mut out = vec![0.0; g.n * g.ho * g.wo * cout];
    if g.stride == 1 && preferred(g.kh * g.kw, g.cin, cout) {
        let shifts: Vec<usize> = g.taps().map(|(_, a, b)| g.tap_shift(a, b)).collect();
        let (hp, wp) = (g.hp(), g.wp());
        let runs: Vec<(usize, usize)> = (0..g.n)
            .flat_map(|n| (0..g.ho).map(move |i| (n, i)))
            .map(|(n, i)| ((n * hp + i) * wp, (n * g.ho + i) * g.wo))
            .collect();
        let job = DirectConv {
            xp: &xp,
            kernel,
            shifts: &shifts,
            bias,
            cin: g.cin,
            cout,
            runs: &runs,
            run: g.wo,
        };
        direct_conv(&job, &mut out);
        return out;
    }
    let mut grid = vec![0.0; g.grid_pixels() * cout];
    gemm_forward(&xp, kernel, g, &mut grid);
    if g.flat() {
        let at = grid_to_out(g);
        for n in 0..g.n {
            for i in 0..g.ho {
                let src = at(n, i, 0) * cout;
                let dst = ((n * g.ho + i) * g.wo) * cout;
                out[dst..dst + g.wo * cout].copy_from_slice(&grid[src..src + g.wo * cout]);
            }
        }
    } else {
        out = grid;
    }
    if let Some(bias) = bias {
        for px in out.chunks_exact_mut(cout) {
            px.iter_mut().zip(bias).for_each(|(o, b)| *o += b);
        }
    }
    out
}

fn gemm_forward(xp: &[f64], kernel: &[f64], g: &ConvGeometry, grid: &mut [f64]) {
    let (cin, cout) = (g.cin, g.cout);
    for block in g.blocks() {
        for (tap, a, b) in g.taps() {
            gemm(
                block.rows,
                cin,
                cout,
                xp,
                Layout::new((block.in_pixel + g.tap_shift(a, b)) * cin, block.in_step * cin, 1),
                kernel,
                Layout::new(tap * cin * cout, cout, 1),
                1.0,
                grid,
                Layout::new(block.out_pixel * cout, cout, 1),
            );
        }
    }
}

/// Upstream gradient laid out on the GEMM output grid.
fn gradient_grid<'a>(gout: &'a [f64], g: &ConvGeometry) -> Cow<'a, [f64]> {
    if !g.flat() {
        return Cow::Borrowed(gout);
    }
    let cout = g.cout;
    let mut grid = vec![0.0; g.grid_pixels() * cout];
    let at = grid_to_out(g);
    for n in 0..g.n {
        for i in 0..g.ho {
            let dst = at(n, i, 0) * cout;
            let src = ((n * g.ho + i) * g.wo) * cout;
            grid[dst..dst + g.wo * cout].copy_from_slice(&gout[src..src + g.wo * cout]);
        }
    }
    Cow::Owned(grid)
}

/// Accumulates d(loss)/d(input) into `gx`.
fn conv_input_grad(kernel: &[f64], grid: &[f64], g: &ConvGeometry, gx: &mut [f64]) {
    let (cin, cout) = (g.cin, g.cout);
    let (hp, wp) = (g.hp(), g.wp());
    let mut gxp = vec![0.0; g.n * hp * wp * cin];
    for block in g.blocks() {
        for (tap, a, b) in g.taps() {
            gemm(
                block.rows,
                cout,
                cin,
                grid,
                Layout::new(block.out_pixel * cout, cout, 1),
                kernel,
                Layout::new(tap * cin * cout, 1, cout),
                1.0,
                &mut gxp,
                Layout::new((block.in_pixel + g.tap_shift(a, b)) * cin, block.in_step * cin, 1),
            );
        }
    }
    for n in 0..g.n {
        for i in 0..g.h {
            let src = ((n * hp + i + g.pad_h) * wp + g.pad_w) * cin;
            let dst = ((n * g.h + i) * g.w) * cin;
            gx[dst..dst + g.w * cin]
                .iter_mut()
                .zip(&gxp[src..src + g.w * cin])
                .for_each(|(d, s)| *d += s);
        }
    }
}

/// Accumulates d(loss)/d(kernel) into `gk`.
fn conv_kernel_grad(x: &[f64], grid: &[f64], g: &ConvGeometry, gk: &mut [f64]) {
    let (cin, cout) = (g.cin, g.cout);
    let xp = pad_input(x, g);
    for block in g.blocks() {
        for (tap, a, b) in g.taps() {
            gemm(
                cin,
                block.rows,
                cout,
                &xp,
                Layout::new((block.in_pixel + g.tap_shift(a, b)) * cin, 1, block.in_step * cin),
                grid,
                Layout::new(block.out_pixel * cout, cout, 1),
                1.0,
                gk,
                Layout::new(tap * cin * cout, cout, 1),
            );
        }
    }
}

fn bias_grad(gout: &[f64], cout: usize, gb: &mut [f64]) {
    for px in gout.chunks_exact(cout) {
        gb.iter_mut().zip(px).for_each(|(d, s)| *d += s);
    }
}

fn check_bias(tape: &Tape, bias: Option<Var>, cout: usize) -> Result<()> {
    if let Some(b) = bias {
        contract!(
            tape.shape(b) == [cout],
            "bias shape {:?} does not match {cout} output channels",
            tape.shape(b)
        );
    }
    Ok(())
}

impl Tape {
    /// `out[n,i,j,o] = bias[o] + Σ x[n, i·s + d·a − p, j·s + d·b − p, c]·k[a,b,c,o]`
    /// with zero contribution from reads outside the input.
    pub fn conv2d(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        opts: Conv2dOptions,
    ) -> Result<Var> {
        let geom = ConvGeometry::new(self.shape(x), self.shape(kernel), opts)?;
        check_bias(self, bias, geom.cout)?;
        let out = conv_forward(
            self.value(x).data(),
            self.value(kernel).data(),
            bias.map(|b| self.value(b).data()),
            &geom,
        );
        let value = Tensor::new(&[geom.n, geom.ho, geom.wo, geom.cout], out)?;
        let mut inputs = vec![x.0, kernel.0];
        inputs.extend(bias.map(|b| b.0));
        self.push_op(
            value,
            &inputs,
            Op::Conv2d {
                x: x.0,
                kernel: kernel.0,
                bias: bias.map(|b| b.0),
                geom,
            },
        )
    }

    /// Learned 2× upsampling: `out[n, 2i+a, 2j+b, o] = bias[o] + Σ_c x[n,i,j,c]·k[a,b,o,c]`
    /// with the kernel laid out `2×2×Cout×Cin`.
    pub fn conv_transpose2d(&mut self, x: Var, kernel: Var, bias: Option<Var>) -> Result<Var> {
        let (n, h, w, cin) = self.value(x).dims4()?;
        let ks = self.shape(kernel);
        contract!(
            ks.len() == 4 && ks[0] == 2 && ks[1] == 2,
            "conv_transpose2d supports only 2×2 stride-2 kernels, got {ks:?}"
        );
        contract!(
            ks[3] == cin,
            "conv_transpose2d channel mismatch: input has {cin}, kernel expects {}",
            ks[3]
        );
        let cout = ks[2];
        check_bias(self, bias, cout)?;
        let mut out = vec![0.0; n * 4 * h * w * cout];
        let xd = self.value(x).data();
        let kd = self.value(kernel).data();
        for a in 0..2 {
            for b in 0..2 {
                let tap = a * 2 + b;
                for nn in 0..n {
                    for i in 0..h {
                        gemm(
                            w,
                            cin,
                            cout,
                            xd,
                            Layout::new((nn * h + i) * w * cin, cin, 1),
                            kd,
                            Layout::new(tap * cout * cin, 1, cin),
                            1.0,
                            &mut out,
                            Layout::new(((nn * 2 * h + 2 * i + a) * 2 * w + b) * cout, 2 * cout, 1),
                        );
                    }
                }
            }
        }
        if let Some(b) = bias {
            let bd = self.value(b).data();
            for px in out.chunks_exact_mut(cout) {
                px.iter_mut().zip(bd).for_each(|(o, b)| *o += b);
            }
        }
        let value = Tensor::new(&[n, 2 * h, 2 * w, cout], out)?;
        let mut inputs = vec![x.0, kernel.0];
        inputs.extend(bias.map(|b| b.0));
        self.push_op(
            value,
            &inputs,
            Op::ConvTranspose2d {
                x: x.0,
                kernel: kernel.0,
                bias: bias.map(|b| b.0),
            },
        )
    }
}

pub(crate) fn conv2d_backward(
    x: usize,
    kernel: usize,
    bias: Option<usize>,
    geom: &ConvGeometry,
    gout: &[f64],
    values: &[Tensor],
    grads: &mut Grads,
) {
    let grid = gradient_grid(gout, geom);
    if let Some(gx) = grads.slot(x) {
        conv_input_grad(values[kernel].data(), &grid, geom, gx);
    }
    if let Some(gk) = grads.slot(kernel) {
        conv_kernel_grad(values[x].data(), &grid, geom, gk);
    }
    if let Some(gb) = bias.and_then(|b| grads.slot(b)) {
        bias_grad(gout, geom.cout, gb);
    }
}

pub(crate) fn conv_transpose2d_backward(
    x: usize,
    kernel: usize,
    bias: Option<usize>,
    gout: &[f64],
    values: &[Tensor],
    grads: &mut Grads,
) {
    let (n, h, w, cin) = values[x].dims4().expect("rank-4 input");
    let cout = values[kernel].shape()[2];
    let xd = values[x].data();
    let kd = values[kernel].data();
    let gout_at = |nn: usize, i: usize, a: usize, b: usize| ((nn * 2 * h + 2 * i + a) * 2 * w + b) * cout;
    if let Some(gx) = grads.slot(x) {
        for a in 0..2 {
            for b in 0..2 {
                let tap = a * 2 + b;
                for nn in 0..n {
                    for i in 0..h {
                        gemm(
                            w,
                            cout,
                            cin,
                            gout,
                            Layout::new(gout_at(nn, i, a, b), 2 * cout, 1),
                            kd,
                            Layout::new(tap * cout * cin, cin, 1),
                            1.0,
                            gx,
                            Layout::new((nn * h + i) * w * cin, cin, 1),
                        );
                    }
                }
            }
        }
    }
    if let Some(gk) = grads.slot(kernel) {
        for a in 0..2 {
            for b in 0..2 {
                let tap = a * 2 + b;
                for nn in 0..n {
                    for i in 0..h {
                        gemm(
                            cout,
                            w,
                            cin,
                            gout,
                            Layout::new(gout_at(nn, i, a, b), 1, 2 * cout),
                            xd,
                            Layout::new((nn * h + i) * w * cin, cin, 1),
                            1.0,
                            gk,
                            Layout::new(tap * cout * cin, cin, 1),
                        );
                    }
                }
            }
        }
    }
    if let Some(gb) = bias.and_then(|b| grads.slot(b)) {
        bias_grad(gout, cout, gb);
    }
}
