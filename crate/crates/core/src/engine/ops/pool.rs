//! Windowed pooling, 2×2 max downsampling and global average pooling.

use crate::engine::tape::{Grads, Op, Tape, Var};
use crate::engine::tensor::Tensor;
use crate::error::{contract, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

/// In-bounds window `[lo, hi)` along one axis around `center`.
#[inline]
fn window(center: usize, radius: usize, extent: usize) -> (usize, usize) {
    (center.saturating_sub(radius), (center + radius + 1).min(extent))
}

impl Tape {
    /// Stride-1 pooling over a `window×window` neighbourhood; output has the
    /// input's shape. Only in-bounds elements participate: the average
    /// divides by the in-bounds count and the maximum ignores the border.
    pub fn pool2d(&mut self, x: Var, kind: PoolKind, window_size: usize) -> Result<Var> {
        contract!(
            window_size % 2 == 1,
            "pool2d window must be odd, got {window_size}"
        );
        let (n, h, w, c) = self.value(x).dims4()?;
        let r = window_size / 2;
        let track = kind == PoolKind::Max && self.is_recording() && self.requires_grad(x);
        let xs = self.value(x).data();
        let mut out = vec![0.0; xs.len()];
        let mut argmax = if track { vec![0usize; xs.len()] } else { Vec::new() };
        for nn in 0..n {
            for i in 0..h {
                let (i0, i1) = window(i, r, h);
                for j in 0..w {
                    let (j0, j1) = window(j, r, w);
                    let o = ((nn * h + i) * w + j) * c;
                    let dst = &mut out[o..o + c];
                    let first = ((nn * h + i0) * w + j0) * c;
                    match kind {
                        PoolKind::Max => {
                            dst.copy_from_slice(&xs[first..first + c]);
                            if track {
                                let am = &mut argmax[o..o + c];
                                am.iter_mut().enumerate().for_each(|(ch, a)| *a = first + ch);
                                for ii in i0..i1 {
                                    for jj in j0..j1 {
                                        let base = ((nn * h + ii) * w + jj) * c;
                                        let src = &xs[base..base + c];
                                        for (ch, (d, &v)) in dst.iter_mut().zip(src).enumerate() {
                                            if v > *d {
                                                *d = v;
                                                am[ch] = base + ch;
                                            }
                                        }
                                    }
                                }
                            } else {
                                for ii in i0..i1 {
                                    for jj in j0..j1 {
                                        let base = ((nn * h + ii) * w + jj) * c;
                                        for (d, &v) in dst.iter_mut().zip(&xs[base..base + c]) {
                                            *d = if v > *d { v } else { *d };
                                        }
                                    }
                                }
                            }
                        }
                        PoolKind::Avg => {
                            for ii in i0..i1 {
                                for jj in j0..j1 {
                                    let base = ((nn * h + ii) * w + jj) * c;
                                    for (d, &v) in dst.iter_mut().zip(&xs[base..base + c]) {
                                        *d += v;
                                    }
                                }
                            }
                            let inv = 1.0 / ((i1 - i0) * (j1 - j0)) as f64;
                            dst.iter_mut().for_each(|d| *d *= inv);
                        }
                    }
                }
            }
        }
        let value = Tensor::new(&[n, h, w, c], out)?;
        self.push_op(
            value,
            &[x.0],
            Op::Pool {
                x: x.0,
                kind,
                window: window_size,
                argmax,
            },
        )
    }

    pub fn max_pool3x3(&mut self, x: Var) -> Result<Var> {
        self.pool2d(x, PoolKind::Max, 3)
    }

    pub fn avg_pool3x3(&mut self, x: Var) -> Result<Var> {
        self.pool2d(x, PoolKind::Avg, 3)
    }

    /// Non-overlapping 2×2 max pooling, halving both spatial extents.
    pub fn max_pool2x2(&mut self, x: Var) -> Result<Var> {
        let (n, h, w, c) = self.value(x).dims4()?;
        contract!(
            h % 2 == 0 && w % 2 == 0,
            "max_pool2x2 needs even spatial extents, got {h}×{w}"
        );
        let (ho, wo) = (h / 2, w / 2);
        let xs = self.value(x).data();
        let mut out = vec![0.0; n * ho * wo * c];
        let mut argmax = vec![0usize; out.len()];
        for nn in 0..n {
            for i in 0..ho {
                for j in 0..wo {
                    let o = ((nn * ho + i) * wo + j) * c;
                    for ch in 0..c {
                        let mut best_idx = ((nn * h + 2 * i) * w + 2 * j) * c + ch;
                        for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                            let idx = ((nn * h + 2 * i + di) * w + 2 * j + dj) * c + ch;
                            if xs[idx] > xs[best_idx] {
                                best_idx = idx;
                            }
                        }
                        out[o + ch] = xs[best_idx];
                        argmax[o + ch] = best_idx;
                    }
                }
            }
        }
        let value = Tensor::new(&[n, ho, wo, c], out)?;
        self.push_op(value, &[x.0], Op::MaxDown2 { x: x.0, argmax })
    }

    /// Per-channel spatial mean: `N×H×W×C → N×1×1×C`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (n, h, w, c) = self.value(x).dims4()?;
        let xs = self.value(x).data();
        let mut out = vec![0.0; n * c];
        for nn in 0..n {
            let o = &mut out[nn * c..(nn + 1) * c];
            for px in xs[nn * h * w * c..(nn + 1) * h * w * c].chunks_exact(c) {
                o.iter_mut().zip(px).for_each(|(a, v)| *a += v);
            }
            o.iter_mut().for_each(|a| *a /= (h * w) as f64);
        }
        let value = Tensor::new(&[n, 1, 1, c], out)?;
        self.push_op(value, &[x.0], Op::GlobalAvgPool { x: x.0 })
    }
}

pub(crate) fn pool_backward(
    x: usize,
    kind: PoolKind,
    window_size: usize,
    argmax: &[usize],
    gout: &[f64],
    values: &[Tensor],
    grads: &mut Grads,
) {
    let (n, h, w, c) = values[x].dims4().expect("rank-4 input");
    let Some(gx) = grads.slot(x) else {
        return;
    };
    match kind {
        PoolKind::Max => {
            for (g, &idx) in gout.iter().zip(argmax) {
                gx[idx] += g;
            }
        }
        PoolKind::Avg => {
            let r = window_size / 2;
            for nn in 0..n {
                for i in 0..h {
                    let (i0, i1) = window(i, r, h);
                    for j in 0..w {
                        let (j0, j1) = window(j, r, w);
                        let share = 1.0 / ((i1 - i0) * (j1 - j0)) as f64;
                        let o = ((nn * h + i) * w + j) * c;
                        for ii in i0..i1 {
                            for jj in j0..j1 {
                                let base = ((nn * h + ii) * w + jj) * c;
                                for ch in 0..c {
                                    gx[base + ch] += gout[o + ch] * share;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn max_down_backward(x: usize, argmax: &[usize], gout: &[f64], grads: &mut Grads) {
    if let Some(gx) = grads.slot(x) {
        for (g, &idx) in gout.iter().zip(argmax) {
            gx[idx] += g;
        }
    }
}

pub(crate) fn gap_backward(x: usize, gout: &[f64], values: &[Tensor], grads: &mut Grads) {
    let (_, h, w, c) = values[x].dims4().expect("rank-4 input");
    let plane = h * w;
    if let Some(gx) = grads.slot(x) {
        for (nn, img) in gx.chunks_exact_mut(plane * c).enumerate() {
            let g = &gout[nn * c..(nn + 1) * c];
            for px in img.chunks_exact_mut(c) {
                for (d, gv) in px.iter_mut().zip(g) {
                    *d += gv / plane as f64;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_1_to_9() -> Tensor {
        Tensor::from_fn(&[1, 3, 3, 1], |i| (i + 1) as f64)
    }

    #[test]
    fn constant_input_is_a_fixed_point() {
        let mut tape = Tape::no_grad();
        let x = tape.constant(Tensor::full(&[2, 4, 5, 3], 1.5));
        for kind in [PoolKind::Max, PoolKind::Avg] {
            let y = tape.pool2d(x, kind, 3).unwrap();
            assert!(tape.value(y).data().iter().all(|&v| v == 1.5));
        }
        let d = tape.max_pool2x2(x);
        assert!(d.is_err(), "odd width must be rejected");
        let x = tape.constant(Tensor::full(&[1, 4, 6, 2], -2.0));
        let d = tape.max_pool2x2(x).unwrap();
        assert_eq!(tape.value(d), &Tensor::full(&[1, 2, 3, 2], -2.0));
    }

    #[test]
    fn windowed_values() {
        let mut tape = Tape::no_grad();
        let x = tape.constant(grid_1_to_9());
        let m = tape.max_pool3x3(x).unwrap();
        assert_eq!(tape.value(m).at4(0, 1, 1, 0), 9.0);
        let a = tape.avg_pool3x3(x).unwrap();
        assert_eq!(tape.value(a).at4(0, 0, 0, 0), 3.0);
        assert_eq!(tape.value(a).at4(0, 1, 1, 0), 5.0);
    }

    #[test]
    fn max_downsample_and_gap() {
        let mut tape = Tape::no_grad();
        let x = tape.constant(Tensor::new(&[1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let d = tape.max_pool2x2(x).unwrap();
        assert_eq!(tape.value(d).data(), &[4.0]);
        let x = tape.constant(Tensor::new(&[1, 2, 2, 1], vec![0.0, 0.0, 2.0, 2.0]).unwrap());
        let g = tape.global_avg_pool(x).unwrap();
        assert_eq!(tape.value(g).shape(), &[1, 1, 1, 1]);
        assert_eq!(tape.value(g).item(), 1.0);
    }

    #[test]
    fn gap_gradient_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_fn(&[2, 3, 4, 2], |i| i as f64));
        let g = tape.global_avg_pool(x).unwrap();
        let s = tape.sum(g).unwrap();
        tape.backward(s).unwrap();
        assert!(tape.grad(x).unwrap().data().iter().all(|&v| (v - 1.0 / 12.0).abs() < 1e-15));
    }

    #[test]
    fn max_ties_route_to_first_index() {
        for _ in 0..2 {
            let mut tape = Tape::new();
            let x = tape.param(Tensor::ones(&[1, 2, 2, 1]));
            let d = tape.max_pool2x2(x).unwrap();
            let s = tape.sum(d).unwrap();
            tape.backward(s).unwrap();
            assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
        }
    }
}
