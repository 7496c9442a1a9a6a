//! Channel concatenation, elementwise arithmetic, nearest upsampling and reductions.

use crate::engine::tape::{Grads, Op, Tape, Var};
use crate::engine::tensor::Tensor;
use crate::error::{contract, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Arith {
    Add,
    Mul,
}

impl Tape {
    /// `N×H×W×Ca ++ N×H×W×Cb → N×H×W×(Ca+Cb)`.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, h, w, ca) = self.value(a).dims4()?;
        let (nb, hb, wb, cb) = self.value(b).dims4()?;
        contract!(
            (n, h, w) == (nb, hb, wb),
            "concat_channels spatial mismatch: {:?} vs {:?}",
            self.shape(a),
            self.shape(b)
        );
        let c = ca + cb;
        let mut out = Vec::with_capacity(n * h * w * c);
        for (pa, pb) in self
            .value(a)
            .data()
            .chunks_exact(ca)
            .zip(self.value(b).data().chunks_exact(cb))
        {
            out.extend_from_slice(pa);
            out.extend_from_slice(pb);
        }
        let value = Tensor::new(&[n, h, w, c], out)?;
        self.push_op(value, &[a.0, b.0], Op::Concat { a: a.0, b: b.0 })
    }

    /// Elementwise sum; `b` may be `N×1×1×C` and is then broadcast over space.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.arith(a, b, Arith::Add)
    }

    /// Elementwise product; `b` may be `N×1×1×C` and is then broadcast over space.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.arith(a, b, Arith::Mul)
    }

    fn arith(&mut self, a: Var, b: Var, kind: Arith) -> Result<Var> {
        let broadcast = broadcast_kind(self.shape(a), self.shape(b))?;
        let av = self.value(a);
        let bv = self.value(b).data();
        let f = |x: f64, y: f64| match kind {
            Arith::Add => x + y,
            Arith::Mul => x * y,
        };
        let data: Vec<f64> = if broadcast {
            let s = av.shape();
            let (plane, c) = (s[1] * s[2], s[3]);
            av.data()
                .chunks_exact(c)
                .enumerate()
                .flat_map(|(p, px)| {
                    let bb = &bv[(p / plane) * c..(p / plane + 1) * c];
                    px.iter().zip(bb).map(move |(&x, &y)| f(x, y))
                })
                .collect()
        } else {
            av.data().iter().zip(bv).map(|(&x, &y)| f(x, y)).collect()
        };
        let value = Tensor::new(av.shape(), data)?;
        let op = match kind {
            Arith::Add => Op::Add {
                a: a.0,
                b: b.0,
                broadcast,
            },
            Arith::Mul => Op::Mul {
                a: a.0,
                b: b.0,
                broadcast,
            },
        };
        self.push_op(value, &[a.0, b.0], op)
    }

    /// Nearest-neighbour upsampling by integer factors to `height×width`.
    pub fn upsample_nearest(&mut self, x: Var, height: usize, width: usize) -> Result<Var> {
        let (n, h, w, c) = self.value(x).dims4()?;
        contract!(
            height >= h && width >= w && height % h == 0 && width % w == 0,
            "upsample_nearest needs integer scale factors: {h}×{w} → {height}×{width}"
        );
        let (fy, fx) = (height / h, width / w);
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(n * height * width * c);
        for nn in 0..n {
            for i in 0..height {
                let row = (nn * h + i / fy) * w;
                for j in 0..width {
                    let src = (row + j / fx) * c;
                    out.extend_from_slice(&xs[src..src + c]);
                }
            }
        }
        let value = Tensor::new(&[n, height, width, c], out)?;
        self.push_op(value, &[x.0], Op::Upsample { x: x.0, fy, fx })
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(x).sum());
        self.push_op(value, &[x.0], Op::Sum { x: x.0 })
    }

    /// `Σ weights[i]·terms[i]` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[Var], weights: &[f64]) -> Result<Var> {
        contract!(
            terms.len() == weights.len() && !terms.is_empty(),
            "weighted_sum needs one weight per term ({} terms, {} weights)",
            terms.len(),
            weights.len()
        );
        let mut total = 0.0;
        for (t, w) in terms.iter().zip(weights) {
            contract!(
                self.value(*t).is_scalar(),
                "weighted_sum term has shape {:?}, expected a scalar",
                self.shape(*t)
            );
            total += w * self.value(*t).item();
        }
        let ids: Vec<usize> = terms.iter().map(|t| t.0).collect();
        self.push_op(
            Tensor::scalar(total),
            &ids,
            Op::WeightedSum {
                terms: ids.clone(),
                weights: weights.to_vec(),
            },
        )
    }
}

/// `Ok(false)` for equal shapes, `Ok(true)` for the `N×H×W×C` ∘ `N×1×1×C` case.
fn broadcast_kind(a: &[usize], b: &[usize]) -> Result<bool> {
    if a == b {
        return Ok(false);
    }
    contract!(
        a.len() == 4 && b.len() == 4 && b[0] == a[0] && b[1] == 1 && b[2] == 1 && b[3] == a[3],
        "incompatible elementwise shapes {a:?} and {b:?}"
    );
    Ok(true)
}

pub(crate) fn concat_backward(a: usize, b: usize, gout: &[f64], values: &[Tensor], grads: &mut Grads) {
    let ca = values[a].shape()[3];
    let cb = values[b].shape()[3];
    if let Some(ga) = grads.slot(a) {
        for (d, g) in ga.chunks_exact_mut(ca).zip(gout.chunks_exact(ca + cb)) {
            d.iter_mut().zip(&g[..ca]).for_each(|(x, y)| *x += y);
        }
    }
    if let Some(gb) = grads.slot(b) {
        for (d, g) in gb.chunks_exact_mut(cb).zip(gout.chunks_exact(ca + cb)) {
            d.iter_mut().zip(&g[ca..]).for_each(|(x, y)| *x += y);
        }
    }
}

/// Reduces a full-shape gradient onto `b`, summing over the broadcast axes.
fn reduce_to_b(full: impl Iterator<Item = f64>, shape_a: &[usize], broadcast: bool, gb: &mut [f64]) {
    if broadcast {
        let (plane, c) = (shape_a[1] * shape_a[2], shape_a[3]);
        for (idx, g) in full.enumerate() {
            let p = idx / c;
            gb[(p / plane) * c + idx % c] += g;
        }
    } else {
        gb.iter_mut().zip(full).for_each(|(d, g)| *d += g);
    }
}

/// Value of `b` aligned with flat index `idx` of `a`.
#[inline]
fn b_at(b: &[f64], shape_a: &[usize], broadcast: bool, idx: usize) -> f64 {
    if broadcast {
        let (plane, c) = (shape_a[1] * shape_a[2], shape_a[3]);
        b[((idx / c) / plane) * c + idx % c]
    } else {
        b[idx]
    }
}

pub(crate) fn add_backward(
    a: usize,
    b: usize,
    broadcast: bool,
    gout: &[f64],
    values: &[Tensor],
    grads: &mut Grads,
) {
    if let Some(ga) = grads.slot(a) {
        ga.iter_mut().zip(gout).for_each(|(d, g)| *d += g);
    }
    let shape_a = values[a].shape();
    if let Some(gb) = grads.slot(b) {
        reduce_to_b(gout.iter().copied(), shape_a, broadcast, gb);
    }
}

pub(crate) fn mul_backward(
    a: usize,
    b: usize,
    broadcast: bool,
    gout: &[f64],
    values: &[Tensor],
    grads: &mut Grads,
) {
    let shape_a = values[a].shape();
    let av = values[a].data();
    let bv = values[b].data();
    if let Some(ga) = grads.slot(a) {
        for (idx, (d, g)) in ga.iter_mut().zip(gout).enumerate() {
            *d += g * b_at(bv, shape_a, broadcast, idx);
        }
    }
    if let Some(gb) = grads.slot(b) {
        reduce_to_b(gout.iter().zip(av).map(|(g, x)| g * x), shape_a, broadcast, gb);
    }
}

pub(crate) fn upsample_backward(
    x: usize,
    fy: usize,
    fx: usize,
    gout: &[f64],
    values: &[Tensor],
    grads: &mut Grads,
) {
    let (n, h, w, c) = values[x].dims4().expect("rank-4 input");
    let (height, width) = (h * fy, w * fx);
    if let Some(gx) = grads.slot(x) {
        for nn in 0..n {
            for i in 0..height {
                for j in 0..width {
                    let dst = ((nn * h + i / fy) * w + j / fx) * c;
                    let src = ((nn * height + i) * width + j) * c;
                    gx[dst..dst + c]
                        .iter_mut()
                        .zip(&gout[src..src + c])
                        .for_each(|(d, g)| *d += g);
                }
            }
        }
    }
}

pub(crate) fn sum_backward(x: usize, gout: &[f64], grads: &mut Grads) {
    if let Some(gx) = grads.slot(x) {
        gx.iter_mut().for_each(|d| *d += gout[0]);
    }
}

pub(crate) fn weighted_sum_backward(terms: &[usize], weights: &[f64], gout: &[f64], grads: &mut Grads) {
    for (&t, w) in terms.iter().zip(weights) {
        if let Some(gt) = grads.slot(t) {
            gt[0] += w * gout[0];
        }
    }
}
