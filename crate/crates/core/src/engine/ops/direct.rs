//! Register-tiled stride-1 convolution for layers whose kernel slices stay
//! cache resident, where packed GEMM spends most of its time repacking.
//!
//! Every accumulation is a fused multiply-add in the same order on all
//! paths, so the AVX2 and portable builds produce identical bits.

/// Whether a stride-1 layer with `taps·cin` reduction length and `cout`
/// outputs should bypass GEMM.
pub(crate) fn preferred(taps: usize, cin: usize, cout: usize) -> bool {
    cout <= 128 && taps * cin <= 1536
}

/// Geometry of one direct convolution on a flat padded grid.
pub(crate) struct DirectConv<'a> {
    /// Padded input, `pixels × cin`.
    pub xp: &'a [f64],
    /// Kernel `taps × cin × cout`.
    pub kernel: &'a [f64],
    /// Pixel offset of each tap.
    pub shifts: &'a [usize],
    pub bias: Option<&'a [f64]>,
    pub cin: usize,
    pub cout: usize,
    /// Runs of `run` consecutive pixels: (first input pixel, first output pixel).
    pub runs: &'a [(usize, usize)],
    pub run: usize,
}

impl DirectConv<'_> {
    fn start(&self, o: usize) -> f64 {
        self.bias.map_or(0.0, |b| b[o])
    }
}

/// Writes `out[q + t, o] = bias[o] + Σ_tap Σ_c xp[p + t + shift(tap), c]·kernel[tap, c, o]`
/// for every run `(p, q)` and `t < run`.
pub(crate) fn direct_conv(job: &DirectConv, out: &mut [f64]) {
    let max_shift = job.shifts.iter().copied().max().unwrap_or(0);
    for &(p, q) in job.runs {
        assert!((p + job.run + max_shift) * job.cin <= job.xp.len(), "direct_conv: input view out of bounds");
        assert!((q + job.run) * job.cout <= out.len(), "direct_conv: output view out of bounds");
    }
    assert_eq!(job.kernel.len(), job.shifts.len() * job.cin * job.cout, "direct_conv: kernel size");
    if let Some(b) = job.bias {
        assert_eq!(b.len(), job.cout, "direct_conv: bias size");
    }

    let mut o0 = 0;
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx512f") {
            // SAFETY: CPU feature detected above; bounds asserted above.
            unsafe {
                while job.cout - o0 >= 32 {
                    avx512::channel_block::<4, 6>(job, o0, out);
                    o0 += 32;
                }
                if job.cout - o0 >= 16 {
                    avx512::channel_block::<2, 12>(job, o0, out);
                    o0 += 16;
                }
                if job.cout - o0 >= 8 {
                    avx512::channel_block::<1, 16>(job, o0, out);
                    o0 += 8;
                }
            }
        }
        if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
            // SAFETY: CPU features detected above; bounds asserted above.
            unsafe {
                while job.cout - o0 >= 16 {
                    avx2::channel_block::<4, 3>(job, o0, out);
                    o0 += 16;
                }
                if job.cout - o0 >= 8 {
                    avx2::channel_block::<2, 6>(job, o0, out);
                    o0 += 8;
                }
                if job.cout - o0 >= 4 {
                    avx2::channel_block::<1, 8>(job, o0, out);
                    o0 += 4;
                }
            }
        }
    }
    for o in o0..job.cout {
        scalar_channel(job, o, out);
    }
}

/// One output channel, one pixel at a time; same arithmetic as the AVX2 path.
fn scalar_channel(job: &DirectConv, o: usize, out: &mut [f64]) {
    let (cin, cout) = (job.cin, job.cout);
    for &(p0, q0) in job.runs {
        for t in 0..job.run {
            let p = p0 + t;
            let mut acc = job.start(o);
            for (tap, &shift) in job.shifts.iter().enumerate() {
                let x = &job.xp[(p + shift) * cin..(p + shift + 1) * cin];
                let k = &job.kernel[tap * cin * cout..(tap + 1) * cin * cout];
                for (c, &xv) in x.iter().enumerate() {
                    acc = xv.mul_add(k[c * cout + o], acc);
                }
            }
            out[(q0 + t) * cout + o] = acc;
        }
    }
}

#[cfg(target_arch = "x86_64")]
mod avx2 {
    use std::arch::x86_64::*;

    use super::DirectConv;

    /// Output channels `o0..o0 + 4·NV`, `P` pixels per register tile.
    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn channel_block<const NV: usize, const P: usize>(
        job: &DirectConv,
        o0: usize,
        out: &mut [f64],
    ) {
        for &(p0, q0) in job.runs {
            let mut t = 0;
            while t + P <= job.run {
                tile::<NV, P>(job, o0, p0 + t, q0 + t, out);
                t += P;
            }
            while t < job.run {
                tile::<NV, 1>(job, o0, p0 + t, q0 + t, out);
                t += 1;
            }
        }
    }

    #[target_feature(enable = "avx2,fma")]
    #[inline]
    unsafe fn tile<const NV: usize, const P: usize>(
        job: &DirectConv,
        o0: usize,
        p: usize,
        q: usize,
        out: &mut [f64],
    ) {
        let (cin, cout) = (job.cin, job.cout);
        let mut init = [_mm256_setzero_pd(); NV];
        if let Some(b) = job.bias {
            for (v, iv) in init.iter_mut().enumerate() {
                *iv = _mm256_loadu_pd(b.as_ptr().add(o0 + 4 * v));
            }
        }
        let mut acc = [init; P];
        for (tap, &shift) in job.shifts.iter().enumerate() {
            let xb = job.xp.as_ptr().add((p + shift) * cin);
            let kb = job.kernel.as_ptr().add(tap * cin * cout + o0);
            for c in 0..cin {
                let mut w = [_mm256_setzero_pd(); NV];
                for (v, wv) in w.iter_mut().enumerate() {
                    *wv = _mm256_loadu_pd(kb.add(c * cout + 4 * v));
                }
                for (q, row) in acc.iter_mut().enumerate() {
                    let xv = _mm256_broadcast_sd(&*xb.add(q * cin + c));
                    for (a, &wv) in row.iter_mut().zip(&w) {
                        *a = _mm256_fmadd_pd(xv, wv, *a);
                    }
                }
            }
        }
        let dst = out.as_mut_ptr();
        for (t, row) in acc.iter().enumerate() {
            for (v, a) in row.iter().enumerate() {
                _mm256_storeu_pd(dst.add((q + t) * cout + o0 + 4 * v), *a);
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
mod avx512 {
    use std::arch::x86_64::*;

    use super::DirectConv;

    /// Output channels `o0..o0 + 8·NV`, `P` pixels per register tile.
    #[target_feature(enable = "avx512f")]
    pub(super) unsafe fn channel_block<const NV: usize, const P: usize>(
        job: &DirectConv,
        o0: usize,
        out: &mut [f64],
    ) {
        for &(p0, q0) in job.runs {
            let mut t = 0;
            while t + P <= job.run {
                tile::<NV, P>(job, o0, p0 + t, q0 + t, out);
                t += P;
            }
            while t < job.run {
                tile::<NV, 1>(job, o0, p0 + t, q0 + t, out);
                t += 1;
            }
        }
    }

    #[target_feature(enable = "avx512f")]
    #[inline]
    unsafe fn tile<const NV: usize, const P: usize>(
        job: &DirectConv,
        o0: usize,
        p: usize,
        q: usize,
        out: &mut [f64],
    ) {
        let (cin, cout) = (job.cin, job.cout);
        let mut init = [_mm512_setzero_pd(); NV];
        if let Some(b) = job.bias {
            for (v, iv) in init.iter_mut().enumerate() {
                *iv = _mm512_loadu_pd(b.as_ptr().add(o0 + 8 * v));
            }
        }
        let mut acc = [init; P];
        for (tap, &shift) in job.shifts.iter().enumerate() {
            let xb = job.xp.as_ptr().add((p + shift) * cin);
            let kb = job.kernel.as_ptr().add(tap * cin * cout + o0);
            for c in 0..cin {
                let mut w = [_mm512_setzero_pd(); NV];
                for (v, wv) in w.iter_mut().enumerate() {
                    *wv = _mm512_loadu_pd(kb.add(c * cout + 8 * v));
                }
                for (q, row) in acc.iter_mut().enumerate() {
                    let xv = _mm512_set1_pd(*xb.add(q * cin + c));
                    for (a, &wv) in row.iter_mut().zip(&w) {
                        *a = _mm512_fmadd_pd(xv, wv, *a);
                    }
                }
            }
        }
        let dst = out.as_mut_ptr();
        for (t, row) in acc.iter().enumerate() {
            for (v, a) in row.iter().enumerate() {
                _mm512_storeu_pd(dst.add((q + t) * cout + o0 + 8 * v), *a);
            }
        }
    }
}
