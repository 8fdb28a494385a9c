//! Slice-level forward and backward kernels.
//!
//! Each kernel writes disjoint output chunks (one image plane, one filter,
//! one matrix row) through [`Exec`], so the arithmetic performed for any
//! output element is identical at every worker count.

use crate::error::{Error, Result};

use super::Exec;

/// Chunk length for elementwise kernels.
const ELEMENTWISE_CHUNK: usize = 1 << 14;

/// Largest f32 strictly below 1.
const SIGMOID_MAX: f32 = 1.0 - f32::EPSILON / 2.0;
const SIGMOID_ARG_CLAMP: f64 = 30.0;
pub const BCE_EPS: f64 = 1e-7;

/// Geometry of one 2-d convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(input: [usize; 4], kernel: [usize; 4], stride: usize, pad: usize) -> Result<Self> {
        let [n, c, h, w] = input;
        let [f, kc, kh, kw] = kernel;
        if stride == 0 {
            return Err(Error::shape("conv2d stride must be positive"));
        }
        if c != kc {
            return Err(Error::shape(format!(
                "conv2d input has {c} channels but kernel expects {kc}"
            )));
        }
        if kh == 0 || kw == 0 {
            return Err(Error::shape("conv2d kernel must be non-empty"));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::shape(format!(
                "conv2d kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        let (span_h, span_w) = (h + 2 * pad - kh, w + 2 * pad - kw);
        if span_h % stride != 0 || span_w % stride != 0 {
            return Err(Error::shape(format!(
                "conv2d output size not exact: ({h}+2*{pad}-{kh}) and ({w}+2*{pad}-{kw}) must divide by stride {stride}"
            )));
        }
        Ok(Self {
            n,
            c,
            h,
            w,
            f,
            kh,
            kw,
            stride,
            pad,
            oh: span_h / stride + 1,
            ow: span_w / stride + 1,
        })
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.n, self.f, self.oh, self.ow]
    }

    /// Output positions `o` along one axis with `0 <= o*stride + tap - pad < len`.
    fn valid(&self, tap: usize, len: usize, out_len: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if self.pad > tap {
            (self.pad - tap).div_ceil(s)
        } else {
            0
        };
        let hi = if len + self.pad > tap {
            (len + self.pad - tap).div_ceil(s).min(out_len)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

/// f64 dot product with eight independent lanes.
pub fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            lanes[k] += x[k] as f64 * y[k] as f64;
        }
    }
    let mut tail = 0f64;
    for (x, y) in ra.iter().zip(rb) {
        tail += *x as f64 * *y as f64;
    }
    ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5])) + ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7])) + tail
}

fn sum_f64(a: &[f32]) -> f64 {
    let mut lanes = [0f64; 8];
    let ca = a.chunks_exact(8);
    let ra = ca.remainder();
    for x in ca {
        for k in 0..8 {
            lanes[k] += x[k] as f64;
        }
    }
    let tail: f64 = ra.iter().map(|&v| v as f64).sum();
    lanes.iter().sum::<f64>() + tail
}

pub fn conv2d_forward(exec: &Exec, g: &ConvGeom, x: &[f32], k: &[f32], bias: &[f32]) -> Vec<f32> {
    if g.stride == 1 {
        conv2d_forward_flat(exec, g, x, k, bias)
    } else {
        conv2d_forward_strided(exec, g, x, k, bias)
    }
}

/// Gradient with respect to the convolution input.
pub fn conv2d_backward_input(exec: &Exec, g: &ConvGeom, dout: &[f32], k: &[f32]) -> Vec<f32> {
    if g.stride == 1 {
        conv2d_backward_input_flat(exec, g, dout, k)
    } else {
        conv2d_backward_input_strided(exec, g, dout, k)
    }
}

/// Gradients with respect to the kernel and the bias.
pub fn conv2d_backward_params(exec: &Exec, g: &ConvGeom, dout: &[f32], x: &[f32]) -> (Vec<f32>, Vec<f32>) {
    if g.stride == 1 {
        conv2d_backward_params_flat(exec, g, dout, x)
    } else {
        conv2d_backward_params_strided(exec, g, dout, x)
    }
}

/// Unit-stride convolutions run on zero-padded planes laid out with the
/// padded row pitch `wp`. Output `(y, x)` then sits at flat index
/// `y*wp + x` and tap `(i, j)` reads input index `y*wp + x + i*wp + j`, so
/// every tap is one contiguous multiply-add over `span` elements. The
/// `wp - ow` trailing columns of each row are scratch and discarded.
#[derive(Clone, Copy)]
struct FlatGeom {
    hp: usize,
    wp: usize,
    span: usize,
}

impl FlatGeom {
    fn new(g: &ConvGeom) -> Self {
        let hp = g.h + 2 * g.pad;
        let wp = g.w + 2 * g.pad;
        Self {
            hp,
            wp,
            span: (g.oh - 1) * wp + g.ow,
        }
    }

    fn plane(&self) -> usize {
        self.hp * self.wp
    }
}

fn pad_planes(exec: &Exec, x: &[f32], planes: usize, h: usize, w: usize, pad: usize, fg: FlatGeom) -> Vec<f32> {
    let mut out = vec![0f32; planes * fg.plane()];
    exec.chunks(&mut out, fg.plane(), |p, dst| {
        let src = &x[p * h * w..][..h * w];
        for y in 0..h {
            dst[(y + pad) * fg.wp + pad..][..w].copy_from_slice(&src[y * w..][..w]);
        }
    });
    out
}

/// Spreads `[planes, oh, ow]` onto the padded row pitch, zeros in scratch columns.
fn spread_rows(exec: &Exec, d: &[f32], planes: usize, oh: usize, ow: usize, fg: FlatGeom, lead: usize) -> Vec<f32> {
    let stride = lead + fg.plane();
    let mut out = vec![0f32; planes * stride];
    exec.chunks(&mut out, stride, |p, dst| {
        let src = &d[p * oh * ow..][..oh * ow];
        for y in 0..oh {
            dst[lead + y * fg.wp..][..ow].copy_from_slice(&src[y * ow..][..ow]);
        }
    });
    out
}

/// Elements per unrolled block; wide enough for several independent FMA chains.
const BLOCK: usize = 64;

/// `acc[o] += Σ_t w[t] · src[o + offs[t]]` for every `o`. The at most
/// `T`-term window sum is formed in f32, the running total stays f64.
fn taps_gather<const T: usize>(acc: &mut [f64], w: &[f32; T], src: &[f32], offs: &[usize; T]) {
    let len = acc.len();
    let srcs: [&[f32]; T] = std::array::from_fn(|t| &src[offs[t]..offs[t] + len]);
    let body = len - len % BLOCK;
    let mut o = 0;
    while o < body {
        let mut s = [0f32; BLOCK];
        for t in 0..T {
            let x: &[f32; BLOCK] = srcs[t][o..o + BLOCK].try_into().expect("block");
            for l in 0..BLOCK {
                s[l] = w[t].mul_add(x[l], s[l]);
            }
        }
        let out: &mut [f64; BLOCK] = (&mut acc[o..o + BLOCK]).try_into().expect("block");
        for l in 0..BLOCK {
            out[l] += s[l] as f64;
        }
        o += BLOCK;
    }
    for q in body..len {
        let mut s = 0f32;
        for t in 0..T {
            s = w[t].mul_add(srcs[t][q], s);
        }
        acc[q] += s as f64;
    }
}

/// `out[t] = Σ_o d[o] · src[o + offs[t]]`. Each lane accumulates a short
/// run in f32 before the run is folded into the f64 total.
fn taps_dot<const T: usize>(d: &[f32], src: &[f32], offs: &[usize; T]) -> [f64; T] {
    const LANES: usize = 64;
    const FOLD: usize = 8 * LANES;
    let len = d.len();
    let body = len - len % LANES;
    std::array::from_fn(|t| {
        let s = &src[offs[t]..offs[t] + len];
        let mut total = 0f64;
        let mut o = 0;
        while o < body {
            let end = (o + FOLD).min(body);
            let mut lanes = [0f32; LANES];
            while o < end {
                let dv: &[f32; LANES] = d[o..o + LANES].try_into().expect("lanes");
                let sv: &[f32; LANES] = s[o..o + LANES].try_into().expect("lanes");
                for l in 0..LANES {
                    lanes[l] = dv[l].mul_add(sv[l], lanes[l]);
                }
                o += LANES;
            }
            total += lanes.iter().map(|&v| v as f64).sum::<f64>();
        }
        for q in body..len {
            total += d[q] as f64 * s[q] as f64;
        }
        total
    })
}

/// Flat offsets of the kernel taps on the padded pitch. 3×3 kernels get
/// all nine taps fused into one pass.
enum Taps {
    Nine([usize; 9]),
    Each(Vec<usize>),
}

impl Taps {
    fn new(g: &ConvGeom, wp: usize) -> Self {
        let offs: Vec<usize> = (0..g.kh).flat_map(|i| (0..g.kw).map(move |j| i * wp + j)).collect();
        match <[usize; 9]>::try_from(offs.as_slice()) {
            Ok(arr) => Taps::Nine(arr),
            Err(_) => Taps::Each(offs),
        }
    }

    /// Forward-style gather: `acc[o] += Σ_t k[t] · src[o + off_t]`.
    fn gather(&self, acc: &mut [f64], k: &[f32], src: &[f32]) {
        match self {
            Taps::Nine(offs) => {
                let w: [f32; 9] = std::array::from_fn(|t| k[t]);
                taps_gather(acc, &w, src, offs);
            }
            Taps::Each(offs) => {
                for (t, &off) in offs.iter().enumerate() {
                    taps_gather(acc, &[k[t]], src, &[off]);
                }
            }
        }
    }

    /// Transposed gather: `acc[q] += Σ_t k[t] · src[q + lead - off_t]`.
    fn gather_back(&self, acc: &mut [f64], k: &[f32], src: &[f32], lead: usize) {
        match self {
            Taps::Nine(offs) => {
                let w: [f32; 9] = std::array::from_fn(|t| k[t]);
                let back: [usize; 9] = std::array::from_fn(|t| lead - offs[t]);
                taps_gather(acc, &w, src, &back);
            }
            Taps::Each(offs) => {
                for (t, &off) in offs.iter().enumerate() {
                    taps_gather(acc, &[k[t]], src, &[lead - off]);
                }
            }
        }
    }

    /// `acc[t] += Σ_o d[o] · src[o + off_t]`.
    fn dot(&self, acc: &mut [f64], d: &[f32], src: &[f32]) {
        match self {
            Taps::Nine(offs) => {
                for (a, v) in acc.iter_mut().zip(taps_dot(d, src, offs)) {
                    *a += v;
                }
            }
            Taps::Each(offs) => {
                for (a, &off) in acc.iter_mut().zip(offs) {
                    *a += taps_dot(d, src, &[off])[0];
                }
            }
        }
    }
}

fn conv2d_forward_flat(exec: &Exec, g: &ConvGeom, x: &[f32], k: &[f32], bias: &[f32]) -> Vec<f32> {
    let fg = FlatGeom::new(g);
    let xp = pad_planes(exec, x, g.n * g.c, g.h, g.w, g.pad, fg);
    let taps = Taps::new(g, fg.wp);
    let ntaps = g.kh * g.kw;
    let plane = g.oh * g.ow;
    let mut out = vec![0f32; g.n * g.f * plane];
    exec.chunks(&mut out, plane, |idx, dst| {
        let (n, f) = (idx / g.f, idx % g.f);
        let mut acc = vec![bias[f] as f64; fg.span];
        for c in 0..g.c {
            let src = &xp[(n * g.c + c) * fg.plane()..][..fg.plane()];
            taps.gather(&mut acc, &k[(f * g.c + c) * ntaps..][..ntaps], src);
        }
        for y in 0..g.oh {
            for (d, a) in dst[y * g.ow..][..g.ow].iter_mut().zip(&acc[y * fg.wp..]) {
                *d = *a as f32;
            }
        }
    });
    out
}

fn conv2d_backward_input_flat(exec: &Exec, g: &ConvGeom, dout: &[f32], k: &[f32]) -> Vec<f32> {
    let fg = FlatGeom::new(g);
    // dx_pad[q] = Σ_t w_t · d[q - off_t]; a leading margin of `lead` zeros
    // keeps every shifted read in bounds.
    let lead = (g.kh - 1) * fg.wp + g.kw - 1;
    let stride = lead + fg.plane();
    let dg = spread_rows(exec, dout, g.n * g.f, g.oh, g.ow, fg, lead);
    let taps = Taps::new(g, fg.wp);
    let ntaps = g.kh * g.kw;
    let iplane = g.h * g.w;
    let mut dx = vec![0f32; g.n * g.c * iplane];
    exec.chunks(&mut dx, iplane, |idx, dst| {
        let (n, c) = (idx / g.c, idx % g.c);
        let mut acc = vec![0f64; fg.plane()];
        for f in 0..g.f {
            let src = &dg[(n * g.f + f) * stride..][..stride];
            taps.gather_back(&mut acc, &k[(f * g.c + c) * ntaps..][..ntaps], src, lead);
        }
        for y in 0..g.h {
            let row = &acc[(y + g.pad) * fg.wp + g.pad..][..g.w];
            for (d, a) in dst[y * g.w..][..g.w].iter_mut().zip(row) {
                *d = *a as f32;
            }
        }
    });
    dx
}

/// Copies `[n, ch, rows, cols]` into `[ch, n, hp*wp]` padded planes with the
/// data placed at row/column offset `at`, plus `margin` trailing zeros per
/// channel group.
#[allow(clippy::too_many_arguments)]
fn channel_major_planes(
    exec: &Exec,
    x: &[f32],
    n: usize,
    ch: usize,
    rows: usize,
    cols: usize,
    at: usize,
    fg: FlatGeom,
    margin: usize,
) -> (Vec<f32>, usize) {
    let group = n * fg.plane() + margin;
    let mut out = vec![0f32; ch * group];
    exec.chunks(&mut out, group, |c, dst| {
        for i in 0..n {
            let src = &x[(i * ch + c) * rows * cols..][..rows * cols];
            let plane = &mut dst[i * fg.plane()..][..fg.plane()];
            for y in 0..rows {
                plane[(y + at) * fg.wp + at..][..cols].copy_from_slice(&src[y * cols..][..cols]);
            }
        }
    });
    (out, group)
}

fn conv2d_backward_params_flat(exec: &Exec, g: &ConvGeom, dout: &[f32], x: &[f32]) -> (Vec<f32>, Vec<f32>) {
    let fg = FlatGeom::new(g);
    // With every image of one channel laid end to end, the sum over the
    // batch and the spatial sum become a single shifted dot product: gradient
    // entries outside the valid output grid are zero, so reads that stray
    // past a plane boundary contribute nothing.
    let margin = (g.kh - 1) * fg.wp + g.kw - 1;
    let (xs, xgroup) = channel_major_planes(exec, x, g.n, g.c, g.h, g.w, g.pad, fg, margin);
    let (ds, dgroup) = channel_major_planes(exec, dout, g.n, g.f, g.oh, g.ow, 0, fg, 0);
    let taps = Taps::new(g, fg.wp);
    let oplane = g.oh * g.ow;
    let ntaps = g.kh * g.kw;
    let per_filter = g.c * ntaps;
    let mut dk = vec![0f32; g.f * per_filter];
    let mut db = vec![0f32; g.f];
    exec.chunks2(&mut dk, per_filter, &mut db, 1, |f, dst, dbias| {
        let mut bsum = 0f64;
        for n in 0..g.n {
            bsum += sum_f64(&dout[(n * g.f + f) * oplane..][..oplane]);
        }
        dbias[0] = bsum as f32;
        let d = &ds[f * dgroup..][..dgroup];
        let mut acc = vec![0f64; ntaps];
        for c in 0..g.c {
            acc.iter_mut().for_each(|a| *a = 0.0);
            taps.dot(&mut acc, d, &xs[c * xgroup..][..xgroup]);
            for (o, a) in dst[c * ntaps..][..ntaps].iter_mut().zip(&acc) {
                *o = *a as f32;
            }
        }
    });
    (dk, db)
}

fn conv2d_forward_strided(exec: &Exec, g: &ConvGeom, x: &[f32], k: &[f32], bias: &[f32]) -> Vec<f32> {
    let plane = g.oh * g.ow;
    let mut out = vec![0f32; g.n * g.f * plane];
    let (ih, iw) = (g.h, g.w);
    exec.chunks(&mut out, plane, |idx, dst| {
        let (n, f) = (idx / g.f, idx % g.f);
        let mut acc = vec![bias[f] as f64; plane];
        for c in 0..g.c {
            let xp = &x[(n * g.c + c) * ih * iw..][..ih * iw];
            let kp = &k[(f * g.c + c) * g.kh * g.kw..][..g.kh * g.kw];
            for i in 0..g.kh {
                let (ylo, yhi) = g.valid(i, ih, g.oh);
                for j in 0..g.kw {
                    let wv = kp[i * g.kw + j] as f64;
                    let (xlo, xhi) = g.valid(j, iw, g.ow);
                    if xlo >= xhi {
                        continue;
                    }
                    let ix0 = xlo * g.stride + j - g.pad;
                    for oy in ylo..yhi {
                        let iy = oy * g.stride + i - g.pad;
                        let irow = &xp[iy * iw..][..iw];
                        let orow = &mut acc[oy * g.ow + xlo..oy * g.ow + xhi];
                        if g.stride == 1 {
                            let len = orow.len();
                            for (o, &v) in orow.iter_mut().zip(&irow[ix0..ix0 + len]) {
                                *o += wv * v as f64;
                            }
                        } else {
                            for (t, o) in orow.iter_mut().enumerate() {
                                *o += wv * irow[ix0 + t * g.stride] as f64;
                            }
                        }
                    }
                }
            }
        }
        for (d, a) in dst.iter_mut().zip(&acc) {
            *d = *a as f32;
        }
    });
    out
}

fn conv2d_backward_input_strided(exec: &Exec, g: &ConvGeom, dout: &[f32], k: &[f32]) -> Vec<f32> {
    let iplane = g.h * g.w;
    let oplane = g.oh * g.ow;
    let mut dx = vec![0f32; g.n * g.c * iplane];
    exec.chunks(&mut dx, iplane, |idx, dst| {
        let (n, c) = (idx / g.c, idx % g.c);
        let mut acc = vec![0f64; iplane];
        for f in 0..g.f {
            let dp = &dout[(n * g.f + f) * oplane..][..oplane];
            let kp = &k[(f * g.c + c) * g.kh * g.kw..][..g.kh * g.kw];
            for i in 0..g.kh {
                let (ylo, yhi) = g.valid(i, g.h, g.oh);
                for j in 0..g.kw {
                    let wv = kp[i * g.kw + j] as f64;
                    let (xlo, xhi) = g.valid(j, g.w, g.ow);
                    if xlo >= xhi {
                        continue;
                    }
                    let ix0 = xlo * g.stride + j - g.pad;
                    for oy in ylo..yhi {
                        let iy = oy * g.stride + i - g.pad;
                        let drow = &dp[oy * g.ow + xlo..oy * g.ow + xhi];
                        let arow = &mut acc[iy * g.w..][..g.w];
                        if g.stride == 1 {
                            for (a, &d) in arow[ix0..ix0 + drow.len()].iter_mut().zip(drow) {
                                *a += wv * d as f64;
                            }
                        } else {
                            for (t, &d) in drow.iter().enumerate() {
                                arow[ix0 + t * g.stride] += wv * d as f64;
                            }
                        }
                    }
                }
            }
        }
        for (d, a) in dst.iter_mut().zip(&acc) {
            *d = *a as f32;
        }
    });
    dx
}

fn conv2d_backward_params_strided(exec: &Exec, g: &ConvGeom, dout: &[f32], x: &[f32]) -> (Vec<f32>, Vec<f32>) {
    let iplane = g.h * g.w;
    let oplane = g.oh * g.ow;
    let per_filter = g.c * g.kh * g.kw;
    let mut dk = vec![0f32; g.f * per_filter];
    let mut db = vec![0f32; g.f];
    exec.chunks2(&mut dk, per_filter, &mut db, 1, |f, dst, dbias| {
        let mut bsum = 0f64;
        for n in 0..g.n {
            bsum += sum_f64(&dout[(n * g.f + f) * oplane..][..oplane]);
        }
        dbias[0] = bsum as f32;
        let mut gather = Vec::new();
        for c in 0..g.c {
            for i in 0..g.kh {
                let (ylo, yhi) = g.valid(i, g.h, g.oh);
                for j in 0..g.kw {
                    let (xlo, xhi) = g.valid(j, g.w, g.ow);
                    let mut acc = 0f64;
                    if xlo < xhi {
                        let ix0 = xlo * g.stride + j - g.pad;
                        let len = xhi - xlo;
                        for n in 0..g.n {
                            let dp = &dout[(n * g.f + f) * oplane..][..oplane];
                            let xp = &x[(n * g.c + c) * iplane..][..iplane];
                            for oy in ylo..yhi {
                                let iy = oy * g.stride + i - g.pad;
                                let drow = &dp[oy * g.ow + xlo..oy * g.ow + xhi];
                                let irow = &xp[iy * g.w..][..g.w];
                                if g.stride == 1 {
                                    acc += dot_f64(drow, &irow[ix0..ix0 + len]);
                                } else {
                                    gather.clear();
                                    gather.extend((0..len).map(|t| irow[ix0 + t * g.stride]));
                                    acc += dot_f64(drow, &gather);
                                }
                            }
                        }
                    }
                    dst[(c * g.kh + i) * g.kw + j] = acc as f32;
                }
            }
        }
    });
    (dk, db)
}

/// Max pooling with square non-overlapping windows. Returns values and the
/// in-plane index of each window's first maximum.
pub fn maxpool2d_forward(exec: &Exec, dims: [usize; 4], window: usize, x: &[f32]) -> (Vec<f32>, Vec<u32>) {
    let [n, c, h, w] = dims;
    let (oh, ow) = (h / window, w / window);
    let oplane = oh * ow;
    let mut out = vec![0f32; n * c * oplane];
    let mut arg = vec![0u32; n * c * oplane];
    exec.chunks2(&mut out, oplane, &mut arg, oplane, |p, dst, am| {
        let xp = &x[p * h * w..][..h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut best_at = 0usize;
                for dy in 0..window {
                    let row = (oy * window + dy) * w;
                    for dx in 0..window {
                        let at = row + ox * window + dx;
                        if xp[at] > best {
                            best = xp[at];
                            best_at = at;
                        }
                    }
                }
                dst[oy * ow + ox] = best;
                am[oy * ow + ox] = best_at as u32;
            }
        }
    });
    (out, arg)
}

pub fn maxpool2d_backward(exec: &Exec, dims: [usize; 4], window: usize, dout: &[f32], arg: &[u32]) -> Vec<f32> {
    let [n, c, h, w] = dims;
    let oplane = (h / window) * (w / window);
    let mut dx = vec![0f32; n * c * h * w];
    exec.chunks(&mut dx, h * w, |p, dst| {
        let dp = &dout[p * oplane..][..oplane];
        let ap = &arg[p * oplane..][..oplane];
        for (&d, &a) in dp.iter().zip(ap) {
            dst[a as usize] += d;
        }
    });
    dx
}

pub fn upsample2x_forward(exec: &Exec, dims: [usize; 4], x: &[f32]) -> Vec<f32> {
    let [n, c, h, w] = dims;
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0f32; n * c * oh * ow];
    exec.chunks(&mut out, oh * ow, |p, dst| {
        let xp = &x[p * h * w..][..h * w];
        for oy in 0..oh {
            let src = &xp[(oy / 2) * w..][..w];
            let drow = &mut dst[oy * ow..][..ow];
            for (ox, d) in drow.iter_mut().enumerate() {
                *d = src[ox / 2];
            }
        }
    });
    out
}

pub fn upsample2x_backward(exec: &Exec, dims: [usize; 4], dout: &[f32]) -> Vec<f32> {
    let [n, c, h, w] = dims;
    let ow = 2 * w;
    let mut dx = vec![0f32; n * c * h * w];
    exec.chunks(&mut dx, h * w, |p, dst| {
        let dp = &dout[p * 4 * h * w..][..4 * h * w];
        for y in 0..h {
            for x in 0..w {
                let r0 = 2 * y * ow + 2 * x;
                let r1 = r0 + ow;
                let s = (dp[r0] as f64 + dp[r0 + 1] as f64) + (dp[r1] as f64 + dp[r1 + 1] as f64);
                dst[y * w + x] = s as f32;
            }
        }
    });
    dx
}

/// Concatenates along the channel axis: `a` first, then `b`.
pub fn concat_channels(a: &[f32], ca: usize, b: &[f32], cb: usize, n: usize, plane: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(n * (ca + cb) * plane);
    for i in 0..n {
        out.extend_from_slice(&a[i * ca * plane..(i + 1) * ca * plane]);
        out.extend_from_slice(&b[i * cb * plane..(i + 1) * cb * plane]);
    }
    out
}

/// Splits a channel-concatenated gradient back into its two halves.
pub fn split_channels(d: &[f32], ca: usize, cb: usize, n: usize, plane: usize) -> (Vec<f32>, Vec<f32>) {
    let mut da = Vec::with_capacity(n * ca * plane);
    let mut db = Vec::with_capacity(n * cb * plane);
    let stride = (ca + cb) * plane;
    for i in 0..n {
        let s = &d[i * stride..(i + 1) * stride];
        da.extend_from_slice(&s[..ca * plane]);
        db.extend_from_slice(&s[ca * plane..]);
    }
    (da, db)
}

pub fn relu_forward(exec: &Exec, x: &[f32]) -> Vec<f32> {
    let mut out = x.to_vec();
    exec.chunks(&mut out, ELEMENTWISE_CHUNK, |_, dst| {
        dst.iter_mut().for_each(|v| *v = v.max(0.0));
    });
    out
}

pub fn relu_backward(exec: &Exec, x: &[f32], dout: &[f32]) -> Vec<f32> {
    let mut dx = dout.to_vec();
    exec.chunks(&mut dx, ELEMENTWISE_CHUNK, |i, dst| {
        let xs = &x[i * ELEMENTWISE_CHUNK..][..dst.len()];
        for (d, &v) in dst.iter_mut().zip(xs) {
            if v <= 0.0 {
                *d = 0.0;
            }
        }
    });
    dx
}

pub fn sigmoid_scalar(v: f32) -> f32 {
    let z = (v as f64).clamp(-SIGMOID_ARG_CLAMP, SIGMOID_ARG_CLAMP);
    let s = (1.0 / (1.0 + (-z).exp())) as f32;
    s.clamp(f32::MIN_POSITIVE, SIGMOID_MAX)
}

pub fn sigmoid_forward(exec: &Exec, x: &[f32]) -> Vec<f32> {
    let mut out = x.to_vec();
    exec.chunks(&mut out, ELEMENTWISE_CHUNK, |_, dst| {
        dst.iter_mut().for_each(|v| *v = sigmoid_scalar(*v));
    });
    out
}

/// Uses the saved forward output `y`.
pub fn sigmoid_backward(exec: &Exec, y: &[f32], dout: &[f32]) -> Vec<f32> {
    let mut dx = dout.to_vec();
    exec.chunks(&mut dx, ELEMENTWISE_CHUNK, |i, dst| {
        let ys = &y[i * ELEMENTWISE_CHUNK..][..dst.len()];
        for (d, &s) in dst.iter_mut().zip(ys) {
            *d = (*d as f64 * s as f64 * (1.0 - s as f64)) as f32;
        }
    });
    dx
}

/// `x[N,D] · w[D,M] + b[M]`.
pub fn dense_forward(exec: &Exec, x: &[f32], w: &[f32], b: &[f32], n: usize, d: usize, m: usize) -> Vec<f32> {
    let mut out = vec![0f32; n * m];
    exec.chunks(&mut out, m, |row, dst| {
        let xr = &x[row * d..][..d];
        let mut acc: Vec<f64> = b.iter().map(|&v| v as f64).collect();
        if m == 1 {
            acc[0] += dot_f64(xr, w);
        } else {
            for (k, &xv) in xr.iter().enumerate() {
                let wr = &w[k * m..][..m];
                for (a, &wv) in acc.iter_mut().zip(wr) {
                    *a += xv as f64 * wv as f64;
                }
            }
        }
        for (o, a) in dst.iter_mut().zip(&acc) {
            *o = *a as f32;
        }
    });
    out
}

pub fn dense_backward_input(exec: &Exec, dout: &[f32], w: &[f32], n: usize, d: usize, m: usize) -> Vec<f32> {
    let mut dx = vec![0f32; n * d];
    exec.chunks(&mut dx, d, |row, dst| {
        let dr = &dout[row * m..][..m];
        for (k, o) in dst.iter_mut().enumerate() {
            *o = dot_f64(dr, &w[k * m..][..m]) as f32;
        }
    });
    dx
}

pub fn dense_backward_params(
    exec: &Exec,
    dout: &[f32],
    x: &[f32],
    n: usize,
    d: usize,
    m: usize,
) -> (Vec<f32>, Vec<f32>) {
    let mut dw = vec![0f32; d * m];
    exec.chunks(&mut dw, m, |k, dst| {
        let mut acc = vec![0f64; m];
        for row in 0..n {
            let xv = x[row * d + k] as f64;
            for (a, &g) in acc.iter_mut().zip(&dout[row * m..][..m]) {
                *a += xv * g as f64;
            }
        }
        for (o, a) in dst.iter_mut().zip(&acc) {
            *o = *a as f32;
        }
    });
    let db = (0..m)
        .map(|j| (0..n).map(|row| dout[row * m + j] as f64).sum::<f64>() as f32)
        .collect();
    (dw, db)
}

/// Mean binary cross-entropy with predictions clamped to `[eps, 1-eps]`.
pub fn bce_forward(pred: &[f32], target: &[f32]) -> f64 {
    let total: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &y)| {
            let p = (p as f64).clamp(BCE_EPS, 1.0 - BCE_EPS);
            let y = y as f64;
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    (total / pred.len() as f64).max(0.0)
}

/// Gradient of the mean BCE scaled by the upstream scalar `upstream`.
pub fn bce_backward(pred: &[f32], target: &[f32], upstream: f64) -> Vec<f32> {
    let scale = upstream / pred.len() as f64;
    pred.iter()
        .zip(target)
        .map(|(&p, &y)| {
            let p = p as f64;
            if !(BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
                return 0.0;
            }
            let y = y as f64;
            (scale * (p - y) / (p * (1.0 - p))) as f32
        })
        .collect()
}
