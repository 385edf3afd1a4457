//! Slice-level forward and backward kernels shared by the tape.

/// `out[m×n] = a[m×k] · b[k×n]`
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `ga[m×k] += g[m×n] · bᵀ`
pub(crate) fn matmul_grad_lhs(g: &[f64], b: &[f64], ga: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let dot: f64 = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
            ga[i * k + p] += dot;
        }
    }
}

/// `gb[k×n] += aᵀ · g[m×n]`
pub(crate) fn matmul_grad_rhs(a: &[f64], g: &[f64], gb: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let gbrow = &mut gb[p * n..(p + 1) * n];
            for (o, gv) in gbrow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

pub(crate) struct ConvDims {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub len: usize,
    pub out_len: usize,
    pub dilation: usize,
}

/// Valid (unpadded) dilated 1D convolution over a `[c_in × len]` input.
pub(crate) fn conv1d(x: &[f64], w: &[f64], bias: &[f64], d: &ConvDims) -> Vec<f64> {
    let mut out = vec![0.0; d.c_out * d.out_len];
    for c in 0..d.c_out {
        let orow = &mut out[c * d.out_len..(c + 1) * d.out_len];
        orow.fill(bias[c]);
        for ci in 0..d.c_in {
            let xrow = &x[ci * d.len..(ci + 1) * d.len];
            for j in 0..d.kernel {
                let wv = w[(c * d.c_in + ci) * d.kernel + j];
                let offset = j * d.dilation;
                let xs = &xrow[offset..offset + d.out_len];
                for (o, xv) in orow.iter_mut().zip(xs) {
                    *o += wv * xv;
                }
            }
        }
    }
    out
}

pub(crate) fn conv1d_backward(
    x: &[f64],
    w: &[f64],
    g: &[f64],
    d: &ConvDims,
    mut gx: Option<&mut [f64]>,
    mut gw: Option<&mut [f64]>,
    gb: Option<&mut [f64]>,
) {
    for c in 0..d.c_out {
        let grow = &g[c * d.out_len..(c + 1) * d.out_len];
        for ci in 0..d.c_in {
            let xrow = &x[ci * d.len..(ci + 1) * d.len];
            for j in 0..d.kernel {
                let widx = (c * d.c_in + ci) * d.kernel + j;
                let offset = j * d.dilation;
                if let Some(gw) = gw.as_deref_mut() {
                    let xs = &xrow[offset..offset + d.out_len];
                    gw[widx] += grow.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>();
                }
                if let Some(gx) = gx.as_deref_mut() {
                    let wv = w[widx];
                    let gxs = &mut gx[ci * d.len + offset..ci * d.len + offset + d.out_len];
                    for (o, gv) in gxs.iter_mut().zip(grow) {
                        *o += wv * gv;
                    }
                }
            }
        }
    }
    if let Some(gb) = gb {
        for c in 0..d.c_out {
            gb[c] += g[c * d.out_len..(c + 1) * d.out_len].iter().sum::<f64>();
        }
    }
}

/// Max-subtracted softmax over consecutive slices of width `n`.
pub(crate) fn softmax_rows(x: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (xs, os) in x.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (o, v) in os.iter_mut().zip(xs) {
            *o = (v - max).exp();
            total += *o;
        }
        for o in os.iter_mut() {
            *o /= total;
        }
    }
    out
}

pub(crate) fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}
