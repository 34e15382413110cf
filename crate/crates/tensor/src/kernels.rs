//! Raw loops shared by forward and backward passes.

/// Numpy-style broadcast of two shapes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Element strides of `shape` aligned to `out`, zero along broadcast axes.
fn aligned_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let n = out.len();
    let mut strides = vec![0; n];
    let mut s = 1;
    for i in (0..shape.len()).rev() {
        let oi = i + n - shape.len();
        strides[oi] = if shape[i] == 1 && out[oi] != 1 { 0 } else { s };
        s *= shape[i];
    }
    strides
}

/// Visit every output position with the matching flat offsets into `a` and `b`.
pub(crate) fn for_each_broadcast(
    out: &[usize],
    a: &[usize],
    b: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let total: usize = out.iter().product();
    if total == 0 {
        return;
    }
    if a == out && b == out {
        for i in 0..total {
            f(i, i, i);
        }
        return;
    }
    let sa = aligned_strides(a, out);
    let sb = aligned_strides(b, out);
    let n = out.len();
    if n == 0 {
        f(0, 0, 0);
        return;
    }
    let inner = out[n - 1];
    let (ia_step, ib_step) = (sa[n - 1], sb[n - 1]);
    let mut idx = vec![0usize; n];
    let (mut ia, mut ib) = (0usize, 0usize);
    let mut o = 0;
    while o < total {
        let (mut pa, mut pb) = (ia, ib);
        for _ in 0..inner {
            f(o, pa, pb);
            o += 1;
            pa += ia_step;
            pb += ib_step;
        }
        // advance the outer odometer
        let mut d = n - 1;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ia -= sa[d] * idx[d];
            ib -= sb[d] * idx[d];
            idx[d] = 0;
        }
    }
}

/// `c = a·b + beta·c` with arbitrary row/column strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                c[i * rsc + j * csc] *= beta;
            }
        }
        return;
    }
    debug_assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Axis permutation; output axis `i` is input axis `perm[i]`.
pub(crate) fn permute(data: &[f64], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let in_strides = contiguous_strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total = data.len();
    let mut out = Vec::with_capacity(total);
    let n = out_shape.len();
    if total == 0 {
        return (out_shape, out);
    }
    if n == 0 {
        return (out_shape, data.to_vec());
    }
    let mut idx = vec![0usize; n];
    let mut off = 0usize;
    let inner = out_shape[n - 1];
    let inner_stride = strides[n - 1];
    loop {
        let mut p = off;
        for _ in 0..inner {
            out.push(data[p]);
            p += inner_stride;
        }
        let mut d = n - 1;
        loop {
            if d == 0 {
                return (out_shape, out);
            }
            d -= 1;
            idx[d] += 1;
            off += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= strides[d] * idx[d];
            idx[d] = 0;
        }
    }
}

pub(crate) fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Shape arithmetic for a 1-D convolution over `len` positions.
pub(crate) fn conv_out_len(len: usize, kernel: usize, stride: usize, pad: (usize, usize)) -> usize {
    let padded = len + pad.0 + pad.1;
    if padded < kernel {
        0
    } else {
        (padded - kernel) / stride + 1
    }
}

/// Channels-last im2col: `[batch, len, cin]` → `[batch·out_len, kernel·cin]`.
pub(crate) fn im2col(
    x: &[f64],
    (batch, len, cin): (usize, usize, usize),
    kernel: usize,
    stride: usize,
    pad_left: usize,
    out_len: usize,
) -> Vec<f64> {
    let width = kernel * cin;
    let mut cols = vec![0.0; batch * out_len * width];
    for b in 0..batch {
        for t in 0..out_len {
            let row = &mut cols[(b * out_len + t) * width..(b * out_len + t + 1) * width];
            for k in 0..kernel {
                let pos = (t * stride + k) as isize - pad_left as isize;
                if pos < 0 || pos as usize >= len {
                    continue;
                }
                let src = &x[(b * len + pos as usize) * cin..(b * len + pos as usize + 1) * cin];
                row[k * cin..(k + 1) * cin].copy_from_slice(src);
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
pub(crate) fn col2im(
    cols: &[f64],
    (batch, len, cin): (usize, usize, usize),
    kernel: usize,
    stride: usize,
    pad_left: usize,
    out_len: usize,
) -> Vec<f64> {
    let width = kernel * cin;
    let mut x = vec![0.0; batch * len * cin];
    for b in 0..batch {
        for t in 0..out_len {
            let row = &cols[(b * out_len + t) * width..(b * out_len + t + 1) * width];
            for k in 0..kernel {
                let pos = (t * stride + k) as isize - pad_left as isize;
                if pos < 0 || pos as usize >= len {
                    continue;
                }
                let dst = &mut x[(b * len + pos as usize) * cin..(b * len + pos as usize + 1) * cin];
                for (d, s) in dst.iter_mut().zip(&row[k * cin..(k + 1) * cin]) {
                    *d += s;
                }
            }
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_shapes() {
        assert_eq!(broadcast_shape(&[2, 3], &[3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shape(&[2, 1, 4], &[3, 1]), Some(vec![2, 3, 4]));
        assert_eq!(broadcast_shape(&[2, 3], &[2]), None);
        assert_eq!(broadcast_shape(&[], &[5]), Some(vec![5]));
    }

    #[test]
    fn broadcast_offsets_visit_every_cell() {
        let mut seen = Vec::new();
        for_each_broadcast(&[2, 3], &[2, 1], &[3], |o, a, b| seen.push((o, a, b)));
        assert_eq!(
            seen,
            vec![(0, 0, 0), (1, 0, 1), (2, 0, 2), (3, 1, 0), (4, 1, 1), (5, 1, 2)]
        );
    }

    #[test]
    fn permute_matches_index_formula() {
        let data: Vec<f64> = (0..24).map(f64::from).collect();
        let (shape, out) = permute(&data, &[2, 3, 4], &[2, 0, 1]);
        assert_eq!(shape, vec![4, 2, 3]);
        for i in 0..4 {
            for j in 0..2 {
                for k in 0..3 {
                    assert_eq!(out[(i * 2 + j) * 3 + k], data[(j * 3 + k) * 4 + i]);
                }
            }
        }
    }

    #[test]
    fn gemm_transposed_strides() {
        // a = [[1,2],[3,4]], b^T read from row-major [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, (2, 1), &b, (1, 2), 0.0, &mut c, (2, 1));
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }
}
