//! Strided matrix products and the few vector kernels the model needs.

/// A row-major or transposed view: element (i, j) lives at `off + i * rs + j * cs`.
#[derive(Clone, Copy)]
pub(crate) struct View {
    pub off: usize,
    pub rs: usize,
    pub cs: usize,
}

impl View {
    pub fn rows(cols: usize) -> Self {
        View { off: 0, rs: cols, cs: 1 }
    }
    /// The transpose of a row-major matrix with `cols` columns.
    pub fn transposed(cols: usize) -> Self {
        View { off: 0, rs: 1, cs: cols }
    }
    pub fn at(self, off: usize) -> Self {
        View { off, ..self }
    }
}

fn check(buf: usize, v: View, rows: usize, cols: usize) {
    if rows > 0 && cols > 0 {
        let last = v.off + (rows - 1) * v.rs + (cols - 1) * v.cs;
        assert!(last < buf, "matrix view out of bounds ({last} >= {buf})");
    }
}

/// `c = a · b + beta · c` with `a: m×k`, `b: k×n`, `c: m×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], av: View, b: &[f64], bv: View, beta: f64, c: &mut [f64], cv: View) {
    check(a.len(), av, m, k);
    check(b.len(), bv, k, n);
    check(c.len(), cv, m, n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: every element the kernel touches was bounds-checked above, and
    // `c` is uniquely borrowed so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr().add(av.off),
            av.rs as isize,
            av.cs as isize,
            b.as_ptr().add(bv.off),
            bv.rs as isize,
            bv.cs as isize,
            beta,
            c.as_mut_ptr().add(cv.off),
            cv.rs as isize,
            cv.cs as isize,
        );
    }
}

/// `y = x · W + b` for a row vector `x` and row-major `W: in×out`.
pub(crate) fn vec_mat(x: &[f64], w: &[f64], b: &[f64], y: &mut [f64]) {
    y.copy_from_slice(b);
    vec_mat_acc(x, w, y);
}

/// `y += x · W`.
pub(crate) fn vec_mat_acc(x: &[f64], w: &[f64], y: &mut [f64]) {
    let out = y.len();
    for (i, &xi) in x.iter().enumerate() {
        for (yj, &wij) in y.iter_mut().zip(&w[i * out..(i + 1) * out]) {
            *yj += xi * wij;
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Numerically stable `ln Σ exp(x)`.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// In-place softmax of a row.
pub(crate) fn softmax(x: &mut [f64]) {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in x.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in x.iter_mut() {
        *v /= s;
    }
}

pub(crate) const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
pub(crate) const GELU_A: f64 = 0.044_715;

/// tanh approximation of GELU.
pub(crate) fn gelu(h: f64) -> f64 {
    0.5 * h * (1.0 + (GELU_C * (h + GELU_A * h * h * h)).tanh())
}

pub(crate) fn gelu_grad(h: f64) -> f64 {
    let t = (GELU_C * (h + GELU_A * h * h * h)).tanh();
    0.5 * (1.0 + t) + 0.5 * h * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * h * h)
}

pub(crate) const LN_EPS: f64 = 1e-5;

/// Layer norm over each row of `x` (`rows × d`). Returns normalized rows and
/// per-row inverse standard deviations.
pub(crate) fn layer_norm(x: &[f64], d: usize, g: &[f64], b: &[f64], y: &mut [f64], xhat: &mut [f64], rstd: &mut [f64]) {
    for (r, row) in x.chunks_exact(d).enumerate() {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let h = (row[j] - mean) * rs;
            xhat[r * d + j] = h;
            y[r * d + j] = h * g[j] + b[j];
        }
    }
}
