use super::{DenseTensor, Result, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
}

impl ElementwiseOp {
    #[inline]
    fn apply(self, a: f32, b: f32) -> f32 {
        match self {
            ElementwiseOp::Add => a + b,
            ElementwiseOp::Sub => a - b,
            ElementwiseOp::Mul => a * b,
        }
    }
}

/// Maps each flat index of `a` to the flat index of `b` under broadcasting.
/// `b` must have the same rank as `a` with every extent equal or 1.
pub(crate) fn broadcast_index_map(a: &[usize], b: &[usize], op: &'static str) -> Result<Vec<usize>> {
    let mismatch = || TensorError::ShapeMismatch {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    };
    if a.len() != b.len() {
        return Err(mismatch());
    }
    if a.iter().zip(b).any(|(&x, &y)| x != y && y != 1) {
        return Err(mismatch());
    }
    let b_strides: Vec<usize> = {
        let mut s = vec![1usize; b.len()];
        for i in (0..b.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * b[i + 1];
        }
        s.iter()
            .zip(b)
            .map(|(&st, &d)| if d == 1 { 0 } else { st })
            .collect()
    };
    let n: usize = a.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; a.len()];
    for _ in 0..n {
        map.push(idx.iter().zip(&b_strides).map(|(i, s)| i * s).sum());
        for d in (0..a.len()).rev() {
            idx[d] += 1;
            if idx[d] < a[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok(map)
}

/// Elementwise `op(a, b)`. `b` may broadcast along any axis where its extent is 1.
pub fn elementwise(op: ElementwiseOp, a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    let data = if a.dims() == b.dims() {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| op.apply(x, y))
            .collect()
    } else {
        let map = broadcast_index_map(a.dims(), b.dims(), "elementwise")?;
        let bd = b.data();
        a.data()
            .iter()
            .zip(map)
            .map(|(&x, j)| op.apply(x, bd[j]))
            .collect()
    };
    DenseTensor::new(a.dims(), data)
}

pub fn add(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    elementwise(ElementwiseOp::Add, a, b)
}

pub fn sub(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    elementwise(ElementwiseOp::Sub, a, b)
}

pub fn mul(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    elementwise(ElementwiseOp::Mul, a, b)
}

fn require_rank(t: &DenseTensor, rank: usize, op: &'static str) -> Result<()> {
    if t.rank() != rank {
        return Err(TensorError::InvalidShape(format!(
            "{op}: expected rank {rank}, got shape {:?}",
            t.dims()
        )));
    }
    Ok(())
}

/// `out[i, :] += a[i, p] * b[p, :]` for p ascending; `out` must start zeroed.
#[inline]
fn gemm_ikj(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let s = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += s * bv;
            }
        }
    }
}

/// Matrix product of `(m, k)` and `(k, n)`.
pub fn matmul(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    require_rank(a, 2, "matmul")?;
    require_rank(b, 2, "matmul")?;
    let (m, k) = (a.dims()[0], a.dims()[1]);
    let (k2, n) = (b.dims()[0], b.dims()[1]);
    if k != k2 {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            left: a.dims().to_vec(),
            right: b.dims().to_vec(),
        });
    }
    let mut out = vec![0.0f32; m * n];
    gemm_ikj(a.data(), b.data(), &mut out, m, k, n);
    DenseTensor::new(&[m, n], out)
}

pub fn transpose2d(a: &DenseTensor) -> Result<DenseTensor> {
    require_rank(a, 2, "transpose2d")?;
    permute(a, &[1, 0])
}

/// General axis permutation: output axis `i` is input axis `perm[i]`.
pub fn permute(a: &DenseTensor, perm: &[usize]) -> Result<DenseTensor> {
    let rank = a.rank();
    let mut seen = vec![false; rank];
    if perm.len() != rank {
        return Err(TensorError::InvalidShape(format!(
            "permute: {perm:?} is not a permutation of rank {rank}"
        )));
    }
    for &p in perm {
        if p >= rank || seen[p] {
            return Err(TensorError::InvalidShape(format!(
                "permute: {perm:?} is not a permutation of rank {rank}"
            )));
        }
        seen[p] = true;
    }
    let in_strides = a.shape().strides();
    let out_dims: Vec<usize> = perm.iter().map(|&p| a.dims()[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = a.len();
    let src = a.data();
    let mut data = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        data.push(src[off]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < out_dims[d] {
                break;
            }
            off -= strides[d] * out_dims[d];
            idx[d] = 0;
        }
    }
    DenseTensor::new(&out_dims, data)
}

struct ConvGeometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

fn conv_geometry(input: &DenseTensor, kernel: &DenseTensor, padding: usize) -> Result<ConvGeometry> {
    require_rank(input, 4, "conv2d")?;
    require_rank(kernel, 4, "conv2d")?;
    let &[n, cin, h, w] = input.dims() else { unreachable!() };
    let &[cout, kcin, kh, kw] = kernel.dims() else { unreachable!() };
    if kcin != cin || kh != kw {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            left: input.dims().to_vec(),
            right: kernel.dims().to_vec(),
        });
    }
    if kh % 2 == 0 {
        return Err(TensorError::InvalidShape(format!(
            "conv2d: kernel size {kh} must be odd"
        )));
    }
    let oh = (h + 2 * padding).checked_sub(kh - 1).filter(|&v| v >= 1);
    let ow = (w + 2 * padding).checked_sub(kw - 1).filter(|&v| v >= 1);
    match (oh, ow) {
        (Some(oh), Some(ow)) => Ok(ConvGeometry {
            n,
            cin,
            h,
            w,
            cout,
            k: kh,
            pad: padding,
            oh,
            ow,
        }),
        _ => Err(TensorError::InvalidShape(format!(
            "conv2d: output extent < 1 for input {:?}, kernel {kh}, padding {padding}",
            input.dims()
        ))),
    }
}

/// Unfolds one image `(cin, h, w)` into columns `(cin*k*k, oh*ow)`.
fn im2col(img: &[f32], g: &ConvGeometry, cols: &mut [f32]) {
    let p = g.oh * g.ow;
    for ci in 0..g.cin {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ci * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy + ki) as isize - g.pad as isize;
                    let drow = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        drow.fill(0.0);
                        continue;
                    }
                    let src = &img[(ci * g.h + iy as usize) * g.w..(ci * g.h + iy as usize + 1) * g.w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox + kj) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back onto an image, accumulating.
fn col2im(cols: &[f32], g: &ConvGeometry, img: &mut [f32]) {
    let p = g.oh * g.ow;
    for ci in 0..g.cin {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ci * g.k + ki) * g.k + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = (ci * g.h + iy as usize) * g.w;
                    for ox in 0..g.ow {
                        let ix = (ox + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            img[base + ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Batched cross-correlation: `(n, cin, h, w)` with kernel `(cout, cin, k, k)`,
/// stride 1, zero padding, no bias.
pub fn conv2d_batched(input: &DenseTensor, kernel: &DenseTensor, padding: usize) -> Result<DenseTensor> {
    let g = conv_geometry(input, kernel, padding)?;
    let p = g.oh * g.ow;
    let ck = g.cin * g.k * g.k;
    let mut cols = vec![0.0f32; ck * p];
    let mut out = vec![0.0f32; g.n * g.cout * p];
    let img_len = g.cin * g.h * g.w;
    for s in 0..g.n {
        im2col(&input.data()[s * img_len..(s + 1) * img_len], &g, &mut cols);
        gemm_ikj(
            kernel.data(),
            &cols,
            &mut out[s * g.cout * p..(s + 1) * g.cout * p],
            g.cout,
            ck,
            p,
        );
    }
    DenseTensor::new(&[g.n, g.cout, g.oh, g.ow], out)
}

/// Single-image cross-correlation: `(cin, h, w)` -> `(cout, h', w')`.
pub fn conv2d(input: &DenseTensor, kernel: &DenseTensor, padding: usize) -> Result<DenseTensor> {
    require_rank(input, 3, "conv2d")?;
    let d = input.dims();
    let batched = input.reshape(&[1, d[0], d[1], d[2]])?;
    let out = conv2d_batched(&batched, kernel, padding)?;
    let od = out.dims().to_vec();
    out.reshape(&od[1..])
}

/// Gradients of a batched conv with respect to its input and kernel.
pub(crate) fn conv2d_backward(
    input: &DenseTensor,
    kernel: &DenseTensor,
    padding: usize,
    grad_out: &DenseTensor,
) -> Result<(DenseTensor, DenseTensor)> {
    let g = conv_geometry(input, kernel, padding)?;
    let p = g.oh * g.ow;
    let ck = g.cin * g.k * g.k;
    let img_len = g.cin * g.h * g.w;
    let kernel_t = transpose2d(&kernel.reshape(&[g.cout, ck])?)?;
    let mut cols = vec![0.0f32; ck * p];
    let mut cols_t = vec![0.0f32; p * ck];
    let mut dcols = vec![0.0f32; ck * p];
    let mut grad_in = vec![0.0f32; input.len()];
    let mut grad_k = vec![0.0f32; kernel.len()];
    for s in 0..g.n {
        let go = &grad_out.data()[s * g.cout * p..(s + 1) * g.cout * p];
        im2col(&input.data()[s * img_len..(s + 1) * img_len], &g, &mut cols);
        for r in 0..ck {
            for c in 0..p {
                cols_t[c * ck + r] = cols[r * p + c];
            }
        }
        // dK += dOut (cout x p) . cols^T (p x ck)
        gemm_ikj(go, &cols_t, &mut grad_k, g.cout, p, ck);
        // dCols = K^T (ck x cout) . dOut (cout x p)
        dcols.fill(0.0);
        gemm_ikj(kernel_t.data(), go, &mut dcols, ck, g.cout, p);
        col2im(&dcols, &g, &mut grad_in[s * img_len..(s + 1) * img_len]);
    }
    Ok((
        DenseTensor::new(input.dims(), grad_in)?,
        DenseTensor::new(kernel.dims(), grad_k)?,
    ))
}

/// Arithmetic mean over `axes`; reduced axes are dropped from the shape.
pub fn mean_over(input: &DenseTensor, axes: &[usize]) -> Result<DenseTensor> {
    let rank = input.rank();
    if axes.is_empty() {
        return Err(TensorError::InvalidShape("mean_over: empty axis set".into()));
    }
    let mut reduced = vec![false; rank];
    for &ax in axes {
        if ax >= rank {
            return Err(TensorError::InvalidAxis {
                op: "mean_over",
                axis: ax,
                rank,
            });
        }
        reduced[ax] = true;
    }
    let dims = input.dims();
    let out_dims: Vec<usize> = (0..rank).filter(|&d| !reduced[d]).map(|d| dims[d]).collect();
    let count: usize = (0..rank).filter(|&d| reduced[d]).map(|d| dims[d]).product();
    // Output stride for each input axis (0 for reduced axes).
    let mut out_strides = vec![0usize; rank];
    let mut acc = 1usize;
    for d in (0..rank).rev() {
        if !reduced[d] {
            out_strides[d] = acc;
            acc *= dims[d];
        }
    }
    let out_len: usize = out_dims.iter().product();
    let mut sums = vec![0.0f32; out_len];
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for &v in input.data() {
        sums[off] += v;
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += out_strides[d];
            if idx[d] < dims[d] {
                break;
            }
            off -= out_strides[d] * dims[d];
            idx[d] = 0;
        }
    }
    let denom = count as f32;
    let data = sums.into_iter().map(|s| s / denom).collect();
    DenseTensor::new(&out_dims, data)
}

/// Outer product of three vectors: `out[i, j, k] = u[i] * v[j] * w[k]`.
pub fn outer3(u: &DenseTensor, v: &DenseTensor, w: &DenseTensor) -> Result<DenseTensor> {
    for t in [u, v, w] {
        require_rank(t, 1, "outer3")?;
    }
    let (m, n, p) = (u.len(), v.len(), w.len());
    let mut data = Vec::with_capacity(m * n * p);
    for &a in u.data() {
        for &b in v.data() {
            let ab = a * b;
            data.extend(w.data().iter().map(|&c| ab * c));
        }
    }
    DenseTensor::new(&[m, n, p], data)
}

#[inline]
pub(crate) fn sigmoid_scalar(x: f32) -> f32 {
    (1.0 / (1.0 + (-(x as f64)).exp())) as f32
}

/// Logistic function, evaluated in `f64` and rounded once.
pub fn sigmoid(input: &DenseTensor) -> DenseTensor {
    input.map(sigmoid_scalar)
}

/// 2x2 average pooling with stride 2 over the last two axes of `(n, c, h, w)`.
pub fn avg_pool2(input: &DenseTensor) -> Result<DenseTensor> {
    require_rank(input, 4, "avg_pool2")?;
    let &[n, c, h, w] = input.dims() else { unreachable!() };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(TensorError::InvalidShape(format!(
            "avg_pool2: spatial extents {h}x{w} must be even"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let src = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let i = base + 2 * y * w + 2 * x;
                out.push((src[i] + src[i + 1] + src[i + w] + src[i + w + 1]) * 0.25);
            }
        }
    }
    DenseTensor::new(&[n, c, oh, ow], out)
}
