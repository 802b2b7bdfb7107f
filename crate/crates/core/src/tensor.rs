//! Dense row-major tensors and the numeric kernels (gemm, im2col, convolution)
//! the autograd tape is built on.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point element type usable by the tape. Implemented for `f32`
/// (training) and `f64` (gradient checking).
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + Send
    + Sync
    + 'static
{
    /// `c = alpha * a * b + beta * c` for strided matrices.
    ///
    /// # Safety
    /// Strides and dimensions must describe memory inside the given slices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("representable literal")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// `c (m×n) = op(a) · op(b) (+ c if accumulate)`, all row-major and contiguous.
/// `op(a)` is `m×k`; when `ta` is set `a` is stored as `k×m`. Same for `b`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<F: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[F],
    ta: bool,
    b: &[F],
    tb: bool,
    c: &mut [F],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k, "gemm: lhs size");
    assert_eq!(b.len(), k * n, "gemm: rhs size");
    assert_eq!(c.len(), m * n, "gemm: out size");
    if m == 0 || n == 0 {
        return;
    }
    let beta = if accumulate { F::one() } else { F::zero() };
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = F::zero());
        }
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: sizes asserted above; strides describe the contiguous layouts.
    unsafe {
        F::gemm_raw(
            m,
            k,
            n,
            F::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match {} elements",
            data.len()
        );
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, F::zero())
    }

    pub fn full(shape: &[usize], value: F) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn scalar(value: F) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    /// A `1×n` row from a slice.
    pub fn row(values: &[F]) -> Self {
        Self { shape: vec![1, values.len()], data: values.to_vec() }
    }

    pub fn from_f64(shape: &[usize], values: &[f64]) -> Self {
        Self::new(shape.to_vec(), values.iter().map(|&v| F::lit(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Product of every dimension after the first.
    pub fn cols(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len(), "reshape size");
        self.shape = shape.to_vec();
        self
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(F, F) -> F) -> Self {
        assert_eq!(self.shape, other.shape, "zip_map shape mismatch");
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.data.len(), other.data.len(), "add_assign size mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn axpy(&mut self, alpha: F, other: &Self) {
        assert_eq!(self.data.len(), other.data.len(), "axpy size mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn sum(&self) -> F {
        self.data.iter().copied().sum()
    }

    pub fn dot(&self, other: &Self) -> F {
        assert_eq!(self.data.len(), other.data.len(), "dot size mismatch");
        self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| G::lit(v.as_f64())).collect() }
    }
}

/// Geometry of a square-kernel 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        Self { kernel, stride, pad }
    }

    /// Output extent of a forward convolution, `None` if the kernel does not fit.
    pub fn conv_out(&self, size: usize) -> Option<usize> {
        let padded = size + 2 * self.pad;
        if padded < self.kernel {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }

    /// Output extent of a transposed convolution.
    pub fn transpose_out(&self, size: usize) -> Option<usize> {
        ((size - 1) * self.stride + self.kernel).checked_sub(2 * self.pad)
    }
}

/// Unfolds one `[c, h, w]` image into `[c·k·k, ho·wo]` patches.
pub fn im2col<F: Scalar>(img: &[F], c: usize, h: usize, w: usize, g: ConvGeom, cols: &mut [F]) {
    let ho = g.conv_out(h).expect("kernel fits");
    let wo = g.conv_out(w).expect("kernel fits");
    let k = g.kernel;
    assert_eq!(cols.len(), c * k * k * ho * wo);
    let npix = ho * wo;
    for ch in 0..c {
        let plane = &img[ch * h * w..(ch + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let dst = &mut cols[row * npix..(row + 1) * npix];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        line.iter_mut().for_each(|v| *v = F::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= w as isize { F::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch columns back into a `[c, h, w]` image (accumulating).
pub fn col2im<F: Scalar>(cols: &[F], c: usize, h: usize, w: usize, g: ConvGeom, img: &mut [F]) {
    let ho = g.conv_out(h).expect("kernel fits");
    let wo = g.conv_out(w).expect("kernel fits");
    let k = g.kernel;
    assert_eq!(cols.len(), c * k * k * ho * wo);
    assert_eq!(img.len(), c * h * w);
    let npix = ho * wo;
    for ch in 0..c {
        let plane = &mut img[ch * h * w..(ch + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let src = &cols[row * npix..(row + 1) * npix];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Forward 2-D convolution. `x: [n, c, h, w]`, `weight: [o, c, k, k]`, `bias: [o]`.
pub fn conv2d<F: Scalar>(x: &Tensor<F>, weight: &Tensor<F>, bias: &Tensor<F>, g: ConvGeom) -> Tensor<F> {
    let (n, c, h, w) = dims4(x);
    let o = weight.shape()[0];
    assert_eq!(weight.shape(), &[o, c, g.kernel, g.kernel], "conv2d weight shape");
    let ho = g.conv_out(h).expect("kernel fits");
    let wo = g.conv_out(w).expect("kernel fits");
    let ckk = c * g.kernel * g.kernel;
    let npix = ho * wo;
    let mut cols = vec![F::zero(); ckk * npix];
    let mut out = vec![F::zero(); n * o * npix];
    for i in 0..n {
        im2col(&x.data()[i * c * h * w..(i + 1) * c * h * w], c, h, w, g, &mut cols);
        let y = &mut out[i * o * npix..(i + 1) * o * npix];
        for (oc, plane) in y.chunks_mut(npix).enumerate() {
            plane.iter_mut().for_each(|v| *v = bias.data()[oc]);
        }
        gemm(o, ckk, npix, weight.data(), false, &cols, false, y, true);
    }
    Tensor::new(vec![n, o, ho, wo], out)
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward<F: Scalar>(
    x: &Tensor<F>,
    weight: &Tensor<F>,
    dy: &Tensor<F>,
    g: ConvGeom,
    need_dx: bool,
) -> (Option<Tensor<F>>, Tensor<F>, Tensor<F>) {
    let (n, c, h, w) = dims4(x);
    let o = weight.shape()[0];
    let (_, _, ho, wo) = dims4(dy);
    let ckk = c * g.kernel * g.kernel;
    let npix = ho * wo;
    let mut cols = vec![F::zero(); ckk * npix];
    let mut dcols = vec![F::zero(); ckk * npix];
    let mut dw = vec![F::zero(); o * ckk];
    let mut db = vec![F::zero(); o];
    let mut dx = if need_dx { vec![F::zero(); n * c * h * w] } else { Vec::new() };
    for i in 0..n {
        let dyi = &dy.data()[i * o * npix..(i + 1) * o * npix];
        for (oc, plane) in dyi.chunks(npix).enumerate() {
            db[oc] += plane.iter().copied().sum();
        }
        im2col(&x.data()[i * c * h * w..(i + 1) * c * h * w], c, h, w, g, &mut cols);
        gemm(o, npix, ckk, dyi, false, &cols, true, &mut dw, true);
        if need_dx {
            gemm(ckk, o, npix, weight.data(), true, dyi, false, &mut dcols, false);
            col2im(&dcols, c, h, w, g, &mut dx[i * c * h * w..(i + 1) * c * h * w]);
        }
    }
    (
        need_dx.then(|| Tensor::new(vec![n, c, h, w], dx)),
        Tensor::new(weight.shape().to_vec(), dw),
        Tensor::new(vec![o], db),
    )
}

/// Forward transposed convolution. `x: [n, ci, h, w]`, `weight: [ci, co, k, k]`, `bias: [co]`.
pub fn conv_transpose2d<F: Scalar>(x: &Tensor<F>, weight: &Tensor<F>, bias: &Tensor<F>, g: ConvGeom) -> Tensor<F> {
    let (n, ci, h, w) = dims4(x);
    let co = weight.shape()[1];
    assert_eq!(weight.shape(), &[ci, co, g.kernel, g.kernel], "conv_transpose2d weight shape");
    let ho = g.transpose_out(h).expect("valid transpose geometry");
    let wo = g.transpose_out(w).expect("valid transpose geometry");
    let ckk = co * g.kernel * g.kernel;
    let npix = h * w;
    let mut cols = vec![F::zero(); ckk * npix];
    let mut out = vec![F::zero(); n * co * ho * wo];
    for i in 0..n {
        gemm(ckk, ci, npix, weight.data(), true, &x.data()[i * ci * npix..(i + 1) * ci * npix], false, &mut cols, false);
        let y = &mut out[i * co * ho * wo..(i + 1) * co * ho * wo];
        for (oc, plane) in y.chunks_mut(ho * wo).enumerate() {
            plane.iter_mut().for_each(|v| *v = bias.data()[oc]);
        }
        col2im(&cols, co, ho, wo, g, y);
    }
    Tensor::new(vec![n, co, ho, wo], out)
}

/// Gradients of [`conv_transpose2d`] with respect to input, weight and bias.
pub fn conv_transpose2d_backward<F: Scalar>(
    x: &Tensor<F>,
    weight: &Tensor<F>,
    dy: &Tensor<F>,
    g: ConvGeom,
    need_dx: bool,
) -> (Option<Tensor<F>>, Tensor<F>, Tensor<F>) {
    let (n, ci, h, w) = dims4(x);
    let co = weight.shape()[1];
    let (_, _, ho, wo) = dims4(dy);
    let ckk = co * g.kernel * g.kernel;
    let npix = h * w;
    let mut dcols = vec![F::zero(); ckk * npix];
    let mut dw = vec![F::zero(); ci * ckk];
    let mut db = vec![F::zero(); co];
    let mut dx = if need_dx { vec![F::zero(); n * ci * npix] } else { Vec::new() };
    for i in 0..n {
        let dyi = &dy.data()[i * co * ho * wo..(i + 1) * co * ho * wo];
        for (oc, plane) in dyi.chunks(ho * wo).enumerate() {
            db[oc] += plane.iter().copied().sum();
        }
        im2col(dyi, co, ho, wo, g, &mut dcols);
        let xi = &x.data()[i * ci * npix..(i + 1) * ci * npix];
        gemm(ci, npix, ckk, xi, false, &dcols, true, &mut dw, true);
        if need_dx {
            gemm(ci, ckk, npix, weight.data(), false, &dcols, false, &mut dx[i * ci * npix..(i + 1) * ci * npix], false);
        }
    }
    (
        need_dx.then(|| Tensor::new(vec![n, ci, h, w], dx)),
        Tensor::new(weight.shape().to_vec(), dw),
        Tensor::new(vec![co], db),
    )
}

fn dims4<F: Scalar>(t: &Tensor<F>) -> (usize, usize, usize, usize) {
    match *t.shape() {
        [n, c, h, w] => (n, c, h, w),
        ref s => panic!("expected a 4-d tensor, got shape {s:?}"),
    }
}
