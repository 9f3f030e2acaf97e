//! Minimal CPU building blocks for the denoiser: 2-D convolution via
//! im2col + GEMM, leaky rectifier, 2x2 average pooling, nearest-neighbour
//! upsampling and channel concatenation, each with its backward pass.

use std::fmt::Debug;

use num_traits::Float;

/// Scalar type the network can run in. `f32` for training and inference,
/// `f64` for gradient checks.
pub trait Real: Float + Default + Debug + Send + Sync + 'static {
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `C = alpha * A * B + beta * C` on strided row/column layouts.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize, k: usize, n: usize,
        alpha: Self,
        a: &[Self], rsa: isize, csa: isize,
        b: &[Self], rsb: isize, csb: isize,
        beta: Self,
        c: &mut [Self], rsc: isize, csc: isize,
    );
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            #[inline]
            fn of(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }
            fn gemm(
                m: usize, k: usize, n: usize,
                alpha: Self,
                a: &[Self], rsa: isize, csa: isize,
                b: &[Self], rsb: isize, csb: isize,
                beta: Self,
                c: &mut [Self], rsc: isize, csc: isize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                let span = |rows: usize, cols: usize, rs: isize, cs: isize| {
                    if rows == 0 || cols == 0 {
                        0
                    } else {
                        ((rows - 1) as isize * rs + (cols - 1) as isize * cs) as usize + 1
                    }
                };
                assert!(a.len() >= span(m, k, rsa, csa));
                assert!(b.len() >= span(k, n, rsb, csb));
                assert!(c.len() >= span(m, n, rsc, csc));
                // SAFETY: the extents of all three operands were checked above
                // and the strides are non-negative.
                unsafe {
                    $gemm(
                        m, k, n, alpha,
                        a.as_ptr(), rsa, csa,
                        b.as_ptr(), rsb, csb,
                        beta, c.as_mut_ptr(), rsc, csc,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// Channel-major feature map of a single sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor {
            c,
            h,
            w,
            data: vec![T::zero(); c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), c * h * w);
        Tensor { c, h, w, data }
    }

    #[inline]
    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    /// `[cout][cin][k][k]`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct ConvGrad<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvGrad<T> {
    pub fn zeros_like(conv: &Conv2d<T>) -> Self {
        ConvGrad {
            weight: vec![T::zero(); conv.weight.len()],
            bias: vec![T::zero(); conv.bias.len()],
        }
    }

    pub fn clear(&mut self) {
        self.weight.iter_mut().for_each(|v| *v = T::zero());
        self.bias.iter_mut().for_each(|v| *v = T::zero());
    }
}

impl<T: Real> Conv2d<T> {
    pub fn zeros(cin: usize, cout: usize, k: usize) -> Self {
        assert!(k % 2 == 1, "kernel size must be odd");
        Conv2d {
            cin,
            cout,
            k,
            weight: vec![T::zero(); cout * cin * k * k],
            bias: vec![T::zero(); cout],
        }
    }

    fn patch_len(&self) -> usize {
        self.cin * self.k * self.k
    }

    /// Same-padded convolution. On return `col` holds the im2col matrix of
    /// the input, which [`Conv2d::backward`] needs.
    pub fn forward(&self, x: &Tensor<T>, col: &mut Vec<T>) -> Tensor<T> {
        assert_eq!(x.c, self.cin);
        let n = x.plane();
        let kk = self.patch_len();
        let mut out = Tensor::zeros(self.cout, x.h, x.w);
        for (co, chunk) in out.data.chunks_mut(n).enumerate() {
            chunk.iter_mut().for_each(|v| *v = self.bias[co]);
        }
        let b: &[T] = if self.k == 1 {
            &x.data
        } else {
            im2col(x, self.k, col);
            col
        };
        T::gemm(
            self.cout, kk, n, T::one(),
            &self.weight, kk as isize, 1,
            b, n as isize, 1,
            T::one(), &mut out.data, n as isize, 1,
        );
        out
    }

    /// Accumulates parameter gradients into `grad` and returns the input
    /// gradient. `input` is the forward input (only read for 1x1 kernels,
    /// where no im2col copy is made); `col` is what `forward` left behind.
    pub fn backward(
        &self,
        input: Option<&Tensor<T>>,
        col: &[T],
        in_h: usize,
        in_w: usize,
        dy: &Tensor<T>,
        grad: &mut ConvGrad<T>,
    ) -> Tensor<T> {
        let n = in_h * in_w;
        let kk = self.patch_len();
        let colm: &[T] = if self.k == 1 {
            &input.expect("1x1 backward needs the forward input").data
        } else {
            col
        };
        // dW += dy * col^T
        T::gemm(
            self.cout, n, kk, T::one(),
            &dy.data, n as isize, 1,
            colm, 1, n as isize,
            T::one(), &mut grad.weight, kk as isize, 1,
        );
        for (co, chunk) in dy.data.chunks(n).enumerate() {
            let s = chunk.iter().fold(T::zero(), |a, &b| a + b);
            grad.bias[co] = grad.bias[co] + s;
        }
        // dcol = W^T * dy
        let mut dcol = vec![T::zero(); kk * n];
        T::gemm(
            kk, self.cout, n, T::one(),
            &self.weight, 1, kk as isize,
            &dy.data, n as isize, 1,
            T::zero(), &mut dcol, n as isize, 1,
        );
        if self.k == 1 {
            Tensor::from_vec(self.cin, in_h, in_w, dcol)
        } else {
            col2im(&dcol, self.cin, in_h, in_w, self.k)
        }
    }
}

fn im2col<T: Real>(x: &Tensor<T>, k: usize, col: &mut Vec<T>) {
    let (h, w) = (x.h, x.w);
    let p = k / 2;
    let n = h * w;
    col.clear();
    col.resize(x.c * k * k * n, T::zero());
    for ci in 0..x.c {
        let src = &x.data[ci * n..(ci + 1) * n];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * n;
                let dst = &mut col[row..row + n];
                let dx = kx as isize - p as isize;
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                if x0 >= x1 {
                    continue;
                }
                for oy in 0..h {
                    let iy = oy as isize + ky as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let s = iy as usize * w;
                    let d = oy * w;
                    let sx0 = (x0 as isize + dx) as usize;
                    dst[d + x0..d + x1].copy_from_slice(&src[s + sx0..s + sx0 + (x1 - x0)]);
                }
            }
        }
    }
}

fn col2im<T: Real>(dcol: &[T], c: usize, h: usize, w: usize, k: usize) -> Tensor<T> {
    let p = k / 2;
    let n = h * w;
    let mut out = Tensor::zeros(c, h, w);
    for ci in 0..c {
        let dst = &mut out.data[ci * n..(ci + 1) * n];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * n;
                let src = &dcol[row..row + n];
                let dx = kx as isize - p as isize;
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                if x0 >= x1 {
                    continue;
                }
                for oy in 0..h {
                    let iy = oy as isize + ky as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let s = oy * w;
                    let d = iy as usize * w;
                    let sx0 = (x0 as isize + dx) as usize;
                    for (o, &v) in dst[d + sx0..d + sx0 + (x1 - x0)].iter_mut().zip(&src[s + x0..s + x1]) {
                        *o = *o + v;
                    }
                }
            }
        }
    }
    out
}

pub fn leaky_relu<T: Real>(x: &mut Tensor<T>, slope: T) {
    for v in x.data.iter_mut() {
        if *v < T::zero() {
            *v = *v * slope;
        }
    }
}

/// Backward of [`leaky_relu`] given its output (sign is preserved).
pub fn leaky_relu_backward<T: Real>(out: &Tensor<T>, dy: &mut Tensor<T>, slope: T) {
    for (g, &y) in dy.data.iter_mut().zip(&out.data) {
        if y <= T::zero() {
            *g = *g * slope;
        }
    }
}

pub fn avg_pool2<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    assert!(x.h % 2 == 0 && x.w % 2 == 0, "pooling needs even dims");
    let (oh, ow) = (x.h / 2, x.w / 2);
    let quarter = T::of(0.25);
    let mut out = Tensor::zeros(x.c, oh, ow);
    for c in 0..x.c {
        let src = &x.data[c * x.plane()..(c + 1) * x.plane()];
        let dst = &mut out.data[c * oh * ow..(c + 1) * oh * ow];
        for r in 0..oh {
            let a = &src[2 * r * x.w..(2 * r + 1) * x.w];
            let b = &src[(2 * r + 1) * x.w..(2 * r + 2) * x.w];
            for j in 0..ow {
                dst[r * ow + j] = (a[2 * j] + a[2 * j + 1] + b[2 * j] + b[2 * j + 1]) * quarter;
            }
        }
    }
    out
}

pub fn avg_pool2_backward<T: Real>(dy: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (dy.h * 2, dy.w * 2);
    let quarter = T::of(0.25);
    let mut out = Tensor::zeros(dy.c, h, w);
    for c in 0..dy.c {
        for r in 0..h {
            for j in 0..w {
                out.data[(c * h + r) * w + j] = dy.data[(c * dy.h + r / 2) * dy.w + j / 2] * quarter;
            }
        }
    }
    out
}

pub fn upsample_nearest2<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (x.h * 2, x.w * 2);
    let mut out = Tensor::zeros(x.c, h, w);
    for c in 0..x.c {
        for r in 0..h {
            for j in 0..w {
                out.data[(c * h + r) * w + j] = x.data[(c * x.h + r / 2) * x.w + j / 2];
            }
        }
    }
    out
}

pub fn upsample_nearest2_backward<T: Real>(dy: &Tensor<T>) -> Tensor<T> {
    let (oh, ow) = (dy.h / 2, dy.w / 2);
    let mut out = Tensor::zeros(dy.c, oh, ow);
    for c in 0..dy.c {
        for r in 0..dy.h {
            for j in 0..dy.w {
                let o = &mut out.data[(c * oh + r / 2) * ow + j / 2];
                *o = *o + dy.data[(c * dy.h + r) * dy.w + j];
            }
        }
    }
    out
}

pub fn concat<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    assert_eq!((a.h, a.w), (b.h, b.w));
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor::from_vec(a.c + b.c, a.h, a.w, data)
}

/// Splits a gradient of [`concat`] back into its two parts.
pub fn split<T: Real>(d: Tensor<T>, first_channels: usize) -> (Tensor<T>, Tensor<T>) {
    let cut = first_channels * d.plane();
    let (h, w, c) = (d.h, d.w, d.c);
    let mut first = d.data;
    let second = first.split_off(cut);
    (
        Tensor::from_vec(first_channels, h, w, first),
        Tensor::from_vec(c - first_channels, h, w, second),
    )
}
