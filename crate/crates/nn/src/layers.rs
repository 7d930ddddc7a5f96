//! Layers with hand-written backward passes.
//!
//! Each layer caches what its backward pass needs during `forward`, so a layer
//! instance must see exactly one `forward` before each `backward`.

use crate::error::{NnError, Result};
use crate::tensor::{Scalar, Tensor};

/// A learnable tensor and its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, value: Vec<T>) -> Self {
        let grad = vec![T::zero(); value.len()];
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Output length and leading pad of a "same" padded window: `out = ceil(n / stride)`.
pub fn same_padding(n: usize, k: usize, stride: usize) -> (usize, usize) {
    let out = n.div_ceil(stride);
    let total = ((out - 1) * stride + k).saturating_sub(n);
    (out, total / 2)
}

fn missing_cache(layer: &str) -> NnError {
    NnError::Shape(format!("{layer}: backward called without a preceding forward"))
}

/// 2-D cross-correlation with square kernel, "same" padding and per-axis stride.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: (usize, usize),
    /// Row-major `out_channels x (in_channels * kernel * kernel)`.
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    input: Option<Tensor<T>>,
}

struct ConvGeom {
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    ph: usize,
    pw: usize,
}

impl<T: Scalar> Conv2d<T> {
    /// Weights drawn from `init(i)` in storage order, scaled by the caller.
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: (usize, usize),
        bias: bool,
        mut init: impl FnMut() -> T,
    ) -> Result<Self> {
        if !(1..=2).contains(&stride.0) || !(1..=2).contains(&stride.1) {
            return Err(NnError::Config(format!("{name}: stride {stride:?} not in {{1, 2}}")));
        }
        if in_channels == 0 || out_channels == 0 || kernel == 0 {
            return Err(NnError::Config(format!("{name}: zero-sized convolution")));
        }
        let n = out_channels * in_channels * kernel * kernel;
        let weight = Param::new(format!("{name}.weight"), (0..n).map(|_| init()).collect());
        let bias = bias.then(|| Param::new(format!("{name}.bias"), vec![T::zero(); out_channels]));
        Ok(Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            weight,
            bias,
            input: None,
        })
    }

    pub fn output_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (
            same_padding(h, self.kernel, self.stride.0).0,
            same_padding(w, self.kernel, self.stride.1).0,
        )
    }

    fn geom(&self, h: usize, w: usize) -> ConvGeom {
        let (ho, ph) = same_padding(h, self.kernel, self.stride.0);
        let (wo, pw) = same_padding(w, self.kernel, self.stride.1);
        ConvGeom { h, w, ho, wo, ph, pw }
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == (1, 1)
    }

    fn im2col(&self, x: &[T], g: &ConvGeom, col: &mut [T]) {
        let k = self.kernel;
        let p = g.ho * g.wo;
        for ci in 0..self.in_channels {
            let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut col[((ci * k + ky) * k + kx) * p..][..p];
                    for oy in 0..g.ho {
                        let iy = (oy * self.stride.0 + ky) as isize - g.ph as isize;
                        let dst = &mut row[oy * g.wo..(oy + 1) * g.wo];
                        if iy < 0 || iy >= g.h as isize {
                            dst.iter_mut().for_each(|v| *v = T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * self.stride.1 + kx) as isize - g.pw as isize;
                            *d = if ix < 0 || ix >= g.w as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[T], g: &ConvGeom, dx: &mut [T]) {
        let k = self.kernel;
        let p = g.ho * g.wo;
        for ci in 0..self.in_channels {
            let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &col[((ci * k + ky) * k + kx) * p..][..p];
                    for oy in 0..g.ho {
                        let iy = (oy * self.stride.0 + ky) as isize - g.ph as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                        for ox in 0..g.wo {
                            let ix = (ox * self.stride.1 + kx) as isize - g.pw as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst[ix as usize] += row[oy * g.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [n, c, h, w] = x.shape();
        if c != self.in_channels {
            return Err(NnError::Shape(format!(
                "{}: expected {} input channels, got {c}",
                self.weight.name, self.in_channels
            )));
        }
        let g = self.geom(h, w);
        let p = g.ho * g.wo;
        let kk = self.in_channels * self.kernel * self.kernel;
        let mut y = Tensor::zeros([n, self.out_channels, g.ho, g.wo]);
        let mut col = if self.is_pointwise() { Vec::new() } else { vec![T::zero(); kk * p] };
        for b in 0..n {
            let cols: &[T] = if self.is_pointwise() {
                x.item(b)
            } else {
                self.im2col(x.item(b), &g, &mut col);
                &col
            };
            let yb = y.item_mut(b);
            T::gemm(
                self.out_channels,
                kk,
                p,
                &self.weight.value,
                (kk as isize, 1),
                cols,
                (p as isize, 1),
                T::zero(),
                yb,
                p,
            );
            if let Some(bias) = &self.bias {
                for (o, row) in yb.chunks_mut(p).enumerate() {
                    row.iter_mut().for_each(|v| *v += bias.value[o]);
                }
            }
        }
        self.input = Some(x.clone());
        Ok(y)
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.take().ok_or_else(|| missing_cache(&self.weight.name))?;
        let [n, _, h, w] = x.shape();
        let g = self.geom(h, w);
        let p = g.ho * g.wo;
        if dy.shape() != [n, self.out_channels, g.ho, g.wo] {
            return Err(NnError::Shape(format!(
                "{}: gradient shape {:?} does not match output",
                self.weight.name,
                dy.shape()
            )));
        }
        let kk = self.in_channels * self.kernel * self.kernel;
        let mut dx = Tensor::zeros(x.shape());
        let pointwise = self.is_pointwise();
        let mut col = if pointwise { Vec::new() } else { vec![T::zero(); kk * p] };
        let mut dcol = vec![T::zero(); kk * p];
        for b in 0..n {
            let dyb = dy.item(b);
            let cols: &[T] = if pointwise {
                x.item(b)
            } else {
                self.im2col(x.item(b), &g, &mut col);
                &col
            };
            // dW += dy * col^T
            T::gemm(
                self.out_channels,
                p,
                kk,
                dyb,
                (p as isize, 1),
                cols,
                (1, p as isize),
                T::one(),
                &mut self.weight.grad,
                kk,
            );
            if let Some(bias) = &mut self.bias {
                for (o, row) in dyb.chunks(p).enumerate() {
                    let mut s = T::zero();
                    for &v in row {
                        s += v;
                    }
                    bias.grad[o] += s;
                }
            }
            // dcol = W^T * dy
            let target: &mut [T] = if pointwise { dx.item_mut(b) } else { &mut dcol };
            T::gemm(
                kk,
                self.out_channels,
                p,
                &self.weight.value,
                (1, kk as isize),
                dyb,
                (p as isize, 1),
                T::zero(),
                target,
                p,
            );
            if !pointwise {
                self.col2im(&dcol, &g, dx.item_mut(b));
            }
        }
        Ok(dx)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = vec![&mut self.weight];
        if let Some(b) = &mut self.bias {
            v.push(b);
        }
        v
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v = vec![&self.weight];
        if let Some(b) = &self.bias {
            v.push(b);
        }
        v
    }
}

/// Per-channel batch normalization with learned affine transform.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub channels: usize,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache<T>>,
}

#[derive(Debug, Clone)]
struct BnCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    batch_stats: bool,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::new(format!("{name}.gamma"), vec![T::one(); channels]),
            beta: Param::new(format!("{name}.beta"), vec![T::zero(); channels]),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: 0.9,
            eps: 1e-5,
            cache: None,
        }
    }

    /// Train mode uses batch statistics when the batch has at least two items,
    /// otherwise (and in eval mode) the running statistics.
    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>> {
        let [n, c, h, w] = x.shape();
        if c != self.channels {
            return Err(NnError::Shape(format!(
                "{}: expected {} channels, got {c}",
                self.gamma.name, self.channels
            )));
        }
        let hw = h * w;
        let batch_stats = train && n >= 2;
        let mut mean = vec![0.0f64; c];
        let mut var = vec![0.0f64; c];
        if batch_stats {
            let m = (n * hw) as f64;
            for b in 0..n {
                for (ch, plane) in x.item(b).chunks(hw).enumerate() {
                    mean[ch] += plane.iter().map(|v| v.to_f64_lossy()).sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|v| *v /= m);
            for b in 0..n {
                for (ch, plane) in x.item(b).chunks(hw).enumerate() {
                    var[ch] += plane
                        .iter()
                        .map(|v| (v.to_f64_lossy() - mean[ch]).powi(2))
                        .sum::<f64>();
                }
            }
            var.iter_mut().for_each(|v| *v /= m);
            if train {
                let unbiased = m / (m - 1.0).max(1.0);
                for ch in 0..c {
                    let rm = self.running_mean[ch].to_f64_lossy();
                    let rv = self.running_var[ch].to_f64_lossy();
                    self.running_mean[ch] =
                        T::from_f64_lossy(self.momentum * rm + (1.0 - self.momentum) * mean[ch]);
                    self.running_var[ch] = T::from_f64_lossy(
                        self.momentum * rv + (1.0 - self.momentum) * var[ch] * unbiased,
                    );
                }
            }
        } else {
            for ch in 0..c {
                mean[ch] = self.running_mean[ch].to_f64_lossy();
                var[ch] = self.running_var[ch].to_f64_lossy();
            }
        }
        let inv_std: Vec<T> = var
            .iter()
            .map(|v| T::from_f64_lossy(1.0 / (v + self.eps).sqrt()))
            .collect();
        let mean_t: Vec<T> = mean.iter().map(|&v| T::from_f64_lossy(v)).collect();
        let mut xhat = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        for b in 0..n {
            let xs = x.item(b);
            let xh = xhat.item_mut(b);
            for ch in 0..c {
                for k in ch * hw..(ch + 1) * hw {
                    xh[k] = (xs[k] - mean_t[ch]) * inv_std[ch];
                }
            }
            let xh = xhat.item(b);
            let ys = y.item_mut(b);
            for ch in 0..c {
                let (gm, bt) = (self.gamma.value[ch], self.beta.value[ch]);
                for k in ch * hw..(ch + 1) * hw {
                    ys[k] = gm * xh[k] + bt;
                }
            }
        }
        self.cache = Some(BnCache {
            xhat,
            inv_std,
            batch_stats,
        });
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or_else(|| missing_cache(&self.gamma.name))?;
        let [n, c, h, w] = cache.xhat.shape();
        if dy.shape() != cache.xhat.shape() {
            return Err(NnError::Shape(format!("{}: gradient shape mismatch", self.gamma.name)));
        }
        let hw = h * w;
        let mut sum_dy = vec![T::zero(); c];
        let mut sum_dy_xhat = vec![T::zero(); c];
        for b in 0..n {
            let (d, xh) = (dy.item(b), cache.xhat.item(b));
            for ch in 0..c {
                for k in ch * hw..(ch + 1) * hw {
                    sum_dy[ch] += d[k];
                    sum_dy_xhat[ch] += d[k] * xh[k];
                }
            }
        }
        for ch in 0..c {
            self.beta.grad[ch] += sum_dy[ch];
            self.gamma.grad[ch] += sum_dy_xhat[ch];
        }
        let mut dx = Tensor::zeros(dy.shape());
        let m = T::from_usize(n * hw).unwrap_or_else(T::one);
        for b in 0..n {
            let (d, xh) = (dy.item(b), cache.xhat.item(b));
            let out = dx.item_mut(b);
            for ch in 0..c {
                let scale = self.gamma.value[ch] * cache.inv_std[ch];
                for k in ch * hw..(ch + 1) * hw {
                    out[k] = if cache.batch_stats {
                        scale * (d[k] - sum_dy[ch] / m - xh[k] * sum_dy_xhat[ch] / m)
                    } else {
                        scale * d[k]
                    };
                }
            }
        }
        Ok(dx)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        vec![&self.gamma, &self.beta]
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let mut y = x.clone();
        let mut mask = Vec::with_capacity(x.len());
        for v in y.data_mut() {
            // NaN passes through so non-finite checks downstream still see it
            let keep = !(*v <= T::zero());
            if !keep {
                *v = T::zero();
            }
            mask.push(keep);
        }
        self.mask = Some(mask);
        y
    }

    pub fn backward<T: Scalar>(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let mask = self.mask.take().ok_or_else(|| missing_cache("relu"))?;
        let mut dx = dy.clone();
        for (v, keep) in dx.data_mut().iter_mut().zip(mask) {
            if !keep {
                *v = T::zero();
            }
        }
        Ok(dx)
    }
}

/// 2x2 max pool, stride 2; odd edges use a clipped window (output `ceil(n/2)`).
#[derive(Debug, Clone, Default)]
pub struct MaxPool2x2 {
    cache: Option<([usize; 4], Vec<usize>)>,
}

impl MaxPool2x2 {
    pub fn output_dims(h: usize, w: usize) -> (usize, usize) {
        (h.div_ceil(2), w.div_ceil(2))
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let [n, c, h, w] = x.shape();
        let (ho, wo) = Self::output_dims(h, w);
        let mut y = Tensor::zeros([n, c, ho, wo]);
        let mut arg = Vec::with_capacity(y.len());
        let out = y.data_mut();
        let mut o = 0;
        for plane in 0..n * c {
            let base = plane * h * w;
            let xs = &x.data()[base..base + h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    // row-major scan with strict '>' keeps the first maximum
                    let mut best = oy * 2 * w + ox * 2;
                    for iy in oy * 2..(oy * 2 + 2).min(h) {
                        for ix in ox * 2..(ox * 2 + 2).min(w) {
                            if xs[iy * w + ix] > xs[best] {
                                best = iy * w + ix;
                            }
                        }
                    }
                    out[o] = xs[best];
                    arg.push(base + best);
                    o += 1;
                }
            }
        }
        self.cache = Some((x.shape(), arg));
        y
    }

    pub fn backward<T: Scalar>(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (shape, arg) = self.cache.take().ok_or_else(|| missing_cache("maxpool"))?;
        if dy.len() != arg.len() {
            return Err(NnError::Shape("maxpool: gradient shape mismatch".into()));
        }
        let mut dx = Tensor::zeros(shape);
        let d = dx.data_mut();
        for (g, &i) in dy.data().iter().zip(&arg) {
            d[i] += *g;
        }
        Ok(dx)
    }
}

/// Nearest-neighbour x2 upsampling in both axes.
#[derive(Debug, Clone, Default)]
pub struct Upsample2x;

impl Upsample2x {
    pub fn forward<T: Scalar>(&self, x: &Tensor<T>) -> Tensor<T> {
        let [n, c, h, w] = x.shape();
        let mut y = Tensor::zeros([n, c, 2 * h, 2 * w]);
        let (xs, ys) = (x.data(), y.data_mut());
        for plane in 0..n * c {
            for iy in 0..2 * h {
                for ix in 0..2 * w {
                    ys[(plane * 2 * h + iy) * 2 * w + ix] = xs[(plane * h + iy / 2) * w + ix / 2];
                }
            }
        }
        y
    }

    pub fn backward<T: Scalar>(&self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let [n, c, h2, w2] = dy.shape();
        if h2 % 2 != 0 || w2 % 2 != 0 {
            return Err(NnError::Shape("upsample: odd gradient dims".into()));
        }
        let (h, w) = (h2 / 2, w2 / 2);
        let mut dx = Tensor::zeros([n, c, h, w]);
        let (ds, xs) = (dy.data(), dx.data_mut());
        for plane in 0..n * c {
            for iy in 0..h2 {
                for ix in 0..w2 {
                    xs[(plane * h + iy / 2) * w + ix / 2] += ds[(plane * h2 + iy) * w2 + ix];
                }
            }
        }
        Ok(dx)
    }
}

/// One output sample of a 1-D linear interpolation: `w0 * in[i0] + w1 * in[i1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tap {
    pub i0: usize,
    pub i1: usize,
    pub w0: f64,
    pub w1: f64,
}

/// Interpolation taps mapping `n_in` samples to `n_out`, with the end samples
/// of both grids aligned.
pub fn resize_taps(n_in: usize, n_out: usize) -> Result<Vec<Tap>> {
    if n_in == 0 || n_out == 0 {
        return Err(NnError::Config("resize dims must be >= 1".into()));
    }
    Ok((0..n_out)
        .map(|j| {
            if n_in == 1 || n_out == 1 {
                return Tap { i0: 0, i1: 0, w0: 1.0, w1: 0.0 };
            }
            let s = j as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
            let i0 = (s.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            let f = s - i0 as f64;
            Tap { i0, i1, w0: 1.0 - f, w1: f }
        })
        .collect())
}

/// Separable linear resize to a fixed `(height, width)`.
#[derive(Debug, Clone)]
pub struct LinearResize {
    pub out_h: usize,
    pub out_w: usize,
    in_dims: Option<(usize, usize)>,
}

impl LinearResize {
    pub fn new(out_h: usize, out_w: usize) -> Result<Self> {
        if out_h == 0 || out_w == 0 {
            return Err(NnError::Config("resize target must be >= 1".into()));
        }
        Ok(Self { out_h, out_w, in_dims: None })
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [n, c, h, w] = x.shape();
        let rows = resize_taps(h, self.out_h)?;
        let cols = resize_taps(w, self.out_w)?;
        let (oh, ow) = (self.out_h, self.out_w);
        let mut y = Tensor::zeros([n, c, oh, ow]);
        let mut tmp = vec![T::zero(); oh * w];
        let (xs, ys) = (x.data(), y.data_mut());
        for plane in 0..n * c {
            let src = &xs[plane * h * w..(plane + 1) * h * w];
            for (j, t) in rows.iter().enumerate() {
                let (w0, w1) = (T::from_f64_lossy(t.w0), T::from_f64_lossy(t.w1));
                for ix in 0..w {
                    tmp[j * w + ix] = w0 * src[t.i0 * w + ix] + w1 * src[t.i1 * w + ix];
                }
            }
            let dst = &mut ys[plane * oh * ow..(plane + 1) * oh * ow];
            for j in 0..oh {
                for (k, t) in cols.iter().enumerate() {
                    let (w0, w1) = (T::from_f64_lossy(t.w0), T::from_f64_lossy(t.w1));
                    dst[j * ow + k] = w0 * tmp[j * w + t.i0] + w1 * tmp[j * w + t.i1];
                }
            }
        }
        self.in_dims = Some((h, w));
        Ok(y)
    }

    /// Exact transpose of the forward map.
    pub fn backward<T: Scalar>(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (h, w) = self.in_dims.take().ok_or_else(|| missing_cache("linear_resize"))?;
        let [n, c, oh, ow] = dy.shape();
        if (oh, ow) != (self.out_h, self.out_w) {
            return Err(NnError::Shape("linear_resize: gradient shape mismatch".into()));
        }
        let rows = resize_taps(h, oh)?;
        let cols = resize_taps(w, ow)?;
        let mut dx = Tensor::zeros([n, c, h, w]);
        let mut tmp = vec![T::zero(); oh * w];
        let (ds, xs) = (dy.data(), dx.data_mut());
        for plane in 0..n * c {
            tmp.iter_mut().for_each(|v| *v = T::zero());
            let src = &ds[plane * oh * ow..(plane + 1) * oh * ow];
            for j in 0..oh {
                for (k, t) in cols.iter().enumerate() {
                    let g = src[j * ow + k];
                    tmp[j * w + t.i0] += T::from_f64_lossy(t.w0) * g;
                    tmp[j * w + t.i1] += T::from_f64_lossy(t.w1) * g;
                }
            }
            let dst = &mut xs[plane * h * w..(plane + 1) * h * w];
            for (j, t) in rows.iter().enumerate() {
                let (w0, w1) = (T::from_f64_lossy(t.w0), T::from_f64_lossy(t.w1));
                for ix in 0..w {
                    let g = tmp[j * w + ix];
                    dst[t.i0 * w + ix] += w0 * g;
                    dst[t.i1 * w + ix] += w1 * g;
                }
            }
        }
        Ok(dx)
    }
}
