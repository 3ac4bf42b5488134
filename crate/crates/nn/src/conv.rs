//! Strided 2-D cross-correlation with "same" zero padding and ReLU.
//!
//! Padding adds `(k - 1) / 2` rows/cols before and `k / 2` after, which makes
//! the output extent `ceil(input / stride)` along each axis. For odd kernels
//! the padding is symmetric.

use rand::Rng;

use crate::dense::uniform_init;
use crate::error::{NnError, Result};
use crate::params::Module;
use crate::scalar::{gemm, Scalar, View};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dLayer<T = f32> {
    kernels: Tensor<T>,
    bias: Tensor<T>,
    stride: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct Conv2dCache<T = f32> {
    input: Tensor<T>,
    preact: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct Conv2dGrads<T = f32> {
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
    pub input: Tensor<T>,
}

/// Output extent for one axis.
pub fn same_output_len(input: usize, stride: usize) -> usize {
    input.div_ceil(stride)
}

impl<T: Scalar> Conv2dLayer<T> {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        filters: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel.0 * kernel.1;
        let n = filters * fan_in;
        Self {
            kernels: Tensor::new(
                vec![filters, in_channels, kernel.0, kernel.1],
                uniform_init(n, fan_in, rng),
            )
            .expect("dims"),
            bias: Tensor::new(vec![filters], uniform_init(filters, fan_in, rng)).expect("dims"),
            stride,
        }
    }

    pub fn from_parts(kernels: Tensor<T>, bias: Tensor<T>, stride: (usize, usize)) -> Result<Self> {
        if kernels.shape().len() != 4 {
            return Err(NnError::InvalidShape {
                shape: kernels.shape().to_vec(),
                len: kernels.len(),
            });
        }
        bias.expect_shape(&[kernels.shape()[0]], "conv bias")?;
        Ok(Self {
            kernels,
            bias,
            stride,
        })
    }

    pub fn filters(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.kernels.shape()[2], self.kernels.shape()[3])
    }

    pub fn stride(&self) -> (usize, usize) {
        self.stride
    }

    pub fn output_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (same_output_len(h, self.stride.0), same_output_len(w, self.stride.1))
    }

    pub fn cast<U: Scalar>(&self) -> Conv2dLayer<U> {
        Conv2dLayer {
            kernels: self.kernels.cast(),
            bias: self.bias.cast(),
            stride: self.stride,
        }
    }

    fn geometry(&self, x: &Tensor<T>) -> Result<Geometry> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.in_channels() {
            return Err(NnError::ShapeMismatch {
                context: "conv input",
                expected: vec![s.first().copied().unwrap_or(0), self.in_channels(), 0, 0],
                found: s.to_vec(),
            });
        }
        let (kh, kw) = self.kernel();
        let padded = (s[2] + kh - 1, s[3] + kw - 1);
        if kh > padded.0 || kw > padded.1 || s[2] == 0 || s[3] == 0 {
            return Err(NnError::KernelTooLarge {
                kernel: (kh, kw),
                padded,
            });
        }
        let (oh, ow) = self.output_dims(s[2], s[3]);
        Ok(Geometry {
            batch: s[0],
            ch: s[1],
            h: s[2],
            w: s[3],
            oh,
            ow,
            kh,
            kw,
            pad_top: (kh - 1) / 2,
            pad_left: (kw - 1) / 2,
        })
    }

    /// Zero-padded receptive fields of sample `b`, one row of
    /// `ch * kh * kw` values per output position.
    fn patches(&self, xd: &[T], b: usize, g: &Geometry) -> Vec<T> {
        let plen = g.ch * g.kh * g.kw;
        let mut p = vec![T::zero(); g.oh * g.ow * plen];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let row = &mut p[(oy * g.ow + ox) * plen..(oy * g.ow + ox + 1) * plen];
                for c in 0..g.ch {
                    for ky in 0..g.kh {
                        let Some(iy) = g.in_row(oy, ky, self.stride.0) else {
                            continue;
                        };
                        for kx in 0..g.kw {
                            let Some(ix) = g.in_col(ox, kx, self.stride.1) else {
                                continue;
                            };
                            row[(c * g.kh + ky) * g.kw + kx] = xd[((b * g.ch + c) * g.h + iy) * g.w + ix];
                        }
                    }
                }
            }
        }
        p
    }

    fn preactivation(&self, x: &Tensor<T>, g: &Geometry) -> Tensor<T> {
        let f_n = self.filters();
        let plen = g.ch * g.kh * g.kw;
        let k = self.kernels.data();
        let npos = g.oh * g.ow;
        let mut out = vec![T::zero(); g.batch * f_n * npos];
        for b in 0..g.batch {
            let p = self.patches(x.data(), b, g);
            let o = &mut out[b * f_n * npos..(b + 1) * f_n * npos];
            for (f, row) in o.chunks_exact_mut(npos).enumerate() {
                row.iter_mut().for_each(|v| *v = self.bias.data()[f]);
            }
            gemm(View::new(k, f_n, plen), View::new(&p, npos, plen).t(), T::one(), o);
        }
        Tensor::new(vec![g.batch, f_n, g.oh, g.ow], out).expect("conv output")
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.geometry(x)?;
        let mut z = self.preactivation(x, &g);
        z.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
        Ok(z)
    }

    pub fn forward_train(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Conv2dCache<T>)> {
        let g = self.geometry(x)?;
        let z = self.preactivation(x, &g);
        let y = Tensor::new(
            z.shape().to_vec(),
            z.data().iter().map(|v| v.max(T::zero())).collect(),
        )?;
        Ok((
            y,
            Conv2dCache {
                input: x.clone(),
                preact: z,
            },
        ))
    }

    pub fn backward(&self, cache: &Conv2dCache<T>, grad_out: &Tensor<T>) -> Result<Conv2dGrads<T>> {
        if cache.preact.shape() != grad_out.shape() {
            return Err(NnError::CacheMismatch("conv"));
        }
        let g = self.geometry(&cache.input)?;
        let f_n = self.filters();
        let plen = g.ch * g.kh * g.kw;
        let npos = g.oh * g.ow;
        let k = self.kernels.data();
        let xd = cache.input.data();
        let mut gk = vec![T::zero(); k.len()];
        let mut gb = vec![T::zero(); f_n];
        let mut gx = vec![T::zero(); xd.len()];
        for b in 0..g.batch {
            let p = self.patches(xd, b, &g);
            let base = b * f_n * npos;
            let mut dz = grad_out.data()[base..base + f_n * npos].to_vec();
            for (d, z) in dz.iter_mut().zip(&cache.preact.data()[base..base + f_n * npos]) {
                if *z <= T::zero() {
                    *d = T::zero();
                }
            }
            for (f, row) in dz.chunks_exact(npos).enumerate() {
                gb[f] += row.iter().copied().sum();
            }
            let dzv = View::new(&dz, f_n, npos);
            gemm(dzv, View::new(&p, npos, plen), T::one(), &mut gk);
            let mut gp = vec![T::zero(); npos * plen];
            gemm(dzv.t(), View::new(k, f_n, plen), T::zero(), &mut gp);
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let row = &gp[(oy * g.ow + ox) * plen..(oy * g.ow + ox + 1) * plen];
                    for c in 0..g.ch {
                        for ky in 0..g.kh {
                            let Some(iy) = g.in_row(oy, ky, self.stride.0) else {
                                continue;
                            };
                            for kx in 0..g.kw {
                                let Some(ix) = g.in_col(ox, kx, self.stride.1) else {
                                    continue;
                                };
                                gx[((b * g.ch + c) * g.h + iy) * g.w + ix] += row[(c * g.kh + ky) * g.kw + kx];
                            }
                        }
                    }
                }
            }
        }
        Ok(Conv2dGrads {
            kernels: Tensor::new(self.kernels.shape().to_vec(), gk)?,
            bias: Tensor::new(vec![f_n], gb)?,
            input: Tensor::new(cache.input.shape().to_vec(), gx)?,
        })
    }
}

struct Geometry {
    batch: usize,
    ch: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    kh: usize,
    kw: usize,
    pad_top: usize,
    pad_left: usize,
}

impl Geometry {
    #[inline]
    fn in_row(&self, oy: usize, ky: usize, stride: usize) -> Option<usize> {
        (oy * stride + ky)
            .checked_sub(self.pad_top)
            .filter(|&i| i < self.h)
    }

    #[inline]
    fn in_col(&self, ox: usize, kx: usize, stride: usize) -> Option<usize> {
        (ox * stride + kx)
            .checked_sub(self.pad_left)
            .filter(|&i| i < self.w)
    }
}

impl<T: Scalar> Module<T> for Conv2dLayer<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        f(format!("{prefix}kernels"), &self.kernels);
        f(format!("{prefix}bias"), &self.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(format!("{prefix}kernels"), &mut self.kernels);
        f(format!("{prefix}bias"), &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grid_encoder_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv: Conv2dLayer<f32> = Conv2dLayer::new(1, 16, (3, 1), (2, 1), &mut rng);
        let y = conv.forward(&Tensor::zeros(&[1, 1, 80, 5])).unwrap();
        assert_eq!(y.shape(), &[1, 16, 40, 5]);
        let conv2: Conv2dLayer<f32> = Conv2dLayer::new(16, 32, (3, 1), (2, 1), &mut rng);
        assert_eq!(conv2.forward(&y).unwrap().shape(), &[1, 32, 20, 5]);
    }

    #[test]
    fn zero_input_gives_relu_bias() {
        let conv = Conv2dLayer::from_parts(
            Tensor::new(vec![2, 1, 3, 1], vec![0.3f32; 6]).unwrap(),
            Tensor::from_vec(vec![0.5, -0.5]),
            (2, 1),
        )
        .unwrap();
        let y = conv.forward(&Tensor::zeros(&[1, 1, 6, 2])).unwrap();
        let per = y.len() / 2;
        assert!(y.data()[..per].iter().all(|v| *v == 0.5));
        assert!(y.data()[per..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identity_kernel_is_relu() {
        let conv = Conv2dLayer::from_parts(
            Tensor::new(vec![1, 1, 1, 1], vec![1.0f32]).unwrap(),
            Tensor::from_vec(vec![0.0]),
            (1, 1),
        )
        .unwrap();
        let x = Tensor::new(vec![1, 1, 2, 2], vec![-1.0, 2.0, 0.5, -0.1]).unwrap();
        assert_eq!(conv.forward(&x).unwrap().data(), &[0.0, 2.0, 0.5, 0.0]);
    }

    #[test]
    fn odd_extent_rounds_up() {
        assert_eq!(same_output_len(81, 2), 41);
        assert_eq!(same_output_len(80, 2), 40);
        assert_eq!(same_output_len(5, 1), 5);
    }

    #[test]
    fn channel_mismatch_is_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv: Conv2dLayer<f32> = Conv2dLayer::new(2, 4, (3, 1), (1, 1), &mut rng);
        assert!(conv.forward(&Tensor::zeros(&[1, 1, 4, 4])).is_err());
    }
}
