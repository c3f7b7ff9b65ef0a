//! Grouped, dilated 1-D convolution and its transposed counterpart.
//!
//! Activations are channel-major (`[channels × time]`). Forward and backward
//! kernels are plain functions so frozen networks can run them without a
//! graph.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometry of a 1-D convolution layer.
///
/// Weights are laid out `[out_channels, in_channels / groups, kernel]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub groups: usize,
    pub dilation: usize,
    pub causal_pad: bool,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            groups: 1,
            dilation: 1,
            causal_pad: true,
        }
    }

    pub fn groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn centered(mut self) -> Self {
        self.causal_pad = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidArgument("conv channels must be positive".into()));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "conv kernel must be a positive odd integer, got {}",
                self.kernel
            )));
        }
        if self.groups == 0 || self.dilation == 0 {
            return Err(Error::InvalidArgument("groups and dilation must be positive".into()));
        }
        if self.in_channels % self.groups != 0 || self.out_channels % self.groups != 0 {
            return Err(Error::InvalidArgument(format!(
                "channels {}->{} not divisible by groups {}",
                self.in_channels, self.out_channels, self.groups
            )));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> [usize; 3] {
        [self.out_channels, self.in_channels / self.groups, self.kernel]
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels / self.groups * self.kernel
    }

    /// Weights plus one bias per output channel.
    pub fn param_count(&self) -> usize {
        self.out_channels * (self.in_channels / self.groups) * self.kernel + self.out_channels
    }

    /// Number of left-padding steps.
    pub fn left_pad(&self) -> usize {
        let span = (self.kernel - 1) * self.dilation;
        if self.causal_pad {
            span
        } else {
            span / 2
        }
    }

    /// Frames of past context seen by one output, including the current one.
    pub fn receptive_field(&self) -> usize {
        (self.kernel - 1) * self.dilation + 1
    }

    fn check(&self, x_shape: &[usize], w_len: usize, b_len: usize) -> Result<usize> {
        self.validate()?;
        if x_shape.len() != 2 {
            return Err(Error::shape_in("conv1d", format!("input rank {} != 2", x_shape.len())));
        }
        if x_shape[0] != self.in_channels {
            return Err(Error::shape_in(
                "conv1d",
                format!("in_channels: expected {}, got {}", self.in_channels, x_shape[0]),
            ));
        }
        let expect_w: usize = self.weight_shape().iter().product();
        if w_len != expect_w {
            return Err(Error::shape_in(
                "conv1d",
                format!("weight: expected {expect_w} values {:?}, got {w_len}", self.weight_shape()),
            ));
        }
        if b_len != self.out_channels {
            return Err(Error::shape_in(
                "conv1d",
                format!("bias: expected {}, got {b_len}", self.out_channels),
            ));
        }
        Ok(x_shape[1])
    }
}

/// Forward convolution. Output length equals input length.
pub fn conv1d_forward(spec: &ConvSpec, x: &[f64], x_shape: &[usize], w: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let t_len = spec.check(x_shape, w.len(), b.len())?;
    let cin_g = spec.in_channels / spec.groups;
    let cout_g = spec.out_channels / spec.groups;
    let pad = spec.left_pad() as isize;
    let k = spec.kernel;
    let d = spec.dilation as isize;
    let mut out = vec![0.0; spec.out_channels * t_len];
    for o in 0..spec.out_channels {
        let g = o / cout_g;
        let row = &mut out[o * t_len..(o + 1) * t_len];
        row.iter_mut().for_each(|v| *v = b[o]);
        for ci in 0..cin_g {
            let xin = &x[(g * cin_g + ci) * t_len..(g * cin_g + ci + 1) * t_len];
            let wk = &w[(o * cin_g + ci) * k..(o * cin_g + ci + 1) * k];
            for (kk, &wv) in wk.iter().enumerate() {
                if wv == 0.0 {
                    continue;
                }
                let shift = kk as isize * d - pad;
                let (lo, hi) = valid_range(shift, t_len);
                for t in lo..hi {
                    row[t] += wv * xin[(t as isize + shift) as usize];
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of a forward convolution with respect to input, weight and bias.
pub fn conv1d_backward(
    spec: &ConvSpec,
    x: &[f64],
    t_len: usize,
    w: &[f64],
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let cin_g = spec.in_channels / spec.groups;
    let cout_g = spec.out_channels / spec.groups;
    let pad = spec.left_pad() as isize;
    let k = spec.kernel;
    let d = spec.dilation as isize;
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; spec.out_channels];
    for o in 0..spec.out_channels {
        let g = o / cout_g;
        let go = &grad_out[o * t_len..(o + 1) * t_len];
        gb[o] = go.iter().sum();
        for ci in 0..cin_g {
            let cidx = g * cin_g + ci;
            let xin = &x[cidx * t_len..(cidx + 1) * t_len];
            for kk in 0..k {
                let widx = (o * cin_g + ci) * k + kk;
                let wv = w[widx];
                let shift = kk as isize * d - pad;
                let (lo, hi) = valid_range(shift, t_len);
                let mut acc = 0.0;
                for t in lo..hi {
                    let src = (t as isize + shift) as usize;
                    acc += go[t] * xin[src];
                    gx[cidx * t_len + src] += go[t] * wv;
                }
                gw[widx] += acc;
            }
        }
    }
    (gx, gw, gb)
}

fn valid_range(shift: isize, t_len: usize) -> (usize, usize) {
    let lo = (-shift).max(0) as usize;
    let hi = (t_len as isize - shift).clamp(0, t_len as isize) as usize;
    (lo.min(hi), hi)
}

/// Geometry of a transposed (upsampling) 1-D convolution.
///
/// Weights are laid out `[in_channels, out_channels / groups, kernel]`. Output
/// sample `j` receives contributions only from input frames `t` with
/// `t * stride <= j`, and the output is cropped to `stride * T` samples, so the
/// layer is causal and the length contract is exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransposedConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub groups: usize,
}

impl TransposedConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            groups: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride < 1 {
            return Err(Error::InvalidArgument("transposed conv stride must be >= 1".into()));
        }
        if self.kernel == 0 || self.in_channels == 0 || self.out_channels == 0 || self.groups == 0 {
            return Err(Error::InvalidArgument("transposed conv extents must be positive".into()));
        }
        if self.in_channels % self.groups != 0 || self.out_channels % self.groups != 0 {
            return Err(Error::InvalidArgument("transposed conv channels not divisible by groups".into()));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> [usize; 3] {
        [self.in_channels, self.out_channels / self.groups, self.kernel]
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels / self.groups * self.kernel.div_ceil(self.stride)
    }

    pub fn param_count(&self) -> usize {
        self.in_channels * (self.out_channels / self.groups) * self.kernel + self.out_channels
    }
}

pub fn conv_transpose1d_forward(
    spec: &TransposedConvSpec,
    x: &[f64],
    x_shape: &[usize],
    w: &[f64],
    b: &[f64],
) -> Result<Vec<f64>> {
    spec.validate()?;
    if x_shape.len() != 2 || x_shape[0] != spec.in_channels {
        return Err(Error::shape_in(
            "conv_transpose1d",
            format!("in_channels: expected {}, got {:?}", spec.in_channels, x_shape),
        ));
    }
    let expect_w: usize = spec.weight_shape().iter().product();
    if w.len() != expect_w || b.len() != spec.out_channels {
        return Err(Error::shape_in(
            "conv_transpose1d",
            format!("weight/bias: expected {expect_w}/{}, got {}/{}", spec.out_channels, w.len(), b.len()),
        ));
    }
    let t_len = x_shape[1];
    let out_len = t_len * spec.stride;
    let cin_g = spec.in_channels / spec.groups;
    let cout_g = spec.out_channels / spec.groups;
    let k = spec.kernel;
    let mut out = vec![0.0; spec.out_channels * out_len];
    for o in 0..spec.out_channels {
        out[o * out_len..(o + 1) * out_len].iter_mut().for_each(|v| *v = b[o]);
    }
    for ci in 0..spec.in_channels {
        let g = ci / cin_g;
        for ol in 0..cout_g {
            let o = g * cout_g + ol;
            let wk = &w[(ci * cout_g + ol) * k..(ci * cout_g + ol + 1) * k];
            let row = &mut out[o * out_len..(o + 1) * out_len];
            for t in 0..t_len {
                let xv = x[ci * t_len + t];
                let base = t * spec.stride;
                for (kk, &wv) in wk.iter().enumerate() {
                    let j = base + kk;
                    if j >= out_len {
                        break;
                    }
                    row[j] += wv * xv;
                }
            }
        }
    }
    Ok(out)
}

pub fn conv_transpose1d_backward(
    spec: &TransposedConvSpec,
    x: &[f64],
    t_len: usize,
    w: &[f64],
    grad_out: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let out_len = t_len * spec.stride;
    let cin_g = spec.in_channels / spec.groups;
    let cout_g = spec.out_channels / spec.groups;
    let k = spec.kernel;
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; w.len()];
    let gb = (0..spec.out_channels)
        .map(|o| grad_out[o * out_len..(o + 1) * out_len].iter().sum())
        .collect();
    for ci in 0..spec.in_channels {
        let g = ci / cin_g;
        for ol in 0..cout_g {
            let o = g * cout_g + ol;
            let go = &grad_out[o * out_len..(o + 1) * out_len];
            let widx0 = (ci * cout_g + ol) * k;
            for t in 0..t_len {
                let xv = x[ci * t_len + t];
                let base = t * spec.stride;
                let mut acc = 0.0;
                for kk in 0..k {
                    let j = base + kk;
                    if j >= out_len {
                        break;
                    }
                    acc += w[widx0 + kk] * go[j];
                    gw[widx0 + kk] += xv * go[j];
                }
                gx[ci * t_len + t] += acc;
            }
        }
    }
    (gx, gw, gb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pointwise_kernel_scales() {
        let spec = ConvSpec::new(1, 1, 1);
        let y = conv1d_forward(&spec, &[1.0, 2.0, 3.0], &[1, 3], &[2.0], &[0.0]).unwrap();
        assert_eq!(y, vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn grouped_param_count() {
        let spec = ConvSpec::new(64, 64, 3).groups(4);
        assert_eq!(spec.param_count(), 3136);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(ConvSpec::new(6, 8, 3).groups(4).validate().is_err());
        assert!(ConvSpec::new(4, 4, 2).validate().is_err());
        let err = conv1d_forward(&ConvSpec::new(2, 1, 1), &[1.0; 3], &[3, 1], &[1.0; 2], &[0.0]).unwrap_err();
        assert!(err.to_string().contains("in_channels"), "{err}");
    }

    #[test]
    fn causal_dilated_ignores_future() {
        let spec = ConvSpec::new(1, 1, 3).dilation(2);
        let x: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).sin()).collect();
        let w = [0.3, -0.5, 0.9];
        let a = conv1d_forward(&spec, &x, &[1, 8], &w, &[0.1]).unwrap();
        let mut x2 = x.clone();
        x2[7] += 1.0;
        let b = conv1d_forward(&spec, &x2, &[1, 8], &w, &[0.1]).unwrap();
        assert_eq!(&a[..7], &b[..7]);
        assert_ne!(a[7], b[7]);
    }

    #[test]
    fn transposed_interleaves_zeros() {
        let spec = TransposedConvSpec::new(1, 1, 2, 2);
        let y = conv_transpose1d_forward(&spec, &[1.0, 2.0, 3.0], &[1, 3], &[1.0, 0.0], &[0.0]).unwrap();
        assert_eq!(y, vec![1.0, 0.0, 2.0, 0.0, 3.0, 0.0]);
    }

    #[test]
    fn transposed_length_contract() {
        let spec = TransposedConvSpec::new(1, 1, 7, 4);
        let y = conv_transpose1d_forward(&spec, &[1.0; 5], &[1, 5], &[0.5; 7], &[0.0]).unwrap();
        assert_eq!(y.len(), 20);
        let bad = TransposedConvSpec::new(1, 1, 2, 0);
        assert!(bad.validate().is_err());
    }
}
