//! Small U-Net: two 3x3 convolutions per level, 2x2 average pooling on the
//! way down, nearest-neighbour upsampling plus skip concatenation on the
//! way up, and a linear 1x1 head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    avg_pool2, avg_pool2_backward, concat, leaky_relu, leaky_relu_backward, split,
    upsample_nearest2, upsample_nearest2_backward, Conv2d, ConvGrad, Real, Tensor,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    /// Number of pooling steps.
    pub levels: usize,
    /// Channels per resolution, finest first; `levels + 1` entries, the last
    /// being the bottleneck.
    pub channels: Vec<usize>,
    pub kernel: usize,
    /// Adds the standardised input to the head output.
    pub residual: bool,
    pub leaky_slope: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            levels: 2,
            channels: vec![32, 64, 64],
            kernel: 3,
            residual: true,
            leaky_slope: 0.1,
        }
    }
}

impl Architecture {
    pub fn with_channels(channels: &[usize]) -> Self {
        Architecture {
            levels: channels.len() - 1,
            channels: channels.to_vec(),
            ..Architecture::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.channels.len() != self.levels + 1 {
            return Err(Error::invalid(format!(
                "architecture needs levels >= 1 and levels + 1 channel entries, got {} / {:?}",
                self.levels, self.channels
            )));
        }
        if self.channels.iter().any(|&c| c == 0) || self.kernel % 2 == 0 {
            return Err(Error::invalid("channels must be positive and kernel odd"));
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::invalid("leaky slope must be in [0, 1)"));
        }
        Ok(())
    }

    /// Spatial dims must be multiples of this.
    pub fn stride(&self) -> usize {
        1 << self.levels
    }

    fn conv_count(&self) -> usize {
        4 * self.levels + 3
    }

    fn enc(&self, level: usize, j: usize) -> usize {
        2 * level + j
    }

    fn bottleneck(&self, j: usize) -> usize {
        2 * self.levels + j
    }

    fn dec(&self, level: usize, j: usize) -> usize {
        2 * self.levels + 2 + 2 * (self.levels - 1 - level) + j
    }

    fn head(&self) -> usize {
        4 * self.levels + 2
    }

    /// `(cin, cout, kernel)` of every convolution in parameter order.
    pub fn conv_shapes(&self) -> Vec<(usize, usize, usize)> {
        let ch = &self.channels;
        let k = self.kernel;
        let mut shapes = vec![(0, 0, 0); self.conv_count()];
        for lvl in 0..self.levels {
            let cin = if lvl == 0 { 1 } else { ch[lvl - 1] };
            shapes[self.enc(lvl, 0)] = (cin, ch[lvl], k);
            shapes[self.enc(lvl, 1)] = (ch[lvl], ch[lvl], k);
            shapes[self.dec(lvl, 0)] = (ch[lvl + 1] + ch[lvl], ch[lvl], k);
            shapes[self.dec(lvl, 1)] = (ch[lvl], ch[lvl], k);
        }
        let deep = ch[self.levels];
        shapes[self.bottleneck(0)] = (ch[self.levels - 1], deep, k);
        shapes[self.bottleneck(1)] = (deep, deep, k);
        shapes[self.head()] = (ch[0], 1, 1);
        shapes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UNet<T> {
    pub arch: Architecture,
    pub convs: Vec<Conv2d<T>>,
}

/// Everything the backward pass needs from one forward pass.
pub struct Tape<T> {
    cols: Vec<Vec<T>>,
    /// Forward input of each convolution, kept only for 1x1 kernels.
    inputs: Vec<Option<Tensor<T>>>,
    /// Post-activation output of each activated convolution.
    outputs: Vec<Option<Tensor<T>>>,
    dims: Vec<(usize, usize)>,
}

impl<T: Real> UNet<T> {
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let convs = arch
            .conv_shapes()
            .into_iter()
            .map(|(cin, cout, k)| Conv2d::zeros(cin, cout, k))
            .collect();
        Ok(UNet { arch, convs })
    }

    /// He-uniform initialisation for the hidden layers; the head starts
    /// small so that a residual network begins close to the identity.
    pub fn init(arch: Architecture, rng: &mut impl Rng) -> Result<Self> {
        let mut net = UNet::zeros(arch)?;
        let gain = 2.0 / (1.0 + net.arch.leaky_slope.powi(2));
        let head = net.arch.head();
        for (i, conv) in net.convs.iter_mut().enumerate() {
            let fan_in = (conv.cin * conv.k * conv.k) as f64;
            let mut bound = (3.0 * gain / fan_in).sqrt();
            if i == head {
                bound *= 0.1;
            }
            conv.weight
                .iter_mut()
                .for_each(|w| *w = T::of(rng.random_range(-bound..bound)));
        }
        Ok(net)
    }

    pub fn zero_grads(&self) -> Vec<ConvGrad<T>> {
        self.convs.iter().map(ConvGrad::zeros_like).collect()
    }

    pub fn param_count(&self) -> usize {
        self.convs.iter().map(|c| c.weight.len() + c.bias.len()).sum()
    }

    fn slope(&self) -> T {
        T::of(self.arch.leaky_slope)
    }

    fn conv_act(&self, idx: usize, x: Tensor<T>, tape: &mut Option<&mut Tape<T>>) -> Tensor<T> {
        let mut col = Vec::new();
        let mut y = self.convs[idx].forward(&x, &mut col);
        leaky_relu(&mut y, self.slope());
        if let Some(t) = tape.as_deref_mut() {
            t.cols[idx] = col;
            t.dims[idx] = (x.h, x.w);
            t.outputs[idx] = Some(y.clone());
        }
        y
    }

    /// Head output for a single-channel input whose dims are multiples of
    /// [`Architecture::stride`]. Pass a tape to record for backward.
    pub fn forward(&self, x: &Tensor<T>, mut tape: Option<&mut Tape<T>>) -> Tensor<T> {
        let a = &self.arch;
        assert_eq!(x.c, 1);
        assert!(x.h % a.stride() == 0 && x.w % a.stride() == 0);
        if let Some(t) = tape.as_deref_mut() {
            let n = a.conv_count();
            t.cols = vec![Vec::new(); n];
            t.inputs = vec![None; n];
            t.outputs = vec![None; n];
            t.dims = vec![(0, 0); n];
        }
        let mut skips = Vec::with_capacity(a.levels);
        let mut h = x.clone();
        for lvl in 0..a.levels {
            h = self.conv_act(a.enc(lvl, 0), h, &mut tape);
            h = self.conv_act(a.enc(lvl, 1), h, &mut tape);
            let pooled = avg_pool2(&h);
            skips.push(h);
            h = pooled;
        }
        h = self.conv_act(a.bottleneck(0), h, &mut tape);
        h = self.conv_act(a.bottleneck(1), h, &mut tape);
        for lvl in (0..a.levels).rev() {
            h = concat(&upsample_nearest2(&h), &skips[lvl]);
            h = self.conv_act(a.dec(lvl, 0), h, &mut tape);
            h = self.conv_act(a.dec(lvl, 1), h, &mut tape);
        }
        let head = a.head();
        let mut col = Vec::new();
        let out = self.convs[head].forward(&h, &mut col);
        if let Some(t) = tape {
            t.dims[head] = (h.h, h.w);
            t.inputs[head] = Some(h);
        }
        out
    }

    fn act_conv_backward(
        &self,
        idx: usize,
        tape: &Tape<T>,
        mut d: Tensor<T>,
        grads: &mut [ConvGrad<T>],
    ) -> Tensor<T> {
        let out = tape.outputs[idx].as_ref().expect("tape holds activations");
        leaky_relu_backward(out, &mut d, self.slope());
        let (h, w) = tape.dims[idx];
        self.convs[idx].backward(tape.inputs[idx].as_ref(), &tape.cols[idx], h, w, &d, &mut grads[idx])
    }

    /// Accumulates parameter gradients for head-output gradient `dout` and
    /// returns the gradient with respect to the network input.
    pub fn backward(&self, tape: &Tape<T>, dout: &Tensor<T>, grads: &mut [ConvGrad<T>]) -> Tensor<T> {
        let a = &self.arch;
        let head = a.head();
        let (h, w) = tape.dims[head];
        let mut d = self.convs[head].backward(tape.inputs[head].as_ref(), &[], h, w, dout, &mut grads[head]);
        let mut dskips: Vec<Option<Tensor<T>>> = vec![None; a.levels];
        for lvl in 0..a.levels {
            d = self.act_conv_backward(a.dec(lvl, 1), tape, d, grads);
            d = self.act_conv_backward(a.dec(lvl, 0), tape, d, grads);
            let (dup, dskip) = split(d, a.channels[lvl + 1]);
            dskips[lvl] = Some(dskip);
            d = upsample_nearest2_backward(&dup);
        }
        d = self.act_conv_backward(a.bottleneck(1), tape, d, grads);
        d = self.act_conv_backward(a.bottleneck(0), tape, d, grads);
        for lvl in (0..a.levels).rev() {
            d = avg_pool2_backward(&d);
            d.add_assign(dskips[lvl].as_ref().expect("skip gradient"));
            d = self.act_conv_backward(a.enc(lvl, 1), tape, d, grads);
            d = self.act_conv_backward(a.enc(lvl, 0), tape, d, grads);
        }
        d
    }

    pub fn cast<U: Real>(&self) -> UNet<U> {
        UNet {
            arch: self.arch.clone(),
            convs: self
                .convs
                .iter()
                .map(|c| Conv2d {
                    cin: c.cin,
                    cout: c.cout,
                    k: c.k,
                    weight: c.weight.iter().map(|v| U::of(v.as_f64())).collect(),
                    bias: c.bias.iter().map(|v| U::of(v.as_f64())).collect(),
                })
                .collect(),
        }
    }

    pub fn head_mut(&mut self) -> &mut Conv2d<T> {
        let i = self.arch.head();
        &mut self.convs[i]
    }
}

impl<T> Tape<T> {
    pub fn new() -> Self {
        Tape {
            cols: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            dims: Vec::new(),
        }
    }
}

impl<T> Default for Tape<T> {
    fn default() -> Self {
        Tape::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn conv_shapes_follow_channel_plan() {
        let arch = Architecture::default();
        let shapes = arch.conv_shapes();
        assert_eq!(shapes.len(), 11);
        assert_eq!(shapes[0], (1, 32, 3));
        assert_eq!(shapes[2], (32, 64, 3));
        assert_eq!(shapes[4], (64, 64, 3));
        // deepest decoder stage sees upsampled bottleneck + level-1 skip
        assert_eq!(shapes[6], (128, 64, 3));
        assert_eq!(shapes[8], (96, 32, 3));
        assert_eq!(shapes[10], (32, 1, 1));
    }

    #[test]
    fn invalid_architectures_rejected() {
        assert!(UNet::<f32>::zeros(Architecture { levels: 2, channels: vec![4, 8], ..Default::default() }).is_err());
        assert!(UNet::<f32>::zeros(Architecture { kernel: 2, ..Default::default() }).is_err());
    }

    #[test]
    fn backward_matches_finite_differences_on_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net: UNet<f64> = UNet::init(Architecture::with_channels(&[3, 4, 4]), &mut rng).unwrap();
        let x = Tensor::from_vec(1, 8, 8, (0..64).map(|_| rng.random_range(-1.0..1.0)).collect());
        let probe: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let obj = |x: &Tensor<f64>| net.forward(x, None).data.iter().zip(&probe).map(|(a, b)| a * b).sum::<f64>();
        let mut tape = Tape::new();
        net.forward(&x, Some(&mut tape));
        let mut grads = net.zero_grads();
        let dx = net.backward(&tape, &Tensor::from_vec(1, 8, 8, probe.clone()), &mut grads);
        let h = 1e-6;
        for i in (0..64).step_by(5) {
            let (mut p, mut m) = (x.clone(), x.clone());
            p.data[i] += h;
            m.data[i] -= h;
            let fd = (obj(&p) - obj(&m)) / (2.0 * h);
            assert!((fd - dx.data[i]).abs() <= 1e-6 * fd.abs().max(1.0), "input {i}: {fd} vs {}", dx.data[i]);
        }
    }
}
