//! Small 1D convolutional networks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{conv_forward, ParamLayout, ParameterSet, Tape, Var};
use crate::boundary::periodic_pad;
use crate::error::{check_len, Error, Result};

/// Channel counts `[in, hidden..., out]` and a shared odd kernel width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub channels: Vec<usize>,
    pub kernel: usize,
}

impl Architecture {
    pub fn new(channels: Vec<usize>, kernel: usize) -> Result<Self> {
        if channels.len() < 2 {
            return Err(Error::InvalidArgument("a network needs input and output channels".into()));
        }
        if channels.contains(&0) {
            return Err(Error::InvalidArgument(format!("zero-width layer in {channels:?}")));
        }
        if kernel.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("kernel width must be odd, got {kernel}")));
        }
        Ok(Self { channels, kernel })
    }

    /// `hidden_layers` hidden layers of `width` channels.
    pub fn uniform(input: usize, hidden_layers: usize, width: usize, output: usize, kernel: usize) -> Result<Self> {
        let mut channels = vec![input];
        channels.extend(std::iter::repeat_n(width, hidden_layers));
        channels.push(output);
        Self::new(channels, kernel)
    }

    pub fn layers(&self) -> usize {
        self.channels.len() - 1
    }

    pub fn inputs(&self) -> usize {
        self.channels[0]
    }

    pub fn outputs(&self) -> usize {
        *self.channels.last().unwrap()
    }

    /// Cells consumed per side in valid mode.
    pub fn receptive_radius(&self) -> usize {
        self.layers() * (self.kernel - 1) / 2
    }

    pub fn layout(&self, prefix: &str) -> ParamLayout {
        let mut layout = ParamLayout::default();
        self.extend_layout(prefix, &mut layout);
        layout
    }

    pub fn extend_layout(&self, prefix: &str, layout: &mut ParamLayout) {
        for (l, w) in self.channels.windows(2).enumerate() {
            layout.push(format!("{prefix}conv{l}.weight"), vec![w[1], w[0], self.kernel]);
            layout.push(format!("{prefix}conv{l}.bias"), vec![w[1]]);
        }
    }

    pub fn param_count(&self) -> usize {
        self.channels.windows(2).map(|w| w[1] * w[0] * self.kernel + w[1]).sum()
    }

    /// Glorot-normal weights and zero biases written into `params`.
    pub fn init_glorot_into(&self, params: &mut [f64], rng: &mut ChaCha8Rng) -> Result<()> {
        check_len(self.param_count(), params.len())?;
        let mut off = 0;
        for w in self.channels.windows(2) {
            let (cin, cout) = (w[0], w[1]);
            let std = (2.0 / ((cin + cout) * self.kernel) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite standard deviation");
            let n = cin * cout * self.kernel;
            for p in &mut params[off..off + n] {
                *p = normal.sample(rng);
            }
            off += n;
            params[off..off + cout].iter_mut().for_each(|b| *b = 0.0);
            off += cout;
        }
        Ok(())
    }

    /// Valid-mode forward pass: `input` holds `inputs()` channels of length
    /// `L`, the result `outputs()` channels of length `L − 2·radius`.
    pub fn forward_valid(&self, params: &[f64], input: &[f64]) -> Result<Vec<f64>> {
        check_len(self.param_count(), params.len())?;
        let cin = self.inputs();
        if !input.len().is_multiple_of(cin) || input.len() / cin <= 2 * self.receptive_radius() {
            return Err(Error::InvalidArgument(format!(
                "input of {} values does not fit {cin} channels and radius {}",
                input.len(),
                self.receptive_radius()
            )));
        }
        let mut x = input.to_vec();
        let mut off = 0;
        let last = self.layers() - 1;
        for (l, w) in self.channels.windows(2).enumerate() {
            let (cin, cout) = (w[0], w[1]);
            let nw = cin * cout * self.kernel;
            let weight = &params[off..off + nw];
            let bias = &params[off + nw..off + nw + cout];
            off += nw + cout;
            x = conv_forward(&x, weight, Some(bias), cin, cout, self.kernel);
            if l < last {
                x.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        Ok(x)
    }

    /// Same as [`Architecture::forward_valid`] recorded on a tape, with the
    /// parameters read from `theta[offset..]`.
    pub fn forward_tape(&self, tape: &mut Tape, theta: Var, offset: usize, input: Var) -> Result<Var> {
        let mut x = input;
        let mut off = offset;
        let last = self.layers() - 1;
        for (l, w) in self.channels.windows(2).enumerate() {
            let (cin, cout) = (w[0], w[1]);
            let nw = cin * cout * self.kernel;
            let weight = tape.slice(theta, off..off + nw)?;
            let bias = tape.slice(theta, off + nw..off + nw + cout)?;
            off += nw + cout;
            x = tape.conv(x, weight, Some(bias), cin, cout, self.kernel)?;
            if l < last {
                x = tape.relu(x);
            }
        }
        Ok(x)
    }
}

/// How a [`ConvNet`] keeps the output length equal to the input length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Wrap every channel periodically.
    Circular,
    /// The caller already supplied `receptive_radius` ghost cells per side.
    Ghost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvNet {
    pub arch: Architecture,
    pub params: ParameterSet,
}

impl ConvNet {
    pub fn init_glorot(arch: Architecture, seed: u64) -> Self {
        let mut params = ParameterSet::zeros(arch.layout(""));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        arch.init_glorot_into(&mut params.values, &mut rng).expect("layout matches architecture");
        Self { arch, params }
    }

    /// Forward pass on channel-major input.
    pub fn forward(&self, input: &[f64], padding: Padding) -> Result<Vec<f64>> {
        let cin = self.arch.inputs();
        if !input.len().is_multiple_of(cin) {
            return Err(Error::InvalidArgument(format!("{} values do not split into {cin} channels", input.len())));
        }
        match padding {
            Padding::Ghost => self.arch.forward_valid(&self.params.values, input),
            Padding::Circular => {
                let len = input.len() / cin;
                let r = self.arch.receptive_radius();
                let mut padded = Vec::with_capacity(cin * (len + 2 * r));
                for ch in input.chunks(len) {
                    padded.extend(periodic_pad(ch, r)?);
                }
                self.arch.forward_valid(&self.params.values, &padded)
            }
        }
    }
}
