//! The 1-D fully convolutional network: four same-padded convolutions with
//! ReLU after the first three and a per-timestep two-way softmax.
//!
//! Activations of a batch are laid out as `channels × (batch · window)`
//! matrices; each convolution is an im2col followed by one matrix product.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::features::{FeatureWindow, NUM_FEATURES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TcnArchitecture {
    pub input_channels: usize,
    pub hidden_channels: usize,
    pub kernels: [usize; 4],
    pub window: usize,
}

impl Default for TcnArchitecture {
    /// 3×50 → 256×50 → 256×50 → 256×50 → 2×50, kernels 5, 5, 7, 3.
    fn default() -> Self {
        Self { input_channels: NUM_FEATURES, hidden_channels: 256, kernels: [5, 5, 7, 3], window: 50 }
    }
}

impl TcnArchitecture {
    pub const OUTPUT_CHANNELS: usize = 2;

    pub fn with_hidden(hidden_channels: usize) -> Self {
        Self { hidden_channels, ..Self::default() }
    }

    /// `(in, out, kernel)` of each layer.
    pub fn layer_dims(&self) -> [(usize, usize, usize); 4] {
        let h = self.hidden_channels;
        let k = self.kernels;
        [(self.input_channels, h, k[0]), (h, h, k[1]), (h, h, k[2]), (h, Self::OUTPUT_CHANNELS, k[3])]
    }

    /// `channels × window` after each layer, softmax included.
    pub fn output_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes: Vec<_> = self.layer_dims().iter().map(|(_, o, _)| (*o, self.window)).collect();
        shapes.push((Self::OUTPUT_CHANNELS, self.window));
        shapes
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 || self.hidden_channels == 0 || self.window == 0 {
            return Err(Error::Config("TCN dimensions must be positive".into()));
        }
        if self.kernels.iter().any(|k| k % 2 == 0) {
            return Err(Error::Config(format!("TCN kernels must be odd for same padding, got {:?}", self.kernels)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// `out × (in · kernel)`, column index `in_channel * kernel + tap`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub kernel: usize,
}

impl ConvLayer {
    pub fn in_channels(&self) -> usize {
        self.weight.ncols() / self.kernel
    }

    pub fn out_channels(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TcnModel {
    pub arch: TcnArchitecture,
    pub layers: Vec<ConvLayer>,
    pub seed: u64,
}

/// Gradients with the same shapes as the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradients {
    pub fn zeros_like(model: &TcnModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.weight.raw_dim()), Array1::zeros(l.bias.len())))
                .collect(),
        }
    }
}

/// Activations kept for backpropagation.
struct Cache {
    cols: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    probs: Array2<f64>,
}

/// `(in · kernel) × cols` patch matrix of `x` (`in × (batch · window)`),
/// zero-padded at every window edge.
fn im2col(x: &Array2<f64>, kernel: usize, window: usize) -> Array2<f64> {
    let (cin, cols) = x.dim();
    let pad = kernel / 2;
    let mut out = Array2::zeros((cin * kernel, cols));
    for c in 0..cin {
        let row = x.row(c);
        for j in 0..kernel {
            let mut dst = out.row_mut(c * kernel + j);
            for start in (0..cols).step_by(window) {
                for t in 0..window {
                    let src = t + j;
                    if src >= pad && src - pad < window {
                        dst[start + t] = row[start + src - pad];
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`].
fn col2im(dcol: &Array2<f64>, cin: usize, kernel: usize, window: usize) -> Array2<f64> {
    let cols = dcol.ncols();
    let pad = kernel / 2;
    let mut out = Array2::zeros((cin, cols));
    for c in 0..cin {
        let mut dst = out.row_mut(c);
        for j in 0..kernel {
            let src_row = dcol.row(c * kernel + j);
            for start in (0..cols).step_by(window) {
                for t in 0..window {
                    let src = t + j;
                    if src >= pad && src - pad < window {
                        dst[start + src - pad] += src_row[start + t];
                    }
                }
            }
        }
    }
    out
}

fn softmax_columns(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut col in p.columns_mut() {
        let m = col.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        col.mapv_inplace(|v| (v - m).exp());
        let s = col.sum();
        col.mapv_inplace(|v| v / s);
    }
    p
}

impl TcnModel {
    /// He-initialized weights (`N(0, 2 / fan_in)`), zero biases.
    pub fn new(arch: TcnArchitecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = arch
            .layer_dims()
            .iter()
            .map(|&(cin, cout, k)| {
                let fan_in = (cin * k) as f64;
                let dist = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
                ConvLayer {
                    weight: Array2::from_shape_simple_fn((cout, cin * k), || dist.sample(&mut rng)),
                    bias: Array1::zeros(cout),
                    kernel: k,
                }
            })
            .collect();
        Ok(Self { arch, layers, seed })
    }

    /// A model with every weight and bias zero.
    pub fn zeros(arch: TcnArchitecture) -> Result<Self> {
        let mut m = Self::new(arch, 0)?;
        for l in &mut m.layers {
            l.weight.fill(0.0);
            l.bias.fill(0.0);
        }
        Ok(m)
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    fn stack(&self, windows: &[&FeatureWindow]) -> Result<Array2<f64>> {
        let t = self.arch.window;
        let mut x = Array2::zeros((self.arch.input_channels, windows.len() * t));
        for (i, w) in windows.iter().enumerate() {
            if w.data.dim() != (self.arch.input_channels, t) {
                return Err(Error::ShapeMismatch {
                    expected: format!("{}x{}", self.arch.input_channels, t),
                    actual: format!("{}x{}", w.data.nrows(), w.data.ncols()),
                });
            }
            x.slice_mut(ndarray::s![.., i * t..(i + 1) * t]).assign(&w.data);
        }
        Ok(x)
    }

    fn forward_cached(&self, x: Array2<f64>) -> Cache {
        let window = self.arch.window;
        let mut cols = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut act = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let col = im2col(&act, layer.kernel, window);
            let mut z = layer.weight.dot(&col);
            z += &layer.bias.view().insert_axis(Axis(1));
            act = if i < last { z.mapv(|v| v.max(0.0)) } else { z.clone() };
            cols.push(col);
            pre.push(z);
        }
        let probs = softmax_columns(&act);
        Cache { cols, pre, probs }
    }

    /// Per-layer outputs (`channels × window`) of one window, softmax last.
    pub fn layer_outputs(&self, w: &FeatureWindow) -> Result<Vec<Array2<f64>>> {
        let cache = self.forward_cached(self.stack(&[w])?);
        let last = cache.pre.len() - 1;
        let mut outs: Vec<_> =
            cache.pre.into_iter().enumerate().map(|(i, z)| if i < last { z.mapv(|v| v.max(0.0)) } else { z }).collect();
        outs.push(cache.probs);
        Ok(outs)
    }

    /// Class probabilities, `2 × window`; row 1 is the foreground probability.
    pub fn forward(&self, w: &FeatureWindow) -> Result<Array2<f64>> {
        Ok(self.forward_cached(self.stack(&[w])?).probs)
    }

    /// Probabilities of a batch, `2 × (batch · window)`.
    pub fn forward_batch(&self, windows: &[&FeatureWindow]) -> Result<Array2<f64>> {
        Ok(self.forward_cached(self.stack(windows)?).probs)
    }

    /// Mean cross-entropy over unmasked positions and its gradient.
    ///
    /// `labels[i]` holds the per-position 0/1 targets of `windows[i]`.
    /// Returns `(loss, gradients, unmasked count)`.
    pub fn loss_and_gradients(&self, windows: &[&FeatureWindow], labels: &[&[u8]]) -> Result<(f64, Gradients, usize)> {
        if windows.len() != labels.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} label rows", windows.len()),
                actual: labels.len().to_string(),
            });
        }
        let t = self.arch.window;
        let x = self.stack(windows)?;
        let cache = self.forward_cached(x);
        let logits = cache.pre.last().expect("four layers");

        let mut count = 0usize;
        let mut loss = 0.0;
        let mut dz = Array2::zeros(cache.probs.raw_dim());
        for (i, (w, lab)) in windows.iter().zip(labels).enumerate() {
            if lab.len() != t {
                return Err(Error::ShapeMismatch { expected: format!("{t} labels"), actual: lab.len().to_string() });
            }
            for pos in 0..t {
                if !w.mask[pos] {
                    continue;
                }
                let col = i * t + pos;
                let y = usize::from(lab[pos] != 0);
                let (z0, z1) = (logits[[0, col]], logits[[1, col]]);
                let m = z0.max(z1);
                let log_norm = m + ((z0 - m).exp() + (z1 - m).exp()).ln();
                loss -= logits[[y, col]] - log_norm;
                dz[[0, col]] = cache.probs[[0, col]];
                dz[[1, col]] = cache.probs[[1, col]];
                dz[[y, col]] -= 1.0;
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::InvalidArgument("every position is masked".into()));
        }
        let scale = 1.0 / count as f64;
        loss *= scale;
        dz.mapv_inplace(|v| v * scale);

        let mut grads = Gradients::zeros_like(self);
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            grads.layers[l].0 = dz.dot(&cache.cols[l].t());
            grads.layers[l].1 = dz.sum_axis(Axis(1));
            if l == 0 {
                break;
            }
            let dcol = layer.weight.t().dot(&dz);
            let da = col2im(&dcol, layer.in_channels(), layer.kernel, t);
            dz = da;
            ndarray::Zip::from(&mut dz).and(&cache.pre[l - 1]).for_each(|g, &z| {
                if z <= 0.0 {
                    *g = 0.0;
                }
            });
        }
        Ok((loss, grads, count))
    }

    /// Writes the text model format: an architecture header followed by
    /// each layer's row-major weights and biases in round-trip precision.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        let a = &self.arch;
        let _ = writeln!(s, "tcn-model 1");
        let _ = writeln!(s, "input_channels {}", a.input_channels);
        let _ = writeln!(s, "hidden_channels {}", a.hidden_channels);
        let _ = writeln!(s, "kernels {} {} {} {}", a.kernels[0], a.kernels[1], a.kernels[2], a.kernels[3]);
        let _ = writeln!(s, "window {}", a.window);
        let _ = writeln!(s, "seed {}", self.seed);
        for (i, l) in self.layers.iter().enumerate() {
            let _ = writeln!(s, "layer {i} out {} in {} kernel {}", l.out_channels(), l.in_channels(), l.kernel);
            s.push_str("weight");
            for v in l.weight.iter() {
                let _ = write!(s, " {v}");
            }
            s.push_str("\nbias");
            for v in l.bias.iter() {
                let _ = write!(s, " {v}");
            }
            s.push('\n');
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let lines: Vec<String> =
            BufReader::new(file).lines().collect::<std::io::Result<_>>().map_err(|e| Error::io(path, e))?;
        let mut p = ModelParser { path, lines: &lines, pos: 0 };

        let header = p.fields("tcn-model")?;
        if header != ["1"] {
            return Err(p.err(format!("unsupported model version {header:?}")));
        }
        let input_channels = p.single("input_channels")?;
        let hidden_channels = p.single("hidden_channels")?;
        let k = p.fields("kernels")?;
        let kernels: Vec<usize> =
            k.iter().map(|v| v.parse().map_err(|_| p.err(format!("bad kernel `{v}`")))).collect::<Result<_>>()?;
        let kernels: [usize; 4] = kernels.try_into().map_err(|_| p.err("expected four kernel sizes".into()))?;
        let window = p.single("window")?;
        let seed = p.single::<u64>("seed")?;
        let arch = TcnArchitecture { input_channels, hidden_channels, kernels, window };
        arch.validate()?;

        let mut layers = Vec::new();
        for (i, &(cin, cout, k)) in arch.layer_dims().iter().enumerate() {
            let expect = format!("{i} out {cout} in {cin} kernel {k}");
            if p.fields("layer")?.join(" ") != expect {
                return Err(p.err(format!("expected `layer {expect}`")));
            }
            let weight = p.floats("weight", cout * cin * k)?;
            let bias = p.floats("bias", cout)?;
            layers.push(ConvLayer {
                weight: Array2::from_shape_vec((cout, cin * k), weight).expect("length checked"),
                bias: Array1::from(bias),
                kernel: k,
            });
        }
        Ok(Self { arch, layers, seed })
    }
}

struct ModelParser<'a> {
    path: &'a Path,
    lines: &'a [String],
    pos: usize,
}

impl<'a> ModelParser<'a> {
    fn err(&self, message: String) -> Error {
        Error::Parse { path: self.path.to_path_buf(), line: self.pos.max(1), message }
    }

    fn fields(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let lines: &'a [String] = self.lines;
        let line = lines.get(self.pos).ok_or_else(|| self.err(format!("unexpected end of file, expected `{key}`")))?;
        self.pos += 1;
        let mut it = line.split_ascii_whitespace();
        if it.next() != Some(key) {
            return Err(self.err(format!("expected `{key}`")));
        }
        Ok(it.collect())
    }

    fn single<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let f = self.fields(key)?;
        match f.as_slice() {
            [v] => v.parse().map_err(|_| self.err(format!("bad value for `{key}`"))),
            _ => Err(self.err(format!("`{key}` takes one value"))),
        }
    }

    fn floats(&mut self, key: &str, n: usize) -> Result<Vec<f64>> {
        let f = self.fields(key)?;
        if f.len() != n {
            return Err(self.err(format!("`{key}` has {} values, expected {n}", f.len())));
        }
        f.iter()
            .map(|v| match v.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(x),
                _ => Err(self.err(format!("bad number `{v}`"))),
            })
            .collect()
    }
}
