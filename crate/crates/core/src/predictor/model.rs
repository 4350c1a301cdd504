//! Convolutional encoder-decoder that maps a projected shell image to a
//! per-direction radius correction.
//!
//! Three stride-2 residual blocks halve the grid down to an eighth of its
//! size, three mirrored blocks climb back up with long skip connections
//! from the encoder, and a 1x1 head squashes to a single channel through
//! tau * tanh so the output respects the truncation radius by
//! construction. Every 3x3 convolution runs in two channel groups with
//! dilation 2; the projected image concatenates two sampling bands, and
//! grouping along that boundary keeps the bands separate until the
//! residual sums mix them.
//!
//! The whole stack is generic over the float width: production inference
//! and training run on f32, the finite-difference gradient checks run the
//! identical code on f64.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::conv::{
    relu_backward_inplace, relu_inplace, upsample_nearest_backward, upsample_nearest_to, AxisPad,
    Conv2d,
};
use crate::rng::standard_normal;
use crate::tensor::{Image, Scalar};

/// Rows are azimuth (periodic), columns are polar (mirrored at the poles).
const PAD_ROWS: AxisPad = AxisPad::Wrap;
const PAD_COLS: AxisPad = AxisPad::Reflect;

const DEPTH: usize = 3;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub base_width: usize,
    pub tau: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> ModelConfig {
        ModelConfig { in_channels: 16, base_width: 16, tau: 2.0, seed: 0 }
    }
}

/// Residual unit: three 3x3 grouped dilated convolutions plus a 1x1
/// projection shortcut. Down blocks put stride 2 on the first convolution
/// and the shortcut; up blocks are all stride 1.
#[derive(Debug, Clone)]
struct Block<T> {
    c1: Conv2d<T>,
    c2: Conv2d<T>,
    c3: Conv2d<T>,
    proj: Conv2d<T>,
}

#[derive(Debug, Clone)]
struct BlockTrace<T> {
    a1: Image<T>,
    a2: Image<T>,
    y: Image<T>,
}

impl<T: Scalar> Block<T> {
    fn new(cin: usize, cout: usize, stride: usize) -> Result<Block<T>> {
        Ok(Block {
            c1: Conv2d::new(cin, cout, 3, stride, 2, 2)?,
            c2: Conv2d::new(cout, cout, 3, 1, 2, 2)?,
            c3: Conv2d::new(cout, cout, 3, 1, 2, 2)?,
            proj: Conv2d::new(cin, cout, 1, stride, 1, 1)?,
        })
    }

    fn forward(&self, x: &Image<T>, skip: Option<&Image<T>>) -> Result<BlockTrace<T>> {
        let mut a1 = self.c1.forward(x, PAD_ROWS, PAD_COLS)?;
        relu_inplace(&mut a1);
        let mut a2 = self.c2.forward(&a1, PAD_ROWS, PAD_COLS)?;
        relu_inplace(&mut a2);
        let mut y = self.c3.forward(&a2, PAD_ROWS, PAD_COLS)?;
        y.add_assign(&self.proj.forward(x, PAD_ROWS, PAD_COLS)?);
        if let Some(s) = skip {
            y.add_assign(s);
        }
        relu_inplace(&mut y);
        Ok(BlockTrace { a1, a2, y })
    }

    /// `gy` must already carry the relu mask of `t.y`. Returns the input
    /// gradient; the skip branch's gradient is `gy` itself and is handled
    /// by the caller.
    fn backward(
        &self,
        x: &Image<T>,
        t: &BlockTrace<T>,
        gy: &Image<T>,
        g: &mut [ConvGrad<T>],
    ) -> Image<T> {
        let gp = &mut g[3];
        let mut gx = self.proj.backward(x, gy, PAD_ROWS, PAD_COLS, &mut gp.w, &mut gp.b);
        let g3 = &mut g[2];
        let mut g2 = self.c3.backward(&t.a2, gy, PAD_ROWS, PAD_COLS, &mut g3.w, &mut g3.b);
        relu_backward_inplace(&mut g2, &t.a2);
        let gc2 = &mut g[1];
        let mut g1 = self.c2.backward(&t.a1, &g2, PAD_ROWS, PAD_COLS, &mut gc2.w, &mut gc2.b);
        relu_backward_inplace(&mut g1, &t.a1);
        let gc1 = &mut g[0];
        gx.add_assign(&self.c1.backward(x, &g1, PAD_ROWS, PAD_COLS, &mut gc1.w, &mut gc1.b));
        gx
    }
}

#[derive(Debug, Clone)]
struct UpTrace<T> {
    us: Image<T>,
    block: BlockTrace<T>,
}

/// Forward activations needed by the reverse pass. Only post-relu values
/// are stored; the relu mask is recovered from the activation itself.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    x: Image<T>,
    a0: Image<T>,
    down: Vec<BlockTrace<T>>,
    up: Vec<UpTrace<T>>,
    pub out: Image<T>,
}

/// One convolution's gradient pair.
#[derive(Debug, Clone)]
pub struct ConvGrad<T> {
    pub w: Vec<T>,
    pub b: Vec<T>,
}

/// Gradients for every convolution, ordered exactly like
/// [`ConvRegressor::param_specs`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub convs: Vec<ConvGrad<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(model: &ConvRegressor<T>) -> Gradients<T> {
        let convs = model
            .conv_refs()
            .iter()
            .map(|c| ConvGrad { w: vec![T::zero(); c.weight.len()], b: vec![T::zero(); c.bias.len()] })
            .collect();
        Gradients { convs }
    }

    pub fn zero(&mut self) {
        for g in &mut self.convs {
            g.w.iter_mut().for_each(|v| *v = T::zero());
            g.b.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        debug_assert_eq!(self.convs.len(), other.convs.len());
        for (a, b) in self.convs.iter_mut().zip(&other.convs) {
            for (x, y) in a.w.iter_mut().zip(&b.w) {
                *x += *y;
            }
            for (x, y) in a.b.iter_mut().zip(&b.b) {
                *x += *y;
            }
        }
    }

    /// Flat tensor view in parameter order: weight then bias per conv.
    pub fn flat(&self) -> Vec<&[T]> {
        self.convs.iter().flat_map(|g| [g.w.as_slice(), g.b.as_slice()]).collect()
    }

    pub fn flat_mut(&mut self) -> Vec<&mut Vec<T>> {
        self.convs.iter_mut().flat_map(|g| [&mut g.w, &mut g.b]).collect()
    }
}

/// Name, layer kind and length of one parameter tensor. The kind groups
/// tensors that share a convolution shape so gradient checks can sample
/// each structural variant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub kind: &'static str,
    pub len: usize,
}

#[derive(Debug, Clone)]
pub struct ConvRegressor<T> {
    cfg: ModelConfig,
    in_shift: Vec<T>,
    in_scale: Vec<T>,
    stem: Conv2d<T>,
    down: Vec<Block<T>>,
    up: Vec<Block<T>>,
    head: Conv2d<T>,
}

impl<T: Scalar> ConvRegressor<T> {
    pub fn new(cfg: ModelConfig) -> Result<ConvRegressor<T>> {
        if cfg.in_channels == 0 {
            return Err(Error::invalid("model needs at least one input channel"));
        }
        if cfg.base_width < 2 || cfg.base_width % 2 != 0 {
            return Err(Error::invalid(format!(
                "base width {} must be even (convolutions run in two groups)",
                cfg.base_width
            )));
        }
        if !(cfg.tau > 0.0) || !cfg.tau.is_finite() {
            return Err(Error::invalid(format!("output bound {} must be positive", cfg.tau)));
        }
        let w = cfg.base_width;
        let mut down = Vec::with_capacity(DEPTH);
        let mut up = Vec::with_capacity(DEPTH);
        for i in 0..DEPTH {
            down.push(Block::new(w << i, w << (i + 1), 2)?);
            up.push(Block::new(w << (DEPTH - i), w << (DEPTH - i - 1), 1)?);
        }
        let mut model = ConvRegressor {
            cfg,
            in_shift: vec![T::zero(); cfg.in_channels],
            in_scale: vec![T::one(); cfg.in_channels],
            stem: Conv2d::new(cfg.in_channels, w, 3, 1, 1, 1)?,
            down,
            up,
            head: Conv2d::new(w, 1, 1, 1, 1, 1)?,
        };
        model.initialize();
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Per-channel affine `(x - shift) * scale` applied ahead of the stem.
    /// Fresh models use the identity; the trainer fits the values from its
    /// first epoch because volumes arrive in arbitrary intensity units and
    /// the Kaiming initialization assumes roughly unit-scale inputs. The
    /// values travel with the checkpoint.
    pub fn input_normalization(&self) -> (Vec<f64>, Vec<f64>) {
        let widen = |v: &[T]| v.iter().map(|x| x.to_f64().expect("float widening")).collect();
        (widen(&self.in_shift), widen(&self.in_scale))
    }

    pub fn set_input_normalization(&mut self, shift: &[f64], scale: &[f64]) -> Result<()> {
        if shift.len() != self.cfg.in_channels || scale.len() != self.cfg.in_channels {
            return Err(Error::invalid(format!(
                "normalization has {}/{} entries, model expects {} input channels",
                shift.len(),
                scale.len(),
                self.cfg.in_channels
            )));
        }
        if shift.iter().any(|v| !v.is_finite()) || scale.iter().any(|v| !(*v > 0.0) || !v.is_finite())
        {
            return Err(Error::invalid(
                "normalization shifts must be finite and scales finite and positive",
            ));
        }
        let narrow = |v: &f64| T::from(*v).expect("float narrowing");
        self.in_shift = shift.iter().map(narrow).collect();
        self.in_scale = scale.iter().map(narrow).collect();
        Ok(())
    }

    fn normalized(&self, x: &Image<T>) -> Image<T> {
        let mut xn = x.clone();
        let plane = x.height() * x.width();
        for (c, chunk) in xn.data_mut().chunks_exact_mut(plane).enumerate() {
            let (shift, scale) = (self.in_shift[c], self.in_scale[c]);
            for v in chunk {
                *v = (*v - shift) * scale;
            }
        }
        xn
    }

    /// Kaiming fan-in weights from the config seed, zero biases. The draw
    /// order follows the parameter order, so equal seeds give equal nets.
    fn initialize(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        for conv in self.conv_refs_mut() {
            let std = (2.0 / conv.fan_in() as f64).sqrt();
            for w in conv.weight.iter_mut() {
                *w = T::from(standard_normal(&mut rng) * std).expect("float narrowing");
            }
        }
    }

    /// Fixed traversal order shared by parameters, gradients, checkpoints
    /// and specs: stem, down blocks, up blocks, head; within a block
    /// c1, c2, c3, projection.
    fn conv_refs(&self) -> Vec<&Conv2d<T>> {
        let mut v = Vec::with_capacity(2 + 8 * DEPTH);
        v.push(&self.stem);
        for b in self.down.iter().chain(&self.up) {
            v.extend([&b.c1, &b.c2, &b.c3, &b.proj]);
        }
        v.push(&self.head);
        v
    }

    fn conv_refs_mut(&mut self) -> Vec<&mut Conv2d<T>> {
        let mut v = Vec::with_capacity(2 + 8 * DEPTH);
        v.push(&mut self.stem);
        for b in self.down.iter_mut().chain(self.up.iter_mut()) {
            v.extend([&mut b.c1, &mut b.c2, &mut b.c3, &mut b.proj]);
        }
        v.push(&mut self.head);
        v
    }

    pub fn param_count(&self) -> usize {
        self.conv_refs().iter().map(|c| c.weight.len() + c.bias.len()).sum()
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut names = vec!["stem".to_string()];
        for (prefix, _) in [("down", &self.down), ("up", &self.up)] {
            for i in 0..DEPTH {
                for part in ["c1", "c2", "c3", "proj"] {
                    names.push(format!("{prefix}{i}.{part}"));
                }
            }
        }
        names.push("head".to_string());
        let mut specs = Vec::new();
        for (conv, name) in self.conv_refs().iter().zip(names) {
            let kind = match (conv.k, conv.groups, conv.stride) {
                (3, 1, 1) => "conv3x3_full",
                (3, 2, 2) => "conv3x3_grouped_strided",
                (3, 2, 1) => "conv3x3_grouped_dilated",
                (1, 1, 2) => "proj1x1_strided",
                (1, 1, 1) => "proj1x1",
                other => unreachable!("no layer of shape {other:?}"),
            };
            specs.push(ParamSpec { name: format!("{name}.weight"), kind, len: conv.weight.len() });
            specs.push(ParamSpec { name: format!("{name}.bias"), kind: "bias", len: conv.bias.len() });
        }
        specs
    }

    /// Flat tensor views in the shared parameter order.
    pub fn param_tensors(&self) -> Vec<&[T]> {
        self.conv_refs().iter().flat_map(|c| [c.weight.as_slice(), c.bias.as_slice()]).collect()
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut v = Vec::with_capacity(2 * (2 + 8 * DEPTH));
        for c in self.conv_refs_mut() {
            let Conv2d { weight, bias, .. } = c;
            v.push(weight);
            v.push(bias);
        }
        v
    }

    pub fn forward_with_tape(&self, x: &Image<T>) -> Result<Tape<T>> {
        if x.channels() != self.cfg.in_channels {
            return Err(Error::invalid(format!(
                "model expects {} input channels, image has {}",
                self.cfg.in_channels,
                x.channels()
            )));
        }
        let xn = self.normalized(x);
        let mut a0 = self.stem.forward(&xn, PAD_ROWS, PAD_COLS)?;
        relu_inplace(&mut a0);
        let mut down: Vec<BlockTrace<T>> = Vec::with_capacity(DEPTH);
        for i in 0..DEPTH {
            let input = if i == 0 { &a0 } else { &down[i - 1].y };
            let t = self.down[i].forward(input, None)?;
            down.push(t);
        }
        let mut up: Vec<UpTrace<T>> = Vec::with_capacity(DEPTH);
        for i in 0..DEPTH {
            let prev = if i == 0 { &down[DEPTH - 1].y } else { &up[i - 1].block.y };
            let skip = if i == DEPTH - 1 { &a0 } else { &down[DEPTH - 2 - i].y };
            let (sh, sw) = skip.spatial();
            let us = upsample_nearest_to(prev, sh, sw)?;
            let block = self.up[i].forward(&us, Some(skip))?;
            up.push(UpTrace { us, block });
        }
        let pre = self.head.forward(&up[DEPTH - 1].block.y, PAD_ROWS, PAD_COLS)?;
        let tau = T::from(self.cfg.tau).expect("float narrowing");
        let mut out = pre;
        for v in out.data_mut() {
            *v = tau * v.tanh();
        }
        Ok(Tape { x: x.clone(), a0, down, up, out })
    }

    pub fn forward(&self, x: &Image<T>) -> Result<Image<T>> {
        Ok(self.forward_with_tape(x)?.out)
    }

    /// Accumulate parameter gradients for `d loss / d out = g_out` into
    /// `grads` and return the input gradient.
    pub fn backward(&self, tape: &Tape<T>, g_out: &Image<T>, grads: &mut Gradients<T>) -> Image<T> {
        fn add_opt<T: Scalar>(slot: &mut Option<Image<T>>, g: Image<T>) {
            match slot {
                Some(s) => s.add_assign(&g),
                None => *slot = Some(g),
            }
        }
        let tau = T::from(self.cfg.tau).expect("float narrowing");
        // The head output went through tau * tanh(p); its derivative in
        // terms of the output y is tau - y^2 / tau.
        let mut g = g_out.clone();
        for (gv, yv) in g.data_mut().iter_mut().zip(tape.out.data()) {
            *gv *= tau - *yv * *yv / tau;
        }
        let head_base = 1 + 8 * DEPTH;
        let gh = &mut grads.convs[head_base];
        let ghead =
            self.head.backward(&tape.up[DEPTH - 1].block.y, &g, PAD_ROWS, PAD_COLS, &mut gh.w, &mut gh.b);

        let mut g_up: Vec<Option<Image<T>>> = vec![None; DEPTH];
        let mut g_down: Vec<Option<Image<T>>> = vec![None; DEPTH];
        let mut g_a0: Option<Image<T>> = None;
        g_up[DEPTH - 1] = Some(ghead);

        for i in (0..DEPTH).rev() {
            let mut gy = g_up[i].take().expect("decoder gradient present");
            relu_backward_inplace(&mut gy, &tape.up[i].block.y);
            if i == DEPTH - 1 {
                add_opt(&mut g_a0, gy.clone());
            } else {
                add_opt(&mut g_down[DEPTH - 2 - i], gy.clone());
            }
            let base = 1 + 4 * (DEPTH + i);
            let gus = self.up[i].backward(
                &tape.up[i].us,
                &tape.up[i].block,
                &gy,
                &mut grads.convs[base..base + 4],
            );
            let (ph, pw) = if i == 0 {
                tape.down[DEPTH - 1].y.spatial()
            } else {
                tape.up[i - 1].block.y.spatial()
            };
            let gprev = upsample_nearest_backward(&gus, ph, pw);
            if i == 0 {
                add_opt(&mut g_down[DEPTH - 1], gprev);
            } else {
                add_opt(&mut g_up[i - 1], gprev);
            }
        }
        for i in (0..DEPTH).rev() {
            let mut gy = g_down[i].take().expect("encoder gradient present");
            relu_backward_inplace(&mut gy, &tape.down[i].y);
            let xin = if i == 0 { &tape.a0 } else { &tape.down[i - 1].y };
            let base = 1 + 4 * i;
            let gx =
                self.down[i].backward(xin, &tape.down[i], &gy, &mut grads.convs[base..base + 4]);
            if i == 0 {
                add_opt(&mut g_a0, gx);
            } else {
                add_opt(&mut g_down[i - 1], gx);
            }
        }
        let mut ga0 = g_a0.expect("stem gradient present");
        relu_backward_inplace(&mut ga0, &tape.a0);
        let gs = &mut grads.convs[0];
        self.stem.backward(&tape.x, &ga0, PAD_ROWS, PAD_COLS, &mut gs.w, &mut gs.b)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct CheckpointSidecar {
    model: ModelConfig,
    param_count: usize,
    dtype: String,
}

impl ConvRegressor<f32> {
    /// Write the weights as raw little-endian f32 next to a JSON sidecar
    /// holding the architecture config, mirroring the volume file layout.
    pub fn save(&self, path: &Path) -> Result<()> {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        for tensor in self.param_tensors() {
            for v in tensor {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        let sc = CheckpointSidecar {
            model: self.cfg,
            param_count: self.param_count(),
            dtype: "f32".into(),
        };
        let text = serde_json::to_string_pretty(&sc)
            .map_err(|e| Error::format(format!("checkpoint sidecar serialization: {e}")))?;
        std::fs::write(path.with_extension("json"), text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ConvRegressor<f32>> {
        let sc_path = path.with_extension("json");
        let text = std::fs::read_to_string(&sc_path).map_err(|e| {
            Error::format(format!("missing or unreadable sidecar {}: {e}", sc_path.display()))
        })?;
        let sc: CheckpointSidecar = serde_json::from_str(&text)
            .map_err(|e| Error::format(format!("bad checkpoint sidecar {}: {e}", sc_path.display())))?;
        if sc.dtype != "f32" {
            return Err(Error::format(format!("checkpoint dtype {:?} unsupported", sc.dtype)));
        }
        let mut model = ConvRegressor::<f32>::new(sc.model)?;
        if model.param_count() != sc.param_count {
            return Err(Error::format(format!(
                "checkpoint declares {} parameters, architecture has {}",
                sc.param_count,
                model.param_count()
            )));
        }
        let bytes = std::fs::read(path)?;
        if bytes.len() != sc.param_count * 4 {
            return Err(Error::format(format!(
                "checkpoint payload {} is {} bytes, expected {}",
                path.display(),
                bytes.len(),
                sc.param_count * 4
            )));
        }
        let mut vals = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
        for tensor in model.param_tensors_mut() {
            for v in tensor.iter_mut() {
                *v = vals.next().expect("count validated above");
            }
        }
        Ok(model)
    }
}
