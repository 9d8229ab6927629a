//! Hypercolumn pixel classifier.
//!
//! A small VGG-like backbone (stride-1 3x3 convolutions with ReLU, 2x2
//! max-pooling between blocks) produces one tap per block. Selected pixels
//! are described by bilinearly sampling every tap at their location and
//! concatenating the results. The hypercolumn is batch-normalised per
//! channel and classified by an MLP (linear, ReLU, batch norm per hidden
//! layer; dropout after the last hidden layer; linear output).
//!
//! Parameters live in a flat list of named tensors so optimisers,
//! checkpoints and gradient checks can treat them uniformly.

pub mod checkpoint;
pub mod hypercolumn;
pub mod layers;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{local_hist_equalize, ClassTaxonomy, EqualizeParams, LabelMap, Micrograph};
use crate::real::Real;
use hypercolumn::{scatter_hypercolumn, sparse_hypercolumn, SampleRecord, Tap};
use layers::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub convs: usize,
    pub channels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub blocks: Vec<BlockConfig>,
    pub kernel: usize,
    /// Adds a 7x7 convolution on the deepest block as an extra tap.
    pub extra_tap_7x7: bool,
    pub mlp: Vec<usize>,
    pub dropout: f64,
    pub num_classes: usize,
    /// Local histogram equalisation applied to every input image, at
    /// training and at inference.
    pub equalize: Option<EqualizeParams>,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            blocks: [64, 128, 128, 128]
                .iter()
                .map(|&channels| BlockConfig { convs: 1, channels })
                .collect(),
            kernel: 3,
            extra_tap_7x7: false,
            mlp: vec![256, 256],
            dropout: 0.1,
            num_classes: 4,
            equalize: Some(EqualizeParams::default()),
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() || self.blocks.iter().any(|b| b.convs == 0 || b.channels == 0) {
            return Err(Error::invalid(
                "blocks",
                "need at least one block, each with >= 1 conv and >= 1 channel",
            ));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::invalid(
                "kernel",
                format!("kernel size {} must be odd", self.kernel),
            ));
        }
        if self.mlp.contains(&0) {
            return Err(Error::invalid("mlp", "hidden widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(
                "dropout",
                format!("rate {} is outside [0, 1)", self.dropout),
            ));
        }
        if self.num_classes < 2 {
            return Err(Error::invalid("num_classes", "need at least two classes"));
        }
        Ok(())
    }

    /// Sum of tap channel counts.
    pub fn hypercolumn_dim(&self) -> usize {
        let taps: usize = self.blocks.iter().map(|b| b.channels).sum();
        taps + if self.extra_tap_7x7 {
            self.blocks.last().map_or(0, |b| b.channels)
        } else {
            0
        }
    }

    /// Total downsampling of the deepest block; also the smallest accepted
    /// image side.
    pub fn max_stride(&self) -> usize {
        1 << (self.blocks.len() - 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamRole {
    Backbone,
    Head,
    /// Batch-norm running moments: saved, never trained.
    Buffer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: ParamRole,
    pub value: Vec<F>,
}

/// Per-parameter gradients, parallel to `Model::params`.
pub type Grads<F> = Vec<Vec<F>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Clone, Copy, Debug)]
struct ConvSlot {
    weight: usize,
    bias: usize,
    cout: usize,
    k: usize,
}

#[derive(Clone, Copy, Debug)]
struct BnSlot {
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

#[derive(Clone, Copy, Debug)]
struct LinearSlot {
    weight: usize,
    bias: usize,
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Conv(ConvSlot),
    Pool,
}

#[derive(Clone, Debug)]
struct Layout {
    ops: Vec<Op>,
    /// (activation index, stride) per tap; activation 0 is the input.
    taps: Vec<(usize, usize)>,
    hc_bn: BnSlot,
    hidden: Vec<(LinearSlot, BnSlot)>,
    output: LinearSlot,
}

enum Init {
    He(usize),
    Zeros,
    Ones,
}

struct Spec {
    name: String,
    shape: Vec<usize>,
    role: ParamRole,
    init: Init,
}

#[derive(Default)]
struct Specs(Vec<Spec>);

impl Specs {
    fn push(&mut self, name: String, shape: Vec<usize>, role: ParamRole, init: Init) -> usize {
        self.0.push(Spec {
            name,
            shape,
            role,
            init,
        });
        self.0.len() - 1
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> ConvSlot {
        ConvSlot {
            weight: self.push(
                format!("{name}.weight"),
                vec![cout, cin, k, k],
                ParamRole::Backbone,
                Init::He(cin * k * k),
            ),
            bias: self.push(format!("{name}.bias"), vec![cout], ParamRole::Backbone, Init::Zeros),
            cout,
            k,
        }
    }

    fn batchnorm(&mut self, name: &str, d: usize) -> BnSlot {
        BnSlot {
            gamma: self.push(format!("{name}.gamma"), vec![d], ParamRole::Head, Init::Ones),
            beta: self.push(format!("{name}.beta"), vec![d], ParamRole::Head, Init::Zeros),
            mean: self.push(format!("{name}.running_mean"), vec![d], ParamRole::Buffer, Init::Zeros),
            var: self.push(format!("{name}.running_var"), vec![d], ParamRole::Buffer, Init::Ones),
        }
    }

    fn linear(&mut self, name: &str, din: usize, dout: usize) -> LinearSlot {
        LinearSlot {
            weight: self.push(
                format!("{name}.weight"),
                vec![dout, din],
                ParamRole::Head,
                Init::He(din),
            ),
            bias: self.push(format!("{name}.bias"), vec![dout], ParamRole::Head, Init::Zeros),
        }
    }
}

fn build_layout(config: &NetConfig) -> (Layout, Vec<Spec>) {
    let mut specs = Specs::default();
    let mut ops = Vec::new();
    let mut taps = Vec::new();
    let mut cin = 1;
    let mut act = 0;
    for (b, block) in config.blocks.iter().enumerate() {
        if b > 0 {
            ops.push(Op::Pool);
            act += 1;
        }
        for j in 0..block.convs {
            let name = format!("block{}.conv{}", b + 1, j + 1);
            ops.push(Op::Conv(specs.conv(&name, cin, block.channels, config.kernel)));
            act += 1;
            cin = block.channels;
        }
        taps.push((act, 1 << b));
    }
    if config.extra_tap_7x7 {
        ops.push(Op::Conv(specs.conv("conv7x7", cin, cin, 7)));
        act += 1;
        taps.push((act, config.max_stride()));
    }
    let mut width = config.hypercolumn_dim();
    let hc_bn = specs.batchnorm("hypercolumn_bn", width);
    let mut hidden = Vec::new();
    for (i, &out) in config.mlp.iter().enumerate() {
        let lin = specs.linear(&format!("fc{}", i + 1), width, out);
        hidden.push((lin, specs.batchnorm(&format!("fc{}_bn", i + 1), out)));
        width = out;
    }
    let output = specs.linear("output", width, config.num_classes);
    (
        Layout {
            ops,
            taps,
            hc_bn,
            hidden,
            output,
        },
        specs.0,
    )
}

/// He-normal standard deviation for fan-in `c`.
pub fn he_std(c: usize) -> f64 {
    (2.0 / c as f64).sqrt()
}

/// Keep-flags for inverted dropout; each unit is dropped with probability `rate`.
pub fn dropout_mask(n: usize, rate: f64, rng: &mut impl Rng) -> Vec<bool> {
    if rate <= 0.0 {
        return vec![true; n];
    }
    (0..n).map(|_| rng.random::<f64>() >= rate).collect()
}

/// Max-pool argmax indices per block, kept for the backward pass.
type PoolArgs = Vec<Option<Vec<usize>>>;

struct BackboneTape<F> {
    acts: Vec<Array3<F>>,
    pool_args: PoolArgs,
    sample: SampleRecord,
    row0: usize,
}

struct Tape<F> {
    images: Vec<BackboneTape<F>>,
    hc_cache: BnCache<F>,
    /// Input of each linear layer, output layer last.
    linear_inputs: Vec<Array2<F>>,
    relu_out: Vec<Array2<F>>,
    bn_caches: Vec<BnCache<F>>,
    dropout: Option<Vec<F>>,
}

/// Dense prediction: argmax labels and per-class probability planes.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub labels: LabelMap,
    pub probabilities: Vec<Vec<f32>>,
}

pub struct Model<F> {
    config: NetConfig,
    params: Vec<Param<F>>,
    layout: Layout,
    tape: Option<Tape<F>>,
}

impl<F: Real> Clone for Model<F> {
    fn clone(&self) -> Self {
        Model {
            config: self.config.clone(),
            params: self.params.clone(),
            layout: self.layout.clone(),
            tape: None,
        }
    }
}

impl<F: Real> std::fmt::Debug for Model<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("config", &self.config)
            .field("params", &self.params.len())
            .finish()
    }
}

impl<F: Real> Model<F> {
    /// Weights ~ N(0, 2 / fan_in); biases and batch-norm offsets 0; scales 1.
    pub fn init(config: &NetConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = build_layout(config);
        let params = specs
            .into_iter()
            .map(|s| {
                let n: usize = s.shape.iter().product();
                let value = match s.init {
                    Init::He(c) => {
                        let sd = he_std(c);
                        (0..n)
                            .map(|_| {
                                let z: f64 = StandardNormal.sample(rng);
                                F::of(z * sd)
                            })
                            .collect()
                    }
                    Init::Zeros => vec![F::zero(); n],
                    Init::Ones => vec![F::one(); n],
                };
                Param {
                    name: s.name,
                    shape: s.shape,
                    role: s.role,
                    value,
                }
            })
            .collect();
        Ok(Model {
            config: config.clone(),
            params,
            layout,
            tape: None,
        })
    }

    /// Rebuilds a model from named tensors; names, order and shapes must
    /// match the layout implied by `config`.
    pub fn from_params(config: &NetConfig, params: Vec<Param<F>>) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = build_layout(config);
        if specs.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "config implies {} tensors, found {}",
                specs.len(),
                params.len()
            )));
        }
        for (s, p) in specs.iter().zip(&params) {
            let n: usize = s.shape.iter().product();
            if s.name != p.name || s.shape != p.shape || p.value.len() != n {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` {:?} does not match expected `{}` {:?}",
                    p.name, p.shape, s.name, s.shape
                )));
            }
        }
        Ok(Model {
            config: config.clone(),
            params,
            layout,
            tape: None,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param<F>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<F>] {
        &mut self.params
    }

    pub fn num_trainable(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.role != ParamRole::Buffer)
            .map(|p| p.value.len())
            .sum()
    }

    /// Converts every tensor to another precision.
    pub fn cast<G: Real>(&self) -> Model<G> {
        Model {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    role: p.role,
                    value: p.value.iter().map(|v| G::of(v.f64())).collect(),
                })
                .collect(),
            layout: self.layout.clone(),
            tape: None,
        }
    }

    pub fn zero_grads(&self) -> Grads<F> {
        self.params.iter().map(|p| vec![F::zero(); p.value.len()]).collect()
    }

    fn value(&self, i: usize) -> &[F] {
        &self.params[i].value
    }

    /// Applies the configured equalisation, if any.
    pub fn preprocess(&self, m: &Micrograph) -> Result<Micrograph> {
        match self.config.equalize {
            Some(p) => local_hist_equalize(m, p),
            None => Ok(m.clone()),
        }
    }

    fn check_size(&self, height: usize, width: usize) -> Result<()> {
        let s = self.config.max_stride();
        if height < s || width < s {
            return Err(Error::invalid(
                "image",
                format!(
                    "{height}x{width} image is smaller than {s}x{s} required by {} pooling stages",
                    self.config.blocks.len() - 1
                ),
            ));
        }
        Ok(())
    }

    /// Backbone activations for one image; `keep` retains everything needed
    /// for the backward pass, otherwise only the taps are returned.
    fn backbone(&self, image: &Micrograph, keep: bool) -> Result<(Vec<Array3<F>>, PoolArgs)> {
        self.check_size(image.height(), image.width())?;
        let x = Array3::from_shape_vec(
            (1, image.height(), image.width()),
            image.pixels().iter().map(|&v| F::of(2.0 * v as f64 - 1.0)).collect(),
        )
        .expect("pixel count matches");
        let mut acts = vec![x];
        let mut args = Vec::with_capacity(self.layout.ops.len());
        let tap_set: Vec<usize> = self.layout.taps.iter().map(|t| t.0).collect();
        for (i, op) in self.layout.ops.iter().enumerate() {
            let input = &acts[i];
            let (y, arg) = match *op {
                Op::Conv(c) => {
                    let mut y = conv_forward(input, self.value(c.weight), self.value(c.bias), c.cout, c.k)?;
                    relu_inplace(&mut y);
                    (y, None)
                }
                Op::Pool => {
                    let (y, arg) = maxpool_forward(input);
                    (y, Some(arg))
                }
            };
            if !keep && !tap_set.contains(&i) && i > 0 {
                // Only the newest activation and the taps are needed for inference.
                acts[i] = Array3::zeros((0, 0, 0));
            }
            acts.push(y);
            args.push(if keep { arg } else { None });
        }
        Ok((acts, args))
    }

    fn taps<'a>(&self, acts: &'a [Array3<F>]) -> Vec<Tap<'a, F>> {
        self.layout
            .taps
            .iter()
            .map(|&(a, stride)| Tap { map: &acts[a], stride })
            .collect()
    }

    /// Head forward from a hypercolumn matrix. In train mode returns the
    /// tape pieces and updates running moments.
    fn head(&self, hc: Array2<F>, mode: Mode, rng: &mut impl Rng) -> Result<(Array2<F>, Option<HeadTape<F>>)> {
        let bn = self.layout.hc_bn;
        let mut tape = HeadTape {
            hc_cache: None,
            linear_inputs: Vec::new(),
            relu_out: Vec::new(),
            bn_caches: Vec::new(),
            dropout: None,
            moments: Vec::new(),
        };
        let mut a = self.batchnorm(&hc, bn, mode, &mut tape.hc_cache, &mut tape.moments);
        for &(lin, bn) in &self.layout.hidden {
            let mut z = linear_forward(&a, self.value(lin.weight), self.value(lin.bias))?;
            z.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
            let mut cache = None;
            let y = self.batchnorm(&z, bn, mode, &mut cache, &mut tape.moments);
            if mode == Mode::Train {
                tape.linear_inputs.push(a);
                tape.relu_out.push(z);
                tape.bn_caches.push(cache.expect("train mode caches"));
            }
            a = y;
        }
        if mode == Mode::Train && !self.layout.hidden.is_empty() && self.config.dropout > 0.0 {
            let rate = self.config.dropout;
            let scale = F::of(1.0 / (1.0 - rate));
            let mult: Vec<F> = dropout_mask(a.len(), rate, rng)
                .into_iter()
                .map(|keep| if keep { scale } else { F::zero() })
                .collect();
            for (v, &m) in a.iter_mut().zip(&mult) {
                *v *= m;
            }
            tape.dropout = Some(mult);
        }
        let out = self.layout.output;
        let logits = linear_forward(&a, self.value(out.weight), self.value(out.bias))?;
        if mode == Mode::Train {
            tape.linear_inputs.push(a);
            Ok((logits, Some(tape)))
        } else {
            Ok((logits, None))
        }
    }

    fn batchnorm(
        &self,
        x: &Array2<F>,
        bn: BnSlot,
        mode: Mode,
        cache: &mut Option<BnCache<F>>,
        moments: &mut Vec<(BnSlot, Vec<F>, Vec<F>)>,
    ) -> Array2<F> {
        match mode {
            Mode::Train => {
                let (y, mean, var, c) = batchnorm_train(x, self.value(bn.gamma), self.value(bn.beta));
                moments.push((bn, mean, var));
                *cache = Some(c);
                y
            }
            Mode::Infer => batchnorm_infer(
                x,
                self.value(bn.gamma),
                self.value(bn.beta),
                self.value(bn.mean),
                self.value(bn.var),
            ),
        }
    }

    /// Logits for the listed pixels of each image, rows in batch order.
    /// Train mode uses batch statistics and dropout, updates running
    /// moments and records a tape for [`Model::backward`].
    pub fn forward(
        &mut self,
        batch: &[(&Micrograph, &[(usize, usize)])],
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<Array2<F>> {
        self.tape = None;
        let rows: usize = batch.iter().map(|(_, c)| c.len()).sum();
        if rows == 0 {
            return Err(Error::Empty("forward pass over zero pixels".into()));
        }
        let mut hc = Array2::<F>::zeros((rows, self.config.hypercolumn_dim()));
        let mut images = Vec::with_capacity(batch.len());
        let mut row0 = 0;
        for (image, coords) in batch {
            let (acts, pool_args) = self.backbone(image, mode == Mode::Train)?;
            let sample = sparse_hypercolumn(&self.taps(&acts), coords, image.height(), image.width(), &mut hc, row0)?;
            if mode == Mode::Train {
                images.push(BackboneTape {
                    acts,
                    pool_args,
                    sample,
                    row0,
                });
            }
            row0 += coords.len();
        }
        let (logits, head) = self.head(hc, mode, rng)?;
        if let Some(h) = head {
            for (bn, mean, var) in &h.moments {
                update_running(&mut self.params[bn.mean].value, mean);
                update_running(&mut self.params[bn.var].value, var);
            }
            self.tape = Some(Tape {
                images,
                hc_cache: h.hc_cache.expect("train mode caches"),
                linear_inputs: h.linear_inputs,
                relu_out: h.relu_out,
                bn_caches: h.bn_caches,
                dropout: h.dropout,
            });
        }
        Ok(logits)
    }

    /// Gradients of `sum(dlogits * logits)` with respect to every parameter
    /// for the batch of the last train-mode forward pass. With
    /// `freeze_backbone` the backbone gradients are left at zero and its
    /// backward pass is skipped. Consumes the recorded tape.
    pub fn backward(&mut self, dlogits: &Array2<F>, freeze_backbone: bool) -> Result<Grads<F>> {
        let tape = self.tape.take().ok_or(Error::MissingForward)?;
        let out = self.layout.output;
        let last = tape.linear_inputs.last().expect("output layer input");
        if dlogits.dim() != (last.nrows(), self.config.num_classes) {
            return Err(Error::DimensionMismatch(format!(
                "logit gradient is {:?}, expected ({}, {})",
                dlogits.dim(),
                last.nrows(),
                self.config.num_classes
            )));
        }
        let mut g = self.zero_grads();
        let (da, dw, db) = linear_backward(last, self.value(out.weight), dlogits, true);
        g[out.weight] = dw;
        g[out.bias] = db;
        let mut da = da.expect("requested");
        if let Some(mult) = &tape.dropout {
            for (v, &m) in da.iter_mut().zip(mult) {
                *v *= m;
            }
        }
        for (i, &(lin, bn)) in self.layout.hidden.iter().enumerate().rev() {
            let (mut dz, dgamma, dbeta) = batchnorm_backward(&da, &tape.bn_caches[i], self.value(bn.gamma));
            g[bn.gamma] = dgamma;
            g[bn.beta] = dbeta;
            ndarray::Zip::from(&mut dz).and(&tape.relu_out[i]).for_each(|d, &r| {
                if r <= F::zero() {
                    *d = F::zero();
                }
            });
            let (dx, dw, db) = linear_backward(&tape.linear_inputs[i], self.value(lin.weight), &dz, true);
            g[lin.weight] = dw;
            g[lin.bias] = db;
            da = dx.expect("requested");
        }
        let hc_bn = self.layout.hc_bn;
        let (dhc, dgamma, dbeta) = batchnorm_backward(&da, &tape.hc_cache, self.value(hc_bn.gamma));
        g[hc_bn.gamma] = dgamma;
        g[hc_bn.beta] = dbeta;
        if freeze_backbone {
            return Ok(g);
        }
        for img in &tape.images {
            self.backbone_backward(img, &dhc, &mut g)?;
        }
        Ok(g)
    }

    fn backbone_backward(&self, img: &BackboneTape<F>, dhc: &Array2<F>, g: &mut Grads<F>) -> Result<()> {
        let mut tap_grads: Vec<Array3<F>> = self
            .layout
            .taps
            .iter()
            .map(|&(a, _)| Array3::zeros(img.acts[a].raw_dim()))
            .collect();
        scatter_hypercolumn(&img.sample, dhc, img.row0, &mut tap_grads);
        let mut dacts: Vec<Option<Array3<F>>> = vec![None; img.acts.len()];
        for (&(a, _), tg) in self.layout.taps.iter().zip(tap_grads) {
            match &mut dacts[a] {
                Some(d) => *d += &tg,
                slot => *slot = Some(tg),
            }
        }
        for (i, op) in self.layout.ops.iter().enumerate().rev() {
            let Some(mut dy) = dacts[i + 1].take() else {
                continue;
            };
            let dx = match *op {
                Op::Conv(c) => {
                    relu_backward(&mut dy, &img.acts[i + 1]);
                    let cg = conv_backward(&img.acts[i], self.value(c.weight), &dy, c.k, i > 0)?;
                    for (a, b) in g[c.weight].iter_mut().zip(cg.weight) {
                        *a += b;
                    }
                    for (a, b) in g[c.bias].iter_mut().zip(cg.bias) {
                        *a += b;
                    }
                    cg.input
                }
                Op::Pool => {
                    let arg = img.pool_args[i].as_ref().expect("kept in train mode");
                    Some(maxpool_backward(&dy, arg, img.acts[i].dim()))
                }
            };
            if let Some(dx) = dx {
                match &mut dacts[i] {
                    Some(d) => *d += &dx,
                    slot => *slot = Some(dx),
                }
            }
        }
        Ok(())
    }

    /// Dense inference over every pixel, `tile_pixels` hypercolumns at a
    /// time. The configured equalisation is applied first.
    pub fn predict_dense(
        &self,
        image: &Micrograph,
        taxonomy: &ClassTaxonomy,
        tile_pixels: usize,
    ) -> Result<Prediction> {
        if taxonomy.len() != self.config.num_classes {
            return Err(Error::invalid(
                "taxonomy",
                format!(
                    "model predicts {} classes but the taxonomy has {}",
                    self.config.num_classes,
                    taxonomy.len()
                ),
            ));
        }
        let (h, w) = (image.height(), image.width());
        self.check_size(h, w)?;
        let image = self.preprocess(image)?;
        let (acts, _) = self.backbone(&image, false)?;
        let taps = self.taps(&acts);
        let k = self.config.num_classes;
        let mut probs = vec![vec![0f32; h * w]; k];
        let mut labels = vec![0u8; h * w];
        let tile = tile_pixels.max(1);
        let coords: Vec<(usize, usize)> = (0..h).flat_map(|r| (0..w).map(move |c| (r, c))).collect();
        // Infer mode draws no random numbers.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (t, chunk) in coords.chunks(tile).enumerate() {
            let mut hc = Array2::<F>::zeros((chunk.len(), self.config.hypercolumn_dim()));
            sparse_hypercolumn(&taps, chunk, h, w, &mut hc, 0)?;
            let (logits, _) = self.head(hc, Mode::Infer, &mut rng)?;
            for (j, row) in logits.outer_iter().enumerate() {
                let p = t * tile + j;
                let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
                let e: Vec<f64> = row.iter().map(|&v| (v - max).f64().exp()).collect();
                let z: f64 = e.iter().sum();
                let mut best = 0;
                for c in 0..k {
                    probs[c][p] = (e[c] / z) as f32;
                    if e[c] > e[best] {
                        best = c;
                    }
                }
                labels[p] = best as u8;
            }
        }
        Ok(Prediction {
            labels: LabelMap::new(h, w, labels, taxonomy.clone())?,
            probabilities: probs,
        })
    }
}

struct HeadTape<F> {
    hc_cache: Option<BnCache<F>>,
    linear_inputs: Vec<Array2<F>>,
    relu_out: Vec<Array2<F>>,
    bn_caches: Vec<BnCache<F>>,
    dropout: Option<Vec<F>>,
    moments: Vec<(BnSlot, Vec<F>, Vec<F>)>,
}
