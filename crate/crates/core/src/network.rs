//! View-specific feature extractors with hand-written backpropagation.
//!
//! A network is a stack of affine layers with ReLU between all but the last.
//! The output of the last layer is the embedding; a linear classifier head on
//! top produces one logit per training identity. The cross-view constraints
//! act on the embedding, the softmax loss on the logits.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::math::{affine, derive_seed, Matrix, SeededRng};

pub const CHECKPOINT_MAGIC: &str = "CVSE-CKPT v1";

/// Which view a network serves. The public network of the multi-view
/// procedure is shared by every "other" view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ViewLabel {
    View(usize),
    Public,
}

impl fmt::Display for ViewLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViewLabel::View(v) => write!(f, "{v}"),
            ViewLabel::Public => f.write_str("public"),
        }
    }
}

impl FromStr for ViewLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "public" {
            return Ok(ViewLabel::Public);
        }
        s.parse()
            .map(ViewLabel::View)
            .map_err(|_| Error::validation(format!("bad view label {s:?}")))
    }
}

/// Weights (`inputs × outputs`) and bias of one affine map.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            weights: Matrix::zeros(inputs, outputs),
            bias: vec![0.0; outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.cols()
    }

    fn uniform(inputs: usize, outputs: usize, limit: f64, rng: &mut SeededRng) -> Self {
        let data = (0..inputs * outputs)
            .map(|_| rng.uniform_range(-limit, limit))
            .collect();
        Layer {
            weights: Matrix::new(inputs, outputs, data).expect("shape"),
            bias: vec![0.0; outputs],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewNetwork {
    label: ViewLabel,
    layers: Vec<Layer>,
    head: Layer,
}

/// Cached values from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    /// Input to each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each layer.
    pre: Vec<Vec<f64>>,
    embedding: Vec<f64>,
}

impl ForwardTape {
    pub fn embedding(&self) -> &[f64] {
        &self.embedding
    }

    /// Pre-activation output of each layer.
    pub fn pre_activations(&self) -> &[Vec<f64>] {
        &self.pre
    }
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub embedding: Vec<f64>,
    pub logits: Vec<f64>,
    pub tape: ForwardTape,
}

/// Gradients laid out exactly like the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<Layer>,
    pub head: Layer,
}

impl ParamGrads {
    pub fn zeros_like(net: &ViewNetwork) -> Self {
        ParamGrads {
            layers: net
                .layers
                .iter()
                .map(|l| Layer::zeros(l.inputs(), l.outputs()))
                .collect(),
            head: Layer::zeros(net.head.inputs(), net.head.outputs()),
        }
    }

    /// Parameter tensors in checkpoint order: each layer's weights then bias,
    /// then the head's.
    pub fn slices(&self) -> Vec<&[f64]> {
        param_slices(&self.layers, &self.head)
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        param_slices_mut(&mut self.layers, &mut self.head)
    }

    pub fn add_scaled(&mut self, other: &ParamGrads, s: f64) -> Result<()> {
        let theirs = other.slices();
        let mut mine = self.slices_mut();
        if mine.len() != theirs.len() {
            return Err(Error::sizing("gradient layouts differ"));
        }
        for (a, b) in mine.iter_mut().zip(theirs) {
            if a.len() != b.len() {
                return Err(Error::sizing("gradient layouts differ"));
            }
            a.iter_mut().zip(b).for_each(|(x, y)| *x += s * y);
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn param_slices<'a>(layers: &'a [Layer], head: &'a Layer) -> Vec<&'a [f64]> {
    let mut out = Vec::with_capacity(2 * layers.len() + 2);
    for l in layers.iter().chain(std::iter::once(head)) {
        out.push(l.weights.data());
        out.push(l.bias.as_slice());
    }
    out
}

fn param_slices_mut<'a>(layers: &'a mut [Layer], head: &'a mut Layer) -> Vec<&'a mut [f64]> {
    let mut out = Vec::with_capacity(2 * layers.len() + 2);
    for l in layers.iter_mut().chain(std::iter::once(head)) {
        out.push(l.weights.data_mut());
        out.push(l.bias.as_mut_slice());
    }
    out
}

/// Architecture of a view network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetShape {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub classes: usize,
}

impl NetShape {
    pub fn new(input_dim: usize, classes: usize) -> Self {
        NetShape {
            input_dim,
            hidden: vec![64],
            embed_dim: 32,
            classes,
        }
    }
}

impl ViewNetwork {
    /// Seeded initialization. Layers that feed a ReLU draw weights from
    /// `U(±√(6/fan_in))`, linear ones (the embedding layer and the head) from
    /// `U(±√(3/fan_in))`. Biases start at zero. The view label does not
    /// enter the random stream, so equal seeds give equal parameters.
    pub fn init(label: ViewLabel, shape: &NetShape, seed: u64) -> Result<Self> {
        if shape.input_dim == 0 || shape.embed_dim == 0 || shape.classes == 0 {
            return Err(Error::validation("network dimensions must be at least 1"));
        }
        if shape.hidden.contains(&0) {
            return Err(Error::validation("hidden widths must be at least 1"));
        }
        let mut rng = SeededRng::new(derive_seed(seed, "network-init"));
        let mut dims = vec![shape.input_dim];
        dims.extend(&shape.hidden);
        dims.push(shape.embed_dim);
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let gain = if k < last { 6.0 } else { 3.0 };
                Layer::uniform(w[0], w[1], (gain / w[0] as f64).sqrt(), &mut rng)
            })
            .collect();
        let head = Layer::uniform(
            shape.embed_dim,
            shape.classes,
            (3.0 / shape.embed_dim as f64).sqrt(),
            &mut rng,
        );
        Ok(ViewNetwork {
            label,
            layers,
            head,
        })
    }

    /// Assembles a network from explicit parameters, checking that the
    /// dimensions chain.
    pub fn from_parts(label: ViewLabel, layers: Vec<Layer>, head: Layer) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::validation("network needs at least one layer"));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.bias.len() != l.outputs() {
                return Err(Error::sizing(format!("layer {k} bias length mismatch")));
            }
            if k > 0 && layers[k - 1].outputs() != l.inputs() {
                return Err(Error::sizing(format!("layer {k} input does not chain")));
            }
        }
        let embed = layers.last().map(Layer::outputs).unwrap_or(0);
        if head.inputs() != embed || head.bias.len() != head.outputs() {
            return Err(Error::sizing("head does not match embedding dimension"));
        }
        let net = ViewNetwork {
            label,
            layers,
            head,
        };
        if !net.is_finite() {
            return Err(Error::validation("network parameters must be finite"));
        }
        Ok(net)
    }

    pub fn label(&self) -> ViewLabel {
        self.label
    }

    pub fn with_label(mut self, label: ViewLabel) -> Self {
        self.label = label;
        self
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn head(&self) -> &Layer {
        &self.head
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn embed_dim(&self) -> usize {
        self.head.inputs()
    }

    pub fn classes(&self) -> usize {
        self.head.outputs()
    }

    pub fn shape(&self) -> NetShape {
        NetShape {
            input_dim: self.input_dim(),
            hidden: self.layers[..self.layers.len() - 1]
                .iter()
                .map(Layer::outputs)
                .collect(),
            embed_dim: self.embed_dim(),
            classes: self.classes(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        param_slices(&self.layers, &self.head)
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        param_slices_mut(&mut self.layers, &mut self.head)
    }

    pub fn is_finite(&self) -> bool {
        self.param_slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn forward(&self, features: &[f64]) -> Result<Forward> {
        if features.len() != self.input_dim() {
            return Err(Error::sizing(format!(
                "network expects {} features, got {}",
                self.input_dim(),
                features.len()
            )));
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = features.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let z = affine(&h, &layer.weights, &layer.bias)?;
            let next = if k < last {
                z.iter().map(|v| v.max(0.0)).collect()
            } else {
                z.clone()
            };
            inputs.push(std::mem::replace(&mut h, next));
            pre.push(z);
        }
        let logits = affine(&h, &self.head.weights, &self.head.bias)?;
        Ok(Forward {
            embedding: h.clone(),
            logits,
            tape: ForwardTape {
                inputs,
                pre,
                embedding: h,
            },
        })
    }

    /// Embedding only.
    pub fn embed(&self, features: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(features)?.embedding)
    }

    pub fn backward(
        &self,
        tape: &ForwardTape,
        grad_embedding: &[f64],
        grad_logits: &[f64],
    ) -> Result<ParamGrads> {
        let mut grads = ParamGrads::zeros_like(self);
        self.backward_into(tape, grad_embedding, grad_logits, &mut grads)?;
        Ok(grads)
    }

    /// Adds this sample's parameter gradients into `grads`. The embedding
    /// receives `grad_embedding` plus the head's back-propagated
    /// `grad_logits`.
    pub fn backward_into(
        &self,
        tape: &ForwardTape,
        grad_embedding: &[f64],
        grad_logits: &[f64],
        grads: &mut ParamGrads,
    ) -> Result<()> {
        self.check_tape(tape)?;
        if grad_embedding.len() != self.embed_dim() || grad_logits.len() != self.classes() {
            return Err(Error::sizing("upstream gradient has the wrong length"));
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::sizing("gradient buffer does not match network"));
        }

        accumulate_outer(&mut grads.head, &tape.embedding, grad_logits);
        let mut g = self.head.weights.mul_vec(grad_logits)?;
        for (gi, e) in g.iter_mut().zip(grad_embedding) {
            *gi += e;
        }

        let last = self.layers.len() - 1;
        for k in (0..self.layers.len()).rev() {
            if k < last {
                for (gi, z) in g.iter_mut().zip(&tape.pre[k]) {
                    if *z <= 0.0 {
                        *gi = 0.0;
                    }
                }
            }
            accumulate_outer(&mut grads.layers[k], &tape.inputs[k], &g);
            if k > 0 {
                g = self.layers[k].weights.mul_vec(&g)?;
            }
        }
        Ok(())
    }

    fn check_tape(&self, tape: &ForwardTape) -> Result<()> {
        let consistent = tape.inputs.len() == self.layers.len()
            && tape.pre.len() == self.layers.len()
            && self
                .layers
                .iter()
                .zip(tape.inputs.iter().zip(&tape.pre))
                .all(|(l, (i, p))| i.len() == l.inputs() && p.len() == l.outputs())
            && tape.embedding.len() == self.embed_dim();
        if consistent {
            Ok(())
        } else {
            Err(Error::validation("forward tape was not produced by this network"))
        }
    }

    pub fn to_checkpoint_string(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{CHECKPOINT_MAGIC}").unwrap();
        writeln!(out, "view {}", self.label).unwrap();
        writeln!(out, "layers {}", self.layers.len()).unwrap();
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(Layer::outputs));
        let dims: Vec<String> = dims.iter().map(ToString::to_string).collect();
        writeln!(out, "dims {}", dims.join(" ")).unwrap();
        writeln!(out, "classes {}", self.classes()).unwrap();
        for (k, layer) in self.layers.iter().enumerate() {
            write_layer(&mut out, &format!("layer {k}"), layer);
        }
        write_layer(&mut out, "head", &self.head);
        out.push_str("end\n");
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_checkpoint_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_checkpoint(&text, path)
    }

    pub fn parse_checkpoint(text: &str, source: &Path) -> Result<Self> {
        CheckpointReader::new(text, source).read()
    }
}

fn accumulate_outer(grad: &mut Layer, input: &[f64], upstream: &[f64]) {
    for (r, x) in input.iter().enumerate() {
        if *x == 0.0 {
            continue;
        }
        let row = grad.weights.row_mut(r);
        for (w, u) in row.iter_mut().zip(upstream) {
            *w += x * u;
        }
    }
    for (b, u) in grad.bias.iter_mut().zip(upstream) {
        *b += u;
    }
}

fn write_values(out: &mut String, values: &[f64]) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        first = false;
        write!(out, "{v:.16e}").unwrap();
    }
    out.push('\n');
}

fn write_layer(out: &mut String, name: &str, layer: &Layer) {
    writeln!(out, "{name} weights {} {}", layer.inputs(), layer.outputs()).unwrap();
    for row in layer.weights.iter_rows() {
        write_values(out, row);
    }
    writeln!(out, "{name} bias {}", layer.outputs()).unwrap();
    write_values(out, &layer.bias);
}

struct CheckpointReader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    source: &'a Path,
    line: usize,
}

impl<'a> CheckpointReader<'a> {
    fn new(text: &'a str, source: &'a Path) -> Self {
        CheckpointReader {
            lines: text.lines().enumerate(),
            source,
            line: 0,
        }
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.source.to_path_buf(),
            line: self.line,
            message: message.into(),
        }
    }

    fn next_line(&mut self) -> Result<&'a str> {
        match self.lines.next() {
            Some((n, l)) => {
                self.line = n + 1;
                Ok(l)
            }
            None => {
                self.line += 1;
                Err(self.err("unexpected end of checkpoint"))
            }
        }
    }

    /// Reads a `<prefix> <values...>` line.
    fn keyed(&mut self, prefix: &str) -> Result<Vec<&'a str>> {
        let line = self.next_line()?;
        let rest = line
            .strip_prefix(prefix)
            .and_then(|r| r.strip_prefix(' ').or(if r.is_empty() { Some(r) } else { None }))
            .ok_or_else(|| self.err(format!("expected `{prefix} ...`, found {line:?}")))?;
        Ok(rest.split(' ').filter(|s| !s.is_empty()).collect())
    }

    fn counts(&mut self, prefix: &str, n: usize) -> Result<Vec<usize>> {
        let fields = self.keyed(prefix)?;
        if fields.len() != n {
            return Err(self.err(format!("`{prefix}` needs {n} values")));
        }
        fields
            .iter()
            .map(|f| f.parse().map_err(|_| self.err(format!("bad count {f:?}"))))
            .collect()
    }

    fn values(&mut self, n: usize) -> Result<Vec<f64>> {
        let line = self.next_line()?;
        let vals = line
            .split(' ')
            .map(|f| f.parse::<f64>().map_err(|_| self.err(format!("bad number {f:?}"))))
            .collect::<Result<Vec<f64>>>()?;
        if vals.len() != n {
            return Err(self.err(format!("expected {n} values, found {}", vals.len())));
        }
        Ok(vals)
    }

    fn layer(&mut self, name: &str, inputs: usize, outputs: usize) -> Result<Layer> {
        let dims = self.counts(&format!("{name} weights"), 2)?;
        if dims != [inputs, outputs] {
            return Err(self.err(format!("{name} is {}x{}, expected {inputs}x{outputs}", dims[0], dims[1])));
        }
        let mut data = Vec::with_capacity(inputs * outputs);
        for _ in 0..inputs {
            data.extend(self.values(outputs)?);
        }
        let len = self.counts(&format!("{name} bias"), 1)?;
        if len[0] != outputs {
            return Err(self.err(format!("{name} bias has length {}, expected {outputs}", len[0])));
        }
        let bias = self.values(outputs)?;
        Ok(Layer {
            weights: Matrix::new(inputs, outputs, data)?,
            bias,
        })
    }

    fn read(mut self) -> Result<ViewNetwork> {
        if self.next_line()? != CHECKPOINT_MAGIC {
            return Err(self.err(format!("missing `{CHECKPOINT_MAGIC}` header")));
        }
        let label = self.keyed("view")?;
        let label: ViewLabel = match label.as_slice() {
            [l] => l.parse().map_err(|_| self.err(format!("bad view label {l:?}")))?,
            _ => return Err(self.err("`view` needs one value")),
        };
        let n_layers = self.counts("layers", 1)?[0];
        if n_layers == 0 {
            return Err(self.err("checkpoint has no layers"));
        }
        let dims = self.counts("dims", n_layers + 1)?;
        let classes = self.counts("classes", 1)?[0];
        let mut layers = Vec::with_capacity(n_layers);
        for k in 0..n_layers {
            layers.push(self.layer(&format!("layer {k}"), dims[k], dims[k + 1])?);
        }
        let head = self.layer("head", dims[n_layers], classes)?;
        if self.next_line()? != "end" {
            return Err(self.err("expected `end`"));
        }
        ViewNetwork::from_parts(label, layers, head).map_err(|e| self.err(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::relu;

    fn shape(hidden: Vec<usize>) -> NetShape {
        NetShape {
            input_dim: 4,
            hidden,
            embed_dim: 3,
            classes: 5,
        }
    }

    #[test]
    fn init_is_seeded_and_view_independent() {
        let a = ViewNetwork::init(ViewLabel::View(0), &shape(vec![6]), 9).unwrap();
        let b = ViewNetwork::init(ViewLabel::View(1), &shape(vec![6]), 9).unwrap();
        assert_eq!(a.param_slices(), b.param_slices());
        let c = ViewNetwork::init(ViewLabel::View(0), &shape(vec![6]), 10).unwrap();
        assert_ne!(a.param_slices(), c.param_slices());
        for l in a.layers().iter().chain([a.head()]) {
            assert!(l.bias.iter().all(|b| *b == 0.0));
        }
    }

    #[test]
    fn init_without_hidden_layers() {
        let net = ViewNetwork::init(ViewLabel::View(0), &shape(vec![]), 1).unwrap();
        assert_eq!(net.layers().len(), 1);
        assert_eq!(net.layers()[0].weights.shape(), (4, 3));
        assert_eq!(net.shape().hidden, Vec::<usize>::new());
    }

    #[test]
    fn init_rejects_zero_dims() {
        let mut s = shape(vec![6]);
        s.embed_dim = 0;
        assert!(matches!(ViewNetwork::init(ViewLabel::View(0), &s, 0), Err(Error::Validation(_))));
        assert!(ViewNetwork::init(ViewLabel::View(0), &shape(vec![0]), 0).is_err());
    }

    #[test]
    fn identity_layer_forward() {
        let layer = Layer {
            weights: Matrix::identity(2),
            bias: vec![0.0; 2],
        };
        let net = ViewNetwork::from_parts(ViewLabel::View(0), vec![layer], Layer::zeros(2, 3)).unwrap();
        let f = net.forward(&[1.0, 2.0]).unwrap();
        assert_eq!(f.embedding, vec![1.0, 2.0]);
        assert_eq!(f.logits, vec![0.0; 3]);
    }

    #[test]
    fn hidden_relu_clips_negatives() {
        let hidden = Layer {
            weights: Matrix::identity(2),
            bias: vec![0.0; 2],
        };
        let out = Layer {
            weights: Matrix::identity(2),
            bias: vec![0.0; 2],
        };
        let net = ViewNetwork::from_parts(ViewLabel::View(0), vec![hidden, out], Layer::zeros(2, 1)).unwrap();
        assert_eq!(net.forward(&[-3.0, 2.0]).unwrap().embedding, vec![0.0, 2.0]);
    }

    #[test]
    fn forward_matches_manual_composition() {
        let net = ViewNetwork::init(ViewLabel::View(0), &shape(vec![6, 5]), 3).unwrap();
        let x = [0.3, -1.2, 0.8, 2.0];
        let l = net.layers();
        let h1 = relu(&affine(&x, &l[0].weights, &l[0].bias).unwrap());
        let h2 = relu(&affine(&h1, &l[1].weights, &l[1].bias).unwrap());
        let e = affine(&h2, &l[2].weights, &l[2].bias).unwrap();
        let logits = affine(&e, &net.head().weights, &net.head().bias).unwrap();
        let f = net.forward(&x).unwrap();
        assert_eq!(f.embedding, e);
        assert_eq!(f.logits, logits);
    }

    #[test]
    fn forward_rejects_wrong_dim() {
        let net = ViewNetwork::init(ViewLabel::View(0), &shape(vec![]), 3).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::Sizing(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let net = ViewNetwork::init(ViewLabel::View(0), &shape(vec![6]), 3).unwrap();
        let f = net.forward(&[1.0, 2.0, -1.0, 0.5]).unwrap();
        let g = net.backward(&f.tape, &[0.0; 3], &[0.0; 5]).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn single_linear_layer_outer_product() {
        let net = ViewNetwork::init(ViewLabel::View(0), &shape(vec![]), 3).unwrap();
        let x = [1.0, -2.0, 0.5, 3.0];
        let g = [0.2, -1.0, 4.0];
        let f = net.forward(&x).unwrap();
        let grads = net.backward(&f.tape, &g, &[0.0; 5]).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                assert_eq!(grads.layers[0].weights[(i, j)], x[i] * g[j]);
            }
        }
        assert_eq!(grads.layers[0].bias, g.to_vec());
        assert_eq!(grads.head.weights.data(), &[0.0; 15]);
    }

    #[test]
    fn backward_rejects_foreign_tape() {
        let small = ViewNetwork::init(ViewLabel::View(0), &shape(vec![]), 3).unwrap();
        let deep = ViewNetwork::init(ViewLabel::View(0), &shape(vec![6]), 3).unwrap();
        let f = small.forward(&[1.0; 4]).unwrap();
        assert!(matches!(
            deep.backward(&f.tape, &[0.0; 3], &[0.0; 5]),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut net = ViewNetwork::init(ViewLabel::View(1), &shape(vec![6, 2]), 5).unwrap();
        net.layers[0].bias[1] = 1.0 / 3.0;
        net.head.bias[0] = -2.5e-300;
        let text = net.to_checkpoint_string();
        assert!(text.starts_with("CVSE-CKPT v1\nview 1\nlayers 3\ndims 4 6 2 3\nclasses 5\n"));
        let back = ViewNetwork::parse_checkpoint(&text, Path::new("n.ckpt")).unwrap();
        assert_eq!(back, net);
        assert_eq!(back.to_checkpoint_string(), text);

        let public = net.with_label(ViewLabel::Public);
        let back = ViewNetwork::parse_checkpoint(&public.to_checkpoint_string(), Path::new("p")).unwrap();
        assert_eq!(back.label(), ViewLabel::Public);
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        let net = ViewNetwork::init(ViewLabel::View(0), &shape(vec![]), 5).unwrap();
        let text = net.to_checkpoint_string();
        let p = Path::new("bad.ckpt");
        assert!(ViewNetwork::parse_checkpoint("nope\n", p).is_err());
        let truncated: String = text.lines().take(8).map(|l| format!("{l}\n")).collect();
        assert!(matches!(
            ViewNetwork::parse_checkpoint(&truncated, p),
            Err(Error::Parse { .. })
        ));
        let corrupted = text.replacen("dims 4 3", "dims 4 7", 1);
        assert!(ViewNetwork::parse_checkpoint(&corrupted, p).is_err());
    }
}
