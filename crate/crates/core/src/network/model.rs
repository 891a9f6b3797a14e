use rand::Rng;
use sha2::{Digest, Sha256};

use super::layers::{self, ConvGeom};
use super::spec::{ClassifierLayer, FeatureLayer, NetworkSpec, Shape};
use crate::datamodel::{ClassLabel, PreprocessSpec};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::seed;

/// A named parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<S>,
}

impl<S: Real> Tensor<S> {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            name: name.into(),
            shape,
            data: vec![S::zero(); n],
        }
    }

    /// Hex SHA-256 over the shape and the exact values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for d in &self.shape {
            h.update((*d as u64).to_le_bytes());
        }
        for v in &self.data {
            h.update(v.as_f64().to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// A batch of `n×c×h×w` inputs, channels first.
#[derive(Debug, Clone, Copy)]
pub struct BatchView<'a, S> {
    pub data: &'a [S],
    pub dims: [usize; 4],
}

impl<'a, S: Real> BatchView<'a, S> {
    pub fn new(data: &'a [S], dims: [usize; 4]) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::param(
                "input",
                format!("dims {dims:?} describe {n} values but the buffer holds {}", data.len()),
            ));
        }
        Ok(Self { data, dims })
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout disabled.
    Inference,
    /// Dropout masks drawn from the given seed.
    Train { dropout_seed: u64 },
}

/// Activations recorded by a training forward pass.
#[derive(Debug, Clone)]
pub struct Tape<S> {
    batch: usize,
    /// `acts[0]` is the input; `acts[i + 1]` the output of feature layer `i`.
    acts: Vec<Vec<S>>,
    pool_args: Vec<Option<Vec<u32>>>,
    /// Output of each classifier layer.
    cls_acts: Vec<Vec<S>>,
    dropout_masks: Vec<Option<Vec<S>>>,
}

impl<S> Tape<S> {
    /// Per-sample value counts of the input and each feature layer output.
    pub fn feature_lens(&self) -> Vec<usize> {
        self.acts.iter().map(|a| a.len() / self.batch).collect()
    }

    /// Per-sample output width of each classifier layer, dropout included.
    pub fn classifier_widths(&self) -> Vec<usize> {
        self.cls_acts.iter().map(|a| a.len() / self.batch).collect()
    }
}

/// Parameter gradients, aligned with `Network::params`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<S> {
    pub tensors: Vec<Vec<S>>,
}

/// One captured activation map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStage<S> {
    pub name: String,
    pub shape: Shape,
    pub data: Vec<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMaps<S> {
    pub stages: Vec<FeatureStage<S>>,
}

impl<S> FeatureMaps<S> {
    pub fn shapes(&self) -> Vec<Shape> {
        self.stages.iter().map(|s| s.shape).collect()
    }
}

/// The CNN: layer plan, parameters, and the metadata needed to apply it.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<S> {
    spec: NetworkSpec,
    params: Vec<Tensor<S>>,
    class_names: Vec<String>,
    preprocess: PreprocessSpec,
}

pub fn default_class_names(n: usize) -> Vec<String> {
    if n == ClassLabel::ALL.len() {
        ClassLabel::names()
    } else {
        (0..n).map(|i| format!("class_{i}")).collect()
    }
}

fn uniform_init<S: Real>(t: &mut Tensor<S>, fan_in: usize, rng: &mut impl Rng) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    for v in &mut t.data {
        *v = S::of(rng.gen_range(-bound..bound));
    }
}

/// AlexNet with randomly initialized parameters.
pub fn build_backbone<S: Real>(num_classes: usize, seed: u64) -> Result<Network<S>> {
    if num_classes < 2 {
        return Err(Error::param("num_classes", format!("{num_classes} < 2")));
    }
    Network::new(NetworkSpec::alexnet(num_classes), seed)
}

impl<S: Real> Network<S> {
    /// All parameters zero.
    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let params = spec
            .param_slots()?
            .into_iter()
            .map(|s| Tensor::zeros(s.name, s.shape))
            .collect();
        let n = spec.num_classes();
        Ok(Self {
            preprocess: PreprocessSpec::with_side(spec.input_side),
            class_names: default_class_names(n),
            spec,
            params,
        })
    }

    /// Uniform fan-in initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    /// for weights and biases, one seeded stream per tensor.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(spec)?;
        let slots = net.spec.param_slots()?;
        for (i, (t, slot)) in net.params.iter_mut().zip(&slots).enumerate() {
            uniform_init(t, slot.fan_in, &mut seed::rng(seed, "init", &[i as u64]));
        }
        Ok(net)
    }

    /// Assembles a network from loaded parts, checking every tensor.
    pub fn from_parts(
        spec: NetworkSpec,
        params: Vec<Tensor<S>>,
        class_names: Vec<String>,
        preprocess: PreprocessSpec,
    ) -> Result<Self> {
        spec.validate()?;
        preprocess.validate()?;
        let slots = spec.param_slots()?;
        for slot in &slots {
            let found = params.iter().filter(|t| t.name == slot.name).count();
            if found != 1 {
                return Err(Error::CheckpointIncompatible {
                    tensor: slot.name.clone(),
                    message: format!("expected exactly one tensor, found {found}"),
                });
            }
        }
        if let Some(extra) = params.iter().find(|t| !slots.iter().any(|s| s.name == t.name)) {
            return Err(Error::CheckpointIncompatible {
                tensor: extra.name.clone(),
                message: "not part of the network plan".into(),
            });
        }
        let mut ordered = Vec::with_capacity(slots.len());
        for slot in &slots {
            let t = params.iter().find(|t| t.name == slot.name).expect("checked above");
            if t.shape != slot.shape || t.data.len() != slot.shape.iter().product::<usize>() {
                return Err(Error::CheckpointIncompatible {
                    tensor: slot.name.clone(),
                    message: format!("shape {:?} does not match expected {:?}", t.shape, slot.shape),
                });
            }
            ordered.push(t.clone());
        }
        if class_names.len() != spec.num_classes() {
            return Err(Error::param(
                "class_names",
                format!("{} names for {} outputs", class_names.len(), spec.num_classes()),
            ));
        }
        Ok(Self {
            spec,
            params: ordered,
            class_names,
            preprocess,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor<S>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<S>> {
        self.params.iter().find(|t| t.name == name)
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|t| t.data.len()).sum()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn set_class_names(&mut self, names: Vec<String>) -> Result<()> {
        if names.len() != self.num_classes() {
            return Err(Error::param("class_names", "count must equal the head width"));
        }
        self.class_names = names;
        Ok(())
    }

    pub fn preprocess(&self) -> &PreprocessSpec {
        &self.preprocess
    }

    pub fn set_preprocess(&mut self, p: PreprocessSpec) -> Result<()> {
        p.validate()?;
        if p.resize_side != self.spec.input_side {
            return Err(Error::param("resize_side", "must equal the network input side"));
        }
        self.preprocess = p;
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes()
    }

    pub fn zero_grads(&self) -> Gradients<S> {
        Gradients {
            tensors: self.params.iter().map(|t| vec![S::zero(); t.data.len()]).collect(),
        }
    }

    /// Converts parameters to another precision.
    pub fn cast<T: Real>(&self) -> Network<T> {
        Network {
            spec: self.spec.clone(),
            params: self
                .params
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|v| T::of(v.as_f64())).collect(),
                })
                .collect(),
            class_names: self.class_names.clone(),
            preprocess: self.preprocess.clone(),
        }
    }

    /// Replaces the final linear layer with a freshly initialized one of
    /// `new_num_classes` outputs. Every other tensor is left untouched and all
    /// parameters remain trainable.
    pub fn replace_head(&mut self, new_num_classes: usize, seed: u64) -> Result<()> {
        if new_num_classes < 2 {
            return Err(Error::param("new_num_classes", format!("{new_num_classes} < 2")));
        }
        let spec = self.spec.with_num_classes(new_num_classes);
        spec.validate()?;
        let slots = spec.param_slots()?;
        let n = slots.len();
        for (k, slot) in slots[n - 2..].iter().enumerate() {
            let mut t = Tensor::zeros(slot.name.clone(), slot.shape.clone());
            uniform_init(&mut t, slot.fan_in, &mut seed::rng(seed, "head", &[k as u64]));
            self.params[n - 2 + k] = t;
        }
        self.spec = spec;
        self.class_names = default_class_names(new_num_classes);
        Ok(())
    }

    fn check_input(&self, input: &BatchView<'_, S>) -> Result<usize> {
        let [n, c, h, w] = input.dims;
        let s = self.spec.input_side;
        if c != self.spec.input_channels || h != s || w != s {
            return Err(Error::param(
                "input",
                format!(
                    "expected {n}x{}x{s}x{s}, got {n}x{c}x{h}x{w}",
                    self.spec.input_channels
                ),
            ));
        }
        if n == 0 {
            return Err(Error::param("input", "empty batch"));
        }
        Ok(n)
    }

    /// Shared forward pass; records activations when a tape is supplied.
    fn propagate(&self, input: &BatchView<'_, S>, mode: Mode, mut tape: Option<&mut Tape<S>>) -> Result<Vec<S>> {
        let batch = self.check_input(input)?;
        let shapes = self.spec.feature_shapes()?;
        let mut p = 0;
        let mut cur = input.data.to_vec();
        let mut in_shape = self.spec.input_shape();
        if let Some(t) = tape.as_deref_mut() {
            t.batch = batch;
            t.acts.push(cur.clone());
        }
        for (layer, &out_shape) in self.spec.features.iter().zip(&shapes) {
            let mut arg = None;
            cur = match *layer {
                FeatureLayer::Conv { kernel, stride, padding, .. } => {
                    let g = geom(in_shape, out_shape, kernel, stride, padding);
                    let mut out = vec![S::zero(); batch * g.out_len()];
                    layers::conv_forward(&cur, &g, &self.params[p].data, &self.params[p + 1].data, &mut out);
                    p += 2;
                    out
                }
                FeatureLayer::MaxPool { kernel, stride } => {
                    let (out, a) = layers::maxpool_forward(&cur, in_shape.c, in_shape.h, in_shape.w, kernel, stride);
                    arg = Some(a);
                    out
                }
            };
            if let Some(t) = tape.as_deref_mut() {
                t.acts.push(cur.clone());
                t.pool_args.push(arg);
            }
            in_shape = out_shape;
        }

        let mut width = in_shape.len();
        for (i, layer) in self.spec.classifier.iter().enumerate() {
            let mut mask = None;
            match *layer {
                ClassifierLayer::Dropout { p: rate } => {
                    if let (Mode::Train { dropout_seed }, true) = (mode, rate > 0.0) {
                        let mut rng = seed::rng(dropout_seed, "dropout", &[i as u64]);
                        let keep = S::of(1.0 / (1.0 - rate));
                        let m: Vec<S> = (0..cur.len())
                            .map(|_| if rng.gen::<f64>() < rate { S::zero() } else { keep })
                            .collect();
                        cur.iter_mut().zip(&m).for_each(|(v, &k)| *v *= k);
                        mask = Some(m);
                    }
                }
                ClassifierLayer::Linear { in_features, out_features, relu } => {
                    debug_assert_eq!(in_features, width);
                    cur = layers::linear_forward(
                        &cur,
                        batch,
                        in_features,
                        out_features,
                        &self.params[p].data,
                        &self.params[p + 1].data,
                        relu,
                    );
                    p += 2;
                    width = out_features;
                }
            }
            if let Some(t) = tape.as_deref_mut() {
                t.cls_acts.push(cur.clone());
                t.dropout_masks.push(mask);
            }
        }
        Ok(cur)
    }

    /// Inference-mode logits, `batch × num_classes`.
    pub fn forward(&self, input: &BatchView<'_, S>) -> Result<Vec<S>> {
        self.propagate(input, Mode::Inference, None)
    }

    /// Row-wise softmax of the logits.
    pub fn predict_proba(&self, input: &BatchView<'_, S>) -> Result<Vec<S>> {
        Ok(softmax_rows(&self.forward(input)?, self.num_classes()))
    }

    /// Forward pass that keeps what `backward` needs.
    pub fn forward_train(&self, input: &BatchView<'_, S>, mode: Mode) -> Result<(Vec<S>, Tape<S>)> {
        let mut tape = Tape {
            batch: 0,
            acts: Vec::new(),
            pool_args: Vec::new(),
            cls_acts: Vec::new(),
            dropout_masks: Vec::new(),
        };
        let logits = self.propagate(input, mode, Some(&mut tape))?;
        Ok((logits, tape))
    }

    /// Gradients of a scalar loss given its gradient with respect to the logits.
    pub fn backward(&self, tape: &Tape<S>, dlogits: &[S]) -> Result<Gradients<S>> {
        let batch = tape.batch;
        if dlogits.len() != batch * self.num_classes() {
            return Err(Error::param("dlogits", "length must be batch x num_classes"));
        }
        let mut grads = self.zero_grads();
        let n_feature_params = 2 * self
            .spec
            .features
            .iter()
            .filter(|l| matches!(l, FeatureLayer::Conv { .. }))
            .count();
        let mut p = self.params.len();
        let mut d = dlogits.to_vec();

        for (i, layer) in self.spec.classifier.iter().enumerate().rev() {
            match *layer {
                ClassifierLayer::Dropout { .. } => {
                    if let Some(mask) = &tape.dropout_masks[i] {
                        d.iter_mut().zip(mask).for_each(|(g, &m)| *g *= m);
                    }
                }
                ClassifierLayer::Linear { in_features, out_features, relu } => {
                    p -= 2;
                    let x = if i == 0 { tape.acts.last().expect("input recorded") } else { &tape.cls_acts[i - 1] };
                    let (wg, rest) = grads.tensors.split_at_mut(p + 1);
                    let need_dx = p > 0;
                    let dx = layers::linear_backward(
                        x,
                        &tape.cls_acts[i],
                        &d,
                        batch,
                        in_features,
                        out_features,
                        &self.params[p].data,
                        relu,
                        &mut wg[p],
                        &mut rest[0],
                        need_dx,
                    );
                    match dx {
                        Some(dx) => d = dx,
                        None => return Ok(grads),
                    }
                }
            }
        }
        debug_assert_eq!(p, n_feature_params);

        let shapes = self.spec.feature_shapes()?;
        for (i, layer) in self.spec.features.iter().enumerate().rev() {
            let in_shape = if i == 0 { self.spec.input_shape() } else { shapes[i - 1] };
            let out_shape = shapes[i];
            match *layer {
                FeatureLayer::Conv { kernel, stride, padding, .. } => {
                    p -= 2;
                    let g = geom(in_shape, out_shape, kernel, stride, padding);
                    let need_dx = p > 0;
                    let mut dx = need_dx.then(|| vec![S::zero(); batch * g.in_len()]);
                    let (wg, rest) = grads.tensors.split_at_mut(p + 1);
                    layers::conv_backward(
                        &tape.acts[i],
                        &tape.acts[i + 1],
                        &d,
                        &g,
                        &self.params[p].data,
                        &mut wg[p],
                        &mut rest[0],
                        dx.as_deref_mut(),
                    );
                    match dx {
                        Some(dx) => d = dx,
                        None => break,
                    }
                }
                FeatureLayer::MaxPool { .. } => {
                    let arg = tape.pool_args[i].as_ref().expect("pool records argmax");
                    d = layers::maxpool_backward(&d, arg, in_shape.h * in_shape.w, out_shape.h * out_shape.w);
                }
            }
        }
        Ok(grads)
    }

    /// Every intermediate feature map (each conv+ReLU and each pool) for one image.
    pub fn trace(&self, image: &[S]) -> Result<FeatureMaps<S>> {
        let view = BatchView::new(image, [1, self.spec.input_channels, self.spec.input_side, self.spec.input_side])?;
        let (_, tape) = self.forward_train(&view, Mode::Inference)?;
        let shapes = self.spec.feature_shapes()?;
        let (mut conv_n, mut pool_n) = (0, 0);
        let stages = self
            .spec
            .features
            .iter()
            .zip(shapes)
            .zip(tape.acts.into_iter().skip(1))
            .map(|((layer, shape), data)| {
                let name = match layer {
                    FeatureLayer::Conv { .. } => {
                        conv_n += 1;
                        format!("conv{conv_n}")
                    }
                    FeatureLayer::MaxPool { .. } => {
                        pool_n += 1;
                        format!("pool{pool_n}")
                    }
                };
                FeatureStage { name, shape, data }
            })
            .collect();
        Ok(FeatureMaps { stages })
    }

    /// One map per conv stage, taken after the max pool when one follows.
    pub fn extract_feature_maps(&self, image: &[S]) -> Result<FeatureMaps<S>> {
        let all = self.trace(image)?;
        let mut stages = Vec::new();
        let mut conv_n = 0;
        for (i, layer) in self.spec.features.iter().enumerate() {
            if let FeatureLayer::Conv { .. } = layer {
                conv_n += 1;
                let pooled = matches!(self.spec.features.get(i + 1), Some(FeatureLayer::MaxPool { .. }));
                let src = &all.stages[if pooled { i + 1 } else { i }];
                stages.push(FeatureStage {
                    name: if pooled { format!("conv{conv_n}_pool") } else { format!("conv{conv_n}") },
                    shape: src.shape,
                    data: src.data.clone(),
                });
            }
        }
        Ok(FeatureMaps { stages })
    }
}

fn geom(input: Shape, output: Shape, k: usize, stride: usize, pad: usize) -> ConvGeom {
    ConvGeom {
        cin: input.c,
        h: input.h,
        w: input.w,
        cout: output.c,
        k,
        stride,
        pad,
        ho: output.h,
        wo: output.w,
    }
}

/// Numerically stable softmax of each `k`-wide row.
pub fn softmax_rows<S: Real>(logits: &[S], k: usize) -> Vec<S> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(k) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
        let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| S::of(e / sum)));
    }
    out
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax<S: Real>(row: &[S]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_input(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = seed::rng(seed, "input", &[]);
        (0..n * 3 * 96 * 96).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_network_gives_zero_logits() {
        let net = Network::<f32>::zeros(NetworkSpec::tiny(3)).unwrap();
        let x: Vec<f32> = tiny_input(1, 2).iter().map(|&v| v as f32).collect();
        let out = net.forward(&BatchView::new(&x, [2, 3, 96, 96]).unwrap()).unwrap();
        assert_eq!(out, vec![0.0; 6]);
    }

    #[test]
    fn identical_rows_identical_logits() {
        let net = Network::<f64>::new(NetworkSpec::tiny(3), 4).unwrap();
        let one = tiny_input(2, 1);
        let two: Vec<f64> = one.iter().chain(one.iter()).copied().collect();
        let out = net.forward(&BatchView::new(&two, [2, 3, 96, 96]).unwrap()).unwrap();
        assert_eq!(out[..3], out[3..]);
        assert!(out.iter().all(|v| v.is_finite()));
        let again = net.forward(&BatchView::new(&two, [2, 3, 96, 96]).unwrap()).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn wrong_dims_are_reported() {
        let net = Network::<f32>::zeros(NetworkSpec::tiny(3)).unwrap();
        let x = vec![0.0f32; 3 * 64 * 64];
        let err = net.forward(&BatchView::new(&x, [1, 3, 64, 64]).unwrap()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("1x3x96x96") && msg.contains("1x3x64x64"), "{msg}");
        assert!(BatchView::new(&x, [2, 3, 64, 64]).is_err());
    }

    #[test]
    fn softmax_examples() {
        let p = softmax_rows(&[0.0f64, 0.0, 0.0], 3);
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        let p = softmax_rows(&[2f64.ln(), 0.0, 0.0], 3);
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15 && (p[2] - 0.25).abs() < 1e-15);
        let shifted = softmax_rows(&[2f64.ln() + 7.0, 7.0, 7.0], 3);
        for (a, b) in p.iter().zip(&shifted) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(argmax(&[1.0f32, 3.0, 3.0]), 1);
    }

    #[test]
    fn predict_proba_rows_sum_to_one() {
        let net = Network::<f32>::new(NetworkSpec::tiny(3), 9).unwrap();
        let x: Vec<f32> = tiny_input(3, 3).iter().map(|&v| v as f32 * 4.0).collect();
        let view = BatchView::new(&x, [3, 3, 96, 96]).unwrap();
        let logits = net.forward(&view).unwrap();
        let p = net.predict_proba(&view).unwrap();
        for (prow, lrow) in p.chunks(3).zip(logits.chunks(3)) {
            let s: f64 = prow.iter().map(|v| f64::from(*v)).sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(prow.iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(argmax(prow), argmax(lrow));
        }
    }

    #[test]
    fn head_swap_touches_only_the_head() {
        let mut net = Network::<f32>::new(NetworkSpec::tiny(10), 1).unwrap();
        let before: Vec<String> = net.params().iter().map(Tensor::checksum).collect();
        net.replace_head(3, 42).unwrap();
        let after: Vec<String> = net.params().iter().map(Tensor::checksum).collect();
        let n = before.len();
        assert_eq!(before[..n - 2], after[..n - 2]);
        assert_ne!(before[n - 2], after[n - 2]);
        assert_eq!(net.num_classes(), 3);
        assert_eq!(net.param("classifier.3.weight").unwrap().shape, vec![3, 64]);
        assert_eq!(net.class_names(), ["high", "medium", "low"]);

        let mut again = Network::<f32>::new(NetworkSpec::tiny(10), 1).unwrap();
        again.replace_head(3, 42).unwrap();
        assert_eq!(again, net);
        assert!(again.replace_head(1, 0).is_err());
    }

    #[test]
    fn feature_maps_of_tiny() {
        let net = Network::<f32>::zeros(NetworkSpec::tiny(3)).unwrap();
        let img = vec![0.0f32; 3 * 96 * 96];
        let maps = net.extract_feature_maps(&img).unwrap();
        assert_eq!(maps.stages.len(), 2);
        assert_eq!(maps.shapes(), [Shape::new(16, 23, 23), Shape::new(32, 11, 11)]);
        assert!(maps.stages.iter().all(|s| s.data.iter().all(|&v| v == 0.0)));
        assert_eq!(net.trace(&img).unwrap().stages.len(), 4);
    }

    #[test]
    fn from_parts_rejects_wrong_shapes() {
        let net = Network::<f32>::new(NetworkSpec::tiny(3), 1).unwrap();
        let mut params = net.params().to_vec();
        params[0].shape = vec![16, 3, 5, 4];
        let err = Network::from_parts(net.spec().clone(), params, net.class_names().to_vec(), net.preprocess().clone())
            .unwrap_err();
        assert!(matches!(err, Error::CheckpointIncompatible { ref tensor, .. } if tensor == "features.0.weight"));
    }
}
