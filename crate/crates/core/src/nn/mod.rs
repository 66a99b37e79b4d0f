//! Layer-chain networks with an explicit activation tape.
//!
//! A [`Network`] is a straight chain of layers. The two sensing layers,
//! [`LayerKind::Measure`] and [`LayerKind::PinvDecode`], own no parameters:
//! they read the measurement-matrix prefix handed to [`Network::forward`] as a
//! [`PhiPrefix`], and the decoder is always the pseudoinverse of that prefix.
//! Gradients reach `Φ` through both the measurement product and the tied
//! decoder.

mod adam;
mod gradcheck;
mod loss;
mod ops;

use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, PinvState};
use crate::tensor::{Real, Tensor};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckReport, FD_STEP};
pub use loss::{loss_cross_entropy, loss_euclidean, softmax, Objective};

static STAMPS: AtomicU64 = AtomicU64::new(1);

fn next_stamp() -> u64 {
    STAMPS.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Dense { in_dim: usize, out_dim: usize },
    /// Square odd kernel, zero "same" padding, stride 1.
    Conv2d { in_ch: usize, out_ch: usize, kernel: usize },
    Relu,
    /// 2×2 window, stride 2; odd trailing rows/columns are dropped.
    MaxPool2,
    /// Per-sample target shape.
    Reshape(Vec<usize>),
    /// `y = Φ(1:r,:) x`
    Measure,
    /// `p = Ψ_r y` with `Ψ_r` the pseudoinverse of the current prefix.
    PinvDecode,
}

impl LayerKind {
    fn name(&self) -> &'static str {
        match self {
            LayerKind::Dense { .. } => "dense",
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool2 => "maxpool2",
            LayerKind::Reshape(_) => "reshape",
            LayerKind::Measure => "measure",
            LayerKind::PinvDecode => "pinv-decode",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub trainable: bool,
}

impl LayerSpec {
    pub fn new(kind: LayerKind) -> Self {
        Self {
            kind,
            trainable: true,
        }
    }

    pub fn frozen(kind: LayerKind) -> Self {
        Self {
            kind,
            trainable: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub frozen: bool,
}

/// All network parameters other than `Φ`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    entries: Vec<Param<T>>,
}

impl<T: Real> ModelParams<T> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.entries.iter()
    }

    pub fn get(&self, idx: usize) -> &Param<T> {
        &self.entries[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Param<T> {
        &mut self.entries[idx]
    }

    pub fn set_all_frozen(&mut self, frozen: bool) {
        for p in &mut self.entries {
            p.frozen = frozen;
        }
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }

    pub fn count_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|p| !p.frozen)
            .map(|p| p.value.len())
            .sum()
    }

    /// Bitwise equality of every value, ignoring freeze flags.
    pub fn values_bitwise_eq(&self, other: &ModelParams<T>) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| {
                a.value.shape() == b.value.shape()
                    && a.value.data().iter().zip(b.value.data()).all(|(x, y)| {
                        x.as_f64().to_bits() == y.as_f64().to_bits()
                    })
            })
    }
}

/// Read-only view of the first `r` rows of a measurement matrix.
#[derive(Clone, Debug)]
pub struct PhiPrefix<'a, T> {
    data: &'a [T],
    r: usize,
    n: usize,
    trainable: Range<usize>,
}

impl<'a, T: Real> PhiPrefix<'a, T> {
    /// `data` holds at least `r` rows of length `n`; later rows are ignored.
    pub fn new(data: &'a [T], r: usize, n: usize) -> Result<Self> {
        if r == 0 || n == 0 || r > n {
            return Err(Error::dim(format!("Φ prefix needs 1 <= r <= n, got r={r}, n={n}")));
        }
        if data.len() < r * n {
            return Err(Error::dim(format!(
                "Φ buffer has {} values, prefix {r}x{n} needs {}",
                data.len(),
                r * n
            )));
        }
        Ok(Self {
            data: &data[..r * n],
            r,
            n,
            trainable: 0..0,
        })
    }

    /// Rows whose gradient is requested from [`Network::backward`].
    pub fn with_trainable(mut self, rows: Range<usize>) -> Self {
        self.trainable = rows.start.min(self.r)..rows.end.min(self.r);
        self
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[T] {
        self.data
    }

    pub fn trainable(&self) -> Range<usize> {
        self.trainable.clone()
    }

    fn to_matrix(&self) -> Matrix {
        Matrix::from_real(self.r, self.n, self.data).expect("prefix dimensions checked")
    }
}

#[derive(Clone, Debug)]
struct Layer {
    spec: LayerSpec,
    weight: Option<usize>,
    bias: Option<usize>,
    /// Per-sample input shape, `None` for the variable-length measurement vector.
    in_shape: Option<Vec<usize>>,
    out_shape: Option<Vec<usize>>,
}

#[derive(Clone, Debug)]
enum Record<T> {
    Dense { input: Vec<T> },
    Conv { cols: Vec<T> },
    Relu { mask: Vec<bool> },
    MaxPool { argmax: Vec<u32> },
    Shape,
    Measure { input: Vec<T> },
    Decode { y: Vec<T>, psi: Vec<T>, pinv: Box<PinvState> },
}

/// Activations recorded by [`Network::forward`], consumed by [`Network::backward`].
#[derive(Clone, Debug)]
pub struct Tape<T> {
    stamp: u64,
    batch: usize,
    r: usize,
    phi_trainable: Range<usize>,
    records: Vec<Record<T>>,
}

impl<T> Tape<T> {
    /// Pseudoinverse state used by the decode layer, if the network has one.
    pub fn pinv(&self) -> Option<&PinvState> {
        self.records.iter().find_map(|r| match r {
            Record::Decode { pinv, .. } => Some(pinv.as_ref()),
            _ => None,
        })
    }
}

/// Gradients from one backward pass. Frozen parameters have `None`.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    pub params: Vec<Option<Tensor<T>>>,
    /// `r × n`; rows outside the requested trainable range are zero.
    pub phi: Option<Tensor<T>>,
}

#[derive(Clone, Debug)]
pub struct Network<T> {
    layers: Vec<Layer>,
    params: ModelParams<T>,
    input_shape: Vec<usize>,
    stamp: u64,
}

impl<T: Real> Network<T> {
    /// Builds a chain for per-sample inputs of `input_shape`, drawing weights
    /// from `N(0, 2/fan_in)` and zero biases.
    pub fn new<R: Rng + ?Sized>(
        specs: Vec<LayerSpec>,
        input_shape: Vec<usize>,
        rng: &mut R,
    ) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::dim(format!("invalid input shape {input_shape:?}")));
        }
        let mut layers = Vec::with_capacity(specs.len());
        let mut entries = Vec::new();
        let mut shape: Option<Vec<usize>> = Some(input_shape.clone());
        let mut signal_len: Option<usize> = None;

        for (idx, spec) in specs.into_iter().enumerate() {
            let in_shape = shape.clone();
            let numel = in_shape.as_ref().map(|s| s.iter().product::<usize>());
            let tag = format!("{idx}.{}", spec.kind.name());
            let mismatch = |what: String| Error::dim(format!("layer {tag}: {what}"));
            let (mut weight, mut bias) = (None, None);
            let mut push = |name: &str, value: Tensor<T>| {
                entries.push(Param {
                    name: format!("{tag}.{name}"),
                    value,
                    frozen: !spec.trainable,
                });
                entries.len() - 1
            };

            let out_shape = match &spec.kind {
                LayerKind::Dense { in_dim, out_dim } => {
                    if numel != Some(*in_dim) {
                        return Err(mismatch(format!("expects {in_dim} inputs, got {in_shape:?}")));
                    }
                    let std = (2.0 / *in_dim as f64).sqrt();
                    weight = Some(push("weight", gaussian(vec![*out_dim, *in_dim], std, rng)));
                    bias = Some(push("bias", Tensor::zeros(vec![*out_dim])));
                    Some(vec![*out_dim])
                }
                LayerKind::Conv2d {
                    in_ch,
                    out_ch,
                    kernel,
                } => {
                    let s = in_shape.as_ref().filter(|s| s.len() == 3 && s[0] == *in_ch);
                    let Some(s) = s else {
                        return Err(mismatch(format!("expects [{in_ch}, h, w], got {in_shape:?}")));
                    };
                    if kernel % 2 == 0 {
                        return Err(mismatch(format!("kernel {kernel} must be odd")));
                    }
                    let fan_in = in_ch * kernel * kernel;
                    let std = (2.0 / fan_in as f64).sqrt();
                    weight = Some(push(
                        "weight",
                        gaussian(vec![*out_ch, *in_ch, *kernel, *kernel], std, rng),
                    ));
                    bias = Some(push("bias", Tensor::zeros(vec![*out_ch])));
                    Some(vec![*out_ch, s[1], s[2]])
                }
                LayerKind::Relu => {
                    if in_shape.is_none() {
                        return Err(mismatch("cannot follow a measurement layer".into()));
                    }
                    in_shape.clone()
                }
                LayerKind::MaxPool2 => match &in_shape {
                    Some(s) if s.len() == 3 && s[1] >= 2 && s[2] >= 2 => {
                        Some(vec![s[0], s[1] / 2, s[2] / 2])
                    }
                    _ => return Err(mismatch(format!("expects [c, h>=2, w>=2], got {in_shape:?}"))),
                },
                LayerKind::Reshape(target) => {
                    let want: usize = target.iter().product();
                    if numel != Some(want) || target.is_empty() {
                        return Err(mismatch(format!("cannot reshape {in_shape:?} to {target:?}")));
                    }
                    Some(target.clone())
                }
                LayerKind::Measure => {
                    let Some(n) = numel else {
                        return Err(mismatch("consecutive measurement layers".into()));
                    };
                    if idx != 0 {
                        return Err(mismatch("the measurement layer must come first".into()));
                    }
                    signal_len = Some(n);
                    None
                }
                LayerKind::PinvDecode => {
                    if in_shape.is_some() {
                        return Err(mismatch("must directly follow the measurement layer".into()));
                    }
                    Some(vec![signal_len.expect("measure precedes decode")])
                }
            };
            if in_shape.is_none() && spec.kind != LayerKind::PinvDecode {
                return Err(mismatch("the measurement layer must be followed by pinv-decode".into()));
            }
            shape = out_shape.clone();
            layers.push(Layer {
                spec,
                weight,
                bias,
                in_shape,
                out_shape,
            });
        }
        if shape.is_none() {
            return Err(Error::dim("network ends in a measurement layer"));
        }
        Ok(Self {
            layers,
            params: ModelParams { entries },
            input_shape,
            stamp: next_stamp(),
        })
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    /// Mutable parameter access. Invalidates outstanding tapes.
    pub fn params_mut(&mut self) -> &mut ModelParams<T> {
        self.stamp = next_stamp();
        &mut self.params
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// Per-sample output shape.
    pub fn output_shape(&self) -> &[usize] {
        self.layers
            .last()
            .and_then(|l| l.out_shape.as_deref())
            .unwrap_or(&self.input_shape)
    }

    pub fn layer_specs(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers.iter().map(|l| &l.spec)
    }

    pub fn has_measurement(&self) -> bool {
        self.layers.iter().any(|l| l.spec.kind == LayerKind::Measure)
    }

    /// Number of stored parameters, `Φ` excluded.
    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Converts every parameter to another precision. Freeze flags are kept.
    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            layers: self.layers.clone(),
            params: ModelParams {
                entries: self
                    .params
                    .entries
                    .iter()
                    .map(|p| Param {
                        name: p.name.clone(),
                        value: p.value.cast(),
                        frozen: p.frozen,
                    })
                    .collect(),
            },
            input_shape: self.input_shape.clone(),
            stamp: next_stamp(),
        }
    }

    /// Runs the chain on a batch `[batch, ...input_shape]`.
    pub fn forward(
        &self,
        phi: Option<&PhiPrefix<'_, T>>,
        input: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tape<T>)> {
        let (batch, per) = input.batch_split();
        let expected: usize = self.input_shape.iter().product();
        if input.shape().len() < 2 || per != expected || batch == 0 {
            return Err(Error::dim(format!(
                "input {:?} does not match [batch, {:?}]",
                input.shape(),
                self.input_shape
            )));
        }
        if let Some(i) = input.first_non_finite() {
            return Err(Error::Numeric {
                layer: "input".into(),
                detail: format!("element {i} is not finite"),
            });
        }
        if self.has_measurement() {
            match phi {
                Some(p) if p.n() == expected => {}
                Some(p) => {
                    return Err(Error::dim(format!(
                        "Φ prefix has n={}, signal length is {expected}",
                        p.n()
                    )))
                }
                None => return Err(Error::invalid("network has a measurement layer but no Φ was given")),
            }
        }

        let mut cur = input.data().to_vec();
        let mut records = Vec::with_capacity(self.layers.len());
        for (idx, layer) in self.layers.iter().enumerate() {
            let (next, record) = self.layer_forward(layer, phi, batch, cur)?;
            if let Some(i) = next.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    layer: format!("{idx}.{}", layer.spec.kind.name()),
                    detail: format!("activation {i} is not finite"),
                });
            }
            records.push(record);
            cur = next;
        }
        let mut shape = vec![batch];
        shape.extend_from_slice(self.output_shape());
        let out = Tensor::new(shape, cur)?;
        let tape = Tape {
            stamp: self.stamp,
            batch,
            r: phi.map_or(0, |p| p.r()),
            phi_trainable: phi.map_or(0..0, |p| p.trainable()),
            records,
        };
        Ok((out, tape))
    }

    fn layer_forward(
        &self,
        layer: &Layer,
        phi: Option<&PhiPrefix<'_, T>>,
        batch: usize,
        x: Vec<T>,
    ) -> Result<(Vec<T>, Record<T>)> {
        let p = |idx: Option<usize>| self.params.entries[idx.expect("layer has parameter")].value.data();
        Ok(match &layer.spec.kind {
            LayerKind::Dense { in_dim, out_dim } => {
                let y = ops::dense_forward(&x, p(layer.weight), p(layer.bias), batch, *in_dim, *out_dim);
                (y, Record::Dense { input: x })
            }
            LayerKind::Conv2d {
                in_ch,
                out_ch,
                kernel,
            } => {
                let s = layer.in_shape.as_ref().expect("conv has static shape");
                let geom = ops::ConvGeom {
                    in_ch: *in_ch,
                    out_ch: *out_ch,
                    kernel: *kernel,
                    h: s[1],
                    w: s[2],
                };
                let (y, cols) = ops::conv_forward(&x, p(layer.weight), p(layer.bias), batch, &geom);
                (y, Record::Conv { cols })
            }
            LayerKind::Relu => {
                let mask: Vec<bool> = x.iter().map(|&v| v > T::zero()).collect();
                let y = x
                    .iter()
                    .zip(&mask)
                    .map(|(&v, &m)| if m { v } else { T::zero() })
                    .collect();
                (y, Record::Relu { mask })
            }
            LayerKind::MaxPool2 => {
                let s = layer.in_shape.as_ref().expect("pool has static shape");
                let (y, argmax) = ops::maxpool_forward(&x, batch, s[0], s[1], s[2]);
                (y, Record::MaxPool { argmax })
            }
            LayerKind::Reshape(_) => (x, Record::Shape),
            LayerKind::Measure => {
                let phi = phi.expect("checked in forward");
                let (r, n) = (phi.r(), phi.n());
                let mut y = vec![T::zero(); batch * r];
                T::gemm(batch, n, r, T::one(), &x, false, phi.data(), true, T::zero(), &mut y);
                (y, Record::Measure { input: x })
            }
            LayerKind::PinvDecode => {
                let phi = phi.expect("checked in forward");
                let (r, n) = (phi.r(), phi.n());
                let pinv = linalg::pinv_rows(&phi.to_matrix())?;
                let psi: Vec<T> = pinv.psi().data().iter().map(|&v| T::from_f64(v)).collect();
                let mut out = vec![T::zero(); batch * n];
                T::gemm(batch, r, n, T::one(), &x, false, &psi, true, T::zero(), &mut out);
                (
                    out,
                    Record::Decode {
                        y: x,
                        psi,
                        pinv: Box::new(pinv),
                    },
                )
            }
        })
    }

    /// Reverse pass. `output_grad` is `∂loss/∂output` with the forward output's shape.
    pub fn backward(&self, tape: &Tape<T>, output_grad: &Tensor<T>) -> Result<Gradients<T>> {
        if tape.stamp != self.stamp || tape.records.len() != self.layers.len() {
            return Err(Error::Contract(
                "tape was recorded against different parameters".into(),
            ));
        }
        let batch = tape.batch;
        let out_per: usize = self.output_shape().iter().product();
        if output_grad.len() != batch * out_per {
            return Err(Error::dim(format!(
                "output gradient {:?} does not match batch {batch} of {:?}",
                output_grad.shape(),
                self.output_shape()
            )));
        }

        let mut param_grads: Vec<Option<Tensor<T>>> = vec![None; self.params.len()];
        let mut phi_grad: Option<Vec<T>> = None;
        let want_phi = !tape.phi_trainable.is_empty();
        let mut g = output_grad.data().to_vec();

        for (layer, record) in self.layers.iter().zip(&tape.records).rev() {
            let w_idx = layer.weight;
            let w_frozen = w_idx.is_none_or(|i| self.params.entries[i].frozen);
            let b_frozen = layer.bias.is_none_or(|i| self.params.entries[i].frozen);
            g = match (&layer.spec.kind, record) {
                (LayerKind::Dense { in_dim, out_dim }, Record::Dense { input }) => {
                    let w = self.params.entries[w_idx.unwrap()].value.data();
                    let (gx, gw, gb) = ops::dense_backward(
                        &g, input, w, batch, *in_dim, *out_dim, !w_frozen, !b_frozen,
                    );
                    self.store(&mut param_grads, layer.weight, gw);
                    self.store(&mut param_grads, layer.bias, gb);
                    gx
                }
                (
                    LayerKind::Conv2d {
                        in_ch,
                        out_ch,
                        kernel,
                    },
                    Record::Conv { cols },
                ) => {
                    let s = layer.in_shape.as_ref().unwrap();
                    let geom = ops::ConvGeom {
                        in_ch: *in_ch,
                        out_ch: *out_ch,
                        kernel: *kernel,
                        h: s[1],
                        w: s[2],
                    };
                    let w = self.params.entries[w_idx.unwrap()].value.data();
                    let (gx, gw, gb) =
                        ops::conv_backward(&g, cols, w, batch, &geom, !w_frozen, !b_frozen);
                    self.store(&mut param_grads, layer.weight, gw);
                    self.store(&mut param_grads, layer.bias, gb);
                    gx
                }
                (LayerKind::Relu, Record::Relu { mask }) => g
                    .iter()
                    .zip(mask)
                    .map(|(&v, &m)| if m { v } else { T::zero() })
                    .collect(),
                (LayerKind::MaxPool2, Record::MaxPool { argmax }) => {
                    let s = layer.in_shape.as_ref().unwrap();
                    ops::maxpool_backward(&g, argmax, batch * s.iter().product::<usize>())
                }
                (LayerKind::Reshape(_), Record::Shape) => g,
                (LayerKind::PinvDecode, Record::Decode { y, psi, pinv }) => {
                    let (r, n) = (pinv.r(), pinv.n());
                    let mut gy = vec![T::zero(); batch * r];
                    T::gemm(batch, n, r, T::one(), &g, false, psi, false, T::zero(), &mut gy);
                    if want_phi {
                        // ∂L/∂Ψ = gᵀ y, n × r
                        let mut gpsi = vec![T::zero(); n * r];
                        T::gemm(n, batch, r, T::one(), &g, true, y, false, T::zero(), &mut gpsi);
                        let gpsi = Matrix::from_real(n, r, &gpsi)?;
                        let gphi = linalg::pinv_grad(pinv, &gpsi)?;
                        let acc = phi_grad.get_or_insert_with(|| vec![T::zero(); r * n]);
                        for (a, &v) in acc.iter_mut().zip(gphi.data()) {
                            *a += T::from_f64(v);
                        }
                    }
                    gy
                }
                (LayerKind::Measure, Record::Measure { input }) => {
                    if want_phi {
                        let r = tape.r;
                        let n = input.len() / batch;
                        let acc = phi_grad.get_or_insert_with(|| vec![T::zero(); r * n]);
                        T::gemm(r, batch, n, T::one(), &g, true, input, false, T::one(), acc);
                    }
                    // the raw signal has no upstream parameters
                    Vec::new()
                }
                _ => {
                    return Err(Error::Contract("tape does not match the layer chain".into()));
                }
            };
        }

        let phi = match phi_grad {
            Some(mut data) => {
                let n = data.len() / tape.r;
                for (row, chunk) in data.chunks_mut(n).enumerate() {
                    if !tape.phi_trainable.contains(&row) {
                        chunk.fill(T::zero());
                    }
                }
                Some(Tensor::new(vec![tape.r, n], data)?)
            }
            None => None,
        };
        Ok(Gradients {
            params: param_grads,
            phi,
        })
    }

    fn store(&self, grads: &mut [Option<Tensor<T>>], idx: Option<usize>, g: Option<Vec<T>>) {
        if let (Some(i), Some(g)) = (idx, g) {
            let shape = self.params.entries[i].value.shape().to_vec();
            grads[i] = Some(Tensor::new(shape, g).expect("gradient matches parameter"));
        }
    }
}

fn gaussian<T: Real, R: Rng + ?Sized>(shape: Vec<usize>, std: f64, rng: &mut R) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("positive std");
    let len = shape.iter().product();
    let data = (0..len).map(|_| T::from_f64(dist.sample(rng))).collect();
    Tensor::new(shape, data).expect("length matches shape")
}
