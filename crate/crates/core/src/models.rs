//! The three network heads and their use at a given prefix length.
//!
//! Every head starts with the measurement layer and the tied pseudoinverse
//! decoder; what follows differs:
//! - ReconNet: reshape to `b × b`, then refinement units of three same-padded
//!   convolutions (11×11×64, 1×1×32, 7×7×1 by default), ReLU after each except
//!   the very last.
//! - Autoencoder: `FC n→m`, ReLU, `FC m→n` (the last layer is linear).
//! - Classifier: a reduced LeNet, two conv/ReLU/max-pool stages then two FC
//!   layers producing logits.

use std::fmt::Write as _;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{LayerKind, LayerSpec, Network};
use crate::sensing::MeasurementMatrix;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReconNetSpec {
    pub block: usize,
    /// Number of refinement units. Zero leaves the pseudo-image as the output.
    pub units: usize,
    /// Output channels of the first two convolutions in a unit.
    pub channels: [usize; 2],
    /// Kernel sides of the three convolutions in a unit.
    pub kernels: [usize; 3],
}

impl ReconNetSpec {
    pub fn new(block: usize) -> Self {
        Self {
            block,
            units: 2,
            channels: [64, 32],
            kernels: [11, 1, 7],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AutoencoderSpec {
    pub block: usize,
    /// Width of the hidden FC layer; the builders set it to `m_max`.
    pub hidden: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassifierSpec {
    pub block: usize,
    pub num_classes: usize,
    pub channels: [usize; 2],
    pub kernel: usize,
    pub hidden: usize,
}

impl ClassifierSpec {
    pub fn new(block: usize, num_classes: usize) -> Self {
        Self {
            block,
            num_classes,
            channels: [8, 16],
            kernel: 5,
            hidden: 64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    Reconstruction,
    Classification,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ModelSpec {
    ReconNet(ReconNetSpec),
    Autoencoder(AutoencoderSpec),
    Classifier(ClassifierSpec),
}

/// Multiply-accumulate counts for one block at one prefix length.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cost {
    /// Measurement plus pseudoinverse decode, `2·r·n`.
    pub sensing: u64,
    /// Everything after the decoder; independent of `r`.
    pub network: u64,
}

impl ModelSpec {
    pub fn block(&self) -> usize {
        match self {
            ModelSpec::ReconNet(s) => s.block,
            ModelSpec::Autoencoder(s) => s.block,
            ModelSpec::Classifier(s) => s.block,
        }
    }

    /// Signal length `b²`.
    pub fn n(&self) -> usize {
        self.block() * self.block()
    }

    pub fn head(&self) -> Head {
        match self {
            ModelSpec::Classifier(_) => Head::Classification,
            _ => Head::Reconstruction,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::ReconNet(_) => "reconnet",
            ModelSpec::Autoencoder(_) => "autoencoder",
            ModelSpec::Classifier(_) => "classifier",
        }
    }

    pub fn layer_specs(&self) -> Result<Vec<LayerSpec>> {
        let b = self.block();
        if b == 0 {
            return Err(Error::invalid("block side must be positive"));
        }
        let n = b * b;
        let mut layers = vec![
            LayerSpec::new(LayerKind::Measure),
            LayerSpec::new(LayerKind::PinvDecode),
        ];
        match self {
            ModelSpec::ReconNet(s) => {
                layers.push(LayerSpec::new(LayerKind::Reshape(vec![1, b, b])));
                let [c1, c2] = s.channels;
                let [k1, k2, k3] = s.kernels;
                for unit in 0..s.units {
                    layers.push(conv(1, c1, k1));
                    layers.push(LayerSpec::new(LayerKind::Relu));
                    layers.push(conv(c1, c2, k2));
                    layers.push(LayerSpec::new(LayerKind::Relu));
                    layers.push(conv(c2, 1, k3));
                    if unit + 1 < s.units {
                        layers.push(LayerSpec::new(LayerKind::Relu));
                    }
                }
            }
            ModelSpec::Autoencoder(s) => {
                if s.hidden == 0 {
                    return Err(Error::invalid("autoencoder hidden width must be positive"));
                }
                layers.push(LayerSpec::new(LayerKind::Dense {
                    in_dim: n,
                    out_dim: s.hidden,
                }));
                layers.push(LayerSpec::new(LayerKind::Relu));
                layers.push(LayerSpec::new(LayerKind::Dense {
                    in_dim: s.hidden,
                    out_dim: n,
                }));
            }
            ModelSpec::Classifier(s) => {
                if b < 4 || s.num_classes < 2 {
                    return Err(Error::invalid(
                        "classifier needs block side >= 4 and at least 2 classes",
                    ));
                }
                let [c1, c2] = s.channels;
                let pooled = (b / 2) / 2;
                layers.push(LayerSpec::new(LayerKind::Reshape(vec![1, b, b])));
                layers.push(conv(1, c1, s.kernel));
                layers.push(LayerSpec::new(LayerKind::Relu));
                layers.push(LayerSpec::new(LayerKind::MaxPool2));
                layers.push(conv(c1, c2, s.kernel));
                layers.push(LayerSpec::new(LayerKind::Relu));
                layers.push(LayerSpec::new(LayerKind::MaxPool2));
                layers.push(LayerSpec::new(LayerKind::Dense {
                    in_dim: c2 * pooled * pooled,
                    out_dim: s.hidden,
                }));
                layers.push(LayerSpec::new(LayerKind::Relu));
                layers.push(LayerSpec::new(LayerKind::Dense {
                    in_dim: s.hidden,
                    out_dim: s.num_classes,
                }));
            }
        }
        Ok(layers)
    }

    pub fn build<T: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Network<T>> {
        Network::new(self.layer_specs()?, vec![self.n()], rng)
    }

    /// Per-block multiply-accumulate counts at prefix `r`.
    pub fn cost(&self, r: usize) -> Result<Cost> {
        let mut shape = vec![self.n()];
        let mut network = 0u64;
        for spec in self.layer_specs()? {
            match spec.kind {
                LayerKind::Dense { in_dim, out_dim } => {
                    network += (in_dim * out_dim) as u64;
                    shape = vec![out_dim];
                }
                LayerKind::Conv2d {
                    in_ch,
                    out_ch,
                    kernel,
                } => {
                    let (h, w) = (shape[1], shape[2]);
                    network += (out_ch * in_ch * kernel * kernel * h * w) as u64;
                    shape = vec![out_ch, h, w];
                }
                LayerKind::MaxPool2 => shape = vec![shape[0], shape[1] / 2, shape[2] / 2],
                LayerKind::Reshape(t) => shape = t,
                LayerKind::Relu | LayerKind::Measure | LayerKind::PinvDecode => {}
            }
        }
        Ok(Cost {
            sensing: 2 * (r * self.n()) as u64,
            network,
        })
    }

    /// Flat `key = value` description, parsed back by [`ModelSpec::from_meta`].
    pub fn to_meta(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "head = {}", self.name());
        let _ = writeln!(s, "block = {}", self.block());
        match self {
            ModelSpec::ReconNet(r) => {
                let _ = writeln!(s, "units = {}", r.units);
                let _ = writeln!(s, "channels = {},{}", r.channels[0], r.channels[1]);
                let _ = writeln!(
                    s,
                    "kernels = {},{},{}",
                    r.kernels[0], r.kernels[1], r.kernels[2]
                );
            }
            ModelSpec::Autoencoder(a) => {
                let _ = writeln!(s, "hidden = {}", a.hidden);
            }
            ModelSpec::Classifier(c) => {
                let _ = writeln!(s, "num_classes = {}", c.num_classes);
                let _ = writeln!(s, "channels = {},{}", c.channels[0], c.channels[1]);
                let _ = writeln!(s, "kernel = {}", c.kernel);
                let _ = writeln!(s, "hidden = {}", c.hidden);
            }
        }
        s
    }

    pub fn from_meta(meta: &str) -> Result<Self> {
        let get = |key: &str| -> Result<&str> {
            meta.lines()
                .filter_map(|l| l.split_once('='))
                .find(|(k, _)| k.trim() == key)
                .map(|(_, v)| v.trim())
                .ok_or_else(|| Error::Format(format!("model description lacks `{key}`")))
        };
        let num = |key: &str| -> Result<usize> {
            get(key)?
                .parse()
                .map_err(|_| Error::Format(format!("`{key}` is not an integer")))
        };
        let list = |key: &str| -> Result<Vec<usize>> {
            get(key)?
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse()
                        .map_err(|_| Error::Format(format!("bad entry in `{key}`")))
                })
                .collect()
        };
        let block = num("block")?;
        match get("head")? {
            "reconnet" => {
                let ch = list("channels")?;
                let ks = list("kernels")?;
                if ch.len() != 2 || ks.len() != 3 {
                    return Err(Error::Format("reconnet channels/kernels have wrong arity".into()));
                }
                Ok(ModelSpec::ReconNet(ReconNetSpec {
                    block,
                    units: num("units")?,
                    channels: [ch[0], ch[1]],
                    kernels: [ks[0], ks[1], ks[2]],
                }))
            }
            "autoencoder" => Ok(ModelSpec::Autoencoder(AutoencoderSpec {
                block,
                hidden: num("hidden")?,
            })),
            "classifier" => {
                let ch = list("channels")?;
                if ch.len() != 2 {
                    return Err(Error::Format("classifier channels have wrong arity".into()));
                }
                Ok(ModelSpec::Classifier(ClassifierSpec {
                    block,
                    num_classes: num("num_classes")?,
                    channels: [ch[0], ch[1]],
                    kernel: num("kernel")?,
                    hidden: num("hidden")?,
                }))
            }
            other => Err(Error::Format(format!("unknown head `{other}`"))),
        }
    }
}

fn conv(in_ch: usize, out_ch: usize, kernel: usize) -> LayerSpec {
    LayerSpec::new(LayerKind::Conv2d {
        in_ch,
        out_ch,
        kernel,
    })
}

fn check_block<T: Real>(b: usize, phi: &MeasurementMatrix<T>) -> Result<()> {
    if b * b != phi.n() {
        return Err(Error::dim(format!("block side {b} does not match n={}", phi.n())));
    }
    Ok(())
}

pub fn build_reconnet<T: Real, R: Rng + ?Sized>(
    b: usize,
    phi: &MeasurementMatrix<T>,
    rng: &mut R,
) -> Result<(ModelSpec, Network<T>)> {
    check_block(b, phi)?;
    let spec = ModelSpec::ReconNet(ReconNetSpec::new(b));
    let net = spec.build(rng)?;
    Ok((spec, net))
}

/// The hidden layer is `m_max` wide.
pub fn build_autoencoder<T: Real, R: Rng + ?Sized>(
    b: usize,
    phi: &MeasurementMatrix<T>,
    rng: &mut R,
) -> Result<(ModelSpec, Network<T>)> {
    check_block(b, phi)?;
    let spec = ModelSpec::Autoencoder(AutoencoderSpec {
        block: b,
        hidden: phi.m_max(),
    });
    let net = spec.build(rng)?;
    Ok((spec, net))
}

pub fn build_classifier<T: Real, R: Rng + ?Sized>(
    b: usize,
    phi: &MeasurementMatrix<T>,
    num_classes: usize,
    rng: &mut R,
) -> Result<(ModelSpec, Network<T>)> {
    check_block(b, phi)?;
    let spec = ModelSpec::Classifier(ClassifierSpec::new(b, num_classes));
    let net = spec.build(rng)?;
    Ok((spec, net))
}

/// Runs a batch of flattened blocks `[batch, n]` at prefix `r`.
pub fn run_batch<T: Real>(
    net: &Network<T>,
    phi: &MeasurementMatrix<T>,
    blocks: &Tensor<T>,
    r: usize,
) -> Result<Tensor<T>> {
    let prefix = phi.prefix_frozen(r)?;
    Ok(net.forward(Some(&prefix), blocks)?.0)
}

/// `x̂ = model(Ψ_r Φ_r x)` for one block, returned as `b × b`.
pub fn reconstruct_block<T: Real>(
    net: &Network<T>,
    phi: &MeasurementMatrix<T>,
    x: &[T],
    r: usize,
) -> Result<Tensor<T>> {
    let n = phi.n();
    if x.len() != n {
        return Err(Error::dim(format!("block of length {} for n={n}", x.len())));
    }
    let out = run_batch(net, phi, &Tensor::new(vec![1, n], x.to_vec())?, r)?;
    if out.len() != n {
        return Err(Error::dim("network does not produce a block-sized output"));
    }
    let side = (n as f64).sqrt().round() as usize;
    out.reshape(vec![side, n / side])
}

/// Class logits for one block at prefix `r`.
pub fn classify_logits<T: Real>(
    net: &Network<T>,
    phi: &MeasurementMatrix<T>,
    x: &[T],
    r: usize,
) -> Result<Vec<T>> {
    let n = phi.n();
    if x.len() != n {
        return Err(Error::dim(format!("block of length {} for n={n}", x.len())));
    }
    Ok(run_batch(net, phi, &Tensor::new(vec![1, n], x.to_vec())?, r)?.into_data())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn autoencoder_parameter_count() {
        let phi = MeasurementMatrix::<f32>::gaussian_init(1089, 272, 44, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, net) = build_autoencoder(33, &phi, &mut rng).unwrap();
        // encoder 272×1089 + 272, decoder 1089×272 + 1089
        assert_eq!(net.param_count(), 272 * 1089 + 272 + 1089 * 272 + 1089);
        assert_eq!(net.param_count(), 593_777);
    }

    #[test]
    fn reconnet_preserves_block_shape() {
        let phi = MeasurementMatrix::<f32>::gaussian_init(1089, 272, 44, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (_, net) = build_reconnet(33, &phi, &mut rng).unwrap();
        assert_eq!(net.output_shape(), &[1, 33, 33]);
        let x: Vec<f32> = (0..1089).map(|i| (i % 33) as f32 / 33.0).collect();
        for r in [44, 272] {
            let out = reconstruct_block(&net, &phi, &x, r).unwrap();
            assert_eq!(out.shape(), &[33, 33]);
        }
    }

    #[test]
    fn classifier_logit_count_and_determinism() {
        let phi = MeasurementMatrix::<f32>::gaussian_init(784, 196, 20, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (_, net) = build_classifier(28, &phi, 10, &mut rng).unwrap();
        let x: Vec<f32> = (0..784).map(|i| ((i * 13) % 255) as f32 / 255.0).collect();
        let a = classify_logits(&net, &phi, &x, 196).unwrap();
        let b = classify_logits(&net, &phi, &x, 196).unwrap();
        assert_eq!(a.len(), 10);
        assert_eq!(a, b);
        // MR 0.25 of a 28×28 digit is 196 rows
        assert_eq!((0.25 * 784.0) as usize, 196);
    }

    #[test]
    fn zero_unit_reconnet_is_pseudo_image() {
        let phi = MeasurementMatrix::<f64>::gaussian_init(64, 24, 4, 5).unwrap();
        let spec = ModelSpec::ReconNet(ReconNetSpec {
            units: 0,
            ..ReconNetSpec::new(8)
        });
        let net: Network<f64> = spec.build(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let x: Vec<f64> = (0..64).map(|i| (i as f64 * 0.2).sin().abs()).collect();
        for r in [4, 13, 24] {
            let xh = reconstruct_block(&net, &phi, &x, r).unwrap();
            let pseudo = phi.decode_init(&phi.measure(&x, r).unwrap()).unwrap();
            for (a, b) in xh.data().iter().zip(pseudo.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_block_stays_finite() {
        let phi = MeasurementMatrix::<f32>::gaussian_init(256, 64, 10, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = ModelSpec::ReconNet(ReconNetSpec::new(16));
        let net: Network<f32> = spec.build(&mut rng).unwrap();
        let out = reconstruct_block(&net, &phi, &[0.7; 256], 10).unwrap();
        assert!(out.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn block_mismatch_is_rejected() {
        let phi = MeasurementMatrix::<f32>::gaussian_init(100, 20, 5, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(matches!(
            build_autoencoder(11, &phi, &mut rng),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn network_cost_is_rate_independent() {
        let spec = ModelSpec::ReconNet(ReconNetSpec::new(33));
        let lo = spec.cost(44).unwrap();
        let hi = spec.cost(272).unwrap();
        assert_eq!(lo.network, hi.network);
        assert!(hi.sensing > lo.sensing);
        assert_eq!(lo.sensing, 2 * 44 * 1089);
    }

    #[test]
    fn meta_round_trip() {
        for spec in [
            ModelSpec::ReconNet(ReconNetSpec::new(33)),
            ModelSpec::Autoencoder(AutoencoderSpec {
                block: 16,
                hidden: 64,
            }),
            ModelSpec::Classifier(ClassifierSpec::new(16, 4)),
        ] {
            assert_eq!(ModelSpec::from_meta(&spec.to_meta()).unwrap(), spec);
        }
    }
}
