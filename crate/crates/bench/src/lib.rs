//! Fixtures shared by the benchmarks.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use racs_core::models::{AutoencoderSpec, ClassifierSpec, ReconNetSpec};
use racs_core::nn::{adam_step, AdamConfig, AdamState, Objective};
use racs_core::training::TrainConfig;
use racs_core::{Matrix, MeasurementMatrix, ModelSpec, Network, Result, Tensor};

/// The first `r` rows of an `r × n` Gaussian matrix.
pub fn gaussian_rows(r: usize, n: usize, seed: u64) -> Matrix {
    MeasurementMatrix::<f64>::gaussian_init(n, r, 1, seed)
        .and_then(|phi| phi.prefix_matrix(r))
        .expect("gaussian fixture")
}

/// The three heads at a block side of 16 with `m_max = 64`.
pub fn heads() -> Vec<(&'static str, ModelSpec)> {
    vec![
        ("reconnet", ModelSpec::ReconNet(ReconNetSpec::new(16))),
        ("autoencoder", ModelSpec::Autoencoder(AutoencoderSpec { block: 16, hidden: 64 })),
        ("classifier", ModelSpec::Classifier(ClassifierSpec::new(16, 4))),
    ]
}

/// One Stage-1 style update: forward at `r`, loss, backward, Adam on `Θ` and `Φ`.
pub struct StepFixture {
    net: Network<f32>,
    phi: MeasurementMatrix<f32>,
    x: Tensor<f32>,
    labels: Vec<usize>,
    classify: bool,
    adam: AdamState<f32>,
    adam_phi: AdamState<f32>,
    r: usize,
}

impl StepFixture {
    pub fn new(spec: &ModelSpec, r: usize, batch: usize) -> Self {
        let cfg = TrainConfig::desk(10, 64);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = spec.build(&mut rng).expect("network");
        let phi = MeasurementMatrix::gaussian_init(spec.n(), cfg.m_max, cfg.k_min, 3).expect("phi");
        let n = spec.n();
        let data = (0..batch * n).map(|i| ((i * 37 % 101) as f32) / 101.0).collect();
        Self {
            net,
            phi,
            x: Tensor::new(vec![batch, n], data).expect("batch"),
            labels: (0..batch).map(|i| i % 4).collect(),
            classify: matches!(spec, ModelSpec::Classifier(_)),
            adam: AdamState::new(AdamConfig::with_lr(cfg.lr)),
            adam_phi: AdamState::new(AdamConfig::with_lr(cfg.lr)),
            r,
        }
    }

    pub fn step(&mut self) -> Result<f32> {
        let (loss, grads) = {
            let prefix = self.phi.prefix(self.r)?;
            let (out, tape) = self.net.forward(Some(&prefix), &self.x)?;
            let objective = if self.classify {
                Objective::CrossEntropy(&self.labels)
            } else {
                Objective::Euclidean(&self.x)
            };
            let (loss, grad) = objective.evaluate(&out)?;
            (loss, self.net.backward(&tape, &grad)?)
        };
        adam_step(self.net.params_mut(), &grads.params, &mut self.adam)?;
        if let Some(g) = grads.phi {
            let n = self.phi.n();
            self.adam_phi.begin_step();
            let rows = &mut self.phi.rows_mut()[..self.r * n];
            self.adam_phi.update_slot(0, rows, g.data())?;
        }
        Ok(loss)
    }
}
