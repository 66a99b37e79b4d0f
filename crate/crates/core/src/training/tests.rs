use super::*;
use crate::data::{synth_dataset, SynthKind};
use crate::models::{AutoencoderSpec, ClassifierSpec};

fn small_spec() -> ModelSpec {
    ModelSpec::Autoencoder(AutoencoderSpec { block: 4, hidden: 6 })
}

fn small_cfg() -> TrainConfig {
    TrainConfig {
        max_iters_1: 60,
        max_iters_2: 30,
        iters_per_row: 5,
        batch_size: 8,
        lr: 1e-3,
        val_interval: 20,
        seed: 3,
        ..TrainConfig::desk(2, 6)
    }
}

fn small_data() -> BlockDataset {
    synth_dataset(SynthKind::DctLowpass, 80, 4, 11).unwrap()
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn zero_iterations_return_initialization() {
    let cfg = TrainConfig {
        max_iters_1: 0,
        ..small_cfg()
    };
    let (out, report) = run_vanilla(&small_data(), &small_spec(), 6, &cfg).unwrap();
    let phi0 = MeasurementMatrix::<f32>::gaussian_init(16, 6, 1, cfg.seed).unwrap();
    let net0: Network<f32> = small_spec().build(&mut stream_rng(cfg.seed, 1)).unwrap();
    assert_eq!(bits(out.phi.rows()), bits(phi0.rows()));
    assert!(out.net.params().values_bitwise_eq(net0.params()));
    assert_eq!(report.total_steps(), 0);
}

#[test]
fn stage1_is_vanilla_at_m_max() {
    let data = small_data();
    let cfg = small_cfg();
    let (vanilla, _) = run_vanilla(&data, &small_spec(), cfg.m_max, &cfg).unwrap();
    let mut ctx = TrainContext::new(&data, &small_spec(), &cfg).unwrap();
    let s1 = stage1_train(&mut ctx).unwrap();
    assert_eq!(bits(vanilla.phi.rows()), bits(s1.phi.rows()));
    assert!(vanilla.net.params().values_bitwise_eq(s1.net.params()));
    assert_eq!(s1.phi.k_min(), cfg.k_min);
    assert!(s1.net.params().iter().all(|p| !p.frozen));
}

#[test]
fn runs_are_deterministic() {
    let data = small_data();
    let a = run_rate_adaptive(&data, &small_spec(), &small_cfg()).unwrap();
    let b = run_rate_adaptive(&data, &small_spec(), &small_cfg()).unwrap();
    assert_eq!(bits(a.phi.rows()), bits(b.phi.rows()));
    assert!(a.net.params().values_bitwise_eq(b.net.params()));
    assert_eq!(a.report, b.report);
}

#[test]
fn iteration_accounting() {
    let cfg = small_cfg();
    let run = run_rate_adaptive(&small_data(), &small_spec(), &cfg).unwrap();
    assert_eq!(run.report.steps, [60, 30, 5 * 4]);
    assert_eq!(run.report.total_steps(), cfg.total_iterations());
    assert_eq!(run.report.skipped, 0);
}

#[test]
fn paper_scale_budget_is_accepted() {
    let cfg = TrainConfig::paper(44, 272);
    cfg.validate().unwrap();
    assert_eq!(cfg.total_iterations(), 300_000 + 200_000 + 500 * (272 - 44));
    assert_eq!(TrainConfig::from_meta(&cfg.to_meta()).unwrap(), cfg);
}

#[test]
fn frozen_stages_keep_theta_and_prefix() {
    struct Rows {
        checked: usize,
        before: Vec<u32>,
    }
    impl TrainObserver for Rows {
        fn row_start(&mut self, r: usize, phi: &MeasurementMatrix<f32>) {
            self.before = bits(&phi.rows()[..(r - 1) * phi.n()]);
        }
        fn row_end(&mut self, r: usize, phi: &MeasurementMatrix<f32>) {
            assert_eq!(self.before, bits(&phi.rows()[..(r - 1) * phi.n()]), "row {r}");
            self.checked += 1;
        }
    }
    let data = small_data();
    let cfg = small_cfg();
    let mut obs = Rows {
        checked: 0,
        before: Vec::new(),
    };
    let run = run_rate_adaptive_with(&data, &small_spec(), &cfg, &mut obs).unwrap();
    assert_eq!(obs.checked, cfg.m_max - cfg.k_min);

    let mut ctx = TrainContext::new(&data, &small_spec(), &cfg).unwrap();
    let s1 = stage1_train(&mut ctx).unwrap();
    assert!(run.net.params().values_bitwise_eq(s1.net.params()));
    assert!(run.net.params().iter().all(|p| p.frozen));
    let k = cfg.k_min * 16;
    assert_eq!(bits(&run.phi.rows()[..k]), bits(run.stage2_phi.rows()));
    assert_ne!(bits(run.stage2_phi.rows()), bits(&s1.phi.rows()[..k]));
    assert_eq!(run.phi.m_max(), cfg.m_max);
    assert_eq!(run.phi.k_min(), cfg.k_min);
}

#[test]
fn zero_iteration_stages_copy_rows() {
    let cfg = TrainConfig {
        max_iters_2: 0,
        iters_per_row: 0,
        ..small_cfg()
    };
    let run = run_rate_adaptive(&small_data(), &small_spec(), &cfg).unwrap();
    assert_eq!(bits(run.phi.rows()), bits(run.stage1_phi.rows()));
    assert_eq!(bits(run.stage2_phi.rows()), bits(&run.stage1_phi.rows()[..32]));
}

#[test]
fn stage2_does_not_worsen_validation_loss() {
    let data = small_data();
    let cfg = small_cfg();
    let mut ctx = TrainContext::new(&data, &small_spec(), &cfg).unwrap();
    let mut s1 = stage1_train(&mut ctx).unwrap();
    let before = ctx
        .eval_loss(&s1.net, &s1.phi, cfg.k_min, ctx.validation_set())
        .unwrap();
    let phi_k = stage2_train(&mut ctx, &s1.phi, &mut s1.net).unwrap();
    let after = ctx
        .eval_loss(&s1.net, &phi_k, cfg.k_min, ctx.validation_set())
        .unwrap();
    assert!(after <= before, "{after} > {before}");
}

#[test]
fn training_reduces_loss() {
    let cfg = TrainConfig {
        max_iters_1: 300,
        val_interval: 300,
        ..small_cfg()
    };
    let mut ctx = TrainContext::new(&small_data(), &small_spec(), &cfg).unwrap();
    train_vanilla(&mut ctx, 6).unwrap();
    let log = &ctx.report().log;
    let first = log.first().unwrap().val_loss.unwrap();
    let last = log.last().unwrap().val_loss.unwrap();
    assert!(last < first, "{last} >= {first}");
}

#[test]
fn classifier_needs_labels() {
    let spec = ModelSpec::Classifier(ClassifierSpec::new(16, 4));
    let data = synth_dataset(SynthKind::DctLowpass, 10, 16, 0).unwrap();
    assert!(matches!(
        TrainContext::new(&data, &spec, &TrainConfig::desk(2, 8)),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn divergence_aborts_with_last_good_state() {
    let cfg = TrainConfig {
        lr: 1e36,
        ..small_cfg()
    };
    match run_rate_adaptive(&small_data(), &small_spec(), &cfg) {
        Err(Error::Diverged {
            stage, last_good, ..
        }) => {
            assert_eq!(stage, "stage1");
            let ck = last_good.expect("checkpoint attached");
            assert_eq!(ck.stage, Stage::One);
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let run = run_rate_adaptive(&small_data(), &small_spec(), &small_cfg()).unwrap();
    let ck = run.checkpoint();
    let bytes = ck.to_bytes();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.to_bytes(), bytes);
    assert!(back.network().unwrap().params().values_bitwise_eq(run.net.params()));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.racs");
    ck.save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap(), ck);

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format(_))));
    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x40;
    assert!(matches!(Checkpoint::from_bytes(&flipped), Err(Error::Format(_))));
    assert!(matches!(
        Checkpoint::from_bytes(&bytes[..bytes.len() - 9]),
        Err(Error::Format(_))
    ));
    let mut version = bytes;
    version[4] = 9;
    assert!(matches!(Checkpoint::from_bytes(&version), Err(Error::Format(_))));
}

#[test]
fn stage2_checkpoint_resumes_identically() {
    struct Grab(Option<Checkpoint>);
    impl TrainObserver for Grab {
        fn stage_done(&mut self, ck: &Checkpoint) {
            if ck.stage == Stage::Two {
                self.0 = Some(ck.clone());
            }
        }
    }
    let data = small_data();
    let mut grab = Grab(None);
    let full = run_rate_adaptive_with(&data, &small_spec(), &small_cfg(), &mut grab).unwrap();
    let ck = grab.0.unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("stage2.racs");
    ck.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let resumed = resume_stage3(&data, &loaded, &mut ()).unwrap();
    assert_eq!(bits(resumed.phi.rows()), bits(full.phi.rows()));
    assert!(resumed.net.params().values_bitwise_eq(full.net.params()));

    let final_ck = full.checkpoint();
    assert!(resume_stage3(&data, &final_ck, &mut ()).is_err());
}

#[test]
fn log_csv_has_header_and_rows() {
    let run = run_rate_adaptive(&small_data(), &small_spec(), &small_cfg()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.csv");
    run.report.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("stage,r,step,train_loss,val_loss"));
    assert_eq!(lines.count(), run.report.log.len());
}

#[test]
fn fixed_gaussian_trains_only_theta() {
    let cfg = small_cfg();
    let (out, report) = run_fixed_gaussian(&small_data(), &small_spec(), 5, &cfg).unwrap();
    let phi0 = MeasurementMatrix::<f32>::gaussian_init(16, 5, 1, cfg.seed).unwrap();
    let net0: Network<f32> = small_spec().build(&mut stream_rng(cfg.seed, 1)).unwrap();
    assert_eq!(bits(out.phi.rows()), bits(phi0.rows()));
    assert!(!out.net.params().values_bitwise_eq(net0.params()));
    assert_eq!(report.steps, [cfg.max_iters_1, 0, 0]);
}
