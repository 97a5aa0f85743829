mod common;

use xattn::model::init_params;
use xattn::pipeline::{arm_sequences, arm_train_config, generate};
use xattn::train::{train, Checkpoint, TrainConfig, TrainState};
use xattn::worldgen::MixMode;
use xattn::Error;

#[test]
fn memorizes_a_single_item() {
    let loss = common::overfit_one_item(200);
    assert!(loss < 0.01, "final loss {loss}");
}

#[test]
fn pipeline_is_byte_deterministic() {
    let cfg = common::small_experiment();
    for mode in [MixMode::Dataset, MixMode::Instance] {
        let a = common::run_pipeline(&cfg, 4, mode);
        let b = common::run_pipeline(&cfg, 4, mode);
        assert!(a.corpora == b.corpora && a.eval_set == b.eval_set);
        assert!(a.checkpoint == b.checkpoint, "{mode:?} checkpoints differ");
        assert!(a.report == b.report, "{mode:?} reports differ");
    }
    let other = common::run_pipeline(&cfg, 5, MixMode::Dataset);
    assert!(other.corpora != common::run_pipeline(&cfg, 4, MixMode::Dataset).corpora);
}

#[test]
fn resuming_from_a_checkpoint_matches_an_uninterrupted_run() {
    let cfg = common::small_experiment();
    let g = generate(&cfg, 2).unwrap();
    let seqs = arm_sequences(&cfg, &g.corpus_a, &g.corpus_b, MixMode::Dataset, 2).unwrap();
    let model = cfg.model.config(g.world.vocab().len(), 2);
    let tc = arm_train_config(&cfg, MixMode::Dataset, 2);

    let mut full = TrainState::fresh(init_params(&model).unwrap());
    train(&mut full, &tc, &seqs, &[], &mut |_, _| Ok(())).unwrap();

    let mut half = TrainState::fresh(init_params(&model).unwrap());
    let first = TrainConfig { steps: tc.steps / 2, ..tc.clone() };
    train(&mut half, &first, &seqs, &[], &mut |_, _| Ok(())).unwrap();
    let bytes = Checkpoint::from_state(&half, true, serde_json::Value::Null).to_bytes().unwrap();
    let mut resumed = Checkpoint::from_bytes(&bytes).unwrap().into_state();
    train(&mut resumed, &tc, &seqs, &[], &mut |_, _| Ok(())).unwrap();

    assert_eq!(resumed, full);
}

#[test]
fn divergence_aborts_with_the_step() {
    let cfg = common::small_experiment();
    let g = generate(&cfg, 0).unwrap();
    let seqs = arm_sequences(&cfg, &g.corpus_a, &g.corpus_b, MixMode::AOnly, 0).unwrap();
    let mut params = init_params(&cfg.model.config(g.world.vocab().len(), 0)).unwrap();
    params.unembed.data_mut()[0] = f32::NAN;
    let mut state = TrainState::fresh(params);
    let err = train(&mut state, &arm_train_config(&cfg, MixMode::AOnly, 0), &seqs, &[], &mut |_, _| Ok(())).unwrap_err();
    assert!(matches!(err, Error::NanLoss { step: 1 }), "{err}");
    assert_eq!(state.step, 0);
}
