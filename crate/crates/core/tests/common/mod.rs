#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use xattn::model::{init_params, loss_and_grads, batch_loss_value, LossRow, ModelConfig, ModelParams};

pub fn tiny_config(seed: u64) -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 8,
        d_head: 4,
        d_ff: 16,
        max_seq_len: 16,
        vocab_size: 12,
        seed,
    }
}

/// Random rows with a random supervised suffix.
pub fn random_rows(rng: &mut ChaCha8Rng, vocab: usize, n: usize, len: usize) -> Vec<(Vec<usize>, Vec<bool>)> {
    (0..n)
        .map(|_| {
            let tokens: Vec<usize> = (0..len).map(|_| rng.gen_range(0..vocab)).collect();
            let cut = rng.gen_range(1..len);
            let mask = (0..len).map(|i| i >= cut).collect();
            (tokens, mask)
        })
        .collect()
}

fn loss_rows(rows: &[(Vec<usize>, Vec<bool>)]) -> Vec<LossRow<'_>> {
    rows.iter().map(|(t, m)| LossRow { tokens: t, loss_mask: m }).collect()
}

fn shifted(params: &ModelParams<f64>, dir: &[Vec<f64>], h: f64) -> ModelParams<f64> {
    let mut p = params.clone();
    for ((_, t), d) in p.named_mut().into_iter().zip(dir) {
        for (x, dx) in t.data_mut().iter_mut().zip(d) {
            *x += h * dx;
        }
    }
    p
}

/// Worst relative error between the autodiff directional derivative and a
/// central finite difference, over `directions` random Gaussian directions.
pub fn gradient_check(seed: u64, directions: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = tiny_config(seed);
    let mut params: ModelParams<f64> = init_params(&cfg).unwrap().cast();
    // Larger weights than the default init so attention is far from uniform.
    for (_, t) in params.named_mut() {
        for x in t.data_mut() {
            *x += 0.3 * Distribution::<f64>::sample(&StandardNormal, &mut rng);
        }
    }
    let rows = random_rows(&mut rng, cfg.vocab_size, 3, 9);
    let lr = loss_rows(&rows);
    let (_, grads) = loss_and_grads(&params, &lr).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..directions {
        let dir: Vec<Vec<f64>> = params
            .named()
            .iter()
            .map(|(_, t)| (0..t.numel()).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let analytic: f64 = grads
            .iter()
            .zip(&dir)
            .map(|(g, d)| g.data().iter().zip(d).map(|(a, b)| a * b).sum::<f64>())
            .sum();
        let up = batch_loss_value(&shifted(&params, &dir, h), &lr).unwrap();
        let down = batch_loss_value(&shifted(&params, &dir, -h), &lr).unwrap();
        let numeric = (up - down) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    worst
}

use xattn::eval::{evaluate_all, reports_from, RunMeta, DEFAULT_MAX_NEW};
use xattn::pipeline::{arm_sequences, generate, pretrain, train_arm, world_for, ExperimentConfig, ModelShape};
use xattn::train::{train, Checkpoint, TrainConfig, TrainState};
use xattn::worldgen::{gen_instruction_corpus, single_sequence, write_instances, write_items, CorpusSpec, MixMode};

/// A configuration small enough to run end to end in a few seconds.
pub fn small_experiment() -> ExperimentConfig {
    let mut c = ExperimentConfig::quick();
    c.corpus.n_per_domain = 200;
    c.model = ModelShape {
        n_layers: 1,
        n_heads: 2,
        d_model: 16,
        d_head: 8,
        d_ff: 32,
        max_seq_len: 64,
    };
    c.train.steps = 15;
    c.train.batch_size = 8;
    c.train.warmup_steps = 0;
    c.eval.n = 10;
    c
}

/// Bytes of every artifact a gen, train and eval pass writes.
pub struct Artifacts {
    pub corpora: Vec<u8>,
    pub eval_set: Vec<u8>,
    pub checkpoint: Vec<u8>,
    pub report: Vec<u8>,
}

pub fn run_pipeline(cfg: &ExperimentConfig, seed: u64, mode: MixMode) -> Artifacts {
    let g = generate(cfg, seed).unwrap();
    let mut corpora = Vec::new();
    write_items(&mut corpora, &g.corpus_a, g.world.vocab()).unwrap();
    write_items(&mut corpora, &g.corpus_b, g.world.vocab()).unwrap();
    let mut eval_set = Vec::new();
    write_instances(&mut eval_set, &g.eval, g.world.vocab()).unwrap();
    let seqs = arm_sequences(cfg, &g.corpus_a, &g.corpus_b, mode, seed).unwrap();
    let (pa, pb) = g.pretrain_corpora(cfg);
    let base = pretrain(cfg, &g.world, pa, pb, seed, &mut |_, _| Ok(()))
        .unwrap()
        .map(|(s, _)| s.params);
    let (state, _) = train_arm(cfg, &g.world, &seqs, mode, seed, base.as_ref(), &mut |_, _| Ok(())).unwrap();
    let checkpoint = Checkpoint::from_state(&state, true, serde_json::json!({"seed": seed}))
        .to_bytes()
        .unwrap();
    let meta = RunMeta::new(cfg, &[seed]).unwrap();
    let outcomes: Vec<_> = evaluate_all(&state.params, &g.eval, None, true, DEFAULT_MAX_NEW)
        .unwrap()
        .into_iter()
        .map(|(o, _)| o)
        .collect();
    let report = serde_json::to_vec(&reports_from(&outcomes, &meta).unwrap()).unwrap();
    Artifacts {
        corpora,
        eval_set,
        checkpoint,
        report,
    }
}

/// Final training loss after fitting one instruction item for `steps` steps.
pub fn overfit_one_item(steps: u64) -> f64 {
    let cfg = small_experiment();
    let world = world_for(&cfg, 0).unwrap();
    let items = gen_instruction_corpus(
        &world,
        &CorpusSpec {
            n: 1,
            ..CorpusSpec::default()
        },
    )
    .unwrap();
    let data = vec![single_sequence(&items[0])];
    let model = ModelConfig {
        n_layers: 1,
        n_heads: 2,
        d_model: 32,
        d_head: 16,
        d_ff: 64,
        max_seq_len: 32,
        vocab_size: world.vocab().len(),
        seed: 1,
    };
    let mut state = TrainState::fresh(init_params(&model).unwrap());
    let tc = TrainConfig {
        lr: 1e-2,
        batch_size: 1,
        steps,
        ..TrainConfig::default()
    };
    let curve = train(&mut state, &tc, &data, &[], &mut |_, _| Ok(())).unwrap();
    curve.last().unwrap().train_loss
}
