//! End-to-end experiment configuration: world, corpora, model, training and
//! evaluation settings, plus per-replicate seed derivation.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::SweepOptions;
use crate::model::{init_params, Domain, ModelConfig, ModelParams};
use crate::train::{train, LossPoint, TrainConfig, TrainState};
use crate::worldgen::{
    build_mixture, gen_eval_set, gen_instruction_corpus, Condition, ConflictInstance, CorpusSpec, EntityPool,
    EvalSetSpec, FactWorld, InstanceOrder, InstructionItem, MixMode, PromptMode, TrainSequence, WorldConfig,
};

/// Architecture without the vocabulary size, which the world determines.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelShape {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_head: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        ModelShape {
            n_layers: 4,
            n_heads: 4,
            d_model: 128,
            d_head: 32,
            d_ff: 512,
            max_seq_len: 256,
        }
    }
}

impl ModelShape {
    pub fn config(&self, vocab_size: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_model: self.d_model,
            d_head: self.d_head,
            d_ff: self.d_ff,
            max_seq_len: self.max_seq_len,
            vocab_size,
            seed,
        }
    }
}

/// Instruction-corpus settings shared by both domains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// Items per domain.
    pub n_per_domain: usize,
    pub conflict_fraction: f64,
    pub consistent_share: f64,
    pub prompt_modes: Vec<PromptMode>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        let d = CorpusSpec::default();
        CorpusConfig {
            n_per_domain: d.n,
            conflict_fraction: d.conflict_fraction,
            consistent_share: d.consistent_share,
            prompt_modes: d.prompt_modes,
        }
    }
}

/// Optional first training stage shared by both arms of a replicate:
/// dataset-level training on separately drawn corpora, after which each
/// arm continues from the same weights with fresh optimizer state.
/// `steps = 0` disables it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub steps: u64,
    pub source: PretrainSource,
    /// Items per domain of a fresh first-stage corpus.
    pub n_per_domain: usize,
    pub conflict_fraction: f64,
}

/// Corpora the first stage trains on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PretrainSource {
    /// The arms' own corpora.
    ArmCorpora,
    /// Separately drawn corpora sized by `n_per_domain`.
    Fresh,
}

impl PretrainConfig {
    pub fn draws_fresh_corpora(&self) -> bool {
        self.steps > 0 && self.source == PretrainSource::Fresh
    }
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 0,
            source: PretrainSource::Fresh,
            n_per_domain: CorpusSpec::default().n,
            conflict_fraction: 0.0,
        }
    }
}

/// Evaluation-set settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Items per `(condition, prompt mode)` set.
    pub n: usize,
    pub conflict_ratio: f64,
    pub conditions: Vec<Condition>,
    pub prompt_modes: Vec<PromptMode>,
    pub pool: EntityPool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n: 200,
            conflict_ratio: 0.5,
            conditions: Condition::ALL.to_vec(),
            prompt_modes: vec![PromptMode::Standard],
            pool: EntityPool::Heldout,
        }
    }
}

/// Everything needed to reproduce one experiment. The `seed` fields inside
/// `world` and `train` are replaced by values derived from each replicate
/// seed in `seeds`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    pub corpus: CorpusConfig,
    pub pretrain: PretrainConfig,
    pub model: ModelShape,
    /// `batch_size` is the dataset-level batch; see [`rows_per_step`].
    pub train: TrainConfig,
    pub mix: MixMode,
    pub instance_order: InstanceOrder,
    pub eval: EvalConfig,
    pub sweep: SweepOptions,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            world: WorldConfig::default(),
            corpus: CorpusConfig::default(),
            pretrain: PretrainConfig::default(),
            model: ModelShape::default(),
            train: TrainConfig::default(),
            mix: MixMode::Dataset,
            instance_order: InstanceOrder::Random,
            eval: EvalConfig::default(),
            sweep: SweepOptions::default(),
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

impl ExperimentConfig {
    /// A reduced setting that trains in about a minute per arm on one core:
    /// two layers of width 64, a higher learning rate and more conflict
    /// supervision.
    pub fn quick() -> Self {
        ExperimentConfig {
            corpus: CorpusConfig {
                n_per_domain: 4000,
                conflict_fraction: 0.25,
                ..CorpusConfig::default()
            },
            model: ModelShape {
                n_layers: 2,
                n_heads: 4,
                d_model: 64,
                d_head: 16,
                d_ff: 256,
                max_seq_len: 128,
            },
            train: TrainConfig {
                lr: 1e-3,
                steps: 2000,
                warmup_steps: 100,
                eval_every: 0,
                ..TrainConfig::default()
            },
            ..ExperimentConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.train.batch_size % 2 == 1 {
            return Err(Error::Config(
                "train.batch_size must be even so the instance-level arm can use half of it".into(),
            ));
        }
        if self.eval.conditions.is_empty() || self.eval.prompt_modes.is_empty() {
            return Err(Error::Config("eval.conditions and eval.prompt_modes must be non-empty".into()));
        }
        Ok(())
    }
}

/// Sequences per step for a mixing arm. An instance-level sequence carries
/// two items, so it uses half the rows to match the supervised-token
/// budget of the other arms.
pub fn rows_per_step(batch_size: usize, mode: MixMode) -> usize {
    match mode {
        MixMode::Instance => (batch_size / 2).max(1),
        _ => batch_size,
    }
}

/// A seed for one named purpose within replicate `seed`.
pub fn derive_seed(seed: u64, purpose: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(purpose.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// World, corpora and evaluation sets for one replicate.
#[derive(Clone, Debug)]
pub struct Generated {
    pub world: FactWorld,
    pub corpus_a: Vec<InstructionItem>,
    pub corpus_b: Vec<InstructionItem>,
    /// Fresh first-stage corpora; empty unless the first stage draws its own.
    pub pretrain_a: Vec<InstructionItem>,
    pub pretrain_b: Vec<InstructionItem>,
    /// Every `(condition, prompt mode)` set, concatenated.
    pub eval: Vec<ConflictInstance>,
}

impl Generated {
    pub fn eval_for(&self, cond: Condition) -> Vec<ConflictInstance> {
        self.eval.iter().filter(|i| i.condition == cond).cloned().collect()
    }

    /// The `(A, B)` corpora of the first stage under `cfg`.
    pub fn pretrain_corpora(&self, cfg: &ExperimentConfig) -> (&[InstructionItem], &[InstructionItem]) {
        match cfg.pretrain.source {
            PretrainSource::ArmCorpora => (&self.corpus_a, &self.corpus_b),
            PretrainSource::Fresh => (&self.pretrain_a, &self.pretrain_b),
        }
    }
}

pub fn world_for(cfg: &ExperimentConfig, seed: u64) -> Result<FactWorld> {
    FactWorld::build(&WorldConfig {
        seed: derive_seed(seed, "world"),
        ..cfg.world.clone()
    })
}

pub fn generate(cfg: &ExperimentConfig, seed: u64) -> Result<Generated> {
    let world = world_for(cfg, seed)?;
    let corpus = |domain: Domain, n: usize, conflict_fraction: f64, purpose: &str| {
        gen_instruction_corpus(
            &world,
            &CorpusSpec {
                domain,
                n,
                conflict_fraction,
                consistent_share: cfg.corpus.consistent_share,
                prompt_modes: cfg.corpus.prompt_modes.clone(),
                seed: derive_seed(seed, purpose),
                pool: EntityPool::Train,
            },
        )
    };
    let (n, cf) = (cfg.corpus.n_per_domain, cfg.corpus.conflict_fraction);
    let corpus_a = corpus(Domain::A, n, cf, "corpus-a")?;
    let corpus_b = corpus(Domain::B, n, cf, "corpus-b")?;
    let (pretrain_a, pretrain_b) = if cfg.pretrain.draws_fresh_corpora() {
        let (n, cf) = (cfg.pretrain.n_per_domain, cfg.pretrain.conflict_fraction);
        (corpus(Domain::A, n, cf, "pretrain-a")?, corpus(Domain::B, n, cf, "pretrain-b")?)
    } else {
        (Vec::new(), Vec::new())
    };
    let mut eval = Vec::new();
    for &condition in &cfg.eval.conditions {
        for &prompt_mode in &cfg.eval.prompt_modes {
            eval.extend(gen_eval_set(
                &world,
                &EvalSetSpec {
                    condition,
                    n: cfg.eval.n,
                    conflict_ratio: cfg.eval.conflict_ratio,
                    prompt_mode,
                    seed: derive_seed(seed, &format!("eval-{}-{}", condition.label(), prompt_mode.label())),
                    pool: cfg.eval.pool,
                },
            )?);
        }
    }
    Ok(Generated {
        world,
        corpus_a,
        corpus_b,
        pretrain_a,
        pretrain_b,
        eval,
    })
}

/// Training sequences for one arm of replicate `seed`.
pub fn arm_sequences(
    cfg: &ExperimentConfig,
    a: &[InstructionItem],
    b: &[InstructionItem],
    mode: MixMode,
    seed: u64,
) -> Result<Vec<TrainSequence>> {
    build_mixture(mode, a, b, derive_seed(seed, "mix"), cfg.instance_order)
}

/// The training settings actually used for an arm.
pub fn arm_train_config(cfg: &ExperimentConfig, mode: MixMode, seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: rows_per_step(cfg.train.batch_size, mode),
        seed: derive_seed(seed, "batches"),
        ..cfg.train.clone()
    }
}

/// Runs the shared first stage on `a` and `b`, or returns `None` when it
/// is disabled.
pub fn pretrain(
    cfg: &ExperimentConfig,
    world: &FactWorld,
    a: &[InstructionItem],
    b: &[InstructionItem],
    seed: u64,
    on_step: &mut dyn FnMut(&LossPoint, &TrainState) -> Result<()>,
) -> Result<Option<(TrainState, Vec<LossPoint>)>> {
    cfg.validate()?;
    if cfg.pretrain.steps == 0 {
        return Ok(None);
    }
    let seqs = build_mixture(MixMode::Dataset, a, b, derive_seed(seed, "pretrain-mix"), cfg.instance_order)?;
    let model = cfg.model.config(world.vocab().len(), derive_seed(seed, "init"));
    let mut state = TrainState::fresh(init_params(&model)?);
    let tc = TrainConfig {
        steps: cfg.pretrain.steps,
        seed: derive_seed(seed, "pretrain-batches"),
        ..cfg.train.clone()
    };
    let curve = train(&mut state, &tc, &seqs, &[], on_step)?;
    Ok(Some((state, curve)))
}

/// Trains one arm, from `base` when given and from a fresh initialization
/// otherwise.
pub fn train_arm(
    cfg: &ExperimentConfig,
    world: &FactWorld,
    sequences: &[TrainSequence],
    mode: MixMode,
    seed: u64,
    base: Option<&ModelParams>,
    on_step: &mut dyn FnMut(&LossPoint, &TrainState) -> Result<()>,
) -> Result<(TrainState, Vec<LossPoint>)> {
    cfg.validate()?;
    let model = cfg.model.config(world.vocab().len(), derive_seed(seed, "init"));
    let params = match base {
        Some(p) if p.config == model => p.clone(),
        Some(p) => {
            return Err(Error::Config(format!(
                "base model config mismatch: found {:?}, expected {:?}",
                p.config, model
            )))
        }
        None => init_params(&model)?,
    };
    let mut state = TrainState::fresh(params);
    let curve = train(&mut state, &arm_train_config(cfg, mode, seed), sequences, &[], on_step)?;
    Ok((state, curve))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_by_purpose_and_replicate() {
        assert_ne!(derive_seed(0, "world"), derive_seed(0, "init"));
        assert_ne!(derive_seed(0, "world"), derive_seed(1, "world"));
        assert_eq!(derive_seed(3, "mix"), derive_seed(3, "mix"));
    }

    #[test]
    fn instance_arm_halves_rows() {
        assert_eq!(rows_per_step(32, MixMode::Instance), 16);
        assert_eq!(rows_per_step(32, MixMode::Dataset), 32);
        assert_eq!(rows_per_step(32, MixMode::AOnly), 32);
    }

    #[test]
    fn config_rejects_unknown_keys_and_odd_batches() {
        let err = serde_json::from_str::<ExperimentConfig>(r#"{"train": {"lr": 0.1, "bogus": 1}}"#).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        let mut c = ExperimentConfig::quick();
        c.train.batch_size = 7;
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::default().validate().is_ok());
    }

    #[test]
    fn generation_is_deterministic() {
        let mut c = ExperimentConfig::quick();
        c.corpus.n_per_domain = 50;
        c.eval.n = 10;
        let g1 = generate(&c, 4).unwrap();
        let g2 = generate(&c, 4).unwrap();
        assert_eq!(g1.corpus_a, g2.corpus_a);
        assert_eq!(g1.eval, g2.eval);
        assert_eq!(g1.eval.len(), 30);
        assert_eq!(g1.eval_for(Condition::Cross).len(), 10);
        assert_ne!(generate(&c, 5).unwrap().eval, g1.eval);
    }

    fn tiny() -> ExperimentConfig {
        let mut c = ExperimentConfig::quick();
        c.corpus.n_per_domain = 40;
        c.model = ModelShape {
            n_layers: 1,
            n_heads: 2,
            d_model: 8,
            d_head: 4,
            d_ff: 16,
            max_seq_len: 64,
        };
        c.train.steps = 2;
        c.train.batch_size = 4;
        c.train.warmup_steps = 0;
        c.eval.n = 4;
        c
    }

    #[test]
    fn first_stage_is_off_by_default_and_seeds_the_arms() {
        let mut c = tiny();
        let g = generate(&c, 1).unwrap();
        assert!(g.pretrain_a.is_empty());
        let (a, b) = g.pretrain_corpora(&c);
        assert!(pretrain(&c, &g.world, a, b, 1, &mut |_, _| Ok(())).unwrap().is_none());

        c.pretrain.steps = 3;
        c.pretrain.n_per_domain = 30;
        let g = generate(&c, 1).unwrap();
        assert_eq!(g.pretrain_a.len(), 30);
        let (a, b) = g.pretrain_corpora(&c);
        let (base, curve) = pretrain(&c, &g.world, a, b, 1, &mut |_, _| Ok(())).unwrap().unwrap();
        assert_eq!(curve.len(), 3);
        let seqs = arm_sequences(&c, &g.corpus_a, &g.corpus_b, MixMode::Instance, 1).unwrap();
        let (from_base, _) =
            train_arm(&c, &g.world, &seqs, MixMode::Instance, 1, Some(&base.params), &mut |_, _| Ok(())).unwrap();
        let (fresh, _) = train_arm(&c, &g.world, &seqs, MixMode::Instance, 1, None, &mut |_, _| Ok(())).unwrap();
        assert_ne!(from_base.params, fresh.params);
        assert_eq!(from_base.step, 2);

        c.pretrain.source = PretrainSource::ArmCorpora;
        let g2 = generate(&c, 1).unwrap();
        assert!(g2.pretrain_a.is_empty());
        assert_eq!(g2.pretrain_corpora(&c).0, &g2.corpus_a[..]);

        let mut wide = c.clone();
        wide.model.d_ff = 32;
        let err = train_arm(&wide, &g.world, &seqs, MixMode::Instance, 1, Some(&base.params), &mut |_, _| Ok(()));
        assert!(matches!(err, Err(Error::Config(_))));
    }
}
