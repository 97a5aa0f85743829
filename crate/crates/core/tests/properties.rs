use proptest::prelude::*;
use xattn::eval::{judge, MatchedRule};
use xattn::model::{Control, Domain};
use xattn::pipeline::{world_for, ExperimentConfig};
use xattn::worldgen::{
    gen_instruction_corpus, mix_dataset_level, mix_instance_level, CorpusSpec, InstanceOrder, TrainSequence,
};

fn supervised(seqs: &[TrainSequence]) -> usize {
    seqs.iter().map(TrainSequence::supervised_tokens).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn judge_flags_conflict_token_or_both_answers(
        response in proptest::collection::vec(0usize..40, 0..8),
        a in 11usize..40,
        b in 11usize..40,
    ) {
        let j = judge(&response, a, b);
        let has_token = response.contains(&Control::Conflict.id());
        let both = a != b && response.contains(&a) && response.contains(&b);
        prop_assert_eq!(j.detected, has_token || both);
        prop_assert_eq!(j.detected, j.rule != MatchedRule::None);
        if has_token {
            prop_assert_eq!(j.rule, MatchedRule::ConflictToken);
        }
    }

    #[test]
    fn mixers_preserve_supervision(n_a in 1usize..30, n_b in 1usize..30, seed in 0u64..1000, random in any::<bool>()) {
        let cfg = ExperimentConfig::quick();
        let world = world_for(&cfg, seed % 3).unwrap();
        let corpus = |domain, n, s| gen_instruction_corpus(&world, &CorpusSpec { domain, n, seed: s, ..CorpusSpec::default() }).unwrap();
        let a = corpus(Domain::A, n_a, seed);
        let b = corpus(Domain::B, n_b, seed + 1);
        let order = if random { InstanceOrder::Random } else { InstanceOrder::AFirst };

        let ds = mix_dataset_level(&a, &b, seed).unwrap();
        prop_assert_eq!(ds.len(), n_a + n_b);
        let item_tokens: usize = a.iter().chain(&b).map(|i| i.response.len() + 1).sum();
        prop_assert_eq!(supervised(&ds), item_tokens);

        let inst = mix_instance_level(&a, &b, seed, order).unwrap();
        prop_assert_eq!(inst.len(), n_a.min(n_b));
        let reply_both = Control::ReplyBoth.id();
        for s in &inst {
            prop_assert_eq!(s.tokens.iter().filter(|&&t| t == reply_both).count(), 1);
            prop_assert_eq!(s.tokens.len(), s.loss_mask.len());
            let first = s.loss_mask.iter().position(|&m| m).unwrap();
            prop_assert!(s.loss_mask[first..].iter().all(|&m| m));
            prop_assert_eq!(s.tokens[first - 1], Control::Answer.id());
        }
    }
}
