mod common;

#[test]
fn autodiff_matches_finite_differences() {
    for seed in 0..3 {
        let err = common::gradient_check(seed, 20);
        assert!(err < 1e-4, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn gradients_are_independent_of_chunking() {
    use xattn::model::init_params;
    use xattn::train::batch_grads;
    use xattn::worldgen::TrainSequence;
    use rand::SeedableRng;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let cfg = common::tiny_config(9);
    let params = init_params(&cfg).unwrap();
    let seqs: Vec<TrainSequence> = common::random_rows(&mut rng, cfg.vocab_size, 7, 10)
        .into_iter()
        .map(|(tokens, loss_mask)| TrainSequence { tokens, loss_mask })
        .collect();
    let batch: Vec<&TrainSequence> = seqs.iter().collect();
    let (l1, g1) = batch_grads(&params, &batch, 1).unwrap();
    let (l7, g7) = batch_grads(&params, &batch, 7).unwrap();
    assert!((l1 - l7).abs() < 1e-5);
    for (a, b) in g1.iter().zip(&g7) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-5 * (1.0 + y.abs()), "{x} vs {y}");
        }
    }
}
