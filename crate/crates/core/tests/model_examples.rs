use numbase::model::{
    forward_logits, load_checkpoint, loss, save_checkpoint, train_encoded, Batch, ModelConfig, TrainConfig,
    TransformerParams,
};
use numbase::numeral::{encode_sample, Number, NumeralSystem, Operation, Vocabulary};

// A batch of identical copies has the same loss and gradient as one copy, so
// one sample for `steps` epochs replays a default run over 2^13 repeats.
#[test]
fn single_sample_memorized_within_500_steps_at_defaults() {
    let v = Vocabulary::new(NumeralSystem::Base10);
    let s = encode_sample(&Number::from(4821u32), &Number::from(977u32), Operation::Add, &v);
    let mut params = TransformerParams::<f32>::init(ModelConfig::for_vocab(&v), 0).unwrap();
    let defaults = TrainConfig::default();
    let steps = defaults.epochs * (1usize << 13).div_ceil(defaults.batch_size);
    let cfg = TrainConfig { epochs: steps, ..defaults };
    let out = train_encoded(&mut params, std::slice::from_ref(&s), v.pad(), &cfg, |_, _| {}).unwrap();
    assert_eq!(out.steps, steps);
    let first_below = out.loss_curve.losses.iter().position(|&l| l < 1e-3);
    assert!(first_below.is_some_and(|i| i < 500), "first below 1e-3 at {first_below:?}");
    assert!(loss(&params, &Batch::from_samples(&[&s], v.pad())).unwrap() < 1e-3);
}

#[test]
fn forward_pass_survives_checkpoint_round_trip() {
    let v = Vocabulary::new(NumeralSystem::Base1000);
    let cfg = ModelConfig { n_layers: 2, d_model: 32, d_ff: 64, n_heads: 4, context_length: 20, ..ModelConfig::for_vocab(&v) };
    let params = TransformerParams::<f32>::init(cfg, 9).unwrap();
    let tokens = encode_sample(&Number::from(123_456u32), &Number::from(789u32), Operation::Mul, &v).full();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&params, Some(NumeralSystem::Base1000), &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.header.system, Some(NumeralSystem::Base1000));
    let before = forward_logits(&params, &tokens).unwrap();
    let after = forward_logits(&loaded.params, &tokens).unwrap();
    assert_eq!(before.len(), tokens.len() * v.size());
    assert!(before.iter().zip(&after).all(|(a, b)| a.to_bits() == b.to_bits()));
}
