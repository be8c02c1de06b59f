use super::*;
use crate::corpus::{generate_synthetic_corpus, ingest_text, Corpus, SyntheticConfig, Vocabulary};
use crate::encoder::{Coupling, EncoderConfig, EncoderParams};
use crate::sampler::{generate_shards, ShardData, ShardMode};

fn fixture_corpus(seed: u64) -> (Corpus, Vocabulary) {
    let texts = generate_synthetic_corpus(&SyntheticConfig {
        seed,
        num_docs: 6,
        paragraphs_per_doc: 2,
        sentences_min: 9,
        sentences_max: 14,
    })
    .unwrap();
    let joined = texts.join("\n===\n");
    let vocab = Vocabulary::build([joined.as_str()], 8192).unwrap();
    (ingest_text(&joined, &vocab, 0), vocab)
}

fn instances_for(window: &WindowConfig, corpus: &Corpus, vocab_size: usize) -> Vec<TrainingInstance> {
    let data = generate_shards(corpus, window, ShardMode::Conpono, 13, vocab_size).unwrap();
    let ShardData::Conpono(instances) = data else {
        panic!()
    };
    assert!(!instances.is_empty());
    instances
}

fn toy_encoder(vocab_size: usize, coupling: Coupling, k_max: usize, max_seq: usize) -> EncoderConfig {
    EncoderConfig {
        layers: 1,
        hidden: 8,
        heads: 2,
        intermediate: 16,
        vocab_size,
        max_positions: max_seq,
        coupling,
        k_max,
        ..EncoderConfig::default()
    }
}

fn small_window(num_hard: usize, num_random: usize) -> WindowConfig {
    WindowConfig {
        k_max: 2,
        ks_per_paragraph: 2,
        num_hard,
        num_random,
        max_seq: 64,
        ..WindowConfig::default()
    }
}

#[test]
fn zero_head_loss_is_ln_c_for_all_couplings_and_candidate_counts() {
    let (corpus, vocab) = fixture_corpus(1);
    for (num_hard, num_random) in [(1usize, 1usize), (3, 4), (3, 28)] {
        let c = 1 + num_hard + num_random;
        let window = WindowConfig {
            num_hard,
            num_random,
            max_seq: 64,
            ..WindowConfig::default()
        };
        let instances = instances_for(&window, &corpus, vocab.size());
        let inst = &instances[0];
        for coupling in [Coupling::Combined, Coupling::Isolated, Coupling::Uni] {
            let cfg = toy_encoder(vocab.size(), coupling, window.k_max, window.max_seq);
            let params = EncoderParams::<f32>::init(&cfg, 7).unwrap();
            let mut tape = Tape::new();
            let vars = params.mount(&mut tape, false);
            let (_, breakdown) = total_loss(
                &mut tape,
                &vars,
                &window,
                &[BatchItem::Conpono(inst)],
                0.0,
                None,
            )
            .unwrap();
            let expected = (c as f64).ln();
            assert!(
                (breakdown.total - expected).abs() < 1e-5,
                "{coupling}: C={c} loss {} vs ln C {expected}",
                breakdown.total
            );
        }
    }
}

#[test]
fn softmax_loss_matches_closed_form_on_crafted_logits() {
    // loss = -log(e^2 / (e^2 + 2)) for logits [2, 0, 0], true index 0
    let mut tape = Tape::<f64>::new();
    let logits = tape.constant(Tensor::new(vec![1, 3], vec![2.0, 0.0, 0.0]).unwrap());
    let ce = tape.cross_entropy(logits, &[0]).unwrap();
    let got = tape.value(ce).data()[0];
    let expected = -((2.0f64).exp() / ((2.0f64).exp() + 2.0)).ln();
    assert!((got - expected).abs() < 1e-12);
    assert!((got - 0.2395).abs() < 1e-4);
}

#[test]
fn dominant_true_logit_drives_loss_to_zero() {
    let mut tape = Tape::<f64>::new();
    let logits = tape.constant(Tensor::new(vec![1, 3], vec![20.0, 0.0, 0.0]).unwrap());
    let ce = tape.cross_entropy(logits, &[0]).unwrap();
    assert!(tape.value(ce).data()[0] < 1e-8);
}

#[test]
fn untrained_mlm_loss_is_near_ln_vocab() {
    let (corpus, vocab) = fixture_corpus(3);
    let window = small_window(1, 1);
    let instances = instances_for(&window, &corpus, vocab.size());
    let cfg = toy_encoder(vocab.size(), Coupling::Combined, window.k_max, window.max_seq);
    let params = EncoderParams::<f32>::init(&cfg, 11).unwrap();
    let mut tape = Tape::new();
    let vars = params.mount(&mut tape, false);
    let batch: Vec<BatchItem> = instances.iter().take(8).map(BatchItem::Conpono).collect();
    let (_, breakdown) = total_loss(&mut tape, &vars, &window, &batch, 1.0, None).unwrap();
    let ln_v = (vocab.size() as f64).ln();
    assert!(
        (breakdown.mlm - ln_v).abs() / ln_v < 0.05,
        "mlm {} vs ln V {ln_v}",
        breakdown.mlm
    );
}

#[test]
fn empty_mask_plan_contributes_zero() {
    let (corpus, vocab) = fixture_corpus(4);
    let window = WindowConfig {
        mask_rate: 0.0,
        ..small_window(1, 1)
    };
    let instances = instances_for(&window, &corpus, vocab.size());
    let cfg = toy_encoder(vocab.size(), Coupling::Combined, window.k_max, window.max_seq);
    let params = EncoderParams::<f32>::init(&cfg, 11).unwrap();
    let mut tape = Tape::new();
    let vars = params.mount(&mut tape, false);
    let (_, breakdown) = total_loss(
        &mut tape,
        &vars,
        &window,
        &[BatchItem::Conpono(&instances[0])],
        1.0,
        None,
    )
    .unwrap();
    assert_eq!(breakdown.mlm, 0.0);

    // mlm_loss with no positions is exactly zero as well
    let mut tape = Tape::<f32>::new();
    let vars = params.mount(&mut tape, false);
    let hidden = tape.constant(Tensor::zeros(vec![4, 8]));
    let z = mlm_loss(&mut tape, &vars, hidden, &[], &[]).unwrap();
    assert_eq!(tape.value(z).data()[0], 0.0);
}

#[test]
fn one_hot_mlm_logits_give_vanishing_loss() {
    // A single masked position whose prediction is one-hot on the truth:
    // a +50 output bias on the original dwarfs every other logit.
    let cfg = toy_encoder(128, Coupling::Combined, 2, 64);
    let mut params = EncoderParams::<f32>::init(&cfg, 11).unwrap();
    let schema = cfg.parameter_schema();
    let bias_idx = schema
        .iter()
        .position(|(n, _)| n == "mlm_output_bias")
        .unwrap();
    let original = 42usize;
    params.tensors_mut()[bias_idx].data_mut()[original] = 50.0;
    let mut tape = Tape::new();
    let vars = params.mount(&mut tape, false);
    let hidden = tape.constant(Tensor::full(vec![6, cfg.hidden], 0.3f32));
    let loss = mlm_loss(&mut tape, &vars, hidden, &[2], &[original]).unwrap();
    let v = tape.value(loss).data()[0];
    assert!(v < 1e-6, "mlm {v}");
}

#[test]
fn untrained_baseline_loss_is_ln_two_and_labels_land_correctly() {
    let (corpus, vocab) = fixture_corpus(6);
    let window = small_window(1, 1);
    for mode in [ShardMode::Nsp, ShardMode::Bso] {
        let data = generate_shards(&corpus, &window, mode, 5, vocab.size()).unwrap();
        let ShardData::Pairs(pairs) = data else { panic!() };
        assert!(!pairs.is_empty());
        let cfg = toy_encoder(vocab.size(), Coupling::Combined, window.k_max, window.max_seq);
        let params = EncoderParams::<f32>::init(&cfg, 2).unwrap();
        let mut tape = Tape::new();
        let vars = params.mount(&mut tape, false);
        let bmode = if mode == ShardMode::Nsp {
            BaselineMode::Nsp
        } else {
            BaselineMode::Bso
        };
        let batch: Vec<BatchItem> = pairs.iter().take(4).map(|p| BatchItem::Pair(p, bmode)).collect();
        let (_, breakdown) = total_loss(&mut tape, &vars, &window, &batch, 0.0, None).unwrap();
        let baseline = breakdown.baseline.unwrap();
        assert!(
            (baseline - (2.0f64).ln()).abs() < 1e-5,
            "{mode}: {baseline}"
        );
        assert!(breakdown.conpono.is_none());
    }
}

#[test]
fn lambda_zero_reproduces_contrastive_only_loss() {
    let (corpus, vocab) = fixture_corpus(7);
    let window = small_window(1, 1);
    let instances = instances_for(&window, &corpus, vocab.size());
    let cfg = toy_encoder(vocab.size(), Coupling::Combined, window.k_max, window.max_seq);
    let params = EncoderParams::<f32>::init(&cfg, 19).unwrap();
    let run = |lambda: f64| {
        let mut tape = Tape::new();
        let vars = params.mount(&mut tape, false);
        total_loss(
            &mut tape,
            &vars,
            &window,
            &[BatchItem::Conpono(&instances[0])],
            lambda,
            None,
        )
        .unwrap()
        .1
    };
    let with = run(1.0);
    let without = run(0.0);
    assert_eq!(without.total, without.conpono.unwrap());
    assert_eq!(with.conpono, without.conpono);
    assert!((with.total - (with.conpono.unwrap() + with.mlm)).abs() < 1e-9);
}

#[test]
fn batch_of_identical_instances_equals_single_instance_loss() {
    let (corpus, vocab) = fixture_corpus(8);
    let window = small_window(1, 1);
    let instances = instances_for(&window, &corpus, vocab.size());
    let cfg = toy_encoder(vocab.size(), Coupling::Combined, window.k_max, window.max_seq);
    let params = EncoderParams::<f32>::init(&cfg, 23).unwrap();
    let mut tape = Tape::new();
    let vars = params.mount(&mut tape, false);
    let single = total_loss(
        &mut tape,
        &vars,
        &window,
        &[BatchItem::Conpono(&instances[0])],
        1.0,
        None,
    )
    .unwrap()
    .1;
    let mut tape = Tape::new();
    let vars = params.mount(&mut tape, false);
    let doubled = total_loss(
        &mut tape,
        &vars,
        &window,
        &[
            BatchItem::Conpono(&instances[0]),
            BatchItem::Conpono(&instances[0]),
        ],
        1.0,
        None,
    )
    .unwrap()
    .1;
    assert_eq!(single.total, doubled.total);
}

#[test]
fn loss_is_invariant_to_constant_logit_shifts() {
    let (corpus, vocab) = fixture_corpus(9);
    let window = small_window(1, 1);
    let instances = instances_for(&window, &corpus, vocab.size());
    let cfg = toy_encoder(vocab.size(), Coupling::Combined, window.k_max, window.max_seq);
    let params = EncoderParams::<f32>::init(&cfg, 29).unwrap();
    let mut tape = Tape::new();
    let vars = params.mount(&mut tape, false);
    let scores = candidate_scores(&mut tape, &vars, &window, &instances[0], None).unwrap();
    let ce = tape.cross_entropy(scores.logits, &[instances[0].true_index]).unwrap();
    let base = tape.value(ce).data()[0] as f64;
    let c = tape.constant(Tensor::full(
        tape.value(scores.logits).shape().to_vec(),
        7.5f32,
    ));
    let shifted = tape.add(scores.logits, c).unwrap();
    let ce2 = tape.cross_entropy(shifted, &[instances[0].true_index]).unwrap();
    let got = tape.value(ce2).data()[0] as f64;
    assert!((base - got).abs() < 1e-6, "{base} vs {got}");
}

#[test]
fn loss_is_permutation_equivariant_bitwise_in_f64() {
    let (corpus, vocab) = fixture_corpus(10);
    let window = small_window(2, 2);
    let instances = instances_for(&window, &corpus, vocab.size());
    let inst = instances[0].clone();
    // permute candidates (and their plans) with a fixed rotation
    let c = inst.candidates.len();
    let perm: Vec<usize> = (0..c).map(|i| (i + 2) % c).collect();
    let mut permuted = inst.clone();
    permuted.candidates = perm.iter().map(|&i| inst.candidates[i].clone()).collect();
    permuted.mask_plan = std::iter::once(inst.mask_plan[0].clone())
        .chain(perm.iter().map(|&i| inst.mask_plan[1 + i].clone()))
        .collect();
    permuted.true_index = perm
        .iter()
        .position(|&i| i == inst.true_index)
        .unwrap();

    let cfg = toy_encoder(vocab.size(), Coupling::Combined, window.k_max, window.max_seq);
    let params = EncoderParams::<f64>::init(&cfg, 31).unwrap();
    let run = |i: &TrainingInstance| {
        let mut tape = Tape::new();
        let vars = params.mount(&mut tape, false);
        let (loss, _) =
            total_loss(&mut tape, &vars, &window, &[BatchItem::Conpono(i)], 1.0, None).unwrap();
        tape.value(loss).data()[0].to_bits()
    };
    assert_eq!(run(&inst), run(&permuted));
}

#[test]
fn mixed_objective_modes_in_one_batch_are_rejected() {
    let (corpus, vocab) = fixture_corpus(12);
    let window = small_window(1, 1);
    let instances = instances_for(&window, &corpus, vocab.size());
    let data = generate_shards(&corpus, &window, ShardMode::Bso, 5, vocab.size()).unwrap();
    let ShardData::Pairs(pairs) = data else { panic!() };
    let cfg = toy_encoder(vocab.size(), Coupling::Combined, window.k_max, window.max_seq);
    let params = EncoderParams::<f32>::init(&cfg, 3).unwrap();
    let mut tape = Tape::new();
    let vars = params.mount(&mut tape, false);
    let err = total_loss(
        &mut tape,
        &vars,
        &window,
        &[
            BatchItem::Conpono(&instances[0]),
            BatchItem::Pair(&pairs[0], BaselineMode::Bso),
        ],
        1.0,
        None,
    )
    .unwrap_err();
    assert!(err.to_string().contains("mixes"), "{err}");
}
