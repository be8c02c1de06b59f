use conpono_core::corpus::{generate_synthetic_corpus, ingest_text, SyntheticConfig, Vocabulary};
use conpono_core::encoder::{Coupling, EncoderConfig};
use conpono_core::sampler::{generate_shards, ShardConfig, ShardMode, WindowConfig};
use conpono_core::trainer::{train, TrainConfig};
use std::time::Instant;

#[test]
#[ignore]
fn learnability_probe() {
    let texts = generate_synthetic_corpus(&SyntheticConfig {
        seed: 100, num_docs: 700, paragraphs_per_doc: 3, sentences_min: 8, sentences_max: 16,
    }).unwrap();
    let joined = texts.join("\n===\n");
    let vocab = Vocabulary::build([joined.as_str()], 4096).unwrap();
    let corpus = ingest_text(&joined, &vocab, 0);
    println!("paragraphs: {} vocab: {}", corpus.num_paragraphs(), vocab.size());
    let window = WindowConfig::default();
    let t0 = Instant::now();
    let data = generate_shards(&corpus, &window, ShardMode::Conpono, 42, vocab.size()).unwrap();
    println!("instances: {} in {:.1}s", data.len(), t0.elapsed().as_secs_f64());
    let shard_config = ShardConfig {
        mode: ShardMode::Conpono, window: window.clone(), seed: 42,
        vocab_size: vocab.size(), num_instances: data.len(),
    };
    let config = TrainConfig {
        objective: ShardMode::Conpono,
        encoder: EncoderConfig {
            layers: 2, hidden: 32, heads: 4, intermediate: 128,
            vocab_size: vocab.size(), max_positions: 128,
            coupling: Coupling::Combined, k_max: 4, ..EncoderConfig::default()
            ..EncoderConfig::default()
        },
        window,
        batch_size: 4,
        total_steps: 2000,
        base_lr: 2e-3,
        warmup_fraction: 0.25,
        lambda: 1.0,
        dropout: 0.1,
        seed: 11,
        checkpoint_interval: 500,
        heldout_fraction: 0.08,
    };
    let t0 = Instant::now();
    let outcome = train(&config, &shard_config, &data, None).unwrap();
    println!("train time: {:.1}s", t0.elapsed().as_secs_f64());
    for rec in &outcome.run_log.heldout {
        println!("step {}: overall {:.3} per_k {:?}", rec.step, rec.overall,
            rec.per_k.iter().map(|(k,v)| format!("{k}:{v:.2}")).collect::<Vec<_>>());
    }
    let n = outcome.run_log.steps.len();
    for i in [0, n/4, n/2, 3*n/4, n-1] {
        let r = &outcome.run_log.steps[i];
        println!("step {} loss_total {:.3} conpono {:.3} mlm {:.3} lr {:.5}",
            r.step, r.loss_total, r.loss_conpono.unwrap(), r.loss_mlm, r.lr);
    }
}
