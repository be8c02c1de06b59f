use conpono_core::corpus::{generate_synthetic_corpus, ingest_text, SyntheticConfig, Vocabulary};
use conpono_core::encoder::{Coupling, EncoderConfig};
use conpono_core::sampler::{generate_shards, ShardConfig, ShardMode, WindowConfig};
use conpono_core::trainer::{train, TrainConfig};

#[test]
#[ignore]
fn recipe_sweep() {
    let texts = generate_synthetic_corpus(&SyntheticConfig {
        seed: 100, num_docs: 250, paragraphs_per_doc: 3, sentences_min: 8, sentences_max: 16,
    }).unwrap();
    let joined = texts.join("\n===\n");
    let vocab = Vocabulary::build([joined.as_str()], 4096).unwrap();
    let corpus = ingest_text(&joined, &vocab, 0);
    let window = WindowConfig::default();
    let data = generate_shards(&corpus, &window, ShardMode::Conpono, 42, vocab.size()).unwrap();
    let shard_config = ShardConfig {
        mode: ShardMode::Conpono, window: window.clone(), seed: 42,
        vocab_size: vocab.size(), num_instances: data.len(),
    };
    eprintln!("instances: {}", data.len());
    for (name, sigma, lr, dropout, lambda) in [
        ("paperish", 0.1, 2e-3, 0.1, 1.0),
        ("sig2", 0.2, 2e-3, 0.1, 1.0),
        ("sig2-hot", 0.2, 5e-3, 0.0, 1.0),
        ("sig2-pure", 0.2, 5e-3, 0.0, 0.0),
    ] {
        let config = TrainConfig {
            objective: ShardMode::Conpono,
            encoder: EncoderConfig {
                layers: 2, hidden: 32, heads: 4, intermediate: 128,
                vocab_size: vocab.size(), max_positions: 128,
                coupling: Coupling::Combined, k_max: 4, init_sigma: sigma,
            },
            window: window.clone(),
            batch_size: 4,
            total_steps: 600,
            base_lr: lr,
            warmup_fraction: 0.25,
            lambda,
            dropout,
            seed: 11,
            checkpoint_interval: 200,
            heldout_fraction: 0.08,
        };
        let outcome = train(&config, &shard_config, &data, None).unwrap();
        let avg_conpono = |range: std::ops::Range<usize>| -> f64 {
            let steps = &outcome.run_log.steps[range];
            steps.iter().map(|s| s.loss_conpono.unwrap()).sum::<f64>() / steps.len() as f64
        };
        eprintln!("{name}: conpono avg steps 0-50: {:.3}, 250-300: {:.3}, 550-600: {:.3}",
            avg_conpono(0..50), avg_conpono(250..300), avg_conpono(550..600));
        for rec in &outcome.run_log.heldout {
            eprintln!("  {name} step {}: overall {:.3}", rec.step, rec.overall);
        }
    }
}
