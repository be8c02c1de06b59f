use conpono_core::corpus::{generate_synthetic_corpus, ingest_text, SyntheticConfig, Vocabulary};
use conpono_core::encoder::{encode, Coupling, EncoderConfig, EncoderParams};
use conpono_core::numcore::Tape;
use conpono_core::objective::{total_loss, BatchItem};
use conpono_core::sampler::{generate_shards, pack_pair, ShardData, ShardMode, WindowConfig};
use conpono_core::numcore::{adam_step, OptimizerState};

fn cosine(a: &[f32], b: &[f32]) -> f32 {
    let dot: f32 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f32 = a.iter().map(|x| x * x).sum::<f32>().sqrt();
    let nb: f32 = b.iter().map(|x| x * x).sum::<f32>().sqrt();
    dot / (na * nb)
}

#[test]
#[ignore]
fn pooled_spread_at_init() {
    for sigma in [0.02f64, 0.05, 0.1, 0.2] {
        let cfg = EncoderConfig {
            layers: 2, hidden: 32, heads: 4, intermediate: 128,
            vocab_size: 2048, max_positions: 128,
            coupling: Coupling::Combined, k_max: 4, init_sigma: sigma,
        };
        let params = EncoderParams::<f32>::init(&cfg, 1).unwrap();
        let mut pooled = Vec::new();
        for i in 0..8u32 {
            let anchor: Vec<u32> = (0..30).map(|j| 5 + (i * 97 + j * 13) % 2000).collect();
            let cand: Vec<u32> = (0..20).map(|j| 5 + (i * 31 + j * 7 + 50) % 2000).collect();
            let p = pack_pair(&anchor, &cand, 128);
            let mut tape = Tape::new();
            let vars = params.mount(&mut tape, false);
            let (_, v) = encode(&mut tape, &vars, &p.ids, &p.segment_ids, &p.attention_mask, None).unwrap();
            pooled.push(tape.value(v).data().to_vec());
        }
        let mut min_cos = 1.0f32;
        let mut max_cos = -1.0f32;
        for i in 0..8 {
            for j in 0..i {
                let c = cosine(&pooled[i], &pooled[j]);
                min_cos = min_cos.min(c);
                max_cos = max_cos.max(c);
            }
        }
        let norm: f32 = pooled[0].iter().map(|x| x * x).sum::<f32>().sqrt();
        println!("sigma={sigma}: pairwise cosine range [{min_cos:.4}, {max_cos:.4}], norm {norm:.3}");
    }
}

#[test]
#[ignore]
fn overfit_small_set() {
    let texts = generate_synthetic_corpus(&SyntheticConfig {
        seed: 5, num_docs: 20, paragraphs_per_doc: 2, sentences_min: 9, sentences_max: 14,
    }).unwrap();
    let joined = texts.join("\n===\n");
    let vocab = Vocabulary::build([joined.as_str()], 4096).unwrap();
    let corpus = ingest_text(&joined, &vocab, 0);
    let window = WindowConfig { num_hard: 3, num_random: 4, ..WindowConfig::default() };
    let data = generate_shards(&corpus, &window, ShardMode::Conpono, 1, vocab.size()).unwrap();
    let ShardData::Conpono(all) = data else { panic!() };
    let instances: Vec<_> = all.into_iter().take(16).collect();
    println!("overfitting {} instances, C={}", instances.len(), window.candidate_count());

    for sigma in [0.02f64, 0.1] {
        for lr in [1e-3f64, 3e-3, 1e-2] {
            let cfg = EncoderConfig {
                layers: 2, hidden: 32, heads: 4, intermediate: 128,
                vocab_size: vocab.size(), max_positions: 128,
                coupling: Coupling::Combined, k_max: 4, init_sigma: sigma,
            };
            let mut params = EncoderParams::<f32>::init(&cfg, 1).unwrap();
            let shapes: Vec<Vec<usize>> = params.tensors().iter().map(|t| t.shape().to_vec()).collect();
            let mut opt = OptimizerState::new(lr, 0.0, 100_000, &shapes);
            let mut first = 0.0;
            let mut last = 0.0;
            for step in 0..300 {
                let mut tape = Tape::new();
                let vars = params.mount(&mut tape, true);
                let batch: Vec<BatchItem> = instances.iter().take(4).map(BatchItem::Conpono).collect();
                let (loss, breakdown) = total_loss(&mut tape, &vars, &window, &batch, 0.0, None).unwrap();
                if step == 0 { first = breakdown.total; }
                last = breakdown.total;
                let mut grads = tape.backward(loss).unwrap();
                let gt: Vec<_> = vars.all().iter().zip(params.tensors())
                    .map(|(&v, p)| grads.take_or_zeros(v, p.shape())).collect();
                adam_step(params.tensors_mut(), &gt, &mut opt).unwrap();
            }
            println!("sigma={sigma} lr={lr}: loss {first:.4} -> {last:.4} (ln C = {:.4})", (8f64).ln());
        }
    }
}
