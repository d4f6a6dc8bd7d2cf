//! Temporary pilot for the multi-type bias experiment (deleted before ship).

use distangle_core::corpus::{generate_synthetic, LabeledExample, SynthConfig, SynthTypeSpec};
use distangle_core::evalkit::{sta_keep, train_sta_classifier};
use distangle_core::losses::{LossOptions, LossWeights};
use distangle_core::rng::substream;
use distangle_core::seqae::{ModelConfig, Variant};
use distangle_core::trainer::{run_steps, train, TrainConfig, Trainer};

fn synth(rho: f64) -> SynthConfig {
    SynthConfig {
        vocab_size: 120,
        template_count: 24,
        len_range: (6, 11),
        types: vec![
            SynthTypeSpec {
                name: "style1".into(),
                values: vec!["v0".into(), "v1".into()],
                markers_per_value: 1,
            },
            SynthTypeSpec {
                name: "style2".into(),
                values: vec!["v0".into(), "v1".into()],
                markers_per_value: 1,
            },
        ],
        rho,
        corpus_size: 1200,
        seed: 11,
    }
}

fn cfg(seed: u64, multitype: f64, steps: u64) -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            embed_dim: 24,
            hidden_size: 48,
            max_len: 16,
            style_dim: 4,
            content_dim: 16,
            variant: Variant::Variational,
            ..ModelConfig::default()
        },
        weights: LossWeights {
            attachment: 1.0,
            classification: 1.0,
            style_content: 0.4,
            multitype,
            kl: 0.002,
            style_content_nll: 0.05,
        },
        loss_options: LossOptions { m_samples: 8, resample_for_recon: false },
        batch_size: 32,
        steps,
        learning_rate: 0.005,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
#[ignore]
fn pilot_a4() {
    let skew = generate_synthetic(&synth(0.9)).unwrap();
    let balanced = generate_synthetic(&synth(0.0)).unwrap();
    let n = skew.examples.len();
    let train_split: Vec<LabeledExample> = skew.examples[..n * 8 / 10].to_vec();
    let test_split: Vec<LabeledExample> = skew.examples[n * 9 / 10..].to_vec();
    let bal_train: Vec<LabeledExample> = balanced.examples[..n * 8 / 10].to_vec();
    let schema = skew.schema.with_empirical_priors(&train_split);

    let mut clfs = Vec::new();
    for t in 0..2 {
        let (clf, acc) = train_sta_classifier(&bal_train, t, 2, 0xC1F).unwrap();
        println!("clf type {t} holdout acc {acc:.3}");
        clfs.push(clf);
    }

    let mut sums = [0.0f64; 2]; // [without, with]
    for seed in [5u64, 6, 7] {
        let stage1 = cfg(seed, 0.0, 3000);
        let run1 = train::<f32>(&stage1, &train_split, &schema, &skew.vocab, None, None).unwrap();
        assert!(run1.abort.is_none(), "stage1 aborted for seed {seed}");
        for (arm, mt) in [(0usize, 0.0f64), (1, 0.1)] {
            let stage2 = cfg(seed, mt, 5000);
            let trainer = Trainer::from_checkpoint(run1.checkpoint.clone(), &stage2).unwrap();
            let run2 = run_steps(trainer, &train_split, 5000, None, None).unwrap();
            assert!(run2.abort.is_none(), "stage2 mt={mt} aborted for seed {seed}");
            let model = run2.checkpoint.model();
            let mut davg = 0.0;
            for (ti, oj) in [(0usize, 1usize), (1, 0)] {
                let mut rng = substream(seed, "pilot.bias");
                let r = sta_keep(&model, &clfs[oj], &test_split, ti, &mut rng).unwrap();
                println!(
                    "seed {seed} mt {mt} transfer {ti} observe {oj}: origin {:.3} keep {:.3} delta {:.3}",
                    r.sta_origin, r.sta_keep, r.delta
                );
                davg += r.delta / 2.0;
            }
            println!("seed {seed} mt {mt}: delta avg {davg:.4}");
            sums[arm] += davg / 3.0;
        }
    }
    println!("AVG delta without {:.4} with {:.4} ratio {:.3}", sums[0], sums[1], sums[1] / sums[0]);
}
