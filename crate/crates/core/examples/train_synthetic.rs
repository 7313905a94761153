//! Trains a small model on generated data and evaluates it on the test
//! split against random and oracle scores. Pass an epoch count to train
//! longer (default 5).

use a2summ::config::RunConfig;
use a2summ::data::{generate_samples, Dataset, GenConfig, Split};
use a2summ::eval::{evaluate, evaluate_scores, oracle_scores, random_scores};
use a2summ::train::train;

fn main() -> a2summ::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let gen = GenConfig { samples: 80, val_samples: 15, test_samples: 15, ..GenConfig::default() };
    let all = generate_samples(&gen)?;
    let (test, rest): (Vec<_>, Vec<_>) = all.samples.into_iter().partition(|(s, _)| *s == Split::Test);
    let data = Dataset::new(all.header.clone(), rest);

    let cfg = RunConfig { epochs, ..RunConfig::default() };
    let mut log = Vec::new();
    let outcome = train(&cfg, &data, Some(&mut log))?;
    for r in &outcome.records {
        println!(
            "epoch {:>2}  loss {:>7.4}  val frame F1 {:.3}  sentence F1 {:.3}",
            r.epoch, r.total, r.val_frame_f1, r.val_sentence_f1
        );
    }
    println!("best epoch {}", outcome.best_epoch);

    let test: Vec<_> = test.iter().map(|(_, r)| r).collect();
    let model = evaluate(&outcome.best, &outcome.model, &test, &cfg)?;
    let random = evaluate_scores(&test, &random_scores(&test, 0), &cfg)?;
    let oracle = evaluate_scores(&test, &oracle_scores(&test), &cfg)?;
    for metric in ["f1", "sentence_f1", "tau", "rouge1"] {
        let show = |v: Option<f64>| v.map_or("NA".into(), |x| format!("{x:.3}"));
        println!(
            "{metric:<12} model {}  random {}  oracle {}",
            show(model.get(metric)),
            show(random.get(metric)),
            show(oracle.get(metric))
        );
    }
    Ok(())
}
