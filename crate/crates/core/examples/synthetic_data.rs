//! Generates a small synthetic dataset on disk, reloads it, and reports how
//! separable the key windows are.

use a2summ::data::{gen_synthetic, load_and_validate, GenConfig, Split, MANIFEST_FILE};

fn main() -> a2summ::Result<()> {
    let dir = std::env::temp_dir().join("a2summ-synthetic-example");
    let cfg = GenConfig { samples: 40, val_samples: 5, test_samples: 5, ..GenConfig::default() };
    let (manifest, data) = gen_synthetic(&cfg, &dir)?;
    println!(
        "{} samples in {} ({} train / {} val / {} test)",
        manifest.entries.len(),
        dir.display(),
        manifest.count(Split::Train),
        manifest.count(Split::Val),
        manifest.count(Split::Test)
    );
    println!("window probe accuracy {:.3}", data.probe_accuracy);

    let records = load_and_validate(&dir.join(MANIFEST_FILE))?;
    let r = &records[0];
    println!("{}: {} frames, {} sentences, {} key frames", r.id, r.frames(), r.sentences(), r.frame_labels.iter().filter(|&&l| l == 1).count());
    for w in &r.windows {
        let words = r.sentences_text.as_ref().map(|t| t[w.sentence].join(" ")).unwrap_or_default();
        println!("  sentence {} [{:>2}, {:>2}) key={} \"{words}\"", w.sentence, w.start, w.end, r.sentence_labels[w.sentence]);
    }
    Ok(())
}
