//! Key-shot F1, rank correlations and ROUGE on small examples.

use a2summ::metrics::{keyshot_f1, kendall_tau, rouge_l, rouge_n, spearman_rho, tokenize, Reduction};

fn main() -> a2summ::Result<()> {
    let pred = [false, true, true, true, false, false];
    let annotators = vec![vec![false, true, true, false, false, false], vec![false, false, true, true, true, false]];
    println!("F1 max {:.3}", keyshot_f1(&pred, &annotators, Reduction::Max)?);
    println!("F1 mean {:.3}", keyshot_f1(&pred, &annotators, Reduction::Mean)?);

    let scores = [0.1, 0.7, 0.9, 0.6, 0.3, 0.2];
    let importance = [0.0, 0.5, 1.0, 0.5, 0.5, 0.0];
    println!("kendall tau {:.3}", kendall_tau(&scores, &importance)?);
    println!("spearman rho {:.3}", spearman_rho(&scores, &importance)?);

    let cand = tokenize("The cat sat on the mat.");
    let reference = tokenize("A cat was sitting on the mat");
    for n in [1, 2] {
        let p = rouge_n(&cand, &reference, n)?;
        println!("ROUGE-{n}: P {:.3} R {:.3} F {:.3}", p.precision, p.recall, p.f1);
    }
    println!("ROUGE-L F {:.3}", rouge_l(&cand, &reference)?.f1);
    Ok(())
}
