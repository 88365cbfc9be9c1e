//! Metric building blocks: collapsing a multi-class posterior to p_fake,
//! the FAKE-on-tie decision, balanced accuracy, and the label-smoothed loss.
//!
//! cargo run --release --example metrics

use synthdetect::eval::{balanced_accuracy, is_fake, softmax, to_binary, ConfusionMatrix};
use synthdetect::train::smoothed_ce;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let real = 0;
    for probs in [vec![0.7, 0.2, 0.1], vec![0.5, 0.25, 0.25], vec![0.4, 0.1, 0.5], vec![0.1, 0.45, 0.45]] {
        let p = to_binary(&probs, real)?;
        println!("{probs:?} -> p_fake {p:.2} -> {}", if is_fake(p) { "FAKE" } else { "REAL" });
    }

    // 90 real / 10 fake: predicting REAL everywhere has accuracy 0.9 but
    // balanced accuracy 0.5.
    let truth: Vec<usize> = (0..100).map(|i| usize::from(i >= 90)).collect();
    let all_real = vec![0; 100];
    println!("always-real balanced accuracy {:.3}", balanced_accuracy(&truth, &all_real, 2)?);
    let cm = ConfusionMatrix::from_pairs(2, &truth, &truth);
    print!("{}", cm.to_csv(&["real".into(), "fake".into()]));

    let logits = [2.0, 0.5, -1.0];
    println!("softmax {:?}", softmax(&logits));
    for eps in [0.0, 0.05] {
        println!("smoothed CE, eps {eps}: {:.6}", smoothed_ce(&logits, 0, eps)?);
    }
    Ok(())
}
