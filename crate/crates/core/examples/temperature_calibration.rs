//! How alpha turns prior log-probabilities into per-candidate temperatures,
//! and what that does to one speaker row.

use pragmatic_rerank::rsa::{calibrate_temperatures, speaker_row, standardize};

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

fn main() {
    let prior = [-10.0, -20.0, -30.0];
    println!("prior log P(c): {prior:?}");
    println!("z: {:?}", standardize(&prior));
    for alpha in [0.0, 0.5, 1.0, 2.0] {
        let tau = calibrate_temperatures(&prior, alpha);
        println!("alpha {alpha:<4} tau {:?}", tau.iter().map(|t| format!("{t:.4}")).collect::<Vec<_>>());
    }

    // one candidate's cluster scores under a range of temperatures
    let agg = [-12.0, -13.5, -15.0, -20.0];
    for tau in [0.25, 0.5, 1.0, 2.0, 4.0] {
        let p = speaker_row(&agg, tau);
        println!("tau {tau:<4} main {:.4} entropy {:.4}", p[0], entropy(&p));
    }
}
