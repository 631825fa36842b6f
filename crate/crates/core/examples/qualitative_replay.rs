//! Replays the ten-candidate `search` task and prints why the likelihood
//! ranking and the pragmatic ranking disagree.

use pragmatic_rerank::fixtures::qualitative_example;
use pragmatic_rerank::harness::Pipeline;
use pragmatic_rerank::rsa::{speaker_table, CalibrationParams};
use pragmatic_rerank::Method;

fn main() {
    let fx = qualitative_example();
    let rec = Pipeline::new(&fx.backend, fx.config.clone())
        .with_executor(&fx.executor)
        .run_task(fx.task.clone());

    let sm = rec.score_matrix.as_ref().unwrap();
    let part = rec.partition.as_ref().unwrap();
    println!("clusters: {:?}", part.member_lists());

    let table = speaker_table(sm, part, CalibrationParams::new(fx.config.alpha).unwrap()).unwrap();
    println!("{:>8} {:>9} {:>7} {:>7}  speaker over clusters", "code", "coder", "z", "tau");
    for (row, id) in table.candidate_ids.iter().enumerate() {
        let probs: Vec<String> = table.probs[row].iter().map(|p| format!("{p:.3}")).collect();
        println!(
            "code_{id:02} {:>9.2} {:>7.3} {:>7.3}  [{}]  passes={}",
            sm.l0_log[row][0],
            table.z[row],
            table.tau[row],
            probs.join(" "),
            rec.passed(*id).unwrap_or(false)
        );
    }
    for m in Method::ALL {
        if let Some(r) = rec.result(m) {
            println!("{:<24} selects code_{:02}", m.as_str(), r.selected_id);
        }
    }
}
