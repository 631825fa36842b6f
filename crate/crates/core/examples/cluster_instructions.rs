//! Judge every pair of instructions with a model and group them into
//! equivalence clusters by connected components.

use pragmatic_rerank::fixtures::key_terms;
use pragmatic_rerank::prompts::parse_equivalence_prompt;
use pragmatic_rerank::{build_partition, EquivalenceJudge, Instruction, MockBackend};

fn main() {
    let texts = [
        "Return the sum of all numbers in a list.",
        "Compute the total of the numbers in a list.",
        "Return the largest number in a list.",
        "Add up every element of the list and return the result.",
        "Find the maximum value in the list.",
    ];
    let instructions: Vec<Instruction> = texts
        .iter()
        .enumerate()
        .map(|(k, t)| Instruction {
            instruction_id: k as u32,
            text: t.to_string(),
            source_candidate_id: (k > 0).then_some(k as u32),
        })
        .collect();

    // stand-in judge: two instructions match when they share key terms
    let backend = MockBackend::builder()
        .gen_fallback(|prompt, _| {
            let (a, b) = parse_equivalence_prompt(prompt)?;
            Some(if key_terms(&a) == key_terms(&b) { " Yes".into() } else { " No".into() })
        })
        .build();

    let judgments = EquivalenceJudge::new(&backend).judge_all(&instructions).unwrap();
    for j in &judgments {
        println!("{} ~ {}: {}", j.instruction_a, j.instruction_b, j.equivalent);
    }
    let part = build_partition(&instructions, &judgments).unwrap();
    for c in &part.clusters {
        let members: Vec<&str> = c.member_ids.iter().map(|&i| texts[i as usize]).collect();
        println!("cluster {}{}: {:?}", c.cluster_id, if c.is_main { " (main)" } else { "" }, members);
    }
}
