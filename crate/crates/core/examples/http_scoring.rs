//! Scores a continuation against a live completions endpoint.
//!
//! Needs RERANK_BASE_URL and RERANK_MODEL (RERANK_API_KEY if the server
//! wants one); prints a note and exits otherwise.

use pragmatic_rerank::{BackendConfig, HttpBackend, ScoreRequest, ScoringBackend};

fn main() {
    let (Ok(url), Ok(model)) = (std::env::var("RERANK_BASE_URL"), std::env::var("RERANK_MODEL")) else {
        println!("set RERANK_BASE_URL and RERANK_MODEL to run against a server");
        return;
    };
    let mut cfg = BackendConfig::new(url, model);
    cfg.auth_token = std::env::var("RERANK_API_KEY").ok();
    let backend = HttpBackend::new(cfg).expect("valid config");

    let prompt = "# Return the sum of a list.\n";
    for code in ["def f(xs):\n    return sum(xs)\n", "def f(xs):\n    return max(xs)\n"] {
        let r = backend.score_continuation(&ScoreRequest::new(prompt, code).unwrap()).unwrap();
        println!("{:>10.4} over {:>3} tokens  {:?}", r.total_logprob, r.token_count, code);
    }
}
