//! Prompt templates.
//!
//! The templates live in `assets/` and are compiled in. Any edit to an asset
//! changes the rendered prompts, and with them every score cache key, so
//! cached scores never mix template versions.

/// Bumped whenever an asset changes.
pub const TEMPLATE_VERSION: &str = "1";

/// One-shot prompt asking the model to describe a python function.
pub const INSTRUCTION_TEMPLATE: &str = include_str!("../assets/instruction_prompt.txt");
/// Instruction followed by an opened code block; the candidate is scored as
/// the continuation.
pub const CODER_TEMPLATE: &str = include_str!("../assets/coder_prompt.txt");
/// The code block opener alone: the neutral context for candidate priors.
pub const PRIOR_PROMPT: &str = include_str!("../assets/prior_prompt.txt");
/// Code followed by a docstring request; the instruction is the continuation.
pub const REVIEWER_TEMPLATE: &str = include_str!("../assets/reviewer_prompt.txt");
/// Three-shot yes/no prompt for instruction equivalence.
pub const EQUIVALENCE_TEMPLATE: &str = include_str!("../assets/equivalence_prompt.txt");

/// Placeholder line in [`INSTRUCTION_TEMPLATE`] that receives the function.
pub const FUNCTION_SLOT: &str = "any function";

/// Marks the end of a generated instruction.
pub const INSTRUCTION_END_MARKERS: [&str; 2] = ["### instruction end ###", "###instruction end###"];

/// Closes the code block opened by [`CODER_TEMPLATE`].
pub const CODE_FENCE: &str = "```";

/// Fills `{name}` placeholders in a single left-to-right pass, so text that
/// happens to contain braces inside a value is never re-expanded.
pub fn render(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + values.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let name = &after[..close];
                if let Some((_, v)) = values.iter().find(|(k, _)| *k == name) {
                    out.push_str(v);
                } else {
                    out.push('{');
                    out.push_str(name);
                    out.push('}');
                }
                rest = &after[close + 1..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

/// Prompt under which a candidate is scored (and sampled) for `instruction`.
pub fn coder_prompt(instruction: &str) -> String {
    render(CODER_TEMPLATE, &[("instruction", instruction.trim_end())])
}

/// Prompt under which `instruction` is scored given the candidate `code`.
pub fn reviewer_prompt(code: &str) -> String {
    render(REVIEWER_TEMPLATE, &[("code", code.trim_end_matches('\n'))])
}

/// The one-shot instruction-writing prompt with `code` in the function slot.
pub fn instruction_prompt(code: &str) -> String {
    let slot = INSTRUCTION_TEMPLATE
        .rfind(FUNCTION_SLOT)
        .expect("instruction template has a function slot");
    let code = code.trim_end_matches('\n');
    let mut out = String::with_capacity(INSTRUCTION_TEMPLATE.len() + code.len());
    out.push_str(&INSTRUCTION_TEMPLATE[..slot]);
    out.push_str(code);
    out.push_str(&INSTRUCTION_TEMPLATE[slot + FUNCTION_SLOT.len()..]);
    out
}

/// Equivalence question for two instructions (whitespace collapsed so each
/// sits on one line).
pub fn equivalence_prompt(a: &str, b: &str) -> String {
    let a = one_line(a);
    let b = one_line(b);
    render(EQUIVALENCE_TEMPLATE, &[("instruction_a", &a), ("instruction_b", &b)])
}

/// Recovers the two instructions from a rendered [`equivalence_prompt`].
pub fn parse_equivalence_prompt(prompt: &str) -> Option<(String, String)> {
    let a_tag = "Instruction A: ";
    let b_tag = "\nInstruction B: ";
    let a_start = prompt.rfind(a_tag)? + a_tag.len();
    let b_rel = prompt[a_start..].find(b_tag)?;
    let a = &prompt[a_start..a_start + b_rel];
    let b_start = a_start + b_rel + b_tag.len();
    let b_end = prompt[b_start..].find('\n').map_or(prompt.len(), |e| b_start + e);
    Some((a.to_string(), prompt[b_start..b_end].to_string()))
}

/// Recovers the function from a rendered [`instruction_prompt`].
pub fn parse_instruction_prompt(prompt: &str) -> Option<&str> {
    let start_tag = "### Function start ###\n";
    let end_tag = "\n### Function end ###";
    let start = prompt.rfind(start_tag)? + start_tag.len();
    let end = start + prompt[start..].find(end_tag)?;
    Some(&prompt[start..end])
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instruction_prompt_keeps_the_exemplar() {
        let p = instruction_prompt("def f(x):\n    return x\n");
        assert!(p.contains("def any_int(x, y, z):"));
        assert!(p.starts_with("##Write an instruction for given python function## \n"));
        assert!(p.ends_with("### Function start ###\ndef f(x):\n    return x\n### Function end ###\n\n###instruction start###\n"));
        assert!(!p.contains(FUNCTION_SLOT));
    }

    #[test]
    fn instruction_prompt_contains_code_once_and_is_stable() {
        let code = "def weird_name_91(a):\n    return {a}";
        let p = instruction_prompt(code);
        assert_eq!(p.matches(code).count(), 1);
        assert_eq!(p, instruction_prompt(code));
        assert_eq!(parse_instruction_prompt(&p), Some(code));
    }

    #[test]
    fn template_asset_is_verbatim() {
        // spot-check the trailing spaces that the exemplar carries
        assert!(INSTRUCTION_TEMPLATE.contains("isinstance(z,int): \n"));
        assert!(INSTRUCTION_TEMPLATE.contains("            return True \n"));
        assert!(INSTRUCTION_TEMPLATE.contains("### instruction end ###\n"));
        assert_eq!(INSTRUCTION_TEMPLATE.matches(FUNCTION_SLOT).count(), 1);
    }

    #[test]
    fn render_is_single_pass() {
        assert_eq!(render("{a}-{b}", &[("a", "{b}"), ("b", "x")]), "{b}-x");
        assert_eq!(render("{missing} {", &[]), "{missing} {");
    }

    #[test]
    fn coder_and_reviewer_shapes() {
        assert_eq!(coder_prompt("Sum a list.\n"), "Sum a list.\n```python\n");
        assert!(coder_prompt("x").ends_with(PRIOR_PROMPT));
        assert_eq!(
            reviewer_prompt("def f():\n    pass\n"),
            "\ndef f():\n    pass\n\n# Write a docstring for the above function\n"
        );
    }

    #[test]
    fn equivalence_round_trip() {
        let p = equivalence_prompt("return the sum\n of a list", "add {it} up");
        assert!(p.ends_with("Same functionality:"));
        assert_eq!(
            parse_equivalence_prompt(&p),
            Some(("return the sum of a list".to_string(), "add {it} up".to_string()))
        );
    }
}
