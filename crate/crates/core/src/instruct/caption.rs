//! Counterfactual captions that combine several concepts in one scene.

use crate::error::{contract_err, Result};
use crate::providers::{GenerateRequest, TextGenerator};
use crate::text::words;

use super::lexicon::contains_phrase;

/// Marker opening a caption-composition prompt.
pub const COMPOSE_PREFIX: &str = "Write one short image caption";

pub fn compose_prompt(concepts: &[String], context: &str) -> String {
    format!(
        "{COMPOSE_PREFIX} in the form of a {context} that mentions each of these concepts: {}. Reply with the caption only.",
        concepts.join("; ")
    )
}

/// Concepts listed in a composition prompt, if `prompt` is one.
pub fn parse_compose_prompt(prompt: &str) -> Option<(Vec<String>, String)> {
    let rest = prompt.strip_prefix(COMPOSE_PREFIX)?;
    let rest = rest.strip_prefix(" in the form of a ")?;
    let (context, rest) = rest.split_once(" that mentions each of these concepts: ")?;
    let (list, _) = rest.rsplit_once(". Reply with the caption only.")?;
    Some((list.split("; ").map(str::to_string).collect(), context.to_string()))
}

/// Template caption: the first concept is the subject, the last the
/// setting, anything between joins the subject.
pub fn template_caption(concepts: &[String], context: &str) -> String {
    let article = |w: &str| {
        if w.starts_with(['a', 'e', 'i', 'o', 'u']) {
            "an"
        } else {
            "a"
        }
    };
    let (first, rest) = concepts.split_first().expect("at least two concepts");
    let (last, middle) = rest.split_last().expect("at least two concepts");
    let mut s = format!("{} {context} of {} {first}", article(context), article(first));
    for m in middle {
        s.push_str(&format!(" with {} {m}", article(m)));
    }
    s.push_str(&format!(" in {} {last}", article(last)));
    s
}

fn mentions_all(caption: &str, concepts: &[String]) -> bool {
    concepts.iter().all(|c| contains_phrase(caption, c))
}

/// A caption mentioning every concept. Uses `client` when given and falls
/// back to the template when the client fails or drops a concept.
pub fn compose_counterfactual_caption(
    concepts: &[String],
    context: &str,
    client: Option<&dyn TextGenerator>,
    seed: u64,
) -> Result<String> {
    let concepts: Vec<String> = concepts
        .iter()
        .map(|c| words(c).join(" "))
        .filter(|c| !c.is_empty())
        .collect();
    if concepts.len() < 2 {
        return Err(contract_err!("a counterfactual caption needs at least two concepts"));
    }
    let context = words(context).join(" ");
    let context = if context.is_empty() { "photograph".to_string() } else { context };
    if let Some(client) = client {
        let req = GenerateRequest {
            prompt: compose_prompt(&concepts, &context),
            max_tokens: 64,
            temperature: 0.7,
            seed,
        };
        match client.generate(&req) {
            Ok(text) if mentions_all(&text, &concepts) => return Ok(text.trim().to_string()),
            Ok(text) => log::warn!("caption {text:?} misses a concept; using the template"),
            Err(e) => log::warn!("caption generation failed ({e}); using the template"),
        }
    }
    Ok(template_caption(&concepts, &context))
}
