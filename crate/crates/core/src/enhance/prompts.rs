//! Prompt templates for the four-step enhancement chain and the single-step
//! direct variant.

use super::EnhancementStep;

pub const IMAGE_DESCRIPTION: &str =
    "Describe what is visually observable in this meme (ignore all text).";

pub const TEXT_MEANING_PREFIX: &str = "The meme text is {";
pub const TEXT_MEANING_SUFFIX: &str =
    "}. Analyze the meaning, tone, or rhetorical use of this textual content.";

pub const COMBINED_IMPLICIT_MEANING: &str =
    "State the likely intended message when image and text are viewed together.";

pub const CONTEXT_ANALYSIS: &str =
    "Suggest the possible context in which someone might use this meme.";

/// Single-step comparison variant. The chain templates above are fixed
/// verbatim; this one is our own wording: it must ask for an emotion
/// inference and a one-step explanation in the same prompt.
pub const DIRECT: &str = "Directly infer the emotional tendency this meme conveys and provide a \
     single-step explanation of your reasoning.";

/// Render the prompt for a step. Only TM interpolates the meme text; the
/// other steps attach image/text as message content instead.
pub fn build_prompt(step: EnhancementStep, meme_text: &str) -> String {
    match step {
        EnhancementStep::Id => IMAGE_DESCRIPTION.to_string(),
        EnhancementStep::Tm => {
            format!("{TEXT_MEANING_PREFIX}{meme_text}{TEXT_MEANING_SUFFIX}")
        }
        EnhancementStep::Cim => COMBINED_IMPLICIT_MEANING.to_string(),
        EnhancementStep::Ca => CONTEXT_ANALYSIS.to_string(),
        EnhancementStep::Direct => DIRECT.to_string(),
    }
}
