//! Prompt templates.
//!
//! Placeholders are written `{{name}}` with `name` an identifier. Any other
//! brace sequence (`{{ and }}`, JSON braces) is literal text.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemplateId {
    Correction,
    CptLabel,
    Generation,
    SftRating,
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TemplateId::Correction => "correction",
            TemplateId::CptLabel => "cpt_label",
            TemplateId::Generation => "generation",
            TemplateId::SftRating => "sft_rating",
        })
    }
}

pub const CORRECTION_PREAMBLE: &str = "Here is the corrected version of the text:";

pub const CORRECTION_BODY: &str = "I have extracted the following raw text from a PDF, but the extraction process has introduced many formatting issues such as unnecessary line breaks, extra spaces, and other artifacts that disrupt the text flow. Could you please help me correct these formatting issues and provide a clean, readable version of the text? Respond with the Corrected Version only.

Raw Text:

{{RawText}}

Start your response with \"Here is the corrected version of the text:\".";

pub const EDUCATIONAL_SCORE_MARKER: &str = "Educational score:";

pub const CPT_LABEL_BODY: &str = "Below is an extract from a textbook. Evaluate whether the text has a high educational value and could be useful in an educational setting for teaching from primary school to grade school levels using the additive 5-point scoring system described below. Points are accumulated based on the satisfaction of each criterion:

- Add 1 point if the extract provides some basic information relevant to educational topics, even if it includes some irrelevant or non-academic content like advertisements and promotional material.

- Add another point if the extract addresses certain elements pertinent to education but does not align closely with educational standards. It might mix educational content with non-educational material, offering a superficial overview of potentially useful topics, or presenting information in a disorganized manner and incoherent writing style.

- Award a third point if the extract is appropriate for educational use and introduces key concepts relevant to school curricula. It is coherent though it may not be comprehensive or could include some extraneous information. It may resemble an introductory section of a textbook or a basic tutorial that is suitable for learning but has notable limitations like treating concepts that are too complex for grade school students.

- Grant a fourth point if the extract is highly relevant and beneficial for educational purposes for a level not higher than grade school, exhibiting a clear and consistent writing style. It could be similar to a chapter from a textbook or a tutorial, offering substantial educational content, including exercises and solutions, with minimal irrelevant information, and the concepts aren't too advanced for grade school students. The content is coherent, focused, and valuable for structured learning.

- Bestow a fifth point if the extract is outstanding in its educational value, and perfectly suited for teaching either at primary school or grade school. It follows detailed reasoning, the writing style is easy to follow, and offers profound and thorough insights into the subject matter, devoid of any non-educational or complex content.

The extract:
{{extract}}

After examining the extract:

- Briefly justify your total score, up to 100 words.

- Conclude with the score using the format: \"Educational score:  <total points>\"";

/// Table-extraction generation prompt; the default body for
/// [`TemplateId::Generation`].
pub const GENERATION_TABLE_BODY: &str = "I need synthetic training data for training a machine learning model that extracts tables from text correctly.
The data should be formatted in JSON, with each entry containing \"text\" and \"answer\" attributes.
You should generate a paragraph that includes the keywords:

{{keywords}}.

The \"text\" part must contain enough information for the table to be extracted!
In \"text\" part, You must you include a table description in latex format.

Special notice for the table content:

You should generate a table that has complicated numbers and characters, include non-standard characters, and have a variety of values.
Make sure the value you generated do not follow simple patterns, for example, never include deplicate values or values with constant interval in columns.

Your answer should contain as much details as possible. You should only generate one JSON.
The value for the two attributes should be two string. Use {{ and }} to warp your output.
Pay attention to the escape characters in the latex format.
Remember to put a comma at the end of the first string. Never use a json block to wrap your output.
Here is the format for your output:

{
    \"text\": \"Your paragraph here, remember to include a table in latex format\",
    \"answer\": \"Your answer table here\"
}

Now start your answer: ";

pub const RATING_SEPARATOR: &str = "====================";

pub const SFT_RATING_BODY: &str = "You are a helpful and precise assistant for checking the quality of instruction-tuning data for large language models. Your task is to evaluate the given instruction using the criterions described below.

- Clarity: The sample should be clear, specific, and unambiguous, providing a well-defined task for the model to perform.

- Complexity: The sample should be advanced complexity that necessitate a high level of comprehension and cognitive processing, challenging the language model significantly.

- Correctness: The sample is impeccably written, with flawless grammar, syntax, and structure, demonstrating exceptional clarity and professionalism.

- Usefulness: The sample should be highly useful, and contribute to expanding the model's knowledge base.

- Adaptability: The sample could be adapted to different contexts or use cases, showing some flexibility.


After examining the instruction-response pair:

- Briefly justify your scores with a paragraph in the field \"Explanation\", up to 500 words.

- For each point of criterion above, assign a score from 1 to 5.

- You should only provide the rest of your answer in a structured format as shown below, and make sure your response can be directly parsed by computer programs.

Below is a template for your response:

Explanation: <string, your explanations to the scores>

====================

{
    \"Clarity\": <int, complexity_score>,
    \"Complexity\": <int, complexity_score>,
    \"Correctness\": <int, quality_score>,
    \"Usefulness\": <int, usefulness_score>,
    \"Adaptability\": <int, adaptability_score>,
    \"Total\": <int, total_score>
}

Context

{{context}}

Instruction

{{question}}

Response

{{answer}}";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub body: String,
}

impl PromptTemplate {
    pub fn new(id: TemplateId, body: impl Into<String>) -> Self {
        PromptTemplate {
            id,
            body: body.into(),
        }
    }

    pub fn builtin(id: TemplateId) -> Self {
        let body = match id {
            TemplateId::Correction => CORRECTION_BODY,
            TemplateId::CptLabel => CPT_LABEL_BODY,
            TemplateId::Generation => GENERATION_TABLE_BODY,
            TemplateId::SftRating => SFT_RATING_BODY,
        };
        PromptTemplate::new(id, body)
    }

    /// Placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for seg in segments(&self.body) {
            if let Segment::Slot(name) = seg {
                if !out.contains(&name) {
                    out.push(name);
                }
            }
        }
        out
    }

    /// Substitutes every placeholder. Missing and empty bindings are errors;
    /// unused bindings are ignored.
    pub fn render(&self, bindings: &BTreeMap<&str, &str>) -> Result<String> {
        let mut out = String::with_capacity(self.body.len() + 256);
        for seg in segments(&self.body) {
            match seg {
                Segment::Literal(s) => out.push_str(s),
                Segment::Slot(name) => {
                    let value = bindings.get(name).ok_or_else(|| Error::Template {
                        placeholder: name.to_string(),
                        message: format!("no binding supplied for the {} template", self.id),
                    })?;
                    if value.trim().is_empty() {
                        return Err(Error::Template {
                            placeholder: name.to_string(),
                            message: "binding is empty".into(),
                        });
                    }
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }
}

pub fn render_prompt(id: TemplateId, bindings: &BTreeMap<&str, &str>) -> Result<String> {
    PromptTemplate::builtin(id).render(bindings)
}

/// Keyword list as it appears in generation prompts.
pub fn join_keywords(keywords: &[String]) -> String {
    keywords.join(", ")
}

enum Segment<'a> {
    Literal(&'a str),
    Slot(&'a str),
}

fn segments(body: &str) -> Vec<Segment<'_>> {
    let mut out = Vec::new();
    let mut rest = body;
    let mut lit_start = 0usize;
    let mut pos = 0usize;
    while let Some(off) = rest.find("{{") {
        let open = pos + off;
        let after = &body[open + 2..];
        let ident_len = after
            .char_indices()
            .take_while(|&(i, c)| c == '_' || c.is_ascii_alphabetic() || (i > 0 && c.is_ascii_digit()))
            .map(|(i, c)| i + c.len_utf8())
            .last()
            .unwrap_or(0);
        if ident_len > 0 && after[ident_len..].starts_with("}}") {
            if lit_start < open {
                out.push(Segment::Literal(&body[lit_start..open]));
            }
            out.push(Segment::Slot(&after[..ident_len]));
            pos = open + 2 + ident_len + 2;
            lit_start = pos;
        } else {
            pos = open + 2;
        }
        rest = &body[pos..];
    }
    if lit_start < body.len() {
        out.push(Segment::Literal(&body[lit_start..]));
    }
    out
}
