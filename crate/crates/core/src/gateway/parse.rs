//! Parsers for the four model response formats.
//!
//! All of them accept arbitrary text: model output is untrusted input.

use serde_json::{Map, Value};

use super::template::{CORRECTION_PREAMBLE, EDUCATIONAL_SCORE_MARKER, RATING_SEPARATOR};
use crate::error::{Error, Result};
use crate::model::AspectScores;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Correction {
    pub text: String,
    /// False when the response did not start with the requested preamble
    /// and the whole response was taken as the correction.
    pub preamble_found: bool,
}

pub fn parse_correction(text: &str) -> Result<Correction> {
    let (body, preamble_found) = match text.find(CORRECTION_PREAMBLE) {
        Some(at) => (&text[at + CORRECTION_PREAMBLE.len()..], true),
        None => (text, false),
    };
    let body = body.trim();
    if body.is_empty() {
        return Err(Error::EmptyCorrection);
    }
    Ok(Correction {
        text: body.to_string(),
        preamble_found,
    })
}

/// Integer after the last `Educational score:` marker.
pub fn parse_educational_score(text: &str) -> Result<u8> {
    let at = text.rfind(EDUCATIONAL_SCORE_MARKER).ok_or_else(|| {
        Error::Response(format!("no `{EDUCATIONAL_SCORE_MARKER}` marker"))
    })?;
    let rest = text[at + EDUCATIONAL_SCORE_MARKER.len()..]
        .trim_start()
        .trim_start_matches(['<', '*']);
    let (negative, rest) = match rest.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, rest),
    };
    let digits: &str = &rest[..rest
        .find(|c: char| !c.is_ascii_digit())
        .unwrap_or(rest.len())];
    if digits.is_empty() {
        return Err(Error::Response(format!(
            "no integer after `{EDUCATIONAL_SCORE_MARKER}`"
        )));
    }
    if negative {
        return Err(Error::range("educational score", format!("-{digits}")));
    }
    match digits.parse::<u8>() {
        Ok(v) if v <= 5 => Ok(v),
        _ => Err(Error::range("educational score", digits)),
    }
}

/// One generated unit: the scientific paragraph, the answer, and every
/// other top-level field of the generated object.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub context: String,
    pub answer: String,
    pub fields: Map<String, Value>,
}

impl Generation {
    pub fn string_field(&self, name: &str) -> Result<&str> {
        match self.fields.get(name) {
            None => Err(Error::schema(name, "missing from generated object")),
            Some(Value::String(s)) => Ok(s),
            Some(_) => Err(Error::schema(name, "type error: expected a string")),
        }
    }
}

pub fn parse_generation(text: &str) -> Result<Generation> {
    let obj = extract_object(text)?;
    let field = |name: &str| -> Result<String> {
        match obj.get(name) {
            None => Err(Error::schema(name, "missing from generated object")),
            Some(Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(Error::schema(name, "type error: expected a string")),
        }
    };
    let context = field("text")?;
    let answer = field("answer")?;
    Ok(Generation {
        context,
        answer,
        fields: obj,
    })
}

pub fn parse_rating(text: &str) -> Result<AspectScores> {
    let at = text
        .find(RATING_SEPARATOR)
        .ok_or_else(|| Error::Response("rating has no `====================` separator".into()))?;
    let head = text[..at].trim();
    let explanation = head
        .strip_prefix("Explanation:")
        .unwrap_or(head)
        .trim()
        .to_string();
    let tail = text[at..].trim_start_matches('=');
    let obj = extract_object(tail)?;

    let lookup = |name: &str| -> Option<&Value> {
        obj.get(name).or_else(|| {
            obj.iter()
                .find(|(k, _)| k.eq_ignore_ascii_case(name))
                .map(|(_, v)| v)
        })
    };
    let mut aspects = [0u8; 5];
    for (slot, name) in aspects.iter_mut().zip(AspectScores::NAMES) {
        let v = lookup(name).ok_or_else(|| Error::Response(format!("rating lacks `{name}`")))?;
        *slot = integer_score(name, v)?;
    }
    if let Some(total) = lookup("Total") {
        if !total.is_number() {
            return Err(Error::Response("`Total` is not a number".into()));
        }
    }
    // Total is derived; a mismatch is resolved in favour of the aspects.
    AspectScores::new(aspects, explanation)
}

/// Inverse of [`parse_rating`] for well-formed scores.
pub fn format_rating(scores: &AspectScores) -> String {
    let [c, x, r, u, a] = scores.aspects();
    format!(
        "Explanation: {}\n\n{RATING_SEPARATOR}\n\n{{\n    \"Clarity\": {c},\n    \"Complexity\": {x},\n    \"Correctness\": {r},\n    \"Usefulness\": {u},\n    \"Adaptability\": {a},\n    \"Total\": {}\n}}",
        scores.explanation, scores.total
    )
}

fn integer_score(name: &str, v: &Value) -> Result<u8> {
    let n = match v {
        Value::Number(n) => n,
        _ => return Err(Error::Response(format!("`{name}` is not a number"))),
    };
    let value = if let Some(i) = n.as_i64() {
        i
    } else {
        match n.as_f64() {
            Some(f) if f.fract() == 0.0 && f.abs() < 1e6 => f as i64,
            _ => return Err(Error::Response(format!("`{name}` is not an integer: {n}"))),
        }
    };
    if !(0..=AspectScores::MAX as i64).contains(&value) {
        return Err(Error::range(format!("aspect {name}"), value));
    }
    Ok(value as u8)
}

/// Removes one surrounding Markdown code fence, if any.
pub fn strip_code_fence(text: &str) -> &str {
    let t = text.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    // drop the info string (e.g. `json`) on the opening line
    let rest = match rest.find('\n') {
        Some(nl) => &rest[nl + 1..],
        None => rest,
    };
    rest.trim_end().strip_suffix("```").unwrap_or(rest).trim()
}

/// First complete JSON object in `text`, after fence stripping.
///
/// Falls back to repairing unescaped LaTeX backslashes and to unwrapping
/// `{{ ... }}` double braces, both common in generated output.
pub(crate) fn extract_object(text: &str) -> Result<Map<String, Value>> {
    let body = strip_code_fence(text);
    let start = body
        .find('{')
        .ok_or_else(|| Error::Response("no JSON object in response".into()))?;
    let candidate = &body[start..];
    let repaired = repair_escapes(candidate);
    let first_err = match first_value(candidate) {
        // a strict parse that produced \b or \f almost certainly ate LaTeX
        Ok(v) if has_control_escapes(&v) => match first_value(&repaired) {
            Ok(fixed) => return into_object(fixed),
            Err(_) => return into_object(v),
        },
        Ok(v) => return into_object(v),
        Err(e) => e,
    };
    if let Ok(v) = first_value(&repaired) {
        return into_object(v);
    }
    if let Some(unwrapped) = unwrap_double_braces(candidate) {
        if let Ok(v) = first_value(&unwrapped).or_else(|_| first_value(&repair_escapes(&unwrapped))) {
            return into_object(v);
        }
    }
    Err(Error::Response(format!("invalid JSON object: {first_err}")))
}

fn first_value(text: &str) -> std::result::Result<Value, serde_json::Error> {
    let mut stream = serde_json::Deserializer::from_str(text).into_iter::<Value>();
    match stream.next() {
        Some(r) => r,
        None => serde_json::from_str::<Value>(""),
    }
}

fn has_control_escapes(v: &Value) -> bool {
    match v {
        Value::String(s) => s.contains(['\u{8}', '\u{c}']),
        Value::Array(items) => items.iter().any(has_control_escapes),
        Value::Object(m) => m.values().any(has_control_escapes),
        _ => false,
    }
}

fn into_object(v: Value) -> Result<Map<String, Value>> {
    match v {
        Value::Object(m) => Ok(m),
        _ => Err(Error::Response("expected a JSON object".into())),
    }
}

/// Doubles backslashes inside strings that do not start a valid JSON escape.
/// `\b` and `\f` are treated as LaTeX (`\begin`, `\frac`), not control
/// characters.
fn repair_escapes(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len() + 16);
    let mut in_string = false;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '"' {
            in_string = !in_string;
        } else if c == '\\' && in_string {
            match chars.get(i + 1) {
                Some('"' | '\\' | '/' | 'n' | 'r' | 't') => {
                    out.push(c);
                    out.push(chars[i + 1]);
                    i += 2;
                    continue;
                }
                Some('u') if chars.get(i + 2..i + 6).is_some_and(|h| h.iter().all(char::is_ascii_hexdigit)) => {
                    out.push(c);
                }
                _ => out.push('\\'),
            }
        }
        out.push(c);
        i += 1;
    }
    out
}

fn unwrap_double_braces(text: &str) -> Option<String> {
    let t = text.trim();
    let inner = t.strip_prefix("{{")?;
    let end = inner.rfind("}}")?;
    Some(format!("{{{}}}", &inner[..end]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn correction_preamble_stripped() {
        let c = parse_correction(
            "Here is the corrected version of the text:\n\nHighly penetrating radiation, such as γ-rays.",
        )
        .unwrap();
        assert_eq!(c.text, "Highly penetrating radiation, such as γ-rays.");
        assert!(c.preamble_found);
    }

    #[test]
    fn correction_without_preamble_warns() {
        let c = parse_correction("  clean text \n").unwrap();
        assert_eq!(c.text, "clean text");
        assert!(!c.preamble_found);
    }

    #[test]
    fn correction_only_preamble_is_empty() {
        assert!(matches!(
            parse_correction("Here is the corrected version of the text:\n  "),
            Err(Error::EmptyCorrection)
        ));
        assert!(matches!(parse_correction(""), Err(Error::EmptyCorrection)));
    }

    #[test]
    fn educational_score_variants() {
        assert_eq!(parse_educational_score("blah. Educational score: 3").unwrap(), 3);
        assert_eq!(parse_educational_score("Educational score:  4\n").unwrap(), 4);
        assert_eq!(
            parse_educational_score("Educational score: 1 ... revised Educational score: 2").unwrap(),
            2
        );
        assert_eq!(parse_educational_score("Educational score: <5>").unwrap(), 5);
        assert!(matches!(parse_educational_score("Educational score: 7"), Err(Error::Range { .. })));
        assert!(matches!(parse_educational_score("Educational score: -1"), Err(Error::Range { .. })));
        assert!(matches!(parse_educational_score("Educational score: 99999999999"), Err(Error::Range { .. })));
        assert!(matches!(parse_educational_score("no marker here"), Err(Error::Response(_))));
        assert!(matches!(parse_educational_score("Educational score: high"), Err(Error::Response(_))));
    }

    #[test]
    fn generation_minimal_and_fenced() {
        let plain = parse_generation(r#"{"text": "p", "answer": "a"}"#).unwrap();
        assert_eq!((plain.context.as_str(), plain.answer.as_str()), ("p", "a"));
        let fenced = parse_generation("```json\n{\"text\": \"p\", \"answer\": \"a\"}\n```").unwrap();
        assert_eq!(fenced, plain);
    }

    #[test]
    fn generation_field_errors() {
        match parse_generation(r#"{"text": "p"}"#) {
            Err(Error::Schema { field, .. }) => assert_eq!(field, "answer"),
            other => panic!("unexpected {other:?}"),
        }
        match parse_generation(r#"{"text": 3, "answer": "a"}"#) {
            Err(Error::Schema { field, message }) => {
                assert_eq!(field, "text");
                assert!(message.contains("type error"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_generation("no json"), Err(Error::Response(_))));
    }

    #[test]
    fn generation_repairs_latex_escapes() {
        let raw = r#"{"text": "see \begin{table}\centering \hline", "answer": "A,B"}"#;
        let g = parse_generation(raw).unwrap();
        assert_eq!(g.context, r"see \begin{table}\centering \hline");
    }

    #[test]
    fn generation_prefers_latex_over_control_escapes() {
        let raw = r#"{"text": "\begin{table} \frac{1}{2}", "answer": "a"}"#;
        assert_eq!(parse_generation(raw).unwrap().context, r"\begin{table} \frac{1}{2}");
    }

    #[test]
    fn generation_unwraps_double_braces() {
        let g = parse_generation("{{\n\"text\": \"p\",\n\"answer\": \"a\"\n}}").unwrap();
        assert_eq!(g.answer, "a");
    }

    #[test]
    fn generation_ignores_trailing_prose() {
        let g = parse_generation("Sure! {\"text\": \"p\", \"answer\": \"a\"} Hope this helps {").unwrap();
        assert_eq!(g.context, "p");
    }

    #[test]
    fn rating_recomputes_total() {
        let text = "Explanation: fine\n====================\n{\"Clarity\": 5, \"Complexity\": 2, \"Correctness\": 5, \"Usefulness\": 4, \"Adaptability\": 4, \"Total\": 19}";
        let s = parse_rating(text).unwrap();
        assert_eq!(s.total, 20);
        assert_eq!(s.explanation, "fine");
    }

    #[test]
    fn rating_errors() {
        assert!(matches!(parse_rating("just prose"), Err(Error::Response(_))));
        assert!(matches!(
            parse_rating("x\n====================\n{\"Clarity\": 6, \"Complexity\": 2, \"Correctness\": 5, \"Usefulness\": 4, \"Adaptability\": 4}"),
            Err(Error::Range { .. })
        ));
        assert!(matches!(
            parse_rating("x\n====================\n{\"Clarity\": 5}"),
            Err(Error::Response(_))
        ));
        assert!(matches!(
            parse_rating("x\n====================\nnot json"),
            Err(Error::Response(_))
        ));
    }

    #[test]
    fn rating_lower_bound() {
        let s = AspectScores::new([0; 5], "none").unwrap();
        let parsed = parse_rating(&format_rating(&s)).unwrap();
        assert_eq!(parsed.total, 0);
        assert_eq!(parsed.average(), 0.0);
    }
}
