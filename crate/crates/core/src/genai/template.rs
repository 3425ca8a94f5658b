use std::collections::BTreeMap;

use crate::error::{Error, Result};

const STAKEHOLDERS: &str = include_str!("../../data/templates/stakeholders.txt");
const VIGNETTE: &str = include_str!("../../data/templates/vignette.txt");
const ANNOTATE: &str = include_str!("../../data/templates/annotate.txt");

pub const TEMPLATE_IDS: [&str; 3] = ["stakeholders", "vignette", "annotate"];

pub fn template_text(template_id: &str) -> Result<&'static str> {
    match template_id {
        "stakeholders" => Ok(STAKEHOLDERS),
        "vignette" => Ok(VIGNETTE),
        "annotate" => Ok(ANNOTATE),
        other => Err(Error::UnknownTemplate(other.to_string())),
    }
}

/// Placeholder names referenced by a template, in order of first use.
pub fn template_variables(template_id: &str) -> Result<Vec<String>> {
    let text = template_text(template_id)?;
    let mut vars: Vec<String> = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        let Some(end) = after.find("}}") else { break };
        let name = after[..end].trim().to_string();
        if !vars.contains(&name) {
            vars.push(name);
        }
        rest = &after[end + 2..];
    }
    Ok(vars)
}

pub fn render_template(template_id: &str, variables: &BTreeMap<String, String>) -> Result<String> {
    let text = template_text(template_id)?;
    let mut out = String::with_capacity(text.len() + 256);
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after
            .find("}}")
            .expect("bundled templates have balanced placeholders");
        let name = after[..end].trim();
        let value = variables.get(name).ok_or_else(|| Error::MissingVariable {
            template: template_id.to_string(),
            variable: name.to_string(),
        })?;
        out.push_str(&escape_value(value));
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Escapes quotes and backslashes so interpolated text cannot close a quoted
/// block, and splits brace pairs so it cannot open a placeholder.
fn escape_value(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    for c in value.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            '\n' | '\t' => out.push(c),
            c if c.is_control() => {}
            '{' | '}' => {
                if out.ends_with(c) {
                    out.push(' ');
                }
                out.push(c);
            }
            c => out.push(c),
        }
    }
    out
}

/// Removes escape pairs, leaving only the template's own structure.
#[cfg(test)]
fn strip_escapes(text: &str) -> String {
    let mut out = String::new();
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            chars.next();
        } else {
            out.push(c);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vars(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn stakeholder_prompt_embeds_loan_example() {
        let p = render_template("stakeholders", &vars(&[("domain", "hiring")])).unwrap();
        assert!(p.contains("an AI system to scan the information of loan applicants"));
        assert!(p.contains("\"\"\"hiring\"\"\""));
    }

    #[test]
    fn vignette_prompt_demands_second_person() {
        let p = render_template(
            "vignette",
            &vars(&[("domain", "hiring"), ("bias", "representation"), ("stakeholder", "a job applicant")]),
        )
        .unwrap();
        assert!(p.contains("second-person perspective"));
        assert!(p.contains("domain-specific context anchor"));
        assert!(p.contains("representation bias"));
    }

    #[test]
    fn errors() {
        assert!(matches!(
            render_template("vignette", &vars(&[("domain", "hiring"), ("stakeholder", "x")])),
            Err(Error::MissingVariable { .. })
        ));
        assert!(matches!(
            render_template("nope", &BTreeMap::new()),
            Err(Error::UnknownTemplate(_))
        ));
    }

    #[test]
    fn variables_listed() {
        assert_eq!(template_variables("vignette").unwrap(), ["bias", "domain", "stakeholder"]);
        assert_eq!(template_variables("stakeholders").unwrap(), ["domain"]);
    }

    proptest! {
        // Interpolated text can never add or close a quoted block or a placeholder.
        #[test]
        fn injection_guard(domain in ".*", bias in "[a-z\"{}\\\\]*", who in "(\"|\\{|\\}|\\\\|[a-z ])*") {
            let v = vars(&[("domain", &domain), ("bias", &bias), ("stakeholder", &who)]);
            let out = render_template("vignette", &v).unwrap();
            let template = template_text("vignette").unwrap();
            let stripped = strip_escapes(&out);
            prop_assert_eq!(stripped.matches('"').count(), template.matches('"').count());
            prop_assert!(!out.contains("{{"));
        }
    }
}
