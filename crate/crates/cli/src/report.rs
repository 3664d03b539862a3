//! Report assembly and rendering.
//!
//! Every subcommand builds a [`Doc`]: a list of labeled expressions plus a
//! list of pass/fail checks, then renders it as plain text, LaTeX, or JSON.
//! Output is fully deterministic — no timings, no absolute paths beyond the
//! model file as given, and JSON objects are emitted with sorted keys — so
//! identical invocations produce byte-identical reports.

use serde_json::{json, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fmt {
    Text,
    Latex,
    Json,
}

pub struct Item {
    pub key: String,
    pub latex_key: String,
    pub text: String,
    pub latex: String,
}

pub struct Check {
    pub label: String,
    pub pass: bool,
    /// Largest observed residual magnitude; `Some(0.0)` for an exact
    /// symbolic zero, `None` when no magnitude is available.
    pub max_abs: Option<f64>,
    pub detail: Option<String>,
}

pub struct Doc {
    pub command: String,
    pub model: String,
    pub seed: Option<u64>,
    pub items: Vec<Item>,
    pub checks: Vec<Check>,
}

impl Doc {
    pub fn new(command: &str, model: &str) -> Doc {
        Doc {
            command: command.to_string(),
            model: model.to_string(),
            seed: None,
            items: Vec::new(),
            checks: Vec::new(),
        }
    }

    pub fn item(&mut self, key: &str, latex_key: &str, text: String, latex: String) {
        self.items.push(Item {
            key: key.to_string(),
            latex_key: latex_key.to_string(),
            text,
            latex,
        });
    }

    pub fn check(&mut self, label: &str, pass: bool, max_abs: Option<f64>, detail: Option<String>) {
        self.checks.push(Check { label: label.to_string(), pass, max_abs, detail });
    }

    /// True when every check passed (vacuously true without checks).
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn render(&self, fmt: Fmt) -> String {
        match fmt {
            Fmt::Text => self.render_text(),
            Fmt::Latex => self.render_latex(),
            Fmt::Json => self.render_json(),
        }
    }

    fn render_text(&self) -> String {
        let mut out = format!("vartool {} {}\n", self.command, self.model);
        if !self.items.is_empty() {
            out.push('\n');
            for it in &self.items {
                out.push_str(&format!("{} = {}\n", it.key, it.text));
            }
        }
        if !self.checks.is_empty() {
            out.push('\n');
            for c in &self.checks {
                out.push_str(&format!("check {}: {}", c.label, verdict_word(c.pass)));
                if let Some(m) = c.max_abs {
                    out.push_str(&format!(" (max |residual| {m:.3e})"));
                }
                if let Some(d) = &c.detail {
                    out.push_str(&format!(" — {d}"));
                }
                out.push('\n');
            }
            out.push_str(&format!("verdict: {}\n", verdict_word(self.pass())));
        }
        out
    }

    fn render_latex(&self) -> String {
        let mut out = format!("% vartool {} {}\n", self.command, self.model);
        if !self.items.is_empty() {
            out.push_str("\\begin{align*}\n");
            for it in &self.items {
                out.push_str(&format!("{} &= {} \\\\\n", it.latex_key, it.latex));
            }
            out.push_str("\\end{align*}\n");
        }
        for c in &self.checks {
            out.push_str(&format!("% check {}: {}", c.label, verdict_word(c.pass)));
            if let Some(m) = c.max_abs {
                out.push_str(&format!(" (max |residual| {m:.3e})"));
            }
            out.push('\n');
        }
        if !self.checks.is_empty() {
            out.push_str(&format!("% verdict: {}\n", verdict_word(self.pass())));
        }
        out
    }

    fn render_json(&self) -> String {
        let items: Value = self
            .items
            .iter()
            .map(|it| (it.key.clone(), Value::String(it.text.clone())))
            .collect::<serde_json::Map<String, Value>>()
            .into();
        let checks: Value = self
            .checks
            .iter()
            .map(|c| {
                (
                    c.label.clone(),
                    json!({
                        "pass": c.pass,
                        "max_abs_residual": c.max_abs,
                        "detail": c.detail,
                    }),
                )
            })
            .collect::<serde_json::Map<String, Value>>()
            .into();
        let zero = if self.checks.is_empty() {
            Value::Null
        } else {
            Value::Bool(self.pass())
        };
        let max_abs = self
            .checks
            .iter()
            .filter_map(|c| c.max_abs)
            .fold(None::<f64>, |acc, v| Some(acc.map_or(v, |a| a.max(v))));
        let doc = json!({
            "schema": 1,
            "command": self.command,
            "model": self.model,
            "seed": self.seed,
            "items": items,
            "checks": checks,
            "zero": zero,
            "max_abs_residual": max_abs,
        });
        let mut s = serde_json::to_string_pretty(&doc).expect("report serialization");
        s.push('\n');
        s
    }
}

fn verdict_word(pass: bool) -> &'static str {
    if pass {
        "pass"
    } else {
        "fail"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Doc {
        let mut d = Doc::new("balance", "models/demo.vl");
        d.seed = Some(7);
        d.item("B[0]", "B_{0}", "0".into(), "0".into());
        d.check("component 0", true, Some(0.0), None);
        d
    }

    #[test]
    fn json_reports_are_byte_identical_across_invocations() {
        assert_eq!(sample().render(Fmt::Json), sample().render(Fmt::Json));
    }

    #[test]
    fn json_carries_the_verdict_fields() {
        let v: Value = serde_json::from_str(&sample().render(Fmt::Json)).unwrap();
        assert_eq!(v["command"], "balance");
        assert_eq!(v["zero"], true);
        assert_eq!(v["seed"], 7);
        assert_eq!(v["max_abs_residual"], 0.0);
        assert_eq!(v["schema"], 1);
    }

    #[test]
    fn text_report_ends_with_a_verdict_line() {
        let t = sample().render(Fmt::Text);
        assert!(t.ends_with("verdict: pass\n"), "{t}");
        assert!(t.contains("check component 0: pass"));
    }

    #[test]
    fn a_failing_check_fails_the_whole_report() {
        let mut d = sample();
        d.check("component 1", false, None, Some("witness at trial 3".into()));
        assert!(!d.pass());
        assert!(d.render(Fmt::Text).contains("verdict: fail"));
    }
}
