//! The `RESULT key=value ...` and `ERROR code=... message=...` lines.

use std::fmt;
use std::path::Path;

/// Values with spaces, quotes or `=` are written as JSON strings.
pub fn quote(v: &str) -> String {
    if !v.is_empty() && !v.contains(|c: char| c.is_whitespace() || c == '"' || c == '=') {
        v.to_string()
    } else {
        serde_json::to_string(v).expect("strings serialize")
    }
}

pub fn float(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

pub fn list<T: ToString>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

#[derive(Debug, Default, Clone)]
pub struct Report {
    fields: Vec<(String, String)>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(mut self, key: &str, value: impl ToString) -> Self {
        self.fields.push((key.to_string(), value.to_string()));
        self
    }

    pub fn float(self, key: &str, value: f64) -> Self {
        self.put(key, float(value))
    }

    pub fn path(self, key: &str, value: &Path) -> Self {
        self.put(key, value.display())
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("RESULT")?;
        for (k, v) in &self.fields {
            write!(f, " {k}={}", quote(v))?;
        }
        Ok(())
    }
}

/// A failed command: one line on stderr, exit status 1.
#[derive(Debug)]
pub struct Failure {
    pub code: &'static str,
    pub message: String,
}

impl Failure {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let one_line = self.message.replace('\n', " ");
        write!(f, "ERROR code={} message={}", self.code, quote(&one_line))
    }
}

impl From<bisync_core::Error> for Failure {
    fn from(e: bisync_core::Error) -> Self {
        use bisync_core::Error::*;
        let code = match &e {
            InvalidInput(_) => "invalid",
            Dimension { .. } => "dimension",
            Parse { .. } => "parse",
            Io { .. } => "io",
        };
        Self::new(code, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::new("io", e.to_string())
    }
}

pub type CmdResult = Result<Report, Failure>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn result_line_quotes_only_when_needed() {
        let r = Report::new()
            .put("ok", 3)
            .float("rate", 0.5)
            .float("zero", -0.0)
            .put("msg", "two words");
        assert_eq!(
            r.to_string(),
            r#"RESULT ok=3 rate=0.5 zero=0 msg="two words""#
        );
        let e = Failure::new("io", "a\nb");
        assert_eq!(e.to_string(), r#"ERROR code=io message="a b""#);
        assert_eq!(float(2.0), "2");
        assert_eq!(float(1.23456), "1.2346");
        assert_eq!(quote(""), r#""""#);
    }
}
