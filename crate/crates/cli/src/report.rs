//! The `report` artifact: one `key = value` line per entry.

use std::fmt::Write as _;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bound {
    /// Passes if `value < tol`.
    Below(f64),
    /// Passes if `value >= min`.
    AtLeast(f64),
}

impl Bound {
    pub fn holds(self, v: f64) -> bool {
        match self {
            Bound::Below(t) => v < t,
            Bound::AtLeast(m) => v >= m,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Entry {
    Metric { key: String, value: f64, bound: Option<Bound> },
    Series { key: String, points: Vec<(f64, f64)> },
    Note { key: String, text: String },
}

impl Entry {
    pub fn key(&self) -> &str {
        match self {
            Entry::Metric { key, .. } | Entry::Series { key, .. } | Entry::Note { key, .. } => key,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub entries: Vec<Entry>,
}

impl Report {
    pub fn note(&mut self, key: impl Into<String>, text: impl Into<String>) {
        self.entries.push(Entry::Note { key: key.into(), text: text.into() });
    }

    pub fn info(&mut self, key: impl Into<String>, value: f64) {
        self.entries.push(Entry::Metric { key: key.into(), value, bound: None });
    }

    pub fn below(&mut self, key: impl Into<String>, value: f64, tol: f64) {
        self.entries.push(Entry::Metric { key: key.into(), value, bound: Some(Bound::Below(tol)) });
    }

    pub fn at_least(&mut self, key: impl Into<String>, value: f64, min: f64) {
        self.entries.push(Entry::Metric { key: key.into(), value, bound: Some(Bound::AtLeast(min)) });
    }

    pub fn series(&mut self, key: impl Into<String>, points: Vec<(f64, f64)>) {
        self.entries.push(Entry::Series { key: key.into(), points });
    }

    pub fn metric(&self, key: &str) -> Option<f64> {
        self.entries.iter().find_map(|e| match e {
            Entry::Metric { key: k, value, .. } if k == key => Some(*value),
            _ => None,
        })
    }

    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key() == key)
    }

    /// Bounded metrics that fail (NaN fails every bound).
    pub fn failures(&self) -> Vec<&Entry> {
        self.entries
            .iter()
            .filter(|e| matches!(e, Entry::Metric { value, bound: Some(b), .. } if !b.holds(*value)))
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            match e {
                Entry::Metric { key, value, bound: None } => {
                    let _ = writeln!(out, "{key} = {value:e}");
                }
                Entry::Metric { key, value, bound: Some(b) } => {
                    let verdict = if b.holds(*value) { "pass" } else { "FAIL" };
                    let _ = match b {
                        Bound::Below(t) => writeln!(out, "{key} = {value:e} < {t:e} {verdict}"),
                        Bound::AtLeast(m) => writeln!(out, "{key} = {value:e} >= {m:e} {verdict}"),
                    };
                }
                Entry::Series { key, points } => {
                    let body: Vec<String> = points.iter().map(|(t, v)| format!("{t:e}:{v:e}")).collect();
                    let _ = writeln!(out, "{key} = [{}]", body.join(", "));
                }
                Entry::Note { key, text } => {
                    let _ = writeln!(out, "{key} = {text}");
                }
            }
        }
        let _ = writeln!(out, "status = {}", if self.passed() { "pass" } else { "fail" });
        out
    }
}
