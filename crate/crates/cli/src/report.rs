use std::fmt::Display;
use std::io::Write;
use std::path::Path;
use std::time::Duration;

use anyhow::{Context, Result};

/// Line-oriented run report.
///
/// Config and results come first as `key=value` lines (or `# key=value` in
/// CSV mode), then any table, then the `# timing` block. Everything above the
/// timing block is deterministic for a given input.
#[derive(Debug, Default)]
pub struct Report {
    csv: bool,
    body: String,
    timing: Vec<String>,
}

impl Report {
    pub fn new() -> Self {
        Report::default()
    }

    /// Key/value lines are written as comments so the file stays valid CSV.
    pub fn csv() -> Self {
        Report {
            csv: true,
            ..Report::default()
        }
    }

    pub fn kv(&mut self, key: &str, value: impl Display) {
        let prefix = if self.csv { "# " } else { "" };
        self.body.push_str(&format!("{prefix}{key}={value}\n"));
    }

    pub fn line(&mut self, line: impl AsRef<str>) {
        self.body.push_str(line.as_ref());
        self.body.push('\n');
    }

    pub fn timing(&mut self, key: &str, d: Duration) {
        self.timing.push(format!("{key}={:.6}", d.as_secs_f64()));
    }

    pub fn render(&self) -> String {
        let mut out = self.body.clone();
        if !self.timing.is_empty() {
            out.push_str("# timing\n");
            for t in &self.timing {
                out.push_str(&format!("# {t}\n"));
            }
        }
        out
    }

    /// To `path`, or stdout when none is given.
    pub fn emit(&self, path: Option<&Path>) -> Result<()> {
        let text = self.render();
        match path {
            Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
            None => {
                let mut out = std::io::stdout().lock();
                out.write_all(text.as_bytes()).context("writing to stdout")
            }
        }
    }
}

/// Round-trip float text, in exponent form when plain notation gets long.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-4..1e9).contains(&a) {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

pub fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}
