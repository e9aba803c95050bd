//! Pass/fail reports for inequality checks.

use std::fmt;
use std::io::Write;

use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckItem {
    pub label: String,
    pub lhs: f64,
    pub rhs: f64,
    /// Signed slack of the inequality; negative means violated.
    pub margin: f64,
    pub pass: bool,
}

/// A list of checked inequalities sharing one tolerance.
///
/// An item passes iff its margin is at least `-tolerance` (NaN margins fail).
#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub tolerance: f64,
    pub items: Vec<CheckItem>,
    /// Locations the check deliberately did not assess.
    pub skipped: usize,
    pub notes: Vec<String>,
}

impl CheckReport {
    pub fn new(name: impl Into<String>, tolerance: f64) -> Self {
        CheckReport {
            name: name.into(),
            tolerance,
            items: Vec::new(),
            skipped: 0,
            notes: Vec::new(),
        }
    }

    pub fn push_margin(&mut self, label: impl Into<String>, lhs: f64, rhs: f64, margin: f64) {
        let pass = margin >= -self.tolerance;
        self.items.push(CheckItem {
            label: label.into(),
            lhs,
            rhs,
            margin,
            pass,
        });
    }

    /// Records `lhs ≥ rhs`.
    pub fn push_at_least(&mut self, label: impl Into<String>, lhs: f64, rhs: f64) {
        self.push_margin(label, lhs, rhs, lhs - rhs);
    }

    /// Records `lhs ≤ rhs`.
    pub fn push_at_most(&mut self, label: impl Into<String>, lhs: f64, rhs: f64) {
        self.push_margin(label, lhs, rhs, rhs - lhs);
    }

    /// Records `lhs ≤ rhs` with the margin measured relative to the larger of
    /// 1 and the magnitudes involved.
    pub fn push_at_most_relative(&mut self, label: impl Into<String>, lhs: f64, rhs: f64) {
        let scale = 1.0f64.max(lhs.abs()).max(rhs.abs());
        self.push_margin(label, lhs, rhs, (rhs - lhs) / scale);
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    pub fn passed(&self) -> bool {
        self.items.iter().all(|i| i.pass)
    }

    pub fn pass_count(&self) -> usize {
        self.items.iter().filter(|i| i.pass).count()
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckItem> {
        self.items.iter().filter(|i| !i.pass)
    }

    /// Smallest margin over all items (`None` when empty).
    pub fn worst_margin(&self) -> Option<f64> {
        self.items.iter().map(|i| i.margin).reduce(f64::min)
    }

    /// Largest |margin| over all items (0 when empty).
    pub fn max_abs_margin(&self) -> f64 {
        self.items.iter().fold(0.0, |m, i| m.max(i.margin.abs()))
    }

    /// Appends the items of `other`, re-judged at this report's tolerance.
    pub fn absorb(&mut self, other: CheckReport) {
        for item in other.items {
            self.push_margin(
                format!("{}/{}", other.name, item.label),
                item.lhs,
                item.rhs,
                item.margin,
            );
        }
        self.skipped += other.skipped;
        self.notes.extend(other.notes);
    }

    /// CSV of items: `label,lhs,rhs,margin,pass`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["label", "lhs", "rhs", "margin", "pass"])?;
        for i in &self.items {
            w.write_record([
                i.label.clone(),
                i.lhs.to_string(),
                i.rhs.to_string(),
                i.margin.to_string(),
                i.pass.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# report {}", self.name)?;
        writeln!(f, "# tolerance {}", self.tolerance)?;
        for note in &self.notes {
            writeln!(f, "# note {note}")?;
        }
        for i in &self.items {
            writeln!(
                f,
                "{}\tlhs={}\trhs={}\tmargin={}\t{}",
                i.label,
                i.lhs,
                i.rhs,
                i.margin,
                if i.pass { "PASS" } else { "FAIL" }
            )?;
        }
        writeln!(
            f,
            "# summary passed={} total={} skipped={} status={}",
            self.pass_count(),
            self.items.len(),
            self.skipped,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pass_flag_follows_margin_and_tolerance() {
        let mut r = CheckReport::new("t", 1e-3);
        r.push_at_most("ok", 1.0, 1.0005);
        r.push_at_most("slack", 1.0005, 1.0);
        r.push_at_most("bad", 1.01, 1.0);
        r.push_at_least("nan", f64::NAN, 0.0);
        let flags: Vec<bool> = r.items.iter().map(|i| i.pass).collect();
        assert_eq!(flags, [true, true, false, false]);
        assert_eq!(r.pass_count(), 2);
        assert!(!r.passed());
    }

    #[test]
    fn text_format_has_one_line_per_item() {
        let mut r = CheckReport::new("demo", 0.0);
        r.push_at_least("a", 2.0, 1.0);
        let text = r.to_string();
        assert!(text.contains("a\tlhs=2\trhs=1\tmargin=1\tPASS"));
        assert!(text.contains("# summary passed=1 total=1 skipped=0 status=PASS"));
    }
}
