//! Pass/fail records for inequalities checked along a run.

use std::fmt;

/// Relative slack allowed on every checked inequality.
pub const RELATIVE_SLACK: f64 = 1e-9;

/// One inequality `lhs <= rhs`, checked at several indices.
///
/// `min_margin` is the smallest `rhs - lhs` seen and `worst_index` where it
/// occurred. The check passes when every margin is at least
/// `-RELATIVE_SLACK * (1 + scale)` with `scale = max(|lhs|, |rhs|)` at that index.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub name: String,
    pub min_margin: f64,
    pub worst_index: usize,
    pub checked: usize,
    pub violations: usize,
    pub passed: bool,
}

impl Certificate {
    pub fn new(name: impl Into<String>) -> Self {
        Certificate {
            name: name.into(),
            min_margin: f64::INFINITY,
            worst_index: 0,
            checked: 0,
            violations: 0,
            passed: true,
        }
    }

    /// Records `lhs <= rhs` at `index` with the default relative slack.
    pub fn check(&mut self, index: usize, lhs: f64, rhs: f64) {
        let scale = lhs.abs().max(rhs.abs());
        self.check_with_slack(index, lhs, rhs, RELATIVE_SLACK * (1.0 + scale));
    }

    /// Records `lhs <= rhs + slack` at `index`.
    pub fn check_with_slack(&mut self, index: usize, lhs: f64, rhs: f64, slack: f64) {
        let margin = rhs - lhs;
        self.checked += 1;
        if margin < self.min_margin || self.checked == 1 {
            self.min_margin = margin;
            self.worst_index = index;
        }
        if !(margin >= -slack) {
            self.violations += 1;
            self.passed = false;
        }
    }
}

impl fmt::Display for Certificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: min margin {:e} at {} ({} checked, {} violated)",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.min_margin,
            self.worst_index,
            self.checked,
            self.violations
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CertificateReport {
    pub certificates: Vec<Certificate>,
}

impl CertificateReport {
    pub fn all_passed(&self) -> bool {
        self.certificates.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&Certificate> {
        self.certificates.iter().find(|c| c.name == name)
    }

    pub fn push(&mut self, c: Certificate) {
        self.certificates.push(c);
    }
}

impl fmt::Display for CertificateReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.certificates {
            writeln!(f, "{c}")?;
        }
        Ok(())
    }
}
