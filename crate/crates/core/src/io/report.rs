//! Ordered key-value experiment reports, emitted both as `key: value` text
//! and as `section,key,value` CSV rows.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;

#[derive(Debug, Clone, Default)]
pub struct Report {
    rows: Vec<(String, String, String)>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, section: &str, key: &str, value: impl std::fmt::Display) {
        self.rows
            .push((section.to_string(), key.to_string(), value.to_string()));
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.rows
            .iter()
            .find(|(s, k, _)| s == section && k == key)
            .map(|(_, _, v)| v.as_str())
    }

    pub fn get_f64(&self, section: &str, key: &str) -> Option<f64> {
        self.get(section, key).and_then(|v| v.parse().ok())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for (section, key, value) in &self.rows {
            if section != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{section}]");
                current = section;
            }
            let _ = writeln!(out, "{key}: {value}");
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("section,key,value\n");
        for (section, key, value) in &self.rows {
            let _ = writeln!(out, "{section},{key},{value}");
        }
        out
    }

    pub fn write(&self, text_path: &Path, csv_path: &Path) -> Result<()> {
        std::fs::write(text_path, self.to_text())?;
        std::fs::write(csv_path, self.to_csv())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_group_and_order_is_stable() {
        let mut r = Report::new();
        r.push("range", "width_m", 0.0332);
        r.push("range", "psl_db", -13.2);
        r.push("timing", "n_pulses", 128);
        let text = r.to_text();
        assert!(text.starts_with("[range]\nwidth_m: 0.0332\npsl_db: -13.2\n"));
        assert!(text.contains("[timing]\nn_pulses: 128"));
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert_eq!(r.get_f64("range", "psl_db"), Some(-13.2));
    }
}
