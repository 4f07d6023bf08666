use crate::error::{Error, Result};

/// One `key = value` entry with its source line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// Parsed `[section]` / `key = value` document, order preserved.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IniDoc {
    pub sections: Vec<(String, Vec<Entry>)>,
}

impl IniDoc {
    /// Parses the line grammar: `#` comments, blank lines, `[section]`
    /// headers and `key = value` pairs. Keys outside a section, repeated
    /// sections and repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = IniDoc::default();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split_once('#').map_or(raw, |(a, _)| a).trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Config(format!("line {line_no}: unterminated section header")))?
                    .trim();
                if name.is_empty() {
                    return Err(Error::Config(format!("line {line_no}: empty section name")));
                }
                if doc.sections.iter().any(|(s, _)| s == name) {
                    return Err(Error::Config(format!("line {line_no}: section [{name}] repeated")));
                }
                doc.sections.push((name.to_string(), Vec::new()));
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line_no}: expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(Error::Config(format!("line {line_no}: empty key")));
            }
            let (section, entries) = doc
                .sections
                .last_mut()
                .ok_or_else(|| Error::Config(format!("line {line_no}: key `{key}` outside any section")))?;
            if entries.iter().any(|e| e.key == key) {
                return Err(Error::Config(format!("line {line_no}: key `{key}` repeated in [{section}]")));
            }
            entries.push(Entry {
                key: key.to_string(),
                value: value.to_string(),
                line: line_no,
            });
        }
        Ok(doc)
    }

    pub fn section(&self, name: &str) -> Option<&[Entry]> {
        self.sections.iter().find(|(s, _)| s == name).map(|(_, e)| e.as_slice())
    }
}
