use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::tokenizer::{detokenize, tokenize};

/// One document with its controlling aspects and reference summaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlledExample {
    pub document: Vec<String>,
    pub aspects: Vec<String>,
    /// Reference summary for the given aspects; required for training and
    /// evaluation, absent only for pure inference inputs.
    pub controlled_summary: Option<Vec<String>>,
    pub general_summary: Option<Vec<String>>,
}

impl ControlledExample {
    pub fn new(document: Vec<String>, aspects: Vec<String>) -> Result<Self> {
        if document.is_empty() {
            return Err(Error::data("example has an empty document"));
        }
        if aspects.is_empty() {
            return Err(Error::data("example has no controlling aspects"));
        }
        Ok(ControlledExample {
            document,
            aspects,
            controlled_summary: None,
            general_summary: None,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Corpus {
    pub examples: Vec<ControlledExample>,
    pub source: String,
    pub split: String,
}

/// On-disk line shape: `document` and `summary` are strings, `aspects` a
/// string or an array of strings that get concatenated in order.
#[derive(Deserialize)]
struct RawLine {
    document: String,
    aspects: AspectField,
    summary: String,
    #[serde(default)]
    general_summary: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AspectField {
    One(String),
    Many(Vec<String>),
}

#[derive(Serialize)]
struct RawLineOut<'a> {
    document: String,
    aspects: Vec<&'a str>,
    summary: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    general_summary: Option<String>,
}

impl Corpus {
    pub fn new(examples: Vec<ControlledExample>, source: &str, split: &str) -> Self {
        Corpus {
            examples,
            source: source.to_string(),
            split: split.to_string(),
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Read a JSONL corpus, tokenizing every field. Line numbers are
    /// 1-based in errors.
    pub fn load_jsonl(path: &Path) -> Result<Corpus> {
        let content = fs::read_to_string(path)?;
        let source = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "jsonl".to_string());
        let mut examples = Vec::new();
        for (i, line) in content.lines().enumerate() {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let raw: RawLine = serde_json::from_str(line)
                .map_err(|e| Error::data_at(lineno, e.to_string()))?;
            let aspects_text = match raw.aspects {
                AspectField::One(s) => s,
                AspectField::Many(parts) => parts.join(" "),
            };
            let document = tokenize(&raw.document);
            let aspects = tokenize(&aspects_text);
            if document.is_empty() {
                return Err(Error::data_at(lineno, "document has no tokens"));
            }
            if aspects.is_empty() {
                return Err(Error::data_at(lineno, "aspects have no tokens"));
            }
            let mut ex = ControlledExample::new(document, aspects)
                .map_err(|e| Error::data_at(lineno, e.to_string()))?;
            ex.controlled_summary = Some(tokenize(&raw.summary));
            ex.general_summary = raw.general_summary.as_deref().map(tokenize);
            examples.push(ex);
        }
        Ok(Corpus::new(examples, &source, "all"))
    }

    /// Write back to the same JSONL schema.
    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        for ex in &self.examples {
            let summary = ex
                .controlled_summary
                .as_ref()
                .ok_or_else(|| Error::data("example without a controlled summary cannot be saved"))?;
            let line = RawLineOut {
                document: detokenize(&ex.document),
                aspects: ex.aspects.iter().map(String::as_str).collect(),
                summary: detokenize(summary),
                general_summary: ex.general_summary.as_deref().map(detokenize),
            };
            serde_json::to_writer(&mut f, &line)?;
            f.write_all(b"\n")?;
        }
        Ok(())
    }

    /// All token streams in the corpus, for vocabulary building.
    pub fn token_streams(&self) -> impl Iterator<Item = &[String]> {
        self.examples.iter().flat_map(|ex| {
            [Some(ex.document.as_slice()), Some(ex.aspects.as_slice())]
                .into_iter()
                .chain([
                    ex.controlled_summary.as_deref(),
                    ex.general_summary.as_deref(),
                ])
                .flatten()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn loads_single_aspect_string() {
        let f = write_lines(&[r#"{"document":"x y","aspects":"x","summary":"x"}"#]);
        let c = Corpus::load_jsonl(f.path()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.examples[0].aspects, vec!["x"]);
        assert_eq!(c.examples[0].document, vec!["x", "y"]);
    }

    #[test]
    fn concatenates_aspect_arrays() {
        let f = write_lines(&[
            r#"{"document":"d","aspects":["snow","weather"],"summary":"s"}"#,
        ]);
        let c = Corpus::load_jsonl(f.path()).unwrap();
        assert_eq!(c.examples[0].aspects, vec!["snow", "weather"]);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = write_lines(&["not json"]);
        let err = Corpus::load_jsonl(f.path()).unwrap_err();
        match err {
            Error::Data { line, .. } => assert_eq!(line, Some(1)),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn missing_field_is_schema_error() {
        let f = write_lines(&[r#"{"document":"d","aspects":"a"}"#]);
        let err = Corpus::load_jsonl(f.path()).unwrap_err();
        assert!(err.to_string().contains("summary"), "got: {err}");
    }

    #[test]
    fn jsonl_roundtrip() {
        let f = write_lines(&[
            r#"{"document":"a b c","aspects":["a"],"summary":"a b","general_summary":"c"}"#,
        ]);
        let c = Corpus::load_jsonl(f.path()).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        c.save_jsonl(out.path()).unwrap();
        let c2 = Corpus::load_jsonl(out.path()).unwrap();
        assert_eq!(c.examples, c2.examples);
    }
}
