//! Text dataset format.
//!
//! ```text
//! # amtl-data v1 fields=user:1000,item:1000 split_salt=7 test_ratio=0.1
//! 1	user=12	item=845
//! 0	user=3	item=17
//! ```
//!
//! The header declares every field with its vocabulary size. Each event line
//! is a binary label followed by one `field=value` pair per declared field.
//! Whether a line belongs to the test split is a pure function of the split
//! salt and the line's position among the event lines.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use amtl_core::freq::FrequencyCounter;
use amtl_core::{FieldVocab, FrequencyStats, TrainingExample};

use crate::error::{CliError, Result};

pub const HEADER_TAG: &str = "# amtl-data v1";
pub const DEFAULT_TEST_RATIO: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct DataHeader {
    pub fields: Vec<FieldVocab>,
    pub split_salt: u64,
    pub test_ratio: f64,
}

impl DataHeader {
    pub fn to_line(&self) -> String {
        let fields: Vec<String> = self.fields.iter().map(|f| format!("{}:{}", f.name, f.vocab_size)).collect();
        format!(
            "{HEADER_TAG} fields={} split_salt={} test_ratio={}",
            fields.join(","),
            self.split_salt,
            self.test_ratio
        )
    }

    fn parse(line: &str) -> std::result::Result<Self, String> {
        let rest = line.strip_prefix(HEADER_TAG).ok_or_else(|| format!("missing `{HEADER_TAG}` header"))?;
        let mut fields = None;
        let mut split_salt = 0;
        let mut test_ratio = DEFAULT_TEST_RATIO;
        for token in rest.split_whitespace() {
            let (key, value) = token.split_once('=').ok_or_else(|| format!("malformed header token `{token}`"))?;
            match key {
                "fields" => {
                    let mut list = Vec::new();
                    for item in value.split(',') {
                        let (name, vocab) = item.split_once(':').ok_or_else(|| format!("malformed field `{item}`"))?;
                        let vocab: usize = vocab.parse().map_err(|_| format!("bad vocabulary size `{vocab}`"))?;
                        if name.is_empty() || list.iter().any(|f: &FieldVocab| f.name == name) {
                            return Err(format!("empty or duplicate field name `{name}`"));
                        }
                        list.push(FieldVocab::new(name, vocab));
                    }
                    fields = Some(list);
                }
                "split_salt" => split_salt = value.parse().map_err(|_| format!("bad split_salt `{value}`"))?,
                "test_ratio" => {
                    test_ratio = value.parse().map_err(|_| format!("bad test_ratio `{value}`"))?;
                    if !(0.0..=1.0).contains(&test_ratio) {
                        return Err(format!("test_ratio {test_ratio} outside [0, 1]"));
                    }
                }
                _ => return Err(format!("unknown header key `{key}`")),
            }
        }
        let fields = fields.ok_or("header declares no fields")?;
        Ok(Self { fields, split_salt, test_ratio })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DataHeader,
    pub examples: Vec<TrainingExample>,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Whether event line `index` falls in the test split.
pub fn is_test(salt: u64, index: u64, test_ratio: f64) -> bool {
    let h = splitmix64(salt ^ splitmix64(index));
    ((h >> 11) as f64 / (1u64 << 53) as f64) < test_ratio
}

impl Dataset {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, message: String| CliError::Parse { path: PathBuf::from(path), line, message };
        let mut lines = text.lines().enumerate();
        let header = match lines.next() {
            Some((_, line)) => DataHeader::parse(line).map_err(|m| err(1, m))?,
            None => return Err(err(1, "empty file".into())),
        };
        let mut examples = Vec::new();
        for (i, line) in lines {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            examples.push(parse_event(line, &header.fields).map_err(|m| err(i + 1, m))?);
        }
        Ok(Self { header, examples })
    }

    pub fn to_text(&self) -> String {
        let mut out = self.header.to_line();
        out.push('\n');
        for ex in &self.examples {
            out.push(char::from(b'0' + ex.label));
            for (f, id) in self.header.fields.iter().zip(&ex.ids) {
                let _ = write!(out, "\t{}={}", f.name, id);
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| CliError::io(path, e))
    }

    /// `(train, test)` according to the header's salt and ratio.
    pub fn split(&self) -> (Vec<TrainingExample>, Vec<TrainingExample>) {
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (i, ex) in self.examples.iter().enumerate() {
            if is_test(self.header.split_salt, i as u64, self.header.test_ratio) {
                test.push(ex.clone());
            } else {
                train.push(ex.clone());
            }
        }
        (train, test)
    }

    /// Frequency statistics of `examples` over the declared fields.
    pub fn stats_of(&self, examples: &[TrainingExample]) -> Result<Vec<FrequencyStats>> {
        let mut counter = FrequencyCounter::new(&self.header.fields);
        for ex in examples {
            for (fi, &id) in ex.ids.iter().enumerate() {
                counter.observe(fi, id as u64)?;
            }
        }
        Ok(counter.finish())
    }
}

fn parse_event(line: &str, fields: &[FieldVocab]) -> std::result::Result<TrainingExample, String> {
    let mut parts = line.split('\t');
    let label = match parts.next() {
        Some("0") => 0,
        Some("1") => 1,
        other => return Err(format!("label must be 0 or 1, found {:?}", other.unwrap_or(""))),
    };
    let mut ids: Vec<Option<usize>> = vec![None; fields.len()];
    for part in parts {
        let (name, value) = part.split_once('=').ok_or_else(|| format!("malformed pair `{part}`"))?;
        let fi = fields.iter().position(|f| f.name == name).ok_or_else(|| format!("undeclared field `{name}`"))?;
        let id: usize = value.parse().map_err(|_| format!("bad value `{value}` for field `{name}`"))?;
        if id >= fields[fi].vocab_size {
            return Err(format!("value {id} outside vocabulary of `{name}` (size {})", fields[fi].vocab_size));
        }
        if ids[fi].replace(id).is_some() {
            return Err(format!("field `{name}` repeated"));
        }
    }
    let ids = ids
        .into_iter()
        .zip(fields)
        .map(|(id, f)| id.ok_or_else(|| format!("missing field `{}`", f.name)))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(TrainingExample::new(label, ids))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Dataset> {
        Dataset::parse(text, Path::new("t"))
    }

    #[test]
    fn round_trip() {
        let text = "# amtl-data v1 fields=user:4,item:3 split_salt=9 test_ratio=0.25\n1\tuser=3\titem=0\n0\tuser=0\titem=2\n";
        let ds = parse(text).unwrap();
        assert_eq!(ds.examples[0], TrainingExample::new(1, vec![3, 0]));
        assert_eq!(ds.to_text(), text);
        let swapped = parse("# amtl-data v1 fields=user:4,item:3\n1\titem=1\tuser=2\n").unwrap();
        assert_eq!(swapped.examples[0].ids, vec![2, 1]);
        assert_eq!(swapped.header.test_ratio, DEFAULT_TEST_RATIO);
    }

    #[test]
    fn rejects_bad_lines() {
        let h = "# amtl-data v1 fields=user:4,item:3\n";
        for line in ["2\tuser=1\titem=1", "1\tuser=4\titem=1", "1\tuser=1", "1\tuser=1\titem=1\tuser=2", "1\tzip=1\titem=1", "1\tuser=x\titem=1"] {
            let err = parse(&format!("{h}{line}\n")).unwrap_err();
            assert!(matches!(err, CliError::Parse { line: 2, .. }), "{line}: {err}");
        }
        assert!(parse("").is_err());
        assert!(parse("label\tuser=1\n").is_err());
        assert!(parse("# amtl-data v1 fields=a:1,a:2\n").is_err());
        assert!(parse("# amtl-data v1 fields=a:1 test_ratio=2\n").is_err());
    }

    #[test]
    fn split_is_stable_and_near_ratio() {
        let n = 20_000u64;
        let test = (0..n).filter(|&i| is_test(42, i, 0.1)).count() as f64 / n as f64;
        assert!((test - 0.1).abs() < 0.01, "{test}");
        assert!((0..n).all(|i| is_test(42, i, 0.1) == is_test(42, i, 0.1)));
        assert!((0..n).all(|i| !is_test(42, i, 0.0)));
        let other = (0..n).filter(|&i| is_test(42, i, 0.1) != is_test(43, i, 0.1)).count();
        assert!(other > 0);
    }

    #[test]
    fn stats_count_the_given_examples() {
        let ds = parse("# amtl-data v1 fields=f:3\n1\tf=0\n0\tf=0\n1\tf=2\n").unwrap();
        let stats = ds.stats_of(&ds.examples).unwrap();
        assert_eq!(stats[0].counts(), &[2, 0, 1]);
    }
}
