//! Input parsing and output files.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use seqmct::PValues;
use serde::Serialize;

/// Reads p-values from a JSON array or from text with one value per line.
/// Blank lines and lines starting with `#` are ignored.
pub fn read_pvalues(path: &Path) -> Result<PValues> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_pvalues(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn parse_pvalues(text: &str) -> Result<PValues> {
    let values: Vec<f64> = if text.trim_start().starts_with('[') {
        serde_json::from_str(text).context("invalid JSON array")?
    } else {
        let mut values = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let field = line.trim_end_matches(',');
            let v: f64 = field
                .parse()
                .map_err(|_| anyhow!("line {}: `{line}` is not a number", n + 1))?;
            if !(0.0..=1.0).contains(&v) {
                bail!("line {}: p-value {v} is outside [0, 1]", n + 1);
            }
            values.push(v);
        }
        values
    };
    if values.is_empty() {
        bail!("no p-values found");
    }
    Ok(PValues::new(values)?)
}

/// A data matrix: one row per hypothesis, one column per observation, with
/// a header row giving each observation's group label.
#[derive(Debug)]
pub struct Matrix {
    pub rows: Vec<Vec<f64>>,
    pub groups: Vec<bool>,
    pub labels: [String; 2],
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_matrix(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn parse_matrix(text: &str) -> Result<Matrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let first = header
        .first()
        .cloned()
        .ok_or_else(|| anyhow!("empty header row"))?;
    let second = header
        .iter()
        .find(|l| **l != first)
        .cloned()
        .ok_or_else(|| anyhow!("header needs two distinct group labels"))?;
    if let Some(extra) = header.iter().find(|l| **l != first && **l != second) {
        bail!("header has a third group label `{extra}`");
    }
    let groups = header.iter().map(|l| *l == second).collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let row = record
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| anyhow!("line {line}: `{f}` is not a number"))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("matrix has no data rows");
    }
    Ok(Matrix {
        rows,
        groups,
        labels: [first, second],
    })
}

/// Provenance written at the top of every output file.
#[derive(Debug, Clone, Serialize)]
pub struct Metadata {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub config: serde_json::Value,
}

impl Metadata {
    pub fn new(command: &'static str, seed: u64, config: impl Serialize) -> Result<Self> {
        Ok(Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            config: serde_json::to_value(config)?,
        })
    }

    fn header_lines(&self) -> Result<String> {
        Ok(format!(
            "# {} {} {}\n# seed={}\n# config={}\n",
            self.tool,
            self.version,
            self.command,
            self.seed,
            serde_json::to_string(&self.config)?
        ))
    }
}

/// Renders a CSV table preceded by `#` metadata lines.
pub fn csv_with_metadata(meta: &Metadata, header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut out = meta.header_lines()?.into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        w.flush()?;
    }
    Ok(String::from_utf8(out)?)
}

pub fn json_with_metadata(meta: &Metadata, body: impl Serialize) -> Result<String> {
    #[derive(Serialize)]
    struct Wrapped<'a, T> {
        metadata: &'a Metadata,
        #[serde(flatten)]
        body: T,
    }
    Ok(serde_json::to_string_pretty(&Wrapped {
        metadata: meta,
        body,
    })? + "\n")
}

pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    let mut f = fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?;
    f.write_all(contents.as_bytes())?;
    log::info!("wrote {}", path.display());
    Ok(())
}

#[cfg(test)]
/// Parses a CSV written by [`csv_with_metadata`], skipping the metadata.
pub fn read_table(text: &str) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = reader.headers()?.iter().map(str::to_owned).collect();
    let rows = reader
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_owned).collect()))
        .collect::<std::result::Result<_, _>>()?;
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pvalue_lines_and_json() {
        assert_eq!(
            parse_pvalues("0.1\n\n# note\n0.5\n").unwrap().as_slice(),
            &[0.1, 0.5]
        );
        assert_eq!(
            parse_pvalues("[0, 1, 0.25]").unwrap().as_slice(),
            &[0.0, 1.0, 0.25]
        );
        let err = parse_pvalues("0.1\nabc\n").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        let err = parse_pvalues("0.1\n1.5\n").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        assert!(parse_pvalues("").is_err());
        assert!(parse_pvalues("[0.1, 2]").is_err());
    }

    #[test]
    fn matrix_parsing() {
        let m = parse_matrix("a,a,b,b\n1,2,3,4\n5,6,7,8\n").unwrap();
        assert_eq!(m.groups, vec![false, false, true, true]);
        assert_eq!(m.rows.len(), 2);
        assert!(parse_matrix("a,a\n1,2\n").is_err());
        assert!(parse_matrix("a,b,c\n1,2,3\n").is_err());
        let err = parse_matrix("a,b\n1,2\n3,x\n").unwrap_err();
        assert!(format!("{err:#}").contains("line 3"), "{err:#}");
    }

    #[test]
    fn table_round_trip() {
        let meta = Metadata::new("test", 5, serde_json::json!({"runs": 3})).unwrap();
        let text = csv_with_metadata(&meta, &["a", "b"], &[vec!["1".into(), "x".into()]]).unwrap();
        assert!(text.starts_with("# seqmct-cli"));
        let (h, rows) = read_table(&text).unwrap();
        assert_eq!(h, vec!["a", "b"]);
        assert_eq!(rows, vec![vec!["1".to_string(), "x".to_string()]]);
    }
}
