//! File writers. Every float goes out as `{:.16e}` (17 significant digits),
//! which round-trips through `f64` parsing and keeps reruns byte-stable.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

/// Pretty JSON with scientific-notation floats.
struct SciFormatter<'a>(PrettyFormatter<'a>);

impl Formatter for SciFormatter<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{}", fmt_f64(value))
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SciFormatter(PrettyFormatter::new()));
    value.serialize(&mut ser).expect("serializable output");
    buf.push(b'\n');
    String::from_utf8(buf).expect("JSON is UTF-8")
}

/// CSV text with `# key: value` metadata lines ahead of the header row.
pub struct Csv {
    text: String,
    width: usize,
}

impl Csv {
    pub fn new(meta: &[(&str, String)], columns: &[String]) -> Self {
        let mut text = String::new();
        for (k, v) in meta {
            writeln!(text, "# {k}: {v}").unwrap();
        }
        writeln!(text, "{}", columns.join(",")).unwrap();
        Self { text, width: columns.len() }
    }

    pub fn row(&mut self, cells: &[Cell]) {
        assert_eq!(cells.len(), self.width, "CSV row width");
        let line: Vec<String> = cells.iter().map(Cell::render).collect();
        writeln!(self.text, "{}", line.join(",")).unwrap();
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

pub enum Cell {
    F(f64),
    U(u64),
    S(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(v) => fmt_f64(*v),
            Cell::U(v) => v.to_string(),
            Cell::S(s) => s.clone(),
        }
    }
}

pub fn floats(values: &[f64]) -> String {
    values.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(",")
}

/// Output files share a path prefix: `<prefix>.json`, `<prefix>_trace.csv`, …
#[derive(Debug, Clone)]
pub struct Prefix(pub PathBuf);

impl Prefix {
    pub fn file(&self, suffix: &str) -> PathBuf {
        let mut s = self.0.as_os_str().to_owned();
        s.push(suffix);
        PathBuf::from(s)
    }

    pub fn file_name(&self, suffix: &str) -> String {
        self.file(suffix)
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default()
    }

    pub fn dir(&self) -> &Path {
        match self.0.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        }
    }

    pub fn write(&self, suffix: &str, contents: &str) -> io::Result<PathBuf> {
        fs::create_dir_all(self.dir())?;
        let path = self.file(suffix);
        fs::write(&path, contents)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.0, 1.0 / 3.0, 44.642857142857146, -1e-300, 6.02e23, f64::MIN_POSITIVE] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
        assert_eq!(fmt_f64(1.5), "1.5000000000000000e0");
    }

    #[test]
    fn json_uses_scientific_floats_and_nulls_for_nan() {
        let v = serde_json::json!({ "a": 0.1, "b": 3, "c": f64::NAN });
        let s = to_json(&v);
        assert!(s.contains("\"a\": 1.0000000000000001e-1"), "{s}");
        assert!(s.contains("\"b\": 3"));
        assert!(s.contains("\"c\": null"));
        let back: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["a"].as_f64(), Some(0.1));
    }

    #[test]
    fn csv_metadata_precedes_header() {
        let mut c = Csv::new(&[("k", "v".into())], &["w".into(), "n".into()]);
        c.row(&[Cell::F(2.0), Cell::U(7)]);
        assert_eq!(c.into_string(), "# k: v\nw,n\n2.0000000000000000e0,7\n");
    }

    #[test]
    fn prefix_files() {
        let p = Prefix(PathBuf::from("out/run"));
        assert_eq!(p.file("_trace.csv"), PathBuf::from("out/run_trace.csv"));
        assert_eq!(p.file_name(".json"), "run.json");
        assert_eq!(p.dir(), Path::new("out"));
        assert_eq!(Prefix(PathBuf::from("run")).dir(), Path::new("."));
    }
}
