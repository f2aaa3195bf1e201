//! Directory format:
//!
//! | file             | content                                               |
//! |------------------|-------------------------------------------------------|
//! | `metadata.csv`   | header of [`METADATA_COLUMNS`], one row per account   |
//! | `embeddings.bin` | `RMNPEMB1 dddddd\n` header, then n·d little-endian f32 |
//! | `edges.csv`      | `relation_name,src,dst`                               |
//! | `labels.csv`     | `account,label` with label 0 (human) or 1 (bot)       |
//! | `splits.csv`     | `account,split` with split train, val or test         |

use std::fs;
use std::path::Path;

use super::{
    validate_metadata_row, AccountTable, Dataset, HeteroGraph, Split, TextEmbeddingTable,
    METADATA_COLUMNS, METADATA_WIDTH,
};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const EMBEDDING_MAGIC: &[u8; 8] = b"RMNPEMB1";
const EMBEDDING_HEADER_LEN: usize = 16;

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file))
}

fn write_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    if ds.accounts.is_normalized() {
        return Err(Error::contract("refusing to save normalized metadata as raw counts"));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let path = dir.join("metadata.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(METADATA_COLUMNS).map_err(|e| write_err(&path, e))?;
    let feats = ds.accounts.features();
    for i in 0..feats.rows() {
        w.write_record(feats.row(i).iter().map(|v| v.to_string()))
            .map_err(|e| write_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("embeddings.bin");
    let pooled = ds.text.pooled();
    let mut bytes = Vec::with_capacity(EMBEDDING_HEADER_LEN + pooled.len() * 4);
    bytes.extend_from_slice(format!("RMNPEMB1 {:06}\n", pooled.cols()).as_bytes());
    debug_assert_eq!(bytes.len(), EMBEDDING_HEADER_LEN);
    for v in pooled.data() {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;

    let path = dir.join("edges.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["relation_name", "src", "dst"]).map_err(|e| write_err(&path, e))?;
    for (r, name) in ds.graph.relation_names().iter().enumerate() {
        for (s, d) in ds.graph.edges(r) {
            w.write_record([name.as_str(), &s.to_string(), &d.to_string()])
                .map_err(|e| write_err(&path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("labels.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["account", "label"]).map_err(|e| write_err(&path, e))?;
    for (i, l) in ds.labels.iter().enumerate() {
        if let Some(l) = l {
            w.write_record([i.to_string(), l.to_string()]).map_err(|e| write_err(&path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("splits.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["account", "split"]).map_err(|e| write_err(&path, e))?;
    for (i, s) in ds.split.iter().enumerate() {
        if *s != Split::None {
            w.write_record([i.to_string(), s.to_string()]).map_err(|e| write_err(&path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(())
}

struct CsvFile {
    path: std::path::PathBuf,
    reader: csv::Reader<fs::File>,
}

impl CsvFile {
    fn open(dir: &Path, name: &str, expected_header: &[&str]) -> Result<Self> {
        let path = dir.join(name);
        if !path.exists() {
            return Err(Error::load(&path, 0, "missing file"));
        }
        let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let header = reader
            .headers()
            .map_err(|e| Error::load(&path, 1, e.to_string()))?
            .clone();
        if header.iter().ne(expected_header.iter().copied()) {
            return Err(Error::load(
                &path,
                1,
                format!("expected header {}", expected_header.join(",")),
            ));
        }
        Ok(Self { path, reader })
    }

    /// Calls `f(line, record)` per data row.
    fn for_each(
        &mut self,
        mut f: impl FnMut(u64, &csv::StringRecord) -> std::result::Result<(), String>,
    ) -> Result<()> {
        let mut record = csv::StringRecord::new();
        loop {
            let more = self
                .reader
                .read_record(&mut record)
                .map_err(|e| Error::load(&self.path, line_of(&e), e.to_string()))?;
            if !more {
                return Ok(());
            }
            let line = record.position().map_or(0, |p| p.line());
            f(line, &record).map_err(|msg| Error::load(&self.path, line, msg))?;
        }
    }
}

fn line_of(e: &csv::Error) -> u64 {
    e.position().map_or(0, |p| p.line())
}

fn parse_index(field: &str, n: usize, what: &str) -> std::result::Result<usize, String> {
    let i: usize = field
        .parse()
        .map_err(|_| format!("invalid {what} index '{field}'"))?;
    if i >= n {
        return Err(format!("node index out of range: {i} with {n} accounts"));
    }
    Ok(i)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mut rows: Vec<f64> = Vec::new();
    let mut meta = CsvFile::open(dir, "metadata.csv", &METADATA_COLUMNS)?;
    meta.for_each(|_, rec| {
        if rec.len() != METADATA_WIDTH {
            return Err(format!("expected {METADATA_WIDTH} fields, got {}", rec.len()));
        }
        let start = rows.len();
        for field in rec.iter() {
            let v: f64 = field.parse().map_err(|_| format!("invalid number '{field}'"))?;
            rows.push(v);
        }
        match validate_metadata_row(&rows[start..]) {
            Some(msg) => Err(msg),
            None => Ok(()),
        }
    })?;
    let n = rows.len() / METADATA_WIDTH;
    let accounts = AccountTable::new(Matrix::from_vec(n, METADATA_WIDTH, rows))?;

    let path = dir.join("embeddings.bin");
    if !path.exists() {
        return Err(Error::load(&path, 0, "missing file"));
    }
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() < EMBEDDING_HEADER_LEN || &bytes[..8] != EMBEDDING_MAGIC {
        return Err(Error::load(&path, 0, "bad embedding header"));
    }
    let dim: usize = std::str::from_utf8(&bytes[9..15])
        .ok()
        .and_then(|s| s.parse().ok())
        .filter(|_| bytes[8] == b' ')
        .ok_or_else(|| Error::load(&path, 0, "bad embedding header"))?;
    let payload = &bytes[EMBEDDING_HEADER_LEN..];
    if payload.len() != n * dim * 4 {
        return Err(Error::load(
            &path,
            0,
            format!(
                "embedding size mismatch: {} bytes for {n} accounts of dimension {dim}",
                payload.len()
            ),
        ));
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::load(&path, 0, "non-finite embedding value"));
    }
    let text = TextEmbeddingTable::from_pooled(Matrix::from_vec(n, dim, values))?;

    let mut relation_names: Vec<String> = Vec::new();
    let mut relations: Vec<Vec<(usize, usize)>> = Vec::new();
    let mut edges = CsvFile::open(dir, "edges.csv", &["relation_name", "src", "dst"])?;
    edges.for_each(|_, rec| {
        if rec.len() != 3 {
            return Err(format!("expected 3 fields, got {}", rec.len()));
        }
        let s = parse_index(&rec[1], n, "src")?;
        let d = parse_index(&rec[2], n, "dst")?;
        let r = match relation_names.iter().position(|x| x == &rec[0]) {
            Some(r) => r,
            None => {
                relation_names.push(rec[0].to_string());
                relations.push(Vec::new());
                relation_names.len() - 1
            }
        };
        relations[r].push((s, d));
        Ok(())
    })?;
    if relation_names.is_empty() {
        return Err(Error::load(dir.join("edges.csv"), 0, "no edges"));
    }
    let graph = HeteroGraph::new(n, relation_names, relations)?;

    let mut labels = vec![None; n];
    let mut lf = CsvFile::open(dir, "labels.csv", &["account", "label"])?;
    lf.for_each(|_, rec| {
        if rec.len() != 2 {
            return Err(format!("expected 2 fields, got {}", rec.len()));
        }
        let i = parse_index(&rec[0], n, "account")?;
        labels[i] = Some(match &rec[1] {
            "0" => 0,
            "1" => 1,
            other => return Err(format!("label must be 0 or 1, got '{other}'")),
        });
        Ok(())
    })?;

    let mut split = vec![Split::None; n];
    let mut sf = CsvFile::open(dir, "splits.csv", &["account", "split"])?;
    sf.for_each(|_, rec| {
        if rec.len() != 2 {
            return Err(format!("expected 2 fields, got {}", rec.len()));
        }
        let i = parse_index(&rec[0], n, "account")?;
        if labels[i].is_none() {
            return Err(format!("account {i} is in a split but has no label"));
        }
        split[i] = rec[1].parse()?;
        Ok(())
    })?;

    Dataset::new(accounts, text, graph, labels, split)
}
