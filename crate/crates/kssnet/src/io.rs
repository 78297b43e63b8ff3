//! On-disk formats.
//!
//! | structure        | layout                                                        |
//! |------------------|---------------------------------------------------------------|
//! | vocabulary       | one label per line                                            |
//! | annotations      | `sample_id label...`; tab-separated if any label has a space  |
//! | knowledge edges  | `head<TAB>relation<TAB>tail<TAB>weight`                       |
//! | embedding table  | `token v1 ... vF` (GloVe text)                                |
//! | dense matrix     | header `N` (square) or `rows cols`, then rows of 17-digit floats |
//! | binary adjacency | `KSSADJ\0\0`, u32 version, u64 N, N² little-endian f64        |
//! | checkpoint       | `KSSNETCK`, u32 version, u32 count, then named tensors        |
//!
//! Blank lines and lines starting with `#` are ignored in every text format
//! except the dense matrix, which is fully positional.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use kssnet_core::graph::AdjacencyMatrix;
use kssnet_core::ingest::{AnnotationSet, EmbeddingTable, KnowledgeEdgeList, LabelVocabulary};
use kssnet_core::model::KssModel;
use kssnet_core::Matrix;

use crate::error::{Error, Result};

const ADJ_MAGIC: &[u8; 8] = b"KSSADJ\0\0";
const CKPT_MAGIC: &[u8; 8] = b"KSSNETCK";
const FORMAT_VERSION: u32 = 1;

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|source| Error::Read { path: path.to_path_buf(), source })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|source| Error::Write { path: path.to_path_buf(), source })
}

fn write_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Write { path: path.to_path_buf(), source }
}

fn read_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Read { path: path.to_path_buf(), source }
}

/// Non-blank, non-comment lines with their 1-based line numbers.
fn content_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(read_err(path))?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
            continue;
        }
        out.push((i + 1, trimmed.to_string()));
    }
    Ok(out)
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

fn parse_f64(path: &Path, line: usize, s: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|_| parse_err(path, line, format!("`{s}` is not a number")))
}

pub fn load_vocabulary(path: &Path) -> Result<LabelVocabulary> {
    let names: Vec<String> = content_lines(path)?.into_iter().map(|(_, l)| l.trim().to_string()).collect();
    LabelVocabulary::new(names).map_err(|e| Error::Format { path: path.to_path_buf(), msg: e.to_string() })
}

pub fn write_vocabulary(path: &Path, vocab: &LabelVocabulary) -> Result<()> {
    let mut w = create(path)?;
    for name in vocab.names() {
        writeln!(w, "{name}").map_err(write_err(path))?;
    }
    w.flush().map_err(write_err(path))
}

/// Splits an annotation record: on tabs when present (so label names may
/// contain spaces), otherwise on any whitespace.
fn annotation_fields(line: &str) -> Vec<&str> {
    if line.contains('\t') {
        line.split('\t').map(str::trim).filter(|f| !f.is_empty()).collect()
    } else {
        line.split_whitespace().collect()
    }
}

pub fn load_annotations(path: &Path, vocab: &LabelVocabulary) -> Result<AnnotationSet> {
    let mut records = Vec::new();
    for (_, line) in content_lines(path)? {
        let fields = annotation_fields(&line);
        let (id, labels) = fields.split_first().expect("content lines are non-blank");
        records.push((id.to_string(), labels.iter().map(|l| l.to_string()).collect::<Vec<String>>()));
    }
    Ok(AnnotationSet::from_named(vocab, records)?)
}

pub fn write_annotations(path: &Path, annotations: &AnnotationSet, vocab: &LabelVocabulary) -> Result<()> {
    let mut w = create(path)?;
    for s in annotations.samples() {
        write!(w, "{}", s.id).map_err(write_err(path))?;
        for &l in &s.labels {
            write!(w, "\t{}", vocab.names()[l]).map_err(write_err(path))?;
        }
        writeln!(w).map_err(write_err(path))?;
    }
    w.flush().map_err(write_err(path))
}

pub fn load_knowledge_edges(path: &Path, vocab: &LabelVocabulary) -> Result<KnowledgeEdgeList> {
    let mut records = Vec::new();
    for (n, line) in content_lines(path)? {
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        let [head, relation, tail, weight] = fields[..] else {
            return Err(parse_err(path, n, format!("expected 4 tab-separated fields, found {}", fields.len())));
        };
        let weight = parse_f64(path, n, weight)?;
        if weight < 0.0 {
            return Err(parse_err(path, n, format!("negative weight {weight}")));
        }
        records.push((head.to_string(), relation.to_string(), tail.to_string(), weight));
    }
    Ok(KnowledgeEdgeList::from_named(vocab, records)?)
}

pub fn write_knowledge_edges(path: &Path, edges: &KnowledgeEdgeList, vocab: &LabelVocabulary) -> Result<()> {
    let mut w = create(path)?;
    for e in edges.edges() {
        writeln!(w, "{}\t{}\t{}\t{}", vocab.names()[e.head], e.relation, vocab.names()[e.tail], e.weight).map_err(write_err(path))?;
    }
    w.flush().map_err(write_err(path))
}

/// GloVe-style table; the width is fixed by the first row.
pub fn load_embedding_table(path: &Path) -> Result<EmbeddingTable> {
    let mut table: Option<EmbeddingTable> = None;
    for (n, line) in content_lines(path)? {
        let mut parts = line.split_whitespace();
        let token = parts.next().expect("content lines are non-blank");
        let row = parts.map(|v| parse_f64(path, n, v)).collect::<Result<Vec<f64>>>()?;
        let t = match &mut table {
            Some(t) => t,
            None => table.insert(EmbeddingTable::new(row.len()).map_err(|_| parse_err(path, n, "row has no values"))?),
        };
        t.insert(token, row).map_err(|e| parse_err(path, n, e.to_string()))?;
    }
    table.ok_or_else(|| Error::Format { path: path.to_path_buf(), msg: "embedding table is empty".into() })
}

pub fn write_embedding_table(path: &Path, table: &EmbeddingTable) -> Result<()> {
    let mut w = create(path)?;
    for (token, row) in table.iter() {
        write!(w, "{token}").map_err(write_err(path))?;
        for v in row {
            write!(w, " {v}").map_err(write_err(path))?;
        }
        writeln!(w).map_err(write_err(path))?;
    }
    w.flush().map_err(write_err(path))
}

fn write_rows(w: &mut impl Write, m: &Matrix) -> std::io::Result<()> {
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    Ok(())
}

/// Dense matrix text: a square matrix gets a one-number header.
pub fn write_matrix_text(path: &Path, m: &Matrix, square_header: bool) -> Result<()> {
    let mut w = create(path)?;
    if square_header && m.rows() == m.cols() {
        writeln!(w, "{}", m.rows()).map_err(write_err(path))?;
    } else {
        writeln!(w, "{} {}", m.rows(), m.cols()).map_err(write_err(path))?;
    }
    write_rows(&mut w, m).map_err(write_err(path))?;
    w.flush().map_err(write_err(path))
}

pub fn read_matrix_text(path: &Path) -> Result<Matrix> {
    let mut text = String::new();
    open(path)?.read_to_string(&mut text).map_err(read_err(path))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hn, header) = lines.next().ok_or_else(|| Error::Format { path: path.to_path_buf(), msg: "empty matrix file".into() })?;
    let dims = header
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| parse_err(path, hn + 1, format!("bad header `{header}`"))))
        .collect::<Result<Vec<usize>>>()?;
    let (rows, cols) = match dims[..] {
        [n] => (n, n),
        [r, c] => (r, c),
        _ => return Err(parse_err(path, hn + 1, "header must be `N` or `rows cols`")),
    };
    let mut data = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for (i, line) in lines {
        seen += 1;
        if seen > rows {
            return Err(parse_err(path, i + 1, format!("more than {rows} rows")));
        }
        let row = line.split_whitespace().map(|v| parse_f64(path, i + 1, v)).collect::<Result<Vec<f64>>>()?;
        if row.len() != cols {
            return Err(parse_err(path, i + 1, format!("expected {cols} values, found {}", row.len())));
        }
        data.extend(row);
    }
    if seen != rows {
        return Err(Error::Format { path: path.to_path_buf(), msg: format!("expected {rows} rows, found {seen}") });
    }
    Ok(Matrix::from_vec(rows, cols, data)?)
}

pub fn write_adjacency_text(path: &Path, a: &AdjacencyMatrix) -> Result<()> {
    write_matrix_text(path, a.matrix(), true)
}

pub fn write_adjacency_binary(path: &Path, a: &AdjacencyMatrix) -> Result<()> {
    let mut w = create(path)?;
    let mut buf = Vec::with_capacity(20 + 8 * a.n() * a.n());
    buf.extend_from_slice(ADJ_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(a.n() as u64).to_le_bytes());
    for v in a.matrix().as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf).map_err(write_err(path))?;
    w.flush().map_err(write_err(path))
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Format { path: self.path.to_path_buf(), msg: format!("truncated at byte {}", self.pos) });
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n.checked_mul(8).ok_or_else(|| self.bad("tensor size overflows"))?;
        Ok(self.take(len)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn header(&mut self, magic: &[u8; 8]) -> Result<()> {
        if self.take(8)? != magic {
            return Err(self.bad("bad magic"));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(self.bad(&format!("unsupported version {version}")));
        }
        Ok(())
    }

    fn bad(&self, msg: &str) -> Error {
        Error::Format { path: self.path.to_path_buf(), msg: msg.to_string() }
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.bad("trailing bytes"));
        }
        Ok(())
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(read_err(path))
}

pub fn read_adjacency_binary(path: &Path) -> Result<AdjacencyMatrix> {
    let bytes = read_bytes(path)?;
    let mut c = Cursor { path, bytes: &bytes, pos: 0 };
    c.header(ADJ_MAGIC)?;
    let n = usize::try_from(c.u64()?).map_err(|_| c.bad("N too large"))?;
    let data = c.f64s(n.checked_mul(n).ok_or_else(|| c.bad("N too large"))?)?;
    c.finish()?;
    Ok(AdjacencyMatrix::new(Matrix::from_vec(n, n, data)?)?)
}

/// Reads either adjacency encoding, sniffing the binary magic.
pub fn read_adjacency(path: &Path) -> Result<AdjacencyMatrix> {
    let bytes = read_bytes(path)?;
    if bytes.starts_with(ADJ_MAGIC) {
        return read_adjacency_binary(path);
    }
    let m = read_matrix_text(path)?;
    if m.rows() != m.cols() {
        return Err(Error::Format { path: path.to_path_buf(), msg: format!("adjacency is {}x{}", m.rows(), m.cols()) });
    }
    Ok(AdjacencyMatrix::new(m)?)
}

/// A named, shaped block of row-major values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn write_checkpoint(path: &Path, tensors: &[Tensor]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        assert_eq!(t.shape.iter().product::<usize>(), t.data.len(), "tensor {} shape/data mismatch", t.name);
        buf.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(t.name.as_bytes());
        buf.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut w = create(path)?;
    w.write_all(&buf).map_err(write_err(path))?;
    w.flush().map_err(write_err(path))
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<Tensor>> {
    let bytes = read_bytes(path)?;
    let mut c = Cursor { path, bytes: &bytes, pos: 0 };
    c.header(CKPT_MAGIC)?;
    let count = c.u32()?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = c.u32()? as usize;
        let name = String::from_utf8(c.take(len)?.to_vec()).map_err(|_| c.bad("tensor name is not UTF-8"))?;
        let ndim = c.u32()? as usize;
        let shape = (0..ndim).map(|_| c.u64().map(|d| d as usize)).collect::<Result<Vec<usize>>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| c.bad("tensor size overflows"))?;
        let data = c.f64s(numel)?;
        out.push(Tensor { name, shape, data });
    }
    c.finish()?;
    Ok(out)
}

pub fn matrix_tensor(name: &str, m: &Matrix) -> Tensor {
    Tensor { name: name.to_string(), shape: vec![m.rows(), m.cols()], data: m.as_slice().to_vec() }
}

/// Every learnable parameter of `model`, named as in [`KssModel::param_specs`].
pub fn model_tensors(model: &KssModel) -> Vec<Tensor> {
    model
        .param_specs()
        .into_iter()
        .zip(model.params())
        .map(|(spec, p)| Tensor { name: spec.name, shape: spec.shape, data: p.to_vec() })
        .collect()
}

/// Copies tensors into `model` by name. Every parameter must be present with
/// its exact shape; unrelated tensors are ignored.
pub fn load_model_tensors(model: &mut KssModel, tensors: &[Tensor], path: &Path) -> Result<()> {
    let by_name: BTreeMap<&str, &Tensor> = tensors.iter().map(|t| (t.name.as_str(), t)).collect();
    let specs = model.param_specs();
    for (spec, dst) in specs.iter().zip(model.params_mut()) {
        let t = by_name
            .get(spec.name.as_str())
            .ok_or_else(|| Error::Format { path: path.to_path_buf(), msg: format!("missing tensor {}", spec.name) })?;
        if t.shape != spec.shape {
            return Err(Error::Format {
                path: path.to_path_buf(),
                msg: format!("tensor {} has shape {:?}, model expects {:?}", spec.name, t.shape, spec.shape),
            });
        }
        dst.copy_from_slice(&t.data);
    }
    Ok(())
}

pub fn tensor_matrix(tensors: &[Tensor], name: &str, path: &Path) -> Result<Matrix> {
    let t = tensors
        .iter()
        .find(|t| t.name == name)
        .ok_or_else(|| Error::Format { path: path.to_path_buf(), msg: format!("missing tensor {name}") })?;
    match t.shape[..] {
        [r, c] => Ok(Matrix::from_vec(r, c, t.data.clone())?),
        _ => Err(Error::Format { path: path.to_path_buf(), msg: format!("tensor {name} is not a matrix") }),
    }
}

/// `path` with `suffix` appended to its file name.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn annotation_fields_prefer_tabs() {
        assert_eq!(annotation_fields("img1 dog cat"), vec!["img1", "dog", "cat"]);
        assert_eq!(annotation_fields("img1\tsports ball\tdog"), vec!["img1", "sports ball", "dog"]);
    }

    #[test]
    fn sibling_appends() {
        assert_eq!(sibling(Path::new("out/a.txt"), ".raw"), PathBuf::from("out/a.txt.raw"));
    }
}
