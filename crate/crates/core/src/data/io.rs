//! On-disk sample formats.
//!
//! A sample record is little-endian: the magic `MTSR`, a `u32` rank, `rank`
//! `u32` dimensions, then the `f32` values in row-major order.
//!
//! * tensor-dir: one subdirectory per class, one record file per sample.
//!   Subdirectories named by integers use those integers as class ids
//!   (which must then be dense); otherwise ids follow sorted name order.
//!   An optional `superclasses.txt` holds `class superclass` pairs.
//! * packed-binary: magic `MTPK`, `u32` class count, then per class a `u32`
//!   id, a `u32` sample count and that many sample records.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SAMPLE_MAGIC: &[u8; 4] = b"MTSR";
pub const PACKED_MAGIC: &[u8; 4] = b"MTPK";
const SUPERCLASS_FILE: &str = "superclasses.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataFormat {
    TensorDir,
    PackedBinary,
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Format { path: self.path.to_path_buf(), offset: self.pos as u64, reason: reason.into() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(format!("truncated: need {} more bytes", n)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn magic(&mut self, want: &[u8; 4]) -> Result<()> {
        let start = self.pos;
        if self.take(4)? != want {
            self.pos = start;
            return Err(self.fail(format!("bad magic, expected {:?}", String::from_utf8_lossy(want))));
        }
        Ok(())
    }

    fn sample(&mut self) -> Result<Tensor> {
        self.magic(SAMPLE_MAGIC)?;
        let rank = self.u32()? as usize;
        if rank == 0 || rank > 8 {
            return Err(self.fail(format!("unsupported rank {}", rank)));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = self.take(n.checked_mul(4).ok_or_else(|| self.fail("size overflow"))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
        Tensor::new(shape, data)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    fs::File::open(path).and_then(|mut f| f.read_to_end(&mut buf)).map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

/// Decodes one sample record occupying the whole file.
pub fn read_sample(path: &Path) -> Result<Tensor> {
    let bytes = read_file(path)?;
    let mut cur = Cursor { path, bytes: &bytes, pos: 0 };
    let t = cur.sample()?;
    if cur.pos != bytes.len() {
        return Err(cur.fail("trailing bytes after sample"));
    }
    Ok(t)
}

pub fn encode_sample(t: &Tensor, out: &mut Vec<u8>) {
    out.extend_from_slice(SAMPLE_MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::File::create(path).and_then(|mut f| f.write_all(bytes)).map_err(|e| Error::io(path, e))
}

/// Loads a dataset and checks every class has at least `min_per_class` samples.
pub fn load_dataset(path: &Path, format: DataFormat, min_per_class: usize) -> Result<Dataset> {
    let ds = match format {
        DataFormat::TensorDir => load_tensor_dir(path)?,
        DataFormat::PackedBinary => load_packed(path)?,
    };
    ds.require_per_class(min_per_class)?;
    Ok(ds)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

fn load_tensor_dir(root: &Path) -> Result<Dataset> {
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        return Err(Error::Data(format!("no classes found in {}", root.display())));
    }
    let names: Vec<String> =
        class_dirs.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    let numeric: Option<Vec<usize>> = names.iter().map(|n| n.parse().ok()).collect();
    let mut order: Vec<(usize, &PathBuf)> = match numeric {
        Some(ids) => ids.into_iter().zip(&class_dirs).collect(),
        None => class_dirs.iter().enumerate().collect(),
    };
    order.sort_by_key(|(id, _)| *id);
    for (expect, (id, dir)) in order.iter().enumerate() {
        if *id != expect {
            return Err(Error::Data(format!("class ids must be dense: {} has id {}", dir.display(), id)));
        }
    }

    let mut samples = Vec::new();
    for (class, dir) in order {
        let files: Vec<PathBuf> = sorted_entries(dir)?.into_iter().filter(|p| p.is_file()).collect();
        if files.is_empty() {
            return Err(Error::Data(format!("class {} ({}) has no samples", class, dir.display())));
        }
        for f in files {
            samples.push(Sample { features: read_sample(&f)?, class });
        }
    }
    let num_classes = class_dirs.len();
    let superclass = read_superclasses(&root.join(SUPERCLASS_FILE), num_classes)?;
    Dataset::new(samples, superclass)
}

fn read_superclasses(path: &Path, num_classes: usize) -> Result<Vec<Option<usize>>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = vec![None; num_classes];
    let mut offset = 0u64;
    for line in text.lines() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if !fields.is_empty() && !line.trim_start().starts_with('#') {
            let parsed = match fields.as_slice() {
                [c, s] => c.parse::<usize>().ok().zip(s.parse::<usize>().ok()),
                _ => None,
            };
            match parsed {
                Some((c, s)) if c < num_classes => out[c] = Some(s),
                _ => {
                    return Err(Error::Format {
                        path: path.to_path_buf(),
                        offset,
                        reason: format!("expected `class superclass`, got {:?}", line),
                    })
                }
            }
        }
        offset += line.len() as u64 + 1;
    }
    Ok(out)
}

fn load_packed(path: &Path) -> Result<Dataset> {
    let bytes = read_file(path)?;
    let mut cur = Cursor { path, bytes: &bytes, pos: 0 };
    cur.magic(PACKED_MAGIC)?;
    let count = cur.u32()? as usize;
    if count == 0 {
        return Err(Error::Data(format!("no classes found in {}", path.display())));
    }
    let mut samples = Vec::new();
    let mut seen = vec![false; count];
    for _ in 0..count {
        let id = cur.u32()? as usize;
        if id >= count || seen[id] {
            return Err(cur.fail(format!("class id {} duplicated or outside 0..{}", id, count)));
        }
        seen[id] = true;
        let n = cur.u32()? as usize;
        for _ in 0..n {
            samples.push(Sample { features: cur.sample()?, class: id });
        }
    }
    if cur.pos != bytes.len() {
        return Err(cur.fail("trailing bytes after last class"));
    }
    Dataset::new(samples, Vec::new())
}

/// Writes the tensor-dir layout (class directories named by id).
pub fn write_tensor_dir(ds: &Dataset, root: &Path) -> Result<()> {
    for c in 0..ds.num_classes() {
        let dir = root.join(c.to_string());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (k, &i) in ds.class_samples(c).iter().enumerate() {
            let mut buf = Vec::new();
            encode_sample(&ds.sample(i).features, &mut buf);
            write_bytes(&dir.join(format!("{:06}.mtsr", k)), &buf)?;
        }
    }
    if ds.superclasses().iter().any(Option::is_some) {
        let lines: String = ds
            .superclasses()
            .iter()
            .enumerate()
            .filter_map(|(c, s)| s.map(|s| format!("{} {}\n", c, s)))
            .collect();
        write_bytes(&root.join(SUPERCLASS_FILE), lines.as_bytes())?;
    }
    Ok(())
}

/// Writes the packed-binary layout.
pub fn write_packed(ds: &Dataset, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(PACKED_MAGIC);
    buf.extend_from_slice(&(ds.num_classes() as u32).to_le_bytes());
    for c in 0..ds.num_classes() {
        let idx = ds.class_samples(c);
        buf.extend_from_slice(&(c as u32).to_le_bytes());
        buf.extend_from_slice(&(idx.len() as u32).to_le_bytes());
        for &i in idx {
            encode_sample(&ds.sample(i).features, &mut buf);
        }
    }
    write_bytes(path, &buf)
}
