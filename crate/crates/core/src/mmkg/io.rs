//! Text formats: tab-separated triples and alignments, feature tables with an `n d`
//! header, `0|1` mask files, and one-integer-per-line attribute counts.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::mmkg::{Mmkg, ModalFeatures, Modality, Triple};
use crate::tensor::DenseMatrix;

/// Paths of one modality's feature table and optional mask (missing mask = all present).
#[derive(Clone, Debug)]
pub struct FeaturePaths {
    pub modality: Modality,
    pub features: PathBuf,
    pub mask: Option<PathBuf>,
}

impl FeaturePaths {
    /// Conventional `<dir>/<m>.feat` and `<dir>/<m>.mask`.
    pub fn in_dir(dir: &Path, modality: Modality) -> Self {
        let mask = dir.join(format!("{modality}.mask"));
        Self {
            modality,
            features: dir.join(format!("{modality}.feat")),
            mask: mask.exists().then_some(mask),
        }
    }
}

fn ingest(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Ingestion {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_usize(path: &Path, line: usize, tok: &str) -> Result<usize> {
    tok.trim()
        .parse()
        .map_err(|_| ingest(path, line, format!("expected a non-negative integer, found '{tok}'")))
}

/// Loads a graph. The entity count comes from the first feature header, or from the
/// largest triple index when no feature tables are given.
pub fn load_mmkg(triples_path: &Path, features: &[FeaturePaths], attr_counts: Option<&Path>) -> Result<Mmkg> {
    let mut tables = BTreeMap::new();
    let mut n: Option<usize> = None;
    for fp in features {
        let values = read_features(&fp.features)?;
        if let Some(expected) = n {
            if values.rows() != expected {
                return Err(ingest(
                    &fp.features,
                    1,
                    format!("{} entities, other tables have {expected}", values.rows()),
                ));
            }
        }
        n = Some(values.rows());
        let present = match &fp.mask {
            Some(p) => read_mask(p, values.rows())?,
            None => vec![true; values.rows()],
        };
        let mut values = values;
        for (i, &p) in present.iter().enumerate() {
            if !p {
                values.row_mut(i).fill(0.0);
            }
        }
        tables.insert(fp.modality, ModalFeatures::new(values, present)?);
    }
    let triples = read_triples(triples_path, n)?;
    let n = n.unwrap_or_else(|| triples.iter().map(|t| t.head.max(t.tail) + 1).max().unwrap_or(0));
    let counts = attr_counts.map(|p| read_counts(p, n)).transpose()?;
    Mmkg::new(n, triples, tables, counts)
}

/// Loads `triples.tsv`, any `{r,t,v}.feat` (+ `.mask`) and `attr_counts.txt` from `dir`.
pub fn load_mmkg_dir(dir: &Path) -> Result<Mmkg> {
    let features: Vec<FeaturePaths> = Modality::FEATURE
        .iter()
        .map(|&m| FeaturePaths::in_dir(dir, m))
        .filter(|fp| fp.features.exists())
        .collect();
    let counts = dir.join("attr_counts.txt");
    load_mmkg(
        &dir.join("triples.tsv"),
        &features,
        counts.exists().then_some(counts.as_path()),
    )
}

fn read_triples(path: &Path, n: Option<usize>) -> Result<Vec<Triple>> {
    let text = fs::read_to_string(path)?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let lineno = k + 1;
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split('\t').collect();
        if toks.len() != 3 {
            return Err(ingest(
                path,
                lineno,
                format!("expected 3 tab-separated fields, found {}", toks.len()),
            ));
        }
        let t = Triple {
            head: parse_usize(path, lineno, toks[0])?,
            relation: parse_usize(path, lineno, toks[1])?,
            tail: parse_usize(path, lineno, toks[2])?,
        };
        if let Some(n) = n {
            if t.head >= n || t.tail >= n {
                return Err(ingest(
                    path,
                    lineno,
                    format!("entity index out of range for {n} entities"),
                ));
            }
        }
        if !seen.insert(t) {
            return Err(ingest(path, lineno, "duplicate triple"));
        }
        out.push(t);
    }
    Ok(out)
}

fn read_features(path: &Path) -> Result<DenseMatrix> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| ingest(path, 1, "missing `n d` header"))?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    if dims.len() != 2 {
        return Err(ingest(path, 1, "header must be `n d`"));
    }
    let n = parse_usize(path, 1, dims[0])?;
    let d = parse_usize(path, 1, dims[1])?;
    let mut data = Vec::with_capacity(n * d);
    let mut rows = 0;
    for (k, line) in lines {
        let lineno = k + 1;
        if rows == n {
            return Err(ingest(path, lineno, format!("more than {n} feature rows")));
        }
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| ingest(path, lineno, format!("invalid number '{tok}'")))?;
            if !v.is_finite() {
                return Err(ingest(path, lineno, "non-finite feature value"));
            }
            data.push(v);
        }
        if data.len() - before != d {
            return Err(ingest(
                path,
                lineno,
                format!("ragged row: {} values, expected {d}", data.len() - before),
            ));
        }
        rows += 1;
    }
    if rows != n {
        return Err(ingest(
            path,
            rows + 2,
            format!("expected {n} feature rows, found {rows}"),
        ));
    }
    DenseMatrix::from_vec(n, d, data)
}

fn read_mask(path: &Path, n: usize) -> Result<Vec<bool>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::with_capacity(n);
    for (k, line) in text.lines().enumerate() {
        match line.trim() {
            "" => continue,
            "0" => out.push(false),
            "1" => out.push(true),
            other => {
                return Err(ingest(
                    path,
                    k + 1,
                    format!("mask entry must be 0 or 1, found '{other}'"),
                ))
            }
        }
    }
    if out.len() != n {
        return Err(ingest(
            path,
            out.len() + 1,
            format!("expected {n} mask entries, found {}", out.len()),
        ));
    }
    Ok(out)
}

fn read_counts(path: &Path, n: usize) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::with_capacity(n);
    for (k, line) in text.lines().enumerate() {
        if !line.trim().is_empty() {
            out.push(parse_usize(path, k + 1, line)?);
        }
    }
    if out.len() != n {
        return Err(ingest(
            path,
            out.len() + 1,
            format!("expected {n} attribute counts, found {}", out.len()),
        ));
    }
    Ok(out)
}

/// Reads `source<TAB>target` lines.
pub fn load_alignments(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split('\t').collect();
        if toks.len() != 2 {
            return Err(ingest(path, k + 1, "expected `source<TAB>target`"));
        }
        out.push((parse_usize(path, k + 1, toks[0])?, parse_usize(path, k + 1, toks[1])?));
    }
    Ok(out)
}

pub fn write_alignments(path: &Path, pairs: &[(usize, usize)]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for (a, b) in pairs {
        writeln!(w, "{a}\t{b}")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `g` into `dir` using the layout read by [`load_mmkg_dir`].
pub fn write_mmkg(g: &Mmkg, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(fs::File::create(dir.join("triples.tsv"))?);
    for t in g.triples() {
        writeln!(w, "{}\t{}\t{}", t.head, t.relation, t.tail)?;
    }
    w.flush()?;
    for (m, f) in g.features() {
        write_features(&dir.join(format!("{m}.feat")), &f.values)?;
        let mut w = BufWriter::new(fs::File::create(dir.join(format!("{m}.mask")))?);
        for &p in &f.present {
            writeln!(w, "{}", u8::from(p))?;
        }
        w.flush()?;
    }
    if let Some(counts) = g.attr_counts() {
        let mut w = BufWriter::new(fs::File::create(dir.join("attr_counts.txt"))?);
        for c in counts {
            writeln!(w, "{c}")?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Feature-table format; `f64` display output parses back to the identical value.
pub fn write_features(path: &Path, m: &DenseMatrix) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{} {}", m.rows(), m.cols())?;
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(dir: &Path, triples: &str, v_mask: &str) {
        fs::write(dir.join("triples.tsv"), triples).unwrap();
        for m in ["r", "t", "v"] {
            fs::write(dir.join(format!("{m}.feat")), "3 2\n1 0\n0 1\n0.5 0.5\n").unwrap();
        }
        fs::write(dir.join("v.mask"), v_mask).unwrap();
    }

    #[test]
    fn loads_toy_fixture() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path(), "0\t0\t1\n1\t1\t2\n", "1\n1\n1\n");
        let g = load_mmkg_dir(dir.path()).unwrap();
        assert_eq!(g.entity_count(), 3);
        assert_eq!(g.triples().len(), 2);
        assert!((0..3).all(|i| g.is_complete(i)));
    }

    #[test]
    fn masked_row_is_flagged_and_zeroed() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path(), "0\t0\t1\n", "1\n1\n0\n");
        let g = load_mmkg_dir(dir.path()).unwrap();
        let v = g.modality(Modality::Visual).unwrap();
        assert!(!v.present[2]);
        assert_eq!(v.values.row(2), &[0.0, 0.0]);
    }

    #[test]
    fn out_of_range_triple_cites_line() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path(), "0\t0\t1\n5\t1\t9\n", "1\n1\n1\n");
        match load_mmkg_dir(dir.path()) {
            Err(Error::Ingestion { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_triple_and_ragged_row_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path(), "0\t0\t1\n0\t0\t1\n", "1\n1\n1\n");
        assert!(matches!(
            load_mmkg_dir(dir.path()),
            Err(Error::Ingestion { line: 2, .. })
        ));
        fixture(dir.path(), "0\t0\t1\n", "1\n1\n1\n");
        fs::write(dir.path().join("r.feat"), "3 2\n1 0\n0\n0 1\n").unwrap();
        assert!(matches!(
            load_mmkg_dir(dir.path()),
            Err(Error::Ingestion { line: 3, .. })
        ));
    }

    #[test]
    fn write_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let values = DenseMatrix::from_fn(4, 3, |i, j| (i as f64 + 0.1) / (j as f64 + 3.0));
        let f = ModalFeatures::new(values, vec![true, false, true, true]).unwrap();
        let mut f = f;
        f.values.row_mut(1).fill(0.0);
        let g = Mmkg::new(
            4,
            vec![Triple {
                head: 0,
                relation: 2,
                tail: 3,
            }],
            BTreeMap::from([(Modality::Text, f)]),
            Some(vec![1, 2, 3, 4]),
        )
        .unwrap();
        write_mmkg(&g, dir.path()).unwrap();
        assert_eq!(load_mmkg_dir(dir.path()).unwrap(), g);
        let pairs = vec![(0, 3), (2, 1)];
        write_alignments(&dir.path().join("a.tsv"), &pairs).unwrap();
        assert_eq!(load_alignments(&dir.path().join("a.tsv")).unwrap(), pairs);
    }
}
