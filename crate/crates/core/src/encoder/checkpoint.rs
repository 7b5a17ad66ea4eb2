//! Plain-text checkpoints: an architecture header followed by every tensor with a
//! `tensor <name> <rows> <cols>` line and its rows. Values are written with the shortest
//! representation that parses back to the same `f64`, so a load is bit-exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::encoder::{Architecture, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::mmkg::Modality;
use crate::tensor::DenseMatrix;

const MAGIC: &str = "mmea-encoder-checkpoint v1";

pub fn write_checkpoint(arch: &Architecture, params: &EncoderParams<DenseMatrix>) -> String {
    let c = &arch.config;
    let mut s = String::new();
    let mods: Vec<&str> = c.modalities.iter().map(|m| m.token()).collect();
    let _ = writeln!(s, "{MAGIC}");
    let _ = writeln!(s, "dim {}", c.dim);
    let _ = writeln!(s, "heads {}", c.heads);
    let _ = writeln!(s, "gat_heads {}", c.gat_heads);
    let _ = writeln!(s, "gat_layers {}", c.gat_layers);
    let _ = writeln!(s, "ffn_dim {}", c.ffn_dim());
    let _ = writeln!(s, "leaky_slope {}", c.leaky_slope);
    let _ = writeln!(s, "ln_eps {}", c.ln_eps);
    let _ = writeln!(s, "modalities {}", mods.join(","));
    let _ = writeln!(s, "entities {}", arch.entities);
    for (m, d) in &arch.input_dims {
        let _ = writeln!(s, "input_dim {m} {d}");
    }
    for (name, t) in params.named() {
        let _ = writeln!(s, "tensor {name} {} {}", t.rows(), t.cols());
        for i in 0..t.rows() {
            let row: Vec<String> = t.row(i).iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
    }
    let _ = writeln!(s, "end");
    s
}

pub fn save_checkpoint(path: &Path, arch: &Architecture, params: &EncoderParams<DenseMatrix>) -> Result<()> {
    fs::write(path, write_checkpoint(arch, params))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Architecture, EncoderParams<DenseMatrix>)> {
    read_checkpoint(&fs::read_to_string(path)?, path)
}

/// Parses checkpoint text; `origin` only labels errors.
pub fn read_checkpoint(text: &str, origin: &Path) -> Result<(Architecture, EncoderParams<DenseMatrix>)> {
    let err = |line: usize, msg: String| Error::Ingestion {
        path: origin.to_path_buf(),
        line,
        message: msg,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l == MAGIC => {}
        _ => return Err(err(1, format!("missing header `{MAGIC}`"))),
    }

    let mut config = EncoderConfig::default();
    let mut entities = None;
    let mut input_dims = BTreeMap::new();
    let mut tensors: Vec<(String, DenseMatrix)> = Vec::new();
    let mut ended = false;
    while let Some((no, line)) = lines.next() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        let num = |i: usize| -> Result<usize> {
            toks.get(i)
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| err(no, format!("expected an integer in `{line}`")))
        };
        let float = |i: usize| -> Result<f64> {
            toks.get(i)
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| err(no, format!("expected a number in `{line}`")))
        };
        match toks.first().copied() {
            Some("dim") => config.dim = num(1)?,
            Some("heads") => config.heads = num(1)?,
            Some("gat_heads") => config.gat_heads = num(1)?,
            Some("gat_layers") => config.gat_layers = num(1)?,
            Some("ffn_dim") => config.ffn_dim = Some(num(1)?),
            Some("leaky_slope") => config.leaky_slope = float(1)?,
            Some("ln_eps") => config.ln_eps = float(1)?,
            Some("modalities") => {
                config.modalities = toks
                    .get(1)
                    .unwrap_or(&"")
                    .split(',')
                    .map(|t| t.parse::<Modality>().map_err(|e| err(no, e.to_string())))
                    .collect::<Result<_>>()?;
            }
            Some("entities") => entities = Some(num(1)?),
            Some("input_dim") => {
                let m: Modality = toks
                    .get(1)
                    .ok_or_else(|| err(no, "input_dim needs a modality".into()))?
                    .parse()
                    .map_err(|e: Error| err(no, e.to_string()))?;
                input_dims.insert(m, num(2)?);
            }
            Some("tensor") => {
                let name = toks
                    .get(1)
                    .ok_or_else(|| err(no, "tensor needs a name".into()))?
                    .to_string();
                let (rows, cols) = (num(2)?, num(3)?);
                let mut data = Vec::with_capacity(rows * cols);
                for _ in 0..rows {
                    let (rno, row) = lines
                        .next()
                        .ok_or_else(|| err(no, format!("tensor {name} truncated")))?;
                    let before = data.len();
                    for t in row.split_whitespace() {
                        data.push(
                            t.parse::<f64>()
                                .map_err(|_| err(rno, format!("invalid number '{t}'")))?,
                        );
                    }
                    if data.len() - before != cols {
                        return Err(err(rno, format!("tensor {name}: expected {cols} values")));
                    }
                }
                let m = DenseMatrix::from_vec(rows, cols, data).map_err(|e| err(no, e.to_string()))?;
                tensors.push((name, m));
            }
            Some("end") => {
                ended = true;
                break;
            }
            None => {}
            Some(other) => return Err(err(no, format!("unknown key `{other}`"))),
        }
    }
    if !ended {
        return Err(err(text.lines().count(), "checkpoint is truncated (no `end`)".into()));
    }
    let entities = entities.ok_or_else(|| err(1, "missing `entities`".into()))?;
    config.validate()?;
    let arch = Architecture {
        config,
        entities,
        input_dims,
    };
    let template = EncoderParams::init(&arch, 0);
    let layout = template.named();
    if layout.len() != tensors.len() {
        return Err(err(
            1,
            format!("expected {} tensors, found {}", layout.len(), tensors.len()),
        ));
    }
    for ((want, t), (got, m)) in layout.iter().zip(&tensors) {
        if want != got || t.shape() != m.shape() {
            return Err(err(
                1,
                format!(
                    "tensor {got} {:?} does not match layout entry {want} {:?}",
                    m.shape(),
                    t.shape()
                ),
            ));
        }
    }
    let params = template.with_values(tensors.into_iter().map(|(_, m)| m).collect());
    Ok((arch, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderInput;
    use crate::mmkg::GraphOperators;
    use std::sync::Arc;

    fn arch() -> Architecture {
        let ops = GraphOperators::from_edges(5, [(0, 1), (2, 3)], true);
        let input = EncoderInput {
            adjacency: Arc::clone(&ops.adjacency),
            features: [
                (Modality::Text, DenseMatrix::zeros(5, 7)),
                (Modality::Visual, DenseMatrix::zeros(5, 3)),
            ]
            .into_iter()
            .collect(),
        };
        let cfg = EncoderConfig {
            dim: 4,
            heads: 2,
            modalities: vec![Modality::Visual, Modality::Graph, Modality::Text],
            ..EncoderConfig::default()
        };
        Architecture::new(cfg, &input).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let a = arch();
        let p = EncoderParams::init(&a, 42);
        let text = write_checkpoint(&a, &p);
        let (a2, p2) = read_checkpoint(&text, Path::new("mem")).unwrap();
        assert_eq!(a2.config.ffn_dim(), a.config.ffn_dim());
        assert_eq!(a2.input_dims, a.input_dims);
        for ((_, x), (_, y)) in p.named().iter().zip(p2.named()) {
            assert!(x.data().iter().zip(y.data()).all(|(u, v)| u.to_bits() == v.to_bits()));
        }
        assert_eq!(write_checkpoint(&a2, &p2), text);
    }

    #[test]
    fn truncated_checkpoint_rejected() {
        let a = arch();
        let text = write_checkpoint(&a, &EncoderParams::init(&a, 1));
        let cut: String = text.lines().take(20).map(|l| format!("{l}\n")).collect();
        assert!(matches!(
            read_checkpoint(&cut, Path::new("mem")),
            Err(Error::Ingestion { .. })
        ));
    }
}
