//! Multiply-add counts for fully connected and GRU layers.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlopsError {
    #[error("sparsity {0} is outside [0, 1]")]
    Sparsity(f64),
    #[error("line {line}: {msg}")]
    Arch { line: usize, msg: String },
}

/// `floor(2 * (1 - sparsity) * in * out)`.
pub fn flops_fc(in_dim: usize, out_dim: usize, sparsity: f64) -> Result<u64, FlopsError> {
    if !(0.0..=1.0).contains(&sparsity) {
        return Err(FlopsError::Sparsity(sparsity));
    }
    let dense = 2 * in_dim as u64 * out_dim as u64;
    // the small offset absorbs rounding in sparsities computed as zero counts
    Ok(((1.0 - sparsity) * dense as f64 + 1e-9).floor() as u64)
}

/// `2 * (3 H^2 + 3 In H + 13 H)`.
pub fn flops_gru(in_dim: usize, hidden: usize) -> u64 {
    let (i, h) = (in_dim as u64, hidden as u64);
    2 * (3 * h * h + 3 * i * h + 13 * h)
}

/// A layer stack read from an `[arch]` description.
#[derive(Debug, Clone, PartialEq)]
pub struct Arch {
    /// Widths `[in, h1, ..., out]` of the fully connected stack.
    pub layers: Vec<usize>,
    /// One sparsity per linear layer.
    pub sparsity: Vec<f64>,
    /// Optional recurrent cell `(in, hidden)`.
    pub gru: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchFlops {
    pub per_layer: Vec<u64>,
    pub gru: u64,
    pub total: u64,
}

impl Arch {
    /// Parses `layers = 16,64,64,5`, `sparsity = 0.5` (one value or one per
    /// layer) and `gru = in,hidden`. An `[arch]` header is optional.
    pub fn parse(text: &str) -> Result<Self, FlopsError> {
        let mut layers = None;
        let mut sparsity = None;
        let mut gru = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() || line == "[arch]" {
                continue;
            }
            let err = |msg: &str| FlopsError::Arch {
                line: line_no,
                msg: msg.to_string(),
            };
            let (k, v) = line.split_once('=').ok_or_else(|| err("expected `key = value`"))?;
            let ints = || {
                v.split(',')
                    .map(|s| s.trim().parse::<usize>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| err("expected comma-separated integers"))
            };
            match k.trim() {
                "layers" => layers = Some(ints()?),
                "sparsity" => {
                    sparsity = Some(
                        v.split(',')
                            .map(|s| s.trim().parse::<f64>())
                            .collect::<Result<Vec<_>, _>>()
                            .map_err(|_| err("expected comma-separated numbers"))?,
                    )
                }
                "gru" => {
                    let g = ints()?;
                    if g.len() != 2 {
                        return Err(err("gru takes `in,hidden`"));
                    }
                    gru = Some((g[0], g[1]));
                }
                other => return Err(err(&format!("unknown key {other:?}"))),
            }
        }
        let layers = layers.unwrap_or_default();
        if layers.len() == 1 {
            return Err(FlopsError::Arch {
                line: 0,
                msg: "layers needs at least an input and an output width".into(),
            });
        }
        let n = layers.len().saturating_sub(1);
        let sparsity = match sparsity {
            None => vec![0.0; n],
            Some(s) if s.len() == 1 => vec![s[0]; n],
            Some(s) if s.len() == n => s,
            Some(_) => {
                return Err(FlopsError::Arch {
                    line: 0,
                    msg: format!("sparsity needs 1 or {n} values"),
                })
            }
        };
        Ok(Self { layers, sparsity, gru })
    }

    pub fn flops(&self) -> Result<ArchFlops, FlopsError> {
        let per_layer = self
            .layers
            .windows(2)
            .zip(&self.sparsity)
            .map(|(w, &s)| flops_fc(w[0], w[1], s))
            .collect::<Result<Vec<_>, _>>()?;
        let gru = self.gru.map(|(i, h)| flops_gru(i, h)).unwrap_or(0);
        let total = per_layer.iter().sum::<u64>() + gru;
        Ok(ArchFlops { per_layer, gru, total })
    }
}
