//! GMM model files.
//!
//! A text header of `key=value` lines opened by `GMM v1` and closed by `end`,
//! followed by little-endian f64 weights (K), means (K x F) and variances
//! (K x F).

use std::fs;
use std::path::Path;

use super::gmm::{GmmModel, Provenance};
use crate::error::{Error, Result};

pub fn write_model(path: impl AsRef<Path>, m: &GmmModel) -> Result<()> {
    let path = path.as_ref();
    if m.fingerprint.contains('\n') {
        return Err(Error::Input("model fingerprint must be a single line".into()));
    }
    let mut buf = format!(
        "GMM v1\ncomponents={}\ndim={}\nprovenance={}\nfingerprint={}\nend\n",
        m.components(),
        m.dim(),
        m.provenance,
        m.fingerprint
    )
    .into_bytes();
    for v in m.weights.iter().chain(&m.means).chain(&m.variances) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_model(path: impl AsRef<Path>) -> Result<GmmModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: String| Error::parse(path, m);

    let mut pos = 0;
    let mut next_line = || -> Result<String> {
        let rest = &bytes[pos..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("unterminated header".into()))?;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| bad("header is not UTF-8".into()))?
            .to_string();
        pos += nl + 1;
        Ok(line)
    };
    if next_line()? != "GMM v1" {
        return Err(bad("missing `GMM v1` header".into()));
    }
    let (mut k, mut dim, mut prov, mut fp) = (None, None, None, String::new());
    loop {
        let line = next_line()?;
        if line == "end" {
            break;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("bad header line `{line}`")))?;
        match key {
            "components" => k = value.parse::<usize>().ok(),
            "dim" => dim = value.parse::<usize>().ok(),
            "provenance" => prov = Some(Provenance::parse(value).map_err(|e| bad(e.to_string()))?),
            "fingerprint" => fp = value.to_string(),
            other => return Err(bad(format!("unknown header key `{other}`"))),
        }
    }
    let k = k.ok_or_else(|| bad("missing components".into()))?;
    let dim = dim.ok_or_else(|| bad("missing dim".into()))?;
    let prov = prov.ok_or_else(|| bad("missing provenance".into()))?;
    let body = &bytes[pos..];
    let expected = 8 * (k + 2 * k * dim);
    if body.len() != expected {
        return Err(bad(format!(
            "expected {expected} payload bytes, found {}",
            body.len()
        )));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let weights = values[..k].to_vec();
    let means = values[k..k + k * dim].to_vec();
    let variances = values[k + k * dim..].to_vec();
    GmmModel::new(weights, means, variances, dim, prov, fp)
        .map_err(|e| e.context(path.display().to_string()))
}
