//! Text checkpoint format.
//!
//! ```text
//! caltv-checkpoint 1
//! config {"kind":"caltv",...}
//! tensors 7
//! tensor embedding.0 24x8
//! 0.0123 -0.04 ...
//! tensor hidden.0.weight 128x32
//! ...
//! end
//! ```
//!
//! Values use shortest round-trip formatting, so loading a saved checkpoint
//! reproduces every parameter bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use super::params::{ModelParams, TensorSpec};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "caltv-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn render_checkpoint(config_json: &str, params: &ModelParams) -> String {
    assert!(
        !config_json.contains('\n'),
        "config echo must be a single line"
    );
    let mut out = String::new();
    writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}").unwrap();
    writeln!(out, "config {config_json}").unwrap();
    writeln!(out, "tensors {}", params.tensors().len()).unwrap();
    for t in params.tensors() {
        let dims: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
        writeln!(out, "tensor {} {}", t.name, dims.join("x")).unwrap();
        let values = &params.values()[t.range()];
        let mut first = true;
        for v in values {
            if !first {
                out.push(' ');
            }
            first = false;
            write!(out, "{v:?}").unwrap();
        }
        out.push('\n');
    }
    out.push_str("end\n");
    out
}

pub fn save_checkpoint(path: &Path, config_json: &str, params: &ModelParams) -> Result<()> {
    std::fs::write(path, render_checkpoint(config_json, params)).map_err(|e| Error::io(path, e))
}

/// Returns the config echo and the parameters.
pub fn parse_checkpoint(text: &str, path: &Path) -> Result<(String, ModelParams)> {
    let err = |line: usize, field: &str, reason: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        field: field.to_string(),
        reason,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next = |field: &str| {
        lines
            .next()
            .ok_or_else(|| err(0, field, "unexpected end of file".into()))
    };

    let (n, magic) = next("magic")?;
    let version = magic
        .strip_prefix(CHECKPOINT_MAGIC)
        .map(str::trim)
        .ok_or_else(|| err(n, "magic", "not a checkpoint file".into()))?;
    let version: u32 = version
        .parse()
        .map_err(|_| err(n, "version", format!("`{version}` is not a version")))?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let (n, config) = next("config")?;
    let config = config
        .strip_prefix("config ")
        .ok_or_else(|| err(n, "config", "missing config echo".into()))?
        .to_string();
    let (n, count) = next("tensors")?;
    let count: usize = count
        .strip_prefix("tensors ")
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| err(n, "tensors", "missing tensor count".into()))?;

    let mut specs = Vec::with_capacity(count);
    let mut values = Vec::new();
    for _ in 0..count {
        let (n, head) = next("tensor")?;
        let mut parts = head.split(' ');
        if parts.next() != Some("tensor") {
            return Err(err(n, "tensor", "expected a tensor header".into()));
        }
        let name = parts
            .next()
            .ok_or_else(|| err(n, "tensor.name", "missing name".into()))?
            .to_string();
        let shape: Vec<usize> = parts
            .next()
            .ok_or_else(|| err(n, "tensor.shape", "missing shape".into()))?
            .split('x')
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| err(n, "tensor.shape", e.to_string()))?;
        let spec = TensorSpec {
            name,
            shape,
            offset: values.len(),
        };
        let (n, body) = next("tensor.values")?;
        let before = values.len();
        for token in body.split_ascii_whitespace() {
            let v: f64 = token
                .parse()
                .map_err(|_| err(n, "tensor.values", format!("`{token}` is not a number")))?;
            values.push(v);
        }
        if values.len() - before != spec.len() {
            return Err(err(
                n,
                "tensor.values",
                format!(
                    "tensor `{}` expects {} values, found {}",
                    spec.name,
                    spec.len(),
                    values.len() - before
                ),
            ));
        }
        specs.push(spec);
    }
    let (n, end) = next("end")?;
    if end != "end" {
        return Err(err(n, "end", "expected end marker".into()));
    }
    let params =
        ModelParams::from_parts(specs, values).map_err(|e| err(0, "values", e.to_string()))?;
    Ok((config, params))
}

pub fn load_checkpoint(path: &Path) -> Result<(String, ModelParams)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params_with(values: &[f64]) -> ModelParams {
        let n = values.len();
        let mut p = ModelParams::zeros(&[("w".into(), vec![1, n]), ("empty".into(), vec![0])]);
        p.values_mut().copy_from_slice(values);
        p
    }

    proptest! {
        #[test]
        fn save_load_is_exact(values in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 1..50)) {
            let p = params_with(&values);
            let text = render_checkpoint("{\"k\":1}", &p);
            let (config, q) = parse_checkpoint(&text, Path::new("mem")).unwrap();
            prop_assert_eq!(config, "{\"k\":1}");
            prop_assert_eq!(q.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            p.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert!(q.same_layout(&p));
        }
    }

    #[test]
    fn rejects_bad_files() {
        let p = params_with(&[1.0, 2.0]);
        let text = render_checkpoint("{}", &p);
        let path = Path::new("mem");
        assert!(matches!(
            parse_checkpoint(&text.replace("checkpoint 1", "checkpoint 2"), path),
            Err(Error::VersionMismatch { found: 2, .. })
        ));
        assert!(matches!(
            parse_checkpoint(&text.replace("1.0 2.0", "1.0"), path),
            Err(Error::Parse { line: 5, .. })
        ));
        assert!(parse_checkpoint(&text.replace("\nend\n", "\n"), path).is_err());
        assert!(parse_checkpoint("hello", path).is_err());
    }
}
