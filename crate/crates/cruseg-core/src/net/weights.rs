//! Weights file: a text header describing the config and parameter layout,
//! a `data` separator line, then every tensor as little-endian f32 in
//! manifest order. The header keeps snapshots diffable and greppable while
//! the payload stays compact.

use std::fmt::Write as _;
use std::path::Path;

use crate::autodiff::{Shape, Tensor};
use crate::error::{Error, Result};
use crate::fsio;
use crate::net::config::NetworkConfig;
use crate::net::model::CruNet;
use crate::net::params::ParamSet;

const MAGIC: &str = "CRUSEG-WEIGHTS v1";
const SEPARATOR: &[u8] = b"\ndata\n";

const CONFIG_KEYS: [&str; 14] = [
    "net.base_channels",
    "net.kernel_size",
    "net.dropout_rate",
    "net.residual_enabled",
    "net.input_size",
    "net.num_classes",
    "net.lambda",
    "crf.mu",
    "crf.omega1",
    "crf.omega2",
    "crf.theta_alpha",
    "crf.theta_beta",
    "crf.theta_gamma",
    "crf.iterations",
];

pub fn save_weights(net: &CruNet, path: &Path) -> Result<()> {
    let cfg = net.config();
    let ch = cfg.base_channels;
    let mu = cfg.crf.mu_flat();
    let mut header = String::new();
    let mut line = |s: String| {
        writeln!(header, "{s}").expect("string write");
    };
    line(MAGIC.to_string());
    line(format!("net.base_channels {} {} {} {}", ch[0], ch[1], ch[2], ch[3]));
    line(format!("net.kernel_size {}", cfg.kernel_size));
    line(format!("net.dropout_rate {}", cfg.dropout_rate));
    line(format!("net.residual_enabled {}", cfg.residual_enabled as u8));
    line(format!("net.input_size {}", cfg.input_size));
    line(format!("net.num_classes {}", cfg.num_classes));
    line(format!("net.lambda {}", cfg.lambda));
    line(format!("crf.mu {} {} {} {}", mu[0], mu[1], mu[2], mu[3]));
    line(format!("crf.omega1 {}", cfg.crf.omega1));
    line(format!("crf.omega2 {}", cfg.crf.omega2));
    line(format!("crf.theta_alpha {}", cfg.crf.theta_alpha));
    line(format!("crf.theta_beta {}", cfg.crf.theta_beta));
    line(format!("crf.theta_gamma {}", cfg.crf.theta_gamma));
    line(format!("crf.iterations {}", cfg.crf.iterations));
    for (name, t) in net.params().iter() {
        let s = t.shape();
        line(format!("param {name} {} {} {} {}", s.batch, s.channels, s.height, s.width));
    }
    header.push_str("data\n");

    let mut bytes = header.into_bytes();
    bytes.reserve(net.params().total_elements() * 4);
    for (_, t) in net.params().iter() {
        for v in t.data() {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    fsio::write_atomic(path, &bytes)
}

pub fn load_weights(path: &Path) -> Result<CruNet> {
    let bytes = fsio::read_bytes(path)?;
    let bad = |reason: String| Error::file_format(path, reason);

    let sep = bytes
        .windows(SEPARATOR.len())
        .position(|w| w == SEPARATOR)
        .ok_or_else(|| bad("no data separator line".to_string()))?;
    let header = std::str::from_utf8(&bytes[..sep])
        .map_err(|_| bad("header is not valid utf-8".to_string()))?;
    let payload = &bytes[sep + SEPARATOR.len()..];

    let mut lines = header.lines();
    let magic = lines.next().unwrap_or_default();
    if magic != MAGIC {
        return Err(bad(format!("bad magic line {magic:?}, expected {MAGIC:?}")));
    }

    let mut cfg = NetworkConfig::default();
    let mut seen: Vec<&str> = Vec::new();
    let mut manifest: Vec<(String, Shape)> = Vec::new();
    for raw in lines {
        let mut it = raw.split_whitespace();
        let key = it
            .next()
            .ok_or_else(|| bad("blank line inside header".to_string()))?;
        let rest: Vec<&str> = it.collect();
        if key == "param" {
            if rest.len() != 5 {
                return Err(bad(format!("param line needs name and 4 dims: {raw:?}")));
            }
            let dims: Vec<usize> = rest[1..]
                .iter()
                .map(|v| parse_num(path, "param dim", v))
                .collect::<Result<_>>()?;
            manifest.push((rest[0].to_string(), Shape::new(dims[0], dims[1], dims[2], dims[3])));
            continue;
        }
        let slot = CONFIG_KEYS
            .iter()
            .find(|k| **k == key)
            .ok_or_else(|| bad(format!("unknown header key {key}")))?;
        if seen.contains(slot) {
            return Err(bad(format!("duplicate header key {key}")));
        }
        seen.push(slot);
        let arity = match key {
            "net.base_channels" | "crf.mu" => 4,
            _ => 1,
        };
        if rest.len() != arity {
            return Err(bad(format!("{key} wants {arity} value(s), got {}", rest.len())));
        }
        match key {
            "net.base_channels" => {
                for (i, v) in rest.iter().enumerate() {
                    cfg.base_channels[i] = parse_num(path, key, v)?;
                }
            }
            "net.kernel_size" => cfg.kernel_size = parse_num(path, key, rest[0])?,
            "net.dropout_rate" => cfg.dropout_rate = parse_num(path, key, rest[0])?,
            "net.residual_enabled" => {
                cfg.residual_enabled = match rest[0] {
                    "0" => false,
                    "1" => true,
                    other => return Err(bad(format!("{key} must be 0 or 1, got {other}"))),
                }
            }
            "net.input_size" => cfg.input_size = parse_num(path, key, rest[0])?,
            "net.num_classes" => cfg.num_classes = parse_num(path, key, rest[0])?,
            "net.lambda" => cfg.lambda = parse_num(path, key, rest[0])?,
            "crf.mu" => {
                cfg.crf.mu = [
                    [parse_num(path, key, rest[0])?, parse_num(path, key, rest[1])?],
                    [parse_num(path, key, rest[2])?, parse_num(path, key, rest[3])?],
                ]
            }
            "crf.omega1" => cfg.crf.omega1 = parse_num(path, key, rest[0])?,
            "crf.omega2" => cfg.crf.omega2 = parse_num(path, key, rest[0])?,
            "crf.theta_alpha" => cfg.crf.theta_alpha = parse_num(path, key, rest[0])?,
            "crf.theta_beta" => cfg.crf.theta_beta = parse_num(path, key, rest[0])?,
            "crf.theta_gamma" => cfg.crf.theta_gamma = parse_num(path, key, rest[0])?,
            "crf.iterations" => cfg.crf.iterations = parse_num(path, key, rest[0])?,
            _ => unreachable!("key filtered above"),
        }
    }
    if seen.len() != CONFIG_KEYS.len() {
        let missing: Vec<&str> = CONFIG_KEYS
            .iter()
            .filter(|k| !seen.contains(k))
            .copied()
            .collect();
        return Err(bad(format!("header is missing {}", missing.join(", "))));
    }

    let total: usize = manifest.iter().map(|(_, s)| s.numel()).sum();
    if payload.len() != total * 4 {
        return Err(bad(format!(
            "payload holds {} bytes, manifest wants {}",
            payload.len(),
            total * 4
        )));
    }
    let mut params = ParamSet::new();
    let mut off = 0;
    for (name, shape) in manifest {
        let n = shape.numel();
        let data = payload[off..off + 4 * n]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        off += 4 * n;
        params.insert(&name, Tensor::from_vec(shape, data)?)?;
    }
    CruNet::from_parts(cfg, params)
}

fn parse_num<T: std::str::FromStr>(path: &Path, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::file_format(path, format!("bad value {v:?} for {key}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::model::build_network;

    fn sample_net() -> CruNet {
        let mut cfg = NetworkConfig::default();
        cfg.base_channels = [2, 3, 4, 5];
        cfg.input_size = 8;
        cfg.lambda = 0.25;
        cfg.crf.theta_beta = 0.2;
        let mut net = build_network(&cfg, 17).unwrap();
        net.params_mut().set_data("crf.omega1", vec![0.75]).unwrap();
        net
    }

    #[test]
    fn save_load_roundtrip_preserves_config_and_quantized_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.weights");
        let net = sample_net();
        save_weights(&net, &path).unwrap();
        let loaded = load_weights(&path).unwrap();

        assert_eq!(loaded.config(), net.config());
        assert_eq!(loaded.params().len(), net.params().len());
        for ((na, ta), (nb, tb)) in net.params().iter().zip(loaded.params().iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.shape(), tb.shape());
            // storage is f32, so loaded values are the f32 image of the originals
            for (orig, got) in ta.data().iter().zip(tb.data()) {
                assert_eq!(*got, (*orig as f32) as f64, "{na}");
            }
        }
        assert_eq!(loaded.crf_params().omega1, 0.75);
    }

    #[test]
    fn second_save_of_loaded_net_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.weights");
        let b = dir.path().join("b.weights");
        save_weights(&sample_net(), &a).unwrap();
        save_weights(&load_weights(&a).unwrap(), &b).unwrap();
        assert_eq!(fsio::read_bytes(&a).unwrap(), fsio::read_bytes(&b).unwrap());
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.weights");
        save_weights(&sample_net(), &path).unwrap();
        let mut bytes = fsio::read_bytes(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        let err = load_weights(&path).unwrap_err().to_string();
        assert!(err.contains("magic"), "{err}");
    }

    #[test]
    fn truncated_payload_is_rejected_with_byte_counts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.weights");
        save_weights(&sample_net(), &path).unwrap();
        let bytes = fsio::read_bytes(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        let err = load_weights(&path).unwrap_err().to_string();
        assert!(err.contains("bytes"), "{err}");
    }

    #[test]
    fn unknown_and_duplicate_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.weights");
        save_weights(&sample_net(), &path).unwrap();
        let text = fsio::read_bytes(&path).unwrap();

        let inject = |extra: &str| {
            let mut b = text.clone();
            let at = MAGIC.len() + 1;
            b.splice(at..at, extra.bytes());
            std::fs::write(&path, &b).unwrap();
            load_weights(&path).unwrap_err().to_string()
        };
        let err = inject("net.qubits 3\n");
        assert!(err.contains("unknown"), "{err}");
        let err = inject("net.kernel_size 3\n");
        assert!(err.contains("duplicate"), "{err}");
    }

    #[test]
    fn config_and_manifest_disagreement_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.weights");
        save_weights(&sample_net(), &path).unwrap();
        let mut bytes = fsio::read_bytes(&path).unwrap();
        let needle = b"net.residual_enabled 1";
        let at = bytes
            .windows(needle.len())
            .position(|w| w == needle)
            .unwrap();
        bytes[at + needle.len() - 1] = b'0';
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_weights(&path).is_err());
    }

    #[test]
    fn missing_separator_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.weights");
        std::fs::write(&path, b"CRUSEG-WEIGHTS v1\nnet.kernel_size 3\n").unwrap();
        let err = load_weights(&path).unwrap_err().to_string();
        assert!(err.contains("separator"), "{err}");
    }
}
