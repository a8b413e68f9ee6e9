//! Network checkpoint encoding.
//!
//! Layout: the 8 magic bytes `LANN0001`, a `u64` little-endian byte length,
//! a JSON header with the layer specs, then every parameter as a
//! little-endian `f64` in layer order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layer::LayerSpec;
use super::network::Network;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"LANN0001";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    input_shape: Vec<usize>,
    seed: u64,
    param_count: usize,
    layers: Vec<LayerSpec>,
}

pub fn write_network(net: &Network, out: &mut impl Write) -> std::io::Result<()> {
    let header = Header {
        input_shape: net.input_shape().to_vec(),
        seed: net.seed(),
        param_count: net.count_parameters(),
        layers: net.specs().to_vec(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    out.write_all(MAGIC)?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    for p in net.params() {
        out.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

pub fn encode_network(net: &Network) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + net.count_parameters() * 8 + 512);
    write_network(net, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

fn read_exact(input: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    input
        .read_exact(buf)
        .map_err(|_| Error::Format(format!("checkpoint truncated while reading {what}")))
}

pub fn read_network(input: &mut impl Read) -> Result<Network> {
    let mut magic = [0u8; 8];
    read_exact(input, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad checkpoint magic {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }
    let mut len = [0u8; 8];
    read_exact(input, &mut len, "header length")?;
    let len = u64::from_le_bytes(len);
    if len > 1 << 24 {
        return Err(Error::Format(format!("implausible header length {len}")));
    }
    let mut json = vec![0u8; len as usize];
    read_exact(input, &mut json, "header")?;
    let header: Header = serde_json::from_slice(&json)
        .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
    let mut raw = vec![0u8; header.param_count * 8];
    read_exact(input, &mut raw, "parameters")?;
    let params = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Network::from_parts(&header.layers, &header.input_shape, header.seed, params)
        .map_err(|e| Error::Format(format!("checkpoint does not describe a valid network: {e}")))
}

pub fn save_network(net: &Network, path: &Path) -> Result<()> {
    fs::write(path, encode_network(net)).map_err(|e| Error::io(path, e))
}

pub fn load_network(path: &Path) -> Result<Network> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cursor = bytes.as_slice();
    let net = read_network(&mut cursor)?;
    if !cursor.is_empty() {
        return Err(Error::Format(format!(
            "{} trailing bytes after checkpoint",
            cursor.len()
        )));
    }
    Ok(net)
}
