//! Parameter checkpoints.
//!
//! Layout (version 1):
//!
//! ```text
//! NAPINN-PARAMS 1\n
//! {"input_dim":3,"output_dim":1,"hidden_layers":5,"hidden_width":80,"activation":"tanh","count":26321}\n
//! <count little-endian f64 values in canonical layer order>
//! ```

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::network::{NetworkParams, NetworkShape};
use super::AutodiffError;

const MAGIC: &str = "NAPINN-PARAMS 1";

#[derive(Serialize, Deserialize)]
struct Header {
    #[serde(flatten)]
    shape: NetworkShape,
    count: usize,
}

pub fn write_params<W: Write>(mut w: W, params: &NetworkParams) -> Result<(), AutodiffError> {
    let header = Header {
        shape: params.shape,
        count: params.len(),
    };
    writeln!(w, "{MAGIC}")?;
    serde_json::to_writer(&mut w, &header).map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
    writeln!(w)?;
    for v in &params.values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_params<R: BufRead>(mut r: R) -> Result<NetworkParams, AutodiffError> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != MAGIC {
        return Err(AutodiffError::Checkpoint(format!(
            "unexpected magic line {:?}",
            line.trim_end()
        )));
    }
    line.clear();
    r.read_line(&mut line)?;
    let header: Header =
        serde_json::from_str(line.trim_end()).map_err(|e| AutodiffError::Checkpoint(e.to_string()))?;
    let mut bytes = vec![0u8; header.count * 8];
    r.read_exact(&mut bytes)?;
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    NetworkParams::from_vec(header.shape, values)
}

pub fn save_params(path: &std::path::Path, params: &NetworkParams) -> Result<(), AutodiffError> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_params(&mut w, params)?;
    w.flush()?;
    Ok(())
}

pub fn load_params(path: &std::path::Path) -> Result<NetworkParams, AutodiffError> {
    let file = std::fs::File::open(path)?;
    read_params(std::io::BufReader::new(file))
}
