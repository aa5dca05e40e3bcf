//! Versioned JSON documents for trained networks.
//!
//! Every float is written with 17 significant digits, which round-trips
//! `f64` exactly, so a reloaded network reproduces forward outputs bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::numfmt::to_json_17;

use super::{Layer, Network, NetworkError, OutputSpec, Result};

pub const NETWORK_FORMAT: &str = "adaptact-network";
pub const NETWORK_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct NetworkDoc {
    format: String,
    version: u32,
    input_shape: Vec<usize>,
    output: OutputSpec,
    layers: Vec<Layer>,
}

impl Network {
    pub fn to_json(&self) -> Result<String> {
        let doc = NetworkDoc {
            format: NETWORK_FORMAT.to_string(),
            version: NETWORK_VERSION,
            input_shape: self.input_shape.clone(),
            output: self.output,
            layers: self.layers.clone(),
        };
        Ok(to_json_17(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: NetworkDoc = serde_json::from_str(text)?;
        if doc.format != NETWORK_FORMAT {
            return Err(NetworkError::Invalid(format!(
                "expected format `{NETWORK_FORMAT}`, found `{}`",
                doc.format
            )));
        }
        if doc.version != NETWORK_VERSION {
            return Err(NetworkError::Invalid(format!(
                "unsupported version {} (this build reads {NETWORK_VERSION})",
                doc.version
            )));
        }
        Network::new(doc.input_shape, doc.layers, doc.output)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
