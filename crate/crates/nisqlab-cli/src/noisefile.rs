//! The JSON noise-model description file.
//!
//! ```json
//! {
//!   "version": 1,
//!   "gates": {
//!     "h":  {"kind": "depolarizing", "p": 0.01},
//!     "cx": {"kind": "pauli", "rates": [0.9, 0.1, 0, 0, ...16 entries]},
//!     "x":  {"kind": "bit_flip", "p": 0.05},
//!     "rz": {"kind": "phase_flip", "p": 0.02},
//!     "t":  {"kind": "amplitude_damping", "gamma": 0.1},
//!     "raw": {"kind": "uniform_depolarizing", "p": 0.01, "arity": 1}
//!   },
//!   "readout": [{"p01": 0.01, "p10": 0.05}]
//! }
//! ```
//!
//! A gate entry attaches its channel after every gate of that kind; a
//! Pauli-channel entry also provides the rate table for the Monte Carlo
//! route. `readout` lists per-qubit confusion probabilities.

use std::collections::BTreeMap;

use serde::Deserialize;

use nisqlab::error::{Error, Result};
use nisqlab::noise::{Channel, NoiseModel, PauliRates, ReadoutFlips};

#[derive(Debug, Deserialize)]
pub struct NoiseFile {
    #[serde(default = "default_version")]
    pub version: u32,
    #[serde(default)]
    pub gates: BTreeMap<String, ChannelSpec>,
    #[serde(default)]
    pub readout: Vec<ReadoutSpec>,
}

fn default_version() -> u32 {
    1
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelSpec {
    Depolarizing {
        p: f64,
    },
    UniformDepolarizing {
        p: f64,
        #[serde(default = "one")]
        arity: usize,
    },
    BitFlip {
        p: f64,
    },
    PhaseFlip {
        p: f64,
    },
    AmplitudeDamping {
        gamma: f64,
    },
    Pauli {
        rates: Vec<f64>,
    },
}

fn one() -> usize {
    1
}

#[derive(Debug, Deserialize)]
pub struct ReadoutSpec {
    #[serde(default)]
    pub p01: f64,
    #[serde(default)]
    pub p10: f64,
}

impl ChannelSpec {
    pub fn build(&self) -> Result<Channel> {
        match self {
            ChannelSpec::Depolarizing { p } => Channel::depolarizing(*p),
            ChannelSpec::UniformDepolarizing { p, arity } => {
                Channel::uniform_depolarizing(*p, *arity)
            }
            ChannelSpec::BitFlip { p } => Channel::bit_flip(*p),
            ChannelSpec::PhaseFlip { p } => Channel::phase_flip(*p),
            ChannelSpec::AmplitudeDamping { gamma } => Channel::amplitude_damping(*gamma),
            ChannelSpec::Pauli { rates } => {
                let arity = match rates.len() {
                    4 => 1,
                    16 => 2,
                    other => {
                        return Err(Error::InvalidInput(format!(
                            "pauli rate table must have 4 or 16 entries, got {other}"
                        )))
                    }
                };
                Channel::pauli(&PauliRates::new(arity, rates.clone())?)
            }
        }
    }
}

/// Parse the file and build the noise model, attaching both the exact
/// channels and (for Pauli channels) the Monte Carlo rate tables.
pub fn load_noise_model(text: &str) -> Result<NoiseModel> {
    let file: NoiseFile = serde_json::from_str(text)
        .map_err(|e| Error::InvalidInput(format!("bad noise model file: {e}")))?;
    if file.version != 1 {
        return Err(Error::InvalidInput(format!(
            "unsupported noise model version {}",
            file.version
        )));
    }
    let mut model = NoiseModel::ideal();
    for (kind, spec) in &file.gates {
        let channel = spec.build()?;
        if let Ok(rates) = channel.as_pauli_rates() {
            model.attach_pauli_rates(kind, rates);
        }
        model.attach_channel(kind, channel);
    }
    if !file.readout.is_empty() {
        model.set_readout(
            file.readout
                .iter()
                .map(|r| ReadoutFlips {
                    p01: r.p01,
                    p10: r.p10,
                })
                .collect(),
        );
    }
    Ok(model)
}
