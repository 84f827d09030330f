//! The four parallel modality encoders: technical price windows, financial
//! text, mixed-frequency macro indicators, and the event knowledge graph.
//! Each maps its raw modality input to a shared `d_model` embedding for one
//! (symbol, day).

pub mod attention;
pub mod event;
pub mod macro_channel;
pub mod technical;
pub mod text;
pub mod wavelet;

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::graph::NodeId;

/// Modality tag. The letters follow the fusion-gate convention:
/// T technical, F financial text, M macro, E event graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Channel {
    Technical,
    Text,
    Macro,
    Event,
}

impl Channel {
    pub const ALL: [Channel; 4] = [
        Channel::Technical,
        Channel::Text,
        Channel::Macro,
        Channel::Event,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Channel::Technical => "T",
            Channel::Text => "F",
            Channel::Macro => "M",
            Channel::Event => "E",
        }
    }
}

impl std::str::FromStr for Channel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "T" | "technical" => Ok(Channel::Technical),
            "F" | "text" => Ok(Channel::Text),
            "M" | "macro" => Ok(Channel::Macro),
            "E" | "event" => Ok(Channel::Event),
            other => Err(Error::Input(format!(
                "unknown channel '{other}' (expected T/F/M/E or technical/text/macro/event)"
            ))),
        }
    }
}

impl std::fmt::Display for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// Look up a parameter bound into the current graph.
pub fn bound(map: &BTreeMap<String, NodeId>, name: &str) -> Result<NodeId> {
    map.get(name)
        .copied()
        .ok_or_else(|| Error::param(name, "not bound into graph"))
}
