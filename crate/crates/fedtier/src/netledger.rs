//! Simulated message layer with exact accounting of parameter transfers.
//!
//! Every model or metadata exchange between the server and the fleet is
//! recorded as a [`Message`]; the ledger then answers traffic queries per
//! round, per link class, and per payload kind. Two link classes exist:
//! any message touching the server is `server↔top` traffic, and messages
//! between two robots are `top↔low` traffic.
//!
//! Self-delivery is free and unrecorded: a top-level robot serving itself
//! as a member of its own low-level set moves no bytes, which is what makes
//! the tiered protocol's per-round model traffic land exactly on the
//! single-tier figure of `2·n·|θ|`.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

/// A participant in the simulated network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum NodeId {
    Server,
    Robot(u64),
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Server => write!(f, "server"),
            NodeId::Robot(id) => write!(f, "robot{id}"),
        }
    }
}

/// What a message carries. Only `Model` payloads count toward the
/// model-traffic equality checks; score and report metadata is tracked
/// separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadKind {
    Model,
    Scores,
    Report,
}

/// Which hop of the hierarchy a message crosses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkClass {
    /// Server to a top-level robot or back.
    ServerTop,
    /// Top-level robot to a low-level robot or back.
    TopLow,
}

impl LinkClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            LinkClass::ServerTop => "server_top",
            LinkClass::TopLow => "top_low",
        }
    }
}

/// One directed transfer in one round. `payload_params` counts model
/// parameters for `Model` payloads and scalar fields for metadata payloads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub src: NodeId,
    pub dst: NodeId,
    pub kind: PayloadKind,
    pub payload_params: u64,
    pub round: u64,
}

impl Message {
    pub fn new(src: NodeId, dst: NodeId, kind: PayloadKind, payload_params: u64, round: u64) -> Self {
        Self {
            src,
            dst,
            kind,
            payload_params,
            round,
        }
    }

    pub fn link_class(&self) -> LinkClass {
        if self.src == NodeId::Server || self.dst == NodeId::Server {
            LinkClass::ServerTop
        } else {
            LinkClass::TopLow
        }
    }
}

/// Append-only record of all traffic, grouped by round.
#[derive(Debug, Clone, Default)]
pub struct CommLedger {
    rounds: BTreeMap<u64, Vec<Message>>,
}

impl CommLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a message. Self-deliveries (`src == dst`) are skipped and
    /// reported as `false`; everything else lands in its round's log.
    pub fn record(&mut self, msg: Message) -> bool {
        if msg.src == msg.dst {
            return false;
        }
        self.rounds.entry(msg.round).or_default().push(msg);
        true
    }

    /// Rounds with at least one recorded message, ascending.
    pub fn rounds(&self) -> Vec<u64> {
        self.rounds.keys().copied().collect()
    }

    pub fn messages(&self, round: u64) -> Option<&[Message]> {
        self.rounds.get(&round).map(Vec::as_slice)
    }

    fn round_messages(&self, round: u64) -> Result<&[Message]> {
        self.messages(round).ok_or(Error::UnknownRound(round))
    }

    /// Parameters moved in `round` by messages of `kind`, both link classes.
    pub fn round_kind_traffic(&self, round: u64, kind: PayloadKind) -> Result<u64> {
        Ok(self
            .round_messages(round)?
            .iter()
            .filter(|m| m.kind == kind)
            .map(|m| m.payload_params)
            .sum())
    }

    /// Model parameters moved in `round` across both link classes.
    pub fn round_model_traffic(&self, round: u64) -> Result<u64> {
        self.round_kind_traffic(round, PayloadKind::Model)
    }

    /// Model parameters moved in `round` across one link class.
    pub fn link_model_traffic(&self, round: u64, class: LinkClass) -> Result<u64> {
        Ok(self
            .round_messages(round)?
            .iter()
            .filter(|m| m.kind == PayloadKind::Model && m.link_class() == class)
            .map(|m| m.payload_params)
            .sum())
    }

    /// Model parameters moved over the whole run, every round included.
    pub fn total_model_traffic(&self) -> u64 {
        self.rounds
            .values()
            .flatten()
            .filter(|m| m.kind == PayloadKind::Model)
            .map(|m| m.payload_params)
            .sum()
    }

    /// Renders per-round, per-link-class Model traffic as CSV. Both link
    /// classes appear for every recorded round, zeros included.
    /// Model traffic broken down as `(round, link class, summed params)`,
    /// rounds ascending, both link classes present for every recorded round.
    pub fn model_traffic_rows(&self) -> Vec<(u64, LinkClass, u64)> {
        let mut rows = Vec::with_capacity(self.rounds.len() * 2);
        for (&round, messages) in &self.rounds {
            for class in [LinkClass::ServerTop, LinkClass::TopLow] {
                let params: u64 = messages
                    .iter()
                    .filter(|m| m.kind == PayloadKind::Model && m.link_class() == class)
                    .map(|m| m.payload_params)
                    .sum();
                rows.push((round, class, params));
            }
        }
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,link_class,params\n");
        for (round, class, params) in self.model_traffic_rows() {
            out.push_str(&format!("{round},{},{params}\n", class.as_str()));
        }
        out
    }
}
