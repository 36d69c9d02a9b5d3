//! Cyclic target-domain selector: one target per epoch, visited in a fixed
//! order that wraps around.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OdsState {
    order: Vec<String>,
    cursor: usize,
    epochs_completed: usize,
}

/// Emitted whenever the active target changes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename = "domain_switch")]
pub struct DomainSwitch {
    /// Index of the epoch that starts on `to`.
    pub epoch: usize,
    pub from: String,
    pub to: String,
}

impl OdsState {
    pub fn new(order: Vec<String>) -> Result<Self> {
        if order.is_empty() {
            return Err(Error::config("domain order is empty"));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = order.iter().find(|d| !seen.insert(d.as_str())) {
            return Err(Error::config(format!("domain '{dup}' appears twice in the order")));
        }
        Ok(OdsState {
            order,
            cursor: 0,
            epochs_completed: 0,
        })
    }

    pub fn order(&self) -> &[String] {
        &self.order
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn epochs_completed(&self) -> usize {
        self.epochs_completed
    }

    pub fn num_domains(&self) -> usize {
        self.order.len()
    }

    pub fn current_domain(&self) -> &str {
        &self.order[self.cursor]
    }

    /// Advances the cursor cyclically. With a single domain the cursor stays
    /// put but the event is still reported.
    pub fn on_epoch_complete(&mut self) -> DomainSwitch {
        let from = self.current_domain().to_string();
        self.cursor = (self.cursor + 1) % self.order.len();
        self.epochs_completed += 1;
        DomainSwitch {
            epoch: self.epochs_completed,
            from,
            to: self.current_domain().to_string(),
        }
    }
}
