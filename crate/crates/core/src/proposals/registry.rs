//! Proposal families addressed by name.

use std::collections::BTreeMap;

use super::arch::{ArchConfig, Architecture};
use super::gnn::Gnn;
use super::mlp::Mlp;
use super::psi::Psi;
use super::rnn::Rnn;
use crate::error::{Error, Result};
use crate::pf::{Bootstrap, MinDegeneracy, Proposal};
use crate::ssm::ModelSpec;

pub type DesignedFactory = fn(&ModelSpec) -> Result<Box<dyn Proposal>>;
pub type LearnedFactory = fn(&ArchConfig) -> Box<dyn Architecture>;

#[derive(Clone, Copy)]
pub enum Factory {
    /// Fixed proposal built from the model alone.
    Designed(DesignedFactory),
    /// Family whose parameters must be trained first.
    Learned(LearnedFactory),
}

pub struct Registry {
    entries: BTreeMap<String, Factory>,
}

impl Default for Registry {
    fn default() -> Self {
        let mut r = Registry { entries: BTreeMap::new() };
        r.register("bootstrap", Factory::Designed(|_| Ok(Box::new(Bootstrap))));
        r.register("min-degeneracy", Factory::Designed(|m| Ok(Box::new(MinDegeneracy::new(m)?))));
        r.register("mlp", Factory::Learned(|c| Box::new(Mlp { hidden: c.mlp_hidden.clone() })));
        r.register("rnn", Factory::Learned(|c| Box::new(Rnn { hidden: c.rnn_hidden })));
        r.register(
            "gnn",
            Factory::Learned(|c| Box::new(Gnn { features: c.gnn_features.clone(), order: c.gnn_order })),
        );
        r.register("psi", Factory::Learned(|c| Box::new(Psi { layers: c.psi_layers })));
        r
    }
}

impl Registry {
    pub fn register(&mut self, name: &str, factory: Factory) {
        self.entries.insert(name.to_string(), factory);
    }

    pub fn get(&self, name: &str) -> Result<Factory> {
        self.entries.get(name).copied().ok_or_else(|| {
            Error::Config(format!("unknown proposal `{name}` (known: {})", self.names().join(", ")))
        })
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }

    pub fn is_learned(&self, name: &str) -> Result<bool> {
        Ok(matches!(self.get(name)?, Factory::Learned(_)))
    }

    pub fn designed(&self, name: &str, model: &ModelSpec) -> Result<Box<dyn Proposal>> {
        match self.get(name)? {
            Factory::Designed(f) => f(model),
            Factory::Learned(_) => Err(Error::Config(format!("proposal `{name}` needs training"))),
        }
    }

    pub fn architecture(&self, name: &str, config: &ArchConfig) -> Result<Box<dyn Architecture>> {
        match self.get(name)? {
            Factory::Learned(f) => Ok(f(config)),
            Factory::Designed(_) => Err(Error::Config(format!("proposal `{name}` has no parameters"))),
        }
    }
}
