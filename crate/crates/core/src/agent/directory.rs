use std::collections::{BTreeMap, BTreeSet};

use super::AgentId;

/// Service name to registered agents.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Directory {
    services: BTreeMap<String, BTreeSet<AgentId>>,
}

impl Directory {
    pub fn register(&mut self, service: impl Into<String>, id: AgentId) {
        self.services.entry(service.into()).or_default().insert(id);
    }

    pub fn deregister(&mut self, service: &str, id: &AgentId) {
        if let Some(set) = self.services.get_mut(service) {
            set.remove(id);
            if set.is_empty() {
                self.services.remove(service);
            }
        }
    }

    /// Removes `id` from every service.
    pub fn deregister_all(&mut self, id: &AgentId) {
        self.services.retain(|_, set| {
            set.remove(id);
            !set.is_empty()
        });
    }

    /// Registrants of `service`, sorted by name.
    pub fn lookup(&self, service: &str) -> Vec<AgentId> {
        self.services
            .get(service)
            .map(|s| s.iter().cloned().collect())
            .unwrap_or_default()
    }

    pub fn services(&self) -> impl Iterator<Item = &str> {
        self.services.keys().map(String::as_str)
    }

    pub fn contains(&self, id: &AgentId) -> bool {
        self.services.values().any(|s| s.contains(id))
    }

    pub fn is_empty(&self) -> bool {
        self.services.is_empty()
    }
}
