//! Node identities and the permissioned registry.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{Digest, Encoder};

const ADDRESS_HEX_LEN: usize = 40;

/// Public ledger address: 40 lowercase hex characters derived from a node id.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Address(String);

impl Address {
    pub fn derive(node_id: &str) -> Self {
        let d: Digest = Encoder::new("ets.address.v1").str(node_id).hash();
        Self(d.to_hex()[..ADDRESS_HEX_LEN].to_string())
    }

    /// Wraps a raw string without checking it; see [`Address::is_well_formed`].
    pub fn from_raw(s: impl Into<String>) -> Self {
        Self(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_well_formed(&self) -> bool {
        self.0.len() == ADDRESS_HEX_LEN
            && self
                .0
                .bytes()
                .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Address({})", self.0)
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    User,
    Vehicle,
    ActiveValidator,
    Operator,
    Market,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeIdentity {
    node_id: String,
    role: NodeRole,
    address: Address,
    pub metadata: BTreeMap<String, String>,
}

impl NodeIdentity {
    pub fn new(node_id: impl Into<String>, role: NodeRole) -> Self {
        let node_id = node_id.into();
        let address = Address::derive(&node_id);
        Self {
            node_id,
            role,
            address,
            metadata: BTreeMap::new(),
        }
    }

    pub fn node_id(&self) -> &str {
        &self.node_id
    }

    pub fn role(&self) -> NodeRole {
        self.role
    }

    pub fn address(&self) -> &Address {
        &self.address
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("node id {0:?} is already registered")]
    DuplicateNode(String),
    #[error("node id {node_id:?} already registered with role {existing:?}")]
    RoleConflict { node_id: String, existing: NodeRole },
}

/// Every identity admitted to the permissioned network.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    by_address: BTreeMap<Address, NodeIdentity>,
    by_node: BTreeMap<String, Address>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, identity: NodeIdentity) -> Result<&NodeIdentity, RegistryError> {
        if self.by_node.contains_key(identity.node_id()) {
            return Err(RegistryError::DuplicateNode(identity.node_id.clone()));
        }
        let addr = identity.address.clone();
        self.by_node.insert(identity.node_id.clone(), addr.clone());
        Ok(self.by_address.entry(addr).or_insert(identity))
    }

    /// Registers `node_id` with `role`, or returns the existing identity when
    /// it is already present with the same role.
    pub fn ensure(&mut self, node_id: &str, role: NodeRole) -> Result<Address, RegistryError> {
        if let Some(addr) = self.by_node.get(node_id) {
            let existing = self.by_address[addr].role;
            if existing != role {
                return Err(RegistryError::RoleConflict {
                    node_id: node_id.to_string(),
                    existing,
                });
            }
            return Ok(addr.clone());
        }
        Ok(self.register(NodeIdentity::new(node_id, role))?.address.clone())
    }

    pub fn get(&self, address: &Address) -> Option<&NodeIdentity> {
        self.by_address.get(address)
    }

    pub fn get_mut_metadata(&mut self, address: &Address) -> Option<&mut BTreeMap<String, String>> {
        self.by_address.get_mut(address).map(|n| &mut n.metadata)
    }

    pub fn by_node_id(&self, node_id: &str) -> Option<&NodeIdentity> {
        self.by_node.get(node_id).and_then(|a| self.by_address.get(a))
    }

    pub fn contains(&self, address: &Address) -> bool {
        self.by_address.contains_key(address)
    }

    pub fn len(&self) -> usize {
        self.by_address.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_address.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &NodeIdentity> {
        self.by_address.values()
    }

    pub fn with_role(&self, role: NodeRole) -> impl Iterator<Item = &NodeIdentity> {
        self.by_address.values().filter(move |n| n.role == role)
    }
}
