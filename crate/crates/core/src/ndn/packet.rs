use sha2::{Digest, Sha256};

use super::name::Name;
use crate::engine::SimTime;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interest {
    pub name: Name,
    pub nonce: u64,
    pub lifetime: SimTime,
    /// Only Sync Interests carry parameters (the encoded state vector).
    pub app_params: Option<Vec<u8>>,
    /// Simulator bookkeeping: set on consumer retransmissions. Forwarding
    /// never looks at it; metrics use it to classify recovery traffic.
    pub retx: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataPacket {
    pub name: Name,
    pub content: Vec<u8>,
    /// Name of the certificate whose key signed this packet.
    pub key_locator: Name,
    pub sig: [u8; 32],
    pub encrypted: bool,
    /// Simulator bookkeeping: the copy was elicited by a retransmission.
    pub recovery: bool,
}

/// Mock keyed digest over the signed portion of a Data packet.
pub fn digest(key: &[u8], name: &Name, content: &[u8], key_locator: &Name, encrypted: bool) -> [u8; 32] {
    let mut h = Sha256::new();
    for part in [
        key,
        name.to_string().as_bytes(),
        content,
        key_locator.to_string().as_bytes(),
    ] {
        h.update((part.len() as u64).to_be_bytes());
        h.update(part);
    }
    h.update([u8::from(encrypted)]);
    h.finalize().into()
}

impl DataPacket {
    pub fn verify_digest(&self, key: &[u8]) -> bool {
        digest(key, &self.name, &self.content, &self.key_locator, self.encrypted) == self.sig
    }
}

/// A Data packet named `/<entity>/KEY/<id>` whose content is the mock key
/// token other packets are signed with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate(DataPacket);

impl Certificate {
    pub fn key_name(entity: &str, id: &str) -> Name {
        Name::from_components([entity, "KEY", id]).expect("non-empty components")
    }

    fn token(name: &Name) -> Vec<u8> {
        format!("mock-pubkey:{name}").into_bytes()
    }

    pub fn self_signed(entity: &str, id: &str) -> Self {
        let name = Self::key_name(entity, id);
        let content = Self::token(&name);
        let sig = digest(&content, &name, &content, &name, false);
        Certificate(DataPacket {
            key_locator: name.clone(),
            name,
            content,
            sig,
            encrypted: false,
            recovery: false,
        })
    }

    pub fn issue(entity: &str, id: &str, issuer: &Certificate) -> Self {
        let name = Self::key_name(entity, id);
        let content = Self::token(&name);
        Certificate(sign(issuer, name, content))
    }

    pub fn name(&self) -> &Name {
        &self.0.name
    }

    pub fn key(&self) -> &[u8] {
        &self.0.content
    }

    pub fn packet(&self) -> &DataPacket {
        &self.0
    }

    pub fn from_packet(p: DataPacket) -> Self {
        Certificate(p)
    }
}

pub fn sign(producer_key: &Certificate, name: Name, content: Vec<u8>) -> DataPacket {
    sign_with(producer_key, name, content, false)
}

pub fn sign_with(producer_key: &Certificate, name: Name, content: Vec<u8>, encrypted: bool) -> DataPacket {
    let key_locator = producer_key.name().clone();
    let sig = digest(producer_key.key(), &name, &content, &key_locator, encrypted);
    DataPacket {
        name,
        content,
        key_locator,
        sig,
        encrypted,
        recovery: false,
    }
}
