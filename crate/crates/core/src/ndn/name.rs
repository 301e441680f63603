use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NameError {
    #[error("name `{0}` must start with `/`")]
    NoLeadingSlash(String),
    #[error("name `{0}` has an empty component")]
    EmptyComponent(String),
    #[error("name must have at least one component")]
    Empty,
}

/// Hierarchical NDN name, e.g. `/E/seq=12`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Name {
    components: Vec<String>,
}

impl Name {
    pub fn from_components<I, S>(parts: I) -> Result<Self, NameError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let components: Vec<String> = parts.into_iter().map(Into::into).collect();
        if components.is_empty() {
            return Err(NameError::Empty);
        }
        for c in &components {
            if c.is_empty() || c.contains('/') {
                return Err(NameError::EmptyComponent(components.join("/")));
            }
        }
        Ok(Name { components })
    }

    /// `/<producer>/seq=<seq>`.
    pub fn for_adu(producer: &str, seq: u64) -> Name {
        Name {
            components: vec![producer.to_string(), format!("seq={seq}")],
        }
    }

    /// Inverse of [`Name::for_adu`].
    pub fn parse_adu(&self) -> Option<(&str, u64)> {
        match self.components.as_slice() {
            [p, s] => s
                .strip_prefix("seq=")
                .and_then(|n| n.parse().ok())
                .map(|n| (p.as_str(), n)),
            _ => None,
        }
    }

    pub fn components(&self) -> &[String] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn first(&self) -> &str {
        &self.components[0]
    }

    pub fn is_prefix_of(&self, other: &Name) -> bool {
        self.components.len() <= other.components.len()
            && self
                .components
                .iter()
                .zip(&other.components)
                .all(|(a, b)| a == b)
    }

    pub fn child(&self, component: impl Into<String>) -> Name {
        let mut components = self.components.clone();
        components.push(component.into());
        Name { components }
    }
}

impl fmt::Display for Name {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.components {
            write!(f, "/{c}")?;
        }
        Ok(())
    }
}

impl FromStr for Name {
    type Err = NameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let rest = s
            .strip_prefix('/')
            .ok_or_else(|| NameError::NoLeadingSlash(s.to_string()))?;
        if rest.is_empty() {
            return Err(NameError::Empty);
        }
        let parts: Vec<&str> = rest.split('/').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(NameError::EmptyComponent(s.to_string()));
        }
        Ok(Name {
            components: parts.into_iter().map(String::from).collect(),
        })
    }
}

impl Serialize for Name {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Name {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
