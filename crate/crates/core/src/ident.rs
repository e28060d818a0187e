//! Identifier newtypes. Connection, channel, client and port identifiers use
//! `[a-z0-9-]{1,64}`; ledger ids additionally allow upper-case letters.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::{Canonical, DecodeError, Decoder, Encoder};

pub const MAX_IDENT_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid {kind} identifier {value:?}")]
pub struct InvalidIdentifier {
    pub kind: &'static str,
    pub value: String,
}

fn lower_ident_char(c: char) -> bool {
    c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-'
}

fn ledger_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '-'
}

macro_rules! identifier {
    ($(#[$meta:meta])* $name:ident, $kind:literal, $charset:path) => {
        $(#[$meta])*
        #[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub struct $name(String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Result<Self, InvalidIdentifier> {
                let s = s.into();
                if s.is_empty() || s.len() > MAX_IDENT_LEN || !s.chars().all($charset) {
                    return Err(InvalidIdentifier { kind: $kind, value: s });
                }
                Ok(Self(s))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }

        impl TryFrom<String> for $name {
            type Error = InvalidIdentifier;
            fn try_from(s: String) -> Result<Self, Self::Error> {
                Self::new(s)
            }
        }

        impl TryFrom<&str> for $name {
            type Error = InvalidIdentifier;
            fn try_from(s: &str) -> Result<Self, Self::Error> {
                Self::new(s)
            }
        }

        impl From<$name> for String {
            fn from(id: $name) -> String {
                id.0
            }
        }

        impl std::str::FromStr for $name {
            type Err = InvalidIdentifier;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                Self::new(s)
            }
        }

        impl Canonical for $name {
            fn encode(&self, enc: &mut Encoder) {
                enc.str(&self.0);
            }
            fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
                let s = dec.string()?;
                Self::new(s).map_err(|e| DecodeError::Invalid(e.to_string()))
            }
        }
    };
}

identifier!(LedgerId, "ledger", ledger_ident_char);
identifier!(ClientId, "client", lower_ident_char);
identifier!(ConnectionId, "connection", lower_ident_char);
identifier!(ChannelId, "channel", lower_ident_char);
identifier!(PortId, "port", lower_ident_char);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charset_and_length() {
        assert!(ConnectionId::new("conn-0").is_ok());
        assert!(ConnectionId::new("a".repeat(64)).is_ok());
        assert!(ConnectionId::new("a".repeat(65)).is_err());
        assert!(ConnectionId::new("").is_err());
        assert!(ConnectionId::new("a/b").is_err());
        assert!(ConnectionId::new("Conn").is_err());
        assert!(LedgerId::new("Chain-A").is_ok());
        assert!(LedgerId::new("chain_a").is_err());
    }

    #[test]
    fn canonical_decode_revalidates() {
        let bytes = "bad/id".to_string().to_bytes();
        assert!(PortId::from_bytes(&bytes).is_err());
        let ok = PortId::new("transfer").unwrap();
        assert_eq!(PortId::from_bytes(&ok.to_bytes()).unwrap(), ok);
    }
}
