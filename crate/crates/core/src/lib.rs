pub mod block;
pub mod channel;
pub mod client;
pub mod connection;
pub mod encoding;
pub mod events;
pub mod ident;
pub mod ledger;
pub mod paths;
pub mod relayer;
pub mod router;
pub mod setup;
pub(crate) mod serde_hex;
pub mod store;
pub mod transfer;
