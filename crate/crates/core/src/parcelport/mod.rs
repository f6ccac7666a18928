//! One-sided active messages: value and frame encodings, actions and the
//! byte-stream transport.

pub mod action;
pub mod parcel;
pub(crate) mod transport;
pub mod value;

pub use action::{action_id, fnv1a_64, Action, ActionRegistry};
pub use parcel::Parcel;
pub use value::{ArgType, Value};
