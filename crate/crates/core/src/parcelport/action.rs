//! Action naming, ids and the per-runtime registry.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use super::value::{ArgType, Value};
use crate::agas::component::ActionContext;
use crate::error::{Error, Result};
use crate::tasking::Future;

/// 64-bit FNV-1a.
pub fn fnv1a_64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// Action id for `name`.
pub fn action_id(name: &str) -> u64 {
    fnv1a_64(name.as_bytes())
}

/// Ids at or below this value belong to the runtime itself.
pub const MAX_RESERVED_ID: u64 = 0xFF;

/// Reserved system actions.
pub mod system {
    pub const SET_RESULT: u64 = 0x01;
    pub const HELLO: u64 = 0x02;
    pub const BARRIER_ARRIVE: u64 = 0x03;
    pub const SHUTDOWN: u64 = 0x04;

    pub const RESOLVE: u64 = 0x10;
    pub const CACHE_UPDATE: u64 = 0x11;
    pub const NAME_REGISTER: u64 = 0x12;
    pub const NAME_RESOLVE: u64 = 0x13;
    pub const NAME_LIST: u64 = 0x14;

    pub const MIGRATE: u64 = 0x20;
    pub const MIGRATE_TRANSFER: u64 = 0x21;
    pub const AUTHORITY_UPDATE: u64 = 0x22;
    pub const AUTHORITY_REMOVE: u64 = 0x23;

    pub const COUNTER_SAMPLE: u64 = 0x30;
    pub const COUNTER_RESET: u64 = 0x31;
    pub const COUNTER_REPLY: u64 = 0x32;
    pub const COUNTER_LIST: u64 = 0x34;

    /// Counter queries are observation traffic and are left out of the
    /// parcel counters so that observing does not change what is observed.
    pub fn is_introspection(id: u64) -> bool {
        (0x30..=0x3F).contains(&id)
    }
}

pub type Handler = Arc<dyn Fn(ActionContext, Vec<Value>) -> Future<Value> + Send + Sync>;

/// A named, typed entry point invocable through a parcel.
#[derive(Clone)]
pub struct Action {
    pub name: String,
    pub id: u64,
    pub signature: Vec<ArgType>,
    pub(crate) handler: Handler,
}

impl fmt::Debug for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Action")
            .field("name", &self.name)
            .field("id", &format_args!("{:#018x}", self.id))
            .field("signature", &self.signature)
            .finish()
    }
}

impl Action {
    /// An action whose handler produces its result synchronously. It still
    /// runs as a scheduler task at the destination.
    pub fn new<F>(name: &str, signature: Vec<ArgType>, f: F) -> Action
    where
        F: Fn(&ActionContext, Vec<Value>) -> Result<Value> + Send + Sync + 'static,
    {
        Action::deferred(name, signature, move |ctx, args| {
            Future::from_result(crate::tasking::catch(|| f(&ctx, args)))
        })
    }

    /// An action whose handler hands back a future, for results that depend
    /// on later events (a channel receive, say).
    pub fn deferred<F>(name: &str, signature: Vec<ArgType>, f: F) -> Action
    where
        F: Fn(ActionContext, Vec<Value>) -> Future<Value> + Send + Sync + 'static,
    {
        Action {
            name: name.to_string(),
            id: action_id(name),
            signature,
            handler: Arc::new(f),
        }
    }

    /// Checks arity and argument types.
    pub fn check(&self, args: &[Value]) -> Result<()> {
        if args.len() != self.signature.len() {
            return Err(Error::SignatureMismatch(format!(
                "{} takes {} argument(s), got {}",
                self.name,
                self.signature.len(),
                args.len()
            )));
        }
        for (i, (t, v)) in self.signature.iter().zip(args).enumerate() {
            if !t.accepts(v) {
                return Err(Error::SignatureMismatch(format!(
                    "{} argument {i}: expected {t:?}, got {:?}",
                    self.name,
                    v.arg_type()
                )));
            }
        }
        Ok(())
    }
}

/// Name/id bijection of the actions known to one runtime instance.
#[derive(Default)]
pub struct ActionRegistry {
    by_id: HashMap<u64, Arc<Action>>,
}

impl ActionRegistry {
    pub fn register(&mut self, action: Action) -> Result<u64> {
        let id = action.id;
        if id <= MAX_RESERVED_ID {
            return Err(Error::InvalidArgument(format!(
                "action {:?} hashes into the reserved id range",
                action.name
            )));
        }
        if let Some(existing) = self.by_id.get(&id) {
            return Err(if existing.name == action.name {
                Error::AlreadyExists(format!("action {:?}", action.name))
            } else {
                Error::AlreadyExists(format!(
                    "action id {id:#018x} of {:?} collides with {:?}",
                    action.name, existing.name
                ))
            });
        }
        self.by_id.insert(id, Arc::new(action));
        Ok(id)
    }

    pub fn get(&self, id: u64) -> Option<Arc<Action>> {
        self.by_id.get(&id).cloned()
    }

    pub fn by_name(&self, name: &str) -> Option<Arc<Action>> {
        self.get(action_id(name)).filter(|a| a.name == name)
    }

    pub fn names(&self) -> Vec<String> {
        let mut v: Vec<String> = self.by_id.values().map(|a| a.name.clone()).collect();
        v.sort();
        v
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }
}
