//! Objects living in the global address space, and the built-in ones.

use std::any::Any;
use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use super::Gid;
use crate::error::{Error, Result};
use crate::parcelport::action::Action;
use crate::parcelport::{ArgType, Value};
use crate::runtime::Runtime;
use crate::tasking::{Channel, Future};

/// An object addressable by GID.
///
/// Migratable components serialize themselves with [`Component::save`] and
/// are rebuilt on the destination by the factory registered under their
/// [`Component::type_name`].
pub trait Component: Any + Send + Sync {
    fn type_name(&self) -> &'static str;

    fn save(&self) -> Result<Value> {
        Err(Error::Unsupported(format!(
            "{} objects cannot migrate",
            self.type_name()
        )))
    }
}

impl fmt::Debug for dyn Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}>", self.type_name())
    }
}

/// Rebuilds a component from the value its `save` produced.
pub type Factory = Arc<dyn Fn(Value) -> Result<Arc<dyn Component>> + Send + Sync>;

#[derive(Default, Clone)]
pub(crate) struct FactoryRegistry {
    by_type: HashMap<String, Factory>,
}

impl FactoryRegistry {
    pub(crate) fn register(&mut self, type_name: &str, f: Factory) -> Result<()> {
        if self.by_type.contains_key(type_name) {
            return Err(Error::AlreadyExists(format!("factory for {type_name:?}")));
        }
        self.by_type.insert(type_name.to_string(), f);
        Ok(())
    }

    pub(crate) fn build(&self, type_name: &str, state: Value) -> Result<Arc<dyn Component>> {
        let f = self
            .by_type
            .get(type_name)
            .ok_or_else(|| Error::Unsupported(format!("no factory for {type_name:?}")))?;
        f(state)
    }
}

/// What a handler sees of the parcel that invoked it.
pub struct ActionContext {
    pub runtime: Runtime,
    pub gid: Gid,
    pub target: Arc<dyn Component>,
    pub source_locality: u32,
    pub seq_no: u64,
    /// Set when the parcel reached this locality through a relay.
    pub forwarded: bool,
}

impl ActionContext {
    /// The target object as its concrete type.
    pub fn target<C: Component>(&self) -> Result<&C> {
        let any: &dyn Any = &*self.target;
        any.downcast_ref::<C>().ok_or_else(|| {
            Error::SignatureMismatch(format!(
                "action applied to a {} object",
                self.target.type_name()
            ))
        })
    }
}

/// The object behind [`Gid::locality_service`]. Locality-wide actions are
/// applied to it.
pub struct LocalityObject;

impl Component for LocalityObject {
    fn type_name(&self) -> &'static str {
        "locality"
    }
}

/// Migratable integer counter.
#[derive(Debug, Default)]
pub struct CounterObject {
    value: AtomicI64,
}

impl CounterObject {
    pub const TYPE: &'static str = "counter";
    pub const ADD: &'static str = "counter/add";
    pub const GET: &'static str = "counter/get";

    pub fn new(v: i64) -> Self {
        CounterObject {
            value: AtomicI64::new(v),
        }
    }

    pub fn get(&self) -> i64 {
        self.value.load(Ordering::SeqCst)
    }

    /// Adds `d`, returning the new value.
    pub fn add(&self, d: i64) -> i64 {
        self.value.fetch_add(d, Ordering::SeqCst) + d
    }

    fn factory() -> Factory {
        Arc::new(|state: Value| {
            let v = state
                .as_int()
                .ok_or_else(|| Error::InvalidArgument("counter state must be an int".into()))?;
            Ok(Arc::new(CounterObject::new(v)) as Arc<dyn Component>)
        })
    }
}

impl Component for CounterObject {
    fn type_name(&self) -> &'static str {
        Self::TYPE
    }

    fn save(&self) -> Result<Value> {
        Ok(Value::Int(self.get()))
    }
}

/// A [`Channel`] of values reachable through the address space.
#[derive(Debug, Default)]
pub struct ChannelObject {
    pub channel: Channel<Value>,
}

impl ChannelObject {
    pub const TYPE: &'static str = "channel";
    pub const SEND: &'static str = "channel/send";
    pub const RECV: &'static str = "channel/recv";
}

impl Component for ChannelObject {
    fn type_name(&self) -> &'static str {
        Self::TYPE
    }
}

pub const ECHO: &str = "locality/echo";
pub const SLEEP: &str = "locality/sleep";

pub(crate) fn builtin_actions() -> Vec<Action> {
    vec![
        Action::new(CounterObject::ADD, vec![ArgType::Int], |ctx, args| {
            let d = args[0].as_int().unwrap_or_default();
            Ok(Value::Int(ctx.target::<CounterObject>()?.add(d)))
        }),
        Action::new(CounterObject::GET, vec![], |ctx, _| {
            Ok(Value::Int(ctx.target::<CounterObject>()?.get()))
        }),
        Action::new(ChannelObject::SEND, vec![ArgType::Any], |ctx, mut args| {
            ctx.target::<ChannelObject>()?.channel.send(args.remove(0))?;
            Ok(Value::Unit)
        }),
        Action::deferred(ChannelObject::RECV, vec![], |ctx, _| {
            match ctx.target::<ChannelObject>() {
                Ok(c) => c.channel.recv(),
                Err(e) => Future::failed(e),
            }
        }),
        Action::new(ECHO, vec![ArgType::Any], |_, mut args| Ok(args.remove(0))),
        Action::new(SLEEP, vec![ArgType::Int], |_, args| {
            let ms = args[0].as_int().unwrap_or_default().max(0) as u64;
            std::thread::sleep(Duration::from_millis(ms));
            Ok(Value::Unit)
        }),
    ]
}

pub(crate) fn builtin_factories() -> FactoryRegistry {
    let mut r = FactoryRegistry::default();
    r.register(CounterObject::TYPE, CounterObject::factory())
        .expect("fresh registry");
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counter_round_trips_through_factory() {
        let c = CounterObject::new(41);
        let f = builtin_factories();
        let rebuilt = f.build(CounterObject::TYPE, c.save().unwrap()).unwrap();
        let any: &dyn Any = &*rebuilt;
        assert_eq!(any.downcast_ref::<CounterObject>().unwrap().add(1), 42);
    }

    #[test]
    fn channel_is_not_migratable() {
        assert!(matches!(ChannelObject::default().save(), Err(Error::Unsupported(_))));
        assert!(matches!(
            builtin_factories().build("channel", Value::Unit),
            Err(Error::Unsupported(_))
        ));
    }
}
