//! Ownership and borrowing for stored objects, checked at runtime.
//!
//! Every owned object has exactly one [`OwnedProxy`]. An owner hands out
//! either any number of [`RefProxy`] values or a single [`RefMutProxy`],
//! never both at once. Ending the owner evicts the object and fails while
//! references are live. Dropping an owner with live references defers the
//! eviction until the last of them is released.
//!
//! | operation      | ended        | mut ref live | refs live    | otherwise     |
//! |----------------|--------------|--------------|--------------|---------------|
//! | `make_ref`     | owner ended  | rule error   | refs + 1     | refs + 1      |
//! | `make_ref_mut` | owner ended  | rule error   | rule error   | mut ref set   |
//! | `update`       | owner ended  | rule error   | rule error   | write back    |
//! | `clone_owned`  | owner ended  | rule error   | new owner    | new owner     |
//! | `end`          | no-op        | rule error   | rule error   | evict         |
//!
//! Keys attached to the [`StaticLifetime`] are never evicted by an owner or
//! lifetime ending.

mod lifetime;
mod shim;

use std::fmt;
use std::ops::Deref;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use log::warn;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use lifetime::{
    is_static, ContextLifetime, LeaseLifetime, Lifetime, StaticLifetime, DEFAULT_SWEEP_INTERVAL,
};
pub(crate) use lifetime::Sweeper;
pub use shim::{BindArgs, ExecutorShim, Guard};

use crate::error::{Error, Result};
use crate::key::ObjectKey;
use crate::store::{Factory, Proxy, RefKind, Store};

#[derive(Debug, Default)]
struct OwnerState {
    refs: usize,
    mut_ref: bool,
    ended: bool,
    end_pending: bool,
}

struct Owner {
    key: ObjectKey,
    store: Store,
    state: Mutex<OwnerState>,
}

impl Owner {
    fn new(store: Store, key: ObjectKey) -> Arc<Self> {
        Arc::new(Self {
            key,
            store,
            state: Mutex::new(OwnerState::default()),
        })
    }

    fn make_ref(&self) -> Result<()> {
        let mut s = self.state.lock().unwrap();
        if s.ended || s.end_pending {
            return Err(Error::OwnerEnded(self.key.clone()));
        }
        if s.mut_ref {
            return Err(Error::OwnershipRule(
                "cannot borrow while a mutable reference is live",
            ));
        }
        s.refs += 1;
        Ok(())
    }

    fn make_mut(&self) -> Result<()> {
        let mut s = self.state.lock().unwrap();
        if s.ended || s.end_pending {
            return Err(Error::OwnerEnded(self.key.clone()));
        }
        if s.mut_ref {
            return Err(Error::OwnershipRule("only one mutable reference may be live"));
        }
        if s.refs > 0 {
            return Err(Error::OwnershipRule(
                "cannot borrow mutably while references are live",
            ));
        }
        s.mut_ref = true;
        Ok(())
    }

    fn release(&self, is_mut: bool) {
        let finish = {
            let mut s = self.state.lock().unwrap();
            if is_mut {
                s.mut_ref = false;
            } else {
                s.refs = s.refs.saturating_sub(1);
            }
            let finish = s.end_pending && !s.ended && s.refs == 0 && !s.mut_ref;
            if finish {
                s.ended = true;
            }
            finish
        };
        if finish {
            self.evict_logged();
        }
    }

    fn check_owner_access(&self) -> Result<()> {
        let s = self.state.lock().unwrap();
        if s.ended {
            return Err(Error::OwnerEnded(self.key.clone()));
        }
        if s.mut_ref {
            return Err(Error::OwnershipRule(
                "owner is inaccessible while a mutable reference is live",
            ));
        }
        Ok(())
    }

    fn check_update(&self) -> Result<()> {
        self.check_owner_access()?;
        if self.state.lock().unwrap().refs > 0 {
            return Err(Error::OwnershipRule(
                "cannot update while references are live",
            ));
        }
        Ok(())
    }

    fn end(&self) -> Result<()> {
        {
            let mut s = self.state.lock().unwrap();
            if s.ended {
                return Ok(());
            }
            if s.refs > 0 || s.mut_ref {
                return Err(Error::OwnershipRule(
                    "cannot end an owner while references are live",
                ));
            }
            s.ended = true;
        }
        evict_unless_static(&self.store, &self.key)
    }

    fn end_on_drop(&self) {
        let evict = {
            let mut s = self.state.lock().unwrap();
            if s.ended {
                false
            } else if s.refs > 0 || s.mut_ref {
                warn!(
                    "owner of {} dropped with live references; eviction deferred",
                    self.key
                );
                s.end_pending = true;
                false
            } else {
                s.ended = true;
                true
            }
        };
        if evict {
            self.evict_logged();
        }
    }

    fn evict_logged(&self) {
        if let Err(e) = evict_unless_static(&self.store, &self.key) {
            warn!("failed to evict {}: {e}", self.key);
        }
    }
}

pub(crate) fn evict_unless_static(store: &Store, key: &ObjectKey) -> Result<()> {
    if is_static(key) {
        return Ok(());
    }
    store.evict(key)
}

fn with_ref_kind(factory: &Factory, kind: RefKind) -> Factory {
    let mut f = factory.clone();
    f.ref_kind = Some(kind);
    f
}

/// Sole owner of a stored object. Dropping it ends it.
pub struct OwnedProxy<T> {
    proxy: Proxy<T>,
    owner: Arc<Owner>,
    transferred: bool,
}

impl Store {
    pub fn owned_proxy<T: Serialize>(&self, value: &T) -> Result<OwnedProxy<T>> {
        let key = self.put_object(value)?;
        let factory = with_ref_kind(
            &self.factory(key.clone(), crate::store::ResolveKind::Direct, false),
            RefKind::Owned,
        );
        Ok(OwnedProxy {
            proxy: Proxy::from_factory(factory),
            owner: Owner::new(self.clone(), key),
            transferred: false,
        })
    }
}

/// Claims ownership of the object behind a plain proxy. The original proxy
/// should not be used afterwards.
pub fn into_owned<T>(proxy: Proxy<T>) -> Result<OwnedProxy<T>> {
    let factory = proxy.factory();
    let store = factory.store()?;
    if !store.exists(&factory.key)? {
        return Err(Error::DanglingReference(factory.key.clone()));
    }
    let owner = Owner::new(store, factory.key.clone());
    let mut factory = with_ref_kind(factory, RefKind::Owned);
    factory.evict_on_resolve = false;
    let mut owned: Proxy<T> = Proxy::from_factory(factory);
    let mut proxy = proxy;
    if let Some(v) = proxy.take_cached() {
        owned.set_cached(v);
    }
    Ok(OwnedProxy {
        proxy: owned,
        owner,
        transferred: false,
    })
}

impl<T> OwnedProxy<T> {
    pub fn key(&self) -> &ObjectKey {
        &self.owner.key
    }

    pub fn store(&self) -> &Store {
        &self.owner.store
    }

    pub fn factory(&self) -> &Factory {
        self.proxy.factory()
    }

    pub fn is_ended(&self) -> bool {
        self.owner.state.lock().unwrap().ended
    }

    pub fn ref_count(&self) -> usize {
        self.owner.state.lock().unwrap().refs
    }

    pub fn has_mut_ref(&self) -> bool {
        self.owner.state.lock().unwrap().mut_ref
    }

    pub fn make_ref(&self) -> Result<RefProxy<T>> {
        self.owner.make_ref()?;
        Ok(RefProxy {
            proxy: Proxy::from_factory(with_ref_kind(self.proxy.factory(), RefKind::Ref)),
            link: Some(RefLink::new(&self.owner, false)),
        })
    }

    /// Hands out the sole mutable reference. The owner's local copy is
    /// dropped, since the reference may rewrite the object.
    pub fn make_ref_mut(&mut self) -> Result<RefMutProxy<T>> {
        self.owner.make_mut()?;
        self.proxy.take_cached();
        Ok(RefMutProxy {
            proxy: Proxy::from_factory(with_ref_kind(self.proxy.factory(), RefKind::Mut)),
            link: Some(RefLink::new(&self.owner, true)),
        })
    }

    /// Copies the stored object under a new key with its own owner.
    pub fn clone_owned(&self) -> Result<OwnedProxy<T>> {
        self.owner.check_owner_access()?;
        let store = &self.owner.store;
        let bytes = store
            .get_bytes(&self.owner.key)?
            .ok_or_else(|| Error::DanglingReference(self.owner.key.clone()))?;
        let key = store.new_key();
        store.put_bytes(&key, bytes.as_ref().clone())?;
        let mut factory = self.proxy.factory().clone();
        factory.key = key.clone();
        Ok(OwnedProxy {
            proxy: Proxy::from_factory(factory),
            owner: Owner::new(store.clone(), key),
            transferred: false,
        })
    }

    /// Evicts the object. Fails while references are live; a no-op once
    /// ended.
    pub fn end(&self) -> Result<()> {
        self.owner.end()
    }

    // Gives up this handle without ending the owner.
    fn transfer(mut self) -> (Factory, Arc<Owner>) {
        self.transferred = true;
        (self.proxy.factory().clone(), Arc::clone(&self.owner))
    }
}

impl<T: DeserializeOwned> OwnedProxy<T> {
    pub fn resolve(&self) -> Result<&T> {
        self.owner.check_owner_access()?;
        self.proxy.resolve()
    }

    /// Local copy for modification; call [`OwnedProxy::update`] to write it
    /// back.
    pub fn get_mut(&mut self) -> Result<&mut T> {
        self.owner.check_update()?;
        self.proxy.resolve_mut()
    }

    pub fn update(&self) -> Result<()>
    where
        T: Serialize,
    {
        self.owner.check_update()?;
        let value = self.proxy.resolve()?;
        self.owner.store.put_object_at(&self.owner.key, value)
    }
}

impl<T: DeserializeOwned> Deref for OwnedProxy<T> {
    type Target = T;

    fn deref(&self) -> &T {
        match self.resolve() {
            Ok(v) => v,
            Err(e) => panic!("failed to resolve owned proxy {}: {e}", self.owner.key),
        }
    }
}

impl<T> Drop for OwnedProxy<T> {
    fn drop(&mut self) {
        if !self.transferred {
            self.owner.end_on_drop();
        }
    }
}

impl<T> fmt::Debug for OwnedProxy<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OwnedProxy")
            .field("key", &self.owner.key)
            .field("state", &*self.owner.state.lock().unwrap())
            .finish()
    }
}

struct RefLink {
    owner: Arc<Owner>,
    is_mut: bool,
    released: AtomicBool,
    handle_dropped: AtomicBool,
    in_flight: AtomicUsize,
}

impl RefLink {
    fn new(owner: &Arc<Owner>, is_mut: bool) -> Arc<Self> {
        Arc::new(Self {
            owner: Arc::clone(owner),
            is_mut,
            released: AtomicBool::new(false),
            handle_dropped: AtomicBool::new(false),
            in_flight: AtomicUsize::new(0),
        })
    }

    fn release(&self) {
        if !self.released.swap(true, Ordering::SeqCst) {
            self.owner.release(self.is_mut);
        }
    }

    fn is_released(&self) -> bool {
        self.released.load(Ordering::SeqCst)
    }

    fn drop_handle(&self) {
        self.handle_dropped.store(true, Ordering::SeqCst);
        if self.in_flight.load(Ordering::SeqCst) == 0 {
            self.release();
        }
    }
}

/// Shared read-only reference. Releasing or dropping it decrements the
/// owner's reference count.
pub struct RefProxy<T> {
    proxy: Proxy<T>,
    link: Option<Arc<RefLink>>,
}

/// Exclusive mutable reference; it cannot hand out further references.
pub struct RefMutProxy<T> {
    proxy: Proxy<T>,
    link: Option<Arc<RefLink>>,
}

macro_rules! ref_common {
    ($ty:ident) => {
        impl<T> $ty<T> {
            pub fn key(&self) -> &ObjectKey {
                self.proxy.key()
            }

            pub fn factory(&self) -> &Factory {
                self.proxy.factory()
            }

            pub fn is_resolved(&self) -> bool {
                self.proxy.is_resolved()
            }

            /// True once released, always false for a reference
            /// reconstructed on the task side.
            pub fn is_released(&self) -> bool {
                self.link.as_ref().is_some_and(|l| l.is_released())
            }

            pub fn release(self) {
                drop(self)
            }

            /// Task-side copy with no tie to the owner.
            fn detached(&self) -> Self {
                Self {
                    proxy: Proxy::from_factory(self.proxy.factory().clone()),
                    link: None,
                }
            }
        }

        impl<T: DeserializeOwned> $ty<T> {
            pub fn resolve(&self) -> Result<&T> {
                self.proxy.resolve()
            }
        }

        impl<T: DeserializeOwned> Deref for $ty<T> {
            type Target = T;

            fn deref(&self) -> &T {
                &self.proxy
            }
        }

        impl<T> Drop for $ty<T> {
            fn drop(&mut self) {
                if let Some(link) = &self.link {
                    link.drop_handle();
                }
            }
        }

        impl<T> fmt::Debug for $ty<T> {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.debug_struct(stringify!($ty))
                    .field("key", self.key())
                    .field("released", &self.is_released())
                    .finish()
            }
        }

        impl<T> Serialize for $ty<T> {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                self.proxy.factory().serialize(s)
            }
        }

        /// Deserialized references are detached from the owner.
        impl<'de, T> Deserialize<'de> for $ty<T> {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                Ok(Self {
                    proxy: Proxy::from_factory(Factory::deserialize(d)?),
                    link: None,
                })
            }
        }
    };
}

ref_common!(RefProxy);
ref_common!(RefMutProxy);

impl<T> RefProxy<T> {
    /// Always fails: shared references are read-only.
    pub fn update(&self) -> Result<()> {
        Err(Error::ReadOnly)
    }
}

impl<T: DeserializeOwned> RefMutProxy<T> {
    pub fn get_mut(&mut self) -> Result<&mut T> {
        self.check_live()?;
        self.proxy.resolve_mut()
    }

    /// Writes the local copy back to the store.
    pub fn update(&self) -> Result<()>
    where
        T: Serialize,
    {
        self.check_live()?;
        let value = self.proxy.resolve()?;
        let factory = self.proxy.factory();
        factory.store()?.put_object_at(&factory.key, value)
    }

    fn check_live(&self) -> Result<()> {
        if self.is_released() {
            return Err(Error::OwnershipRule("mutable reference has been released"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connector::MemoryConnector;

    fn store() -> Store {
        Store::new("own", Arc::new(MemoryConnector::unique())).unwrap()
    }

    fn objects(s: &Store) -> u64 {
        s.stats().unwrap().object_count
    }

    #[test]
    fn owner_end_evicts() {
        let s = store();
        let o = s.owned_proxy(&vec![1, 2]).unwrap();
        assert_eq!(*o, vec![1, 2]);
        let key = o.key().clone();
        o.end().unwrap();
        assert!(!s.exists(&key).unwrap());
        o.end().unwrap();
        assert!(matches!(o.make_ref(), Err(Error::OwnerEnded(_))));
    }

    #[test]
    fn drop_ends_owner() {
        let s = store();
        let key = {
            let o = s.owned_proxy(&1i64).unwrap();
            o.key().clone()
        };
        assert!(!s.exists(&key).unwrap());
    }

    #[test]
    fn equal_values_get_distinct_owners() {
        let s = store();
        let a = s.owned_proxy(&"same").unwrap();
        let b = s.owned_proxy(&"same").unwrap();
        assert_ne!(a.key(), b.key());
    }

    #[test]
    fn reference_rules() {
        let s = store();
        let mut o = s.owned_proxy(&vec![1]).unwrap();
        let r1 = o.make_ref().unwrap();
        let r2 = o.make_ref().unwrap();
        assert!(matches!(o.make_ref_mut(), Err(Error::OwnershipRule(_))));
        assert!(matches!(o.end(), Err(Error::OwnershipRule(_))));
        r1.release();
        drop(r2);
        assert_eq!(o.ref_count(), 0);
        let m = o.make_ref_mut().unwrap();
        assert!(matches!(o.make_ref(), Err(Error::OwnershipRule(_))));
        assert!(matches!(o.update(), Err(Error::OwnershipRule(_))));
        drop(m);
        o.end().unwrap();
        assert!(matches!(o.make_ref_mut(), Err(Error::OwnerEnded(_))));
    }

    #[test]
    fn mutable_reference_writes_back() {
        let s = store();
        let mut o = s.owned_proxy(&vec![1, 2, 3]).unwrap();
        assert_eq!(o.len(), 3);
        let mut m = o.make_ref_mut().unwrap();
        m.get_mut().unwrap().push(4);
        m.update().unwrap();
        drop(m);
        let r = o.make_ref().unwrap();
        assert_eq!(*r, vec![1, 2, 3, 4]);
        assert_eq!(*o, vec![1, 2, 3, 4]);
        assert!(matches!(r.update(), Err(Error::ReadOnly)));
    }

    #[test]
    fn owner_update_rewrites_store() {
        let s = store();
        let mut o = s.owned_proxy(&10i64).unwrap();
        *o.get_mut().unwrap() += 1;
        o.update().unwrap();
        assert_eq!(*o.make_ref().unwrap(), 11);
    }

    #[test]
    fn clone_is_independent() {
        let s = store();
        let o = s.owned_proxy(&crate::codec::Bytes(vec![3; 1000])).unwrap();
        let before = s.stats().unwrap();
        let c = o.clone_owned().unwrap();
        let after = s.stats().unwrap();
        assert_eq!(after.object_count, before.object_count + 1);
        assert_eq!(after.total_bytes, 2 * before.total_bytes);
        o.end().unwrap();
        assert_eq!(c.len(), 1000);
    }

    #[test]
    fn clone_with_live_mut_ref_is_rejected() {
        let s = store();
        let mut o = s.owned_proxy(&1i64).unwrap();
        let _m = o.make_ref_mut().unwrap();
        assert!(matches!(o.clone_owned(), Err(Error::OwnershipRule(_))));
    }

    #[test]
    fn into_owned_claims_plain_proxy() {
        let s = store();
        let p = s.proxy(&"t".to_owned()).unwrap();
        let before = p.resolve().unwrap().clone();
        let o = into_owned(p).unwrap();
        assert_eq!(*o, before);
        let key = o.key().clone();
        drop(o);
        assert!(!s.exists(&key).unwrap());

        let gone = s.proxy(&1i64).unwrap();
        s.evict(gone.key()).unwrap();
        assert!(matches!(into_owned(gone), Err(Error::DanglingReference(_))));
    }

    #[test]
    fn dropped_owner_waits_for_references() {
        let s = store();
        let o = s.owned_proxy(&1i64).unwrap();
        let r = o.make_ref().unwrap();
        drop(o);
        assert_eq!(objects(&s), 1);
        assert_eq!(*r, 1);
        drop(r);
        assert_eq!(objects(&s), 0);
    }

    #[test]
    fn release_order_does_not_matter() {
        let orders: [[usize; 4]; 4] = [[0, 1, 2, 3], [3, 2, 1, 0], [1, 3, 0, 2], [2, 0, 3, 1]];
        for order in orders {
            let s = store();
            let o = s.owned_proxy(&"x".to_owned()).unwrap();
            let mut refs: Vec<Option<RefProxy<String>>> =
                (0..4).map(|_| Some(o.make_ref().unwrap())).collect();
            for i in order {
                assert!(o.end().is_err());
                refs[i].take().unwrap().release();
            }
            o.end().unwrap();
            assert_eq!(objects(&s), 0);
        }
    }

    #[test]
    fn serialized_reference_carries_ref_kind() {
        let s = store();
        let o = s.owned_proxy(&5i64).unwrap();
        let r = o.make_ref().unwrap();
        let bytes = crate::codec::to_bytes(&r).unwrap();
        let f = Factory::from_bytes(&bytes).unwrap();
        assert_eq!(f.ref_kind, Some(RefKind::Ref));
        let back: RefProxy<i64> = crate::codec::from_bytes(&bytes).unwrap();
        assert_eq!(*back, 5);
        drop(back);
        assert_eq!(o.ref_count(), 1);
    }
}
