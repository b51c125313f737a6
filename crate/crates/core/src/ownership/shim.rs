//! Executor wrapper that ties references to task completion.
//!
//! Arguments implementing [`BindArgs`] are scanned at submit time:
//!
//! * `&RefProxy` and `RefProxy`: the reference counts as live until the task
//!   completes, then it is released. The task receives a detached copy.
//! * `&RefMutProxy` and `RefMutProxy`: as above, but only one task at a time
//!   may hold the reference.
//! * `OwnedProxy`: ownership moves to the task, which receives a plain
//!   proxy. The owner ends when the task completes.
//! * `Proxy`: passed through.
//!
//! Tasks are assumed well behaved: they do not stash references anywhere
//! that outlives them.

use std::sync::atomic::Ordering;
use std::sync::Arc;

use super::{Owner, OwnedProxy, RefLink, RefMutProxy, RefProxy};
use crate::engine::{LocalEngine, TaskFuture};
use crate::error::{Error, Result};
use crate::store::Proxy;

enum GuardKind {
    Ref(Arc<RefLink>),
    Owned(Arc<Owner>),
}

/// Bookkeeping for one argument of a submitted task. Dropping a guard
/// without completing it undoes the submit-time bookkeeping.
pub struct Guard {
    kind: GuardKind,
    done: bool,
}

impl Guard {
    fn complete(mut self) {
        self.done = true;
        match &self.kind {
            GuardKind::Ref(link) => {
                if link.in_flight.fetch_sub(1, Ordering::SeqCst) == 1 {
                    link.release();
                }
            }
            GuardKind::Owned(owner) => owner.end_on_drop(),
        }
    }
}

impl Drop for Guard {
    fn drop(&mut self) {
        if self.done {
            return;
        }
        match &self.kind {
            GuardKind::Ref(link) => {
                let last = link.in_flight.fetch_sub(1, Ordering::SeqCst) == 1;
                if last && link.handle_dropped.load(Ordering::SeqCst) {
                    link.release();
                }
            }
            // The handle was consumed, so nobody else can end it.
            GuardKind::Owned(owner) => owner.end_on_drop(),
        }
    }
}

/// Task arguments the shim knows how to track.
pub trait BindArgs {
    /// What the task body receives.
    type Bound: Send + 'static;

    fn bind(self) -> Result<(Self::Bound, Vec<Guard>)>;
}

fn ref_guard(link: &Option<Arc<RefLink>>, exclusive: bool) -> Result<Vec<Guard>> {
    let Some(link) = link else {
        return Ok(Vec::new());
    };
    if link.is_released() {
        return Err(Error::OwnershipRule("reference has been released"));
    }
    if exclusive {
        if link
            .in_flight
            .compare_exchange(0, 1, Ordering::SeqCst, Ordering::SeqCst)
            .is_err()
        {
            return Err(Error::OwnershipRule(
                "only one task may hold a mutable reference at a time",
            ));
        }
    } else {
        link.in_flight.fetch_add(1, Ordering::SeqCst);
    }
    Ok(vec![Guard {
        kind: GuardKind::Ref(Arc::clone(link)),
        done: false,
    }])
}

impl<T: Send + 'static> BindArgs for &RefProxy<T> {
    type Bound = RefProxy<T>;

    fn bind(self) -> Result<(RefProxy<T>, Vec<Guard>)> {
        let guards = ref_guard(&self.link, false)?;
        Ok((self.detached(), guards))
    }
}

impl<T: Send + 'static> BindArgs for RefProxy<T> {
    type Bound = RefProxy<T>;

    fn bind(self) -> Result<(RefProxy<T>, Vec<Guard>)> {
        (&self).bind()
    }
}

impl<T: Send + 'static> BindArgs for &RefMutProxy<T> {
    type Bound = RefMutProxy<T>;

    fn bind(self) -> Result<(RefMutProxy<T>, Vec<Guard>)> {
        let guards = ref_guard(&self.link, true)?;
        Ok((self.detached(), guards))
    }
}

impl<T: Send + 'static> BindArgs for RefMutProxy<T> {
    type Bound = RefMutProxy<T>;

    fn bind(self) -> Result<(RefMutProxy<T>, Vec<Guard>)> {
        (&self).bind()
    }
}

impl<T: Send + 'static> BindArgs for OwnedProxy<T> {
    type Bound = Proxy<T>;

    fn bind(self) -> Result<(Proxy<T>, Vec<Guard>)> {
        if self.is_ended() {
            return Err(Error::OwnerEnded(self.key().clone()));
        }
        let (factory, owner) = self.transfer();
        let guard = Guard {
            kind: GuardKind::Owned(owner),
            done: false,
        };
        Ok((Proxy::from_factory(factory), vec![guard]))
    }
}

impl<T: Send + 'static> BindArgs for Proxy<T> {
    type Bound = Proxy<T>;

    fn bind(self) -> Result<(Proxy<T>, Vec<Guard>)> {
        Ok((self, Vec::new()))
    }
}

impl BindArgs for () {
    type Bound = ();

    fn bind(self) -> Result<((), Vec<Guard>)> {
        Ok(((), Vec::new()))
    }
}

impl<A: BindArgs> BindArgs for Vec<A> {
    type Bound = Vec<A::Bound>;

    fn bind(self) -> Result<(Vec<A::Bound>, Vec<Guard>)> {
        let mut bound = Vec::with_capacity(self.len());
        let mut guards = Vec::new();
        for arg in self {
            let (b, g) = arg.bind()?;
            bound.push(b);
            guards.extend(g);
        }
        Ok((bound, guards))
    }
}

macro_rules! tuple_bind {
    ($($arg:ident $bound:ident),+) => {
        impl<$($arg: BindArgs),+> BindArgs for ($($arg,)+) {
            type Bound = ($($arg::Bound,)+);

            #[allow(non_snake_case)]
            fn bind(self) -> Result<(Self::Bound, Vec<Guard>)> {
                let ($($arg,)+) = self;
                let mut guards = Vec::new();
                $(
                    let ($bound, g) = $arg.bind()?;
                    guards.extend(g);
                )+
                Ok((($($bound,)+), guards))
            }
        }
    };
}

tuple_bind!(A a);
tuple_bind!(A a, B b);
tuple_bind!(A a, B b, C c);
tuple_bind!(A a, B b, C c, D d);

/// Submits tasks to a [`LocalEngine`] and manages the references they hold.
pub struct ExecutorShim<'a> {
    engine: &'a LocalEngine,
}

impl<'a> ExecutorShim<'a> {
    pub fn new(engine: &'a LocalEngine) -> Self {
        Self { engine }
    }

    pub fn engine(&self) -> &LocalEngine {
        self.engine
    }

    /// Fails without submitting when an argument breaks a reference rule.
    pub fn submit<A, R, F>(&self, args: A, task: F) -> Result<TaskFuture<R>>
    where
        A: BindArgs,
        R: Send + 'static,
        F: FnOnce(A::Bound) -> R + Send + 'static,
    {
        let (bound, guards) = args.bind()?;
        let future = self.engine.submit(move || task(bound));
        future.add_done_callback(move || {
            for g in guards {
                g.complete();
            }
        });
        Ok(future)
    }
}
