//! Local thread-pool task engine.
//!
//! Stands in for a remote execution engine: every task waits out a fixed
//! submit latency before it may start, and payloads handed to the engine by
//! value can be charged a transfer time at a configured bandwidth. A worker
//! fetches such a payload when it picks the task up and stays busy while it
//! arrives. All transfers share one link and queue behind each other, like
//! payloads funnelled through a single scheduler.

use std::any::Any;
use std::panic::{self, AssertUnwindSafe};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};

pub const DEFAULT_SUBMIT_LATENCY: Duration = Duration::from_millis(50);

#[derive(Debug, Clone, Copy)]
pub struct EngineConfig {
    pub workers: usize,
    pub submit_latency: Duration,
    /// Bytes per second for payloads passed through the engine; `None`
    /// makes such transfers free.
    pub bandwidth: Option<f64>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            workers: 4,
            submit_latency: DEFAULT_SUBMIT_LATENCY,
            bandwidth: None,
        }
    }
}

type Callback = Box<dyn FnOnce() + Send>;

struct Job {
    ready_at: Instant,
    in_delay: Duration,
    run: Box<dyn FnOnce() + Send>,
}

/// The engine's payload link: transfers run back to back.
struct Link {
    free_at: Mutex<Instant>,
}

impl Link {
    /// Books `delay` of link time starting no earlier than `earliest` and
    /// returns when the transfer finishes.
    fn reserve(&self, earliest: Instant, delay: Duration) -> Instant {
        if delay.is_zero() {
            return earliest;
        }
        let mut free_at = self.free_at.lock().unwrap();
        let end = earliest.max(*free_at) + delay;
        *free_at = end;
        end
    }
}

pub struct LocalEngine {
    config: EngineConfig,
    link: Arc<Link>,
    tx: Mutex<Option<Sender<Job>>>,
    workers: Mutex<Vec<JoinHandle<()>>>,
}

impl LocalEngine {
    pub fn new(config: EngineConfig) -> Self {
        assert!(config.workers > 0, "engine needs at least one worker");
        let (tx, rx) = mpsc::channel::<Job>();
        let rx = Arc::new(Mutex::new(rx));
        let link = Arc::new(Link {
            free_at: Mutex::new(Instant::now()),
        });
        let workers = (0..config.workers)
            .map(|i| {
                let rx = Arc::clone(&rx);
                thread::Builder::new()
                    .name(format!("engine-{i}"))
                    .spawn({
                        let link = Arc::clone(&link);
                        move || worker(&rx, &link)
                    })
                    .expect("spawn engine worker")
            })
            .collect();
        Self {
            config,
            link,
            tx: Mutex::new(Some(tx)),
            workers: Mutex::new(workers),
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    /// Time charged for moving `bytes` through the engine.
    pub fn transfer_delay(&self, bytes: u64) -> Duration {
        match self.config.bandwidth {
            Some(bw) if bw > 0.0 && bytes > 0 => Duration::from_secs_f64(bytes as f64 / bw),
            _ => Duration::ZERO,
        }
    }

    pub fn submit<R, F>(&self, task: F) -> TaskFuture<R>
    where
        R: Send + 'static,
        F: FnOnce() -> R + Send + 'static,
    {
        self.submit_with_transfer(0, 0, task)
    }

    /// Like [`LocalEngine::submit`], charging transfer time for `bytes_in`
    /// before the task starts and for `bytes_out` before its result is
    /// available.
    pub fn submit_with_transfer<R, F>(&self, bytes_in: u64, bytes_out: u64, task: F) -> TaskFuture<R>
    where
        R: Send + 'static,
        F: FnOnce() -> R + Send + 'static,
    {
        let state = Arc::new(TaskState::new());
        let ready_at = Instant::now() + self.config.submit_latency;
        let in_delay = self.transfer_delay(bytes_in);
        let out_delay = self.transfer_delay(bytes_out);
        let run = {
            let state = Arc::clone(&state);
            let link = Arc::clone(&self.link);
            Box::new(move || {
                let result = panic::catch_unwind(AssertUnwindSafe(task));
                if result.is_ok() && !out_delay.is_zero() {
                    sleep_until(link.reserve(Instant::now(), out_delay));
                }
                state.finish(result);
            })
        };
        let sent = match &*self.tx.lock().unwrap() {
            Some(tx) => tx.send(Job { ready_at, in_delay, run }).is_ok(),
            None => false,
        };
        if !sent {
            state.finish(Err(Box::new("engine is shut down")));
        }
        TaskFuture { state }
    }

    /// Stops accepting tasks and waits for queued ones to finish.
    pub fn shutdown(&self) {
        self.tx.lock().unwrap().take();
        for w in self.workers.lock().unwrap().drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for LocalEngine {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn sleep_until(t: Instant) {
    let now = Instant::now();
    if t > now {
        thread::sleep(t - now);
    }
}

fn worker(rx: &Mutex<Receiver<Job>>, link: &Link) {
    loop {
        let job = match rx.lock().unwrap().recv() {
            Ok(job) => job,
            Err(_) => return,
        };
        sleep_until(job.ready_at);
        sleep_until(link.reserve(Instant::now(), job.in_delay));
        (job.run)();
    }
}

struct Slot<R> {
    result: Option<thread::Result<R>>,
    done: bool,
    callbacks: Vec<Callback>,
}

struct TaskState<R> {
    slot: Mutex<Slot<R>>,
    cv: Condvar,
}

impl<R> TaskState<R> {
    fn new() -> Self {
        Self {
            slot: Mutex::new(Slot {
                result: None,
                done: false,
                callbacks: Vec::new(),
            }),
            cv: Condvar::new(),
        }
    }

    // Callbacks run before waiters wake, so anything they release is
    // released by the time `wait` returns.
    fn finish(&self, result: thread::Result<R>) {
        loop {
            let mut slot = self.slot.lock().unwrap();
            if slot.callbacks.is_empty() {
                slot.result = Some(result);
                slot.done = true;
                self.cv.notify_all();
                return;
            }
            let callbacks = std::mem::take(&mut slot.callbacks);
            drop(slot);
            for cb in callbacks {
                cb();
            }
        }
    }
}

/// Handle to a submitted task's result.
pub struct TaskFuture<R> {
    state: Arc<TaskState<R>>,
}

impl<R> TaskFuture<R> {
    pub fn is_done(&self) -> bool {
        self.state.slot.lock().unwrap().done
    }

    /// Runs `callback` once the task finishes, or now if it already has.
    pub fn add_done_callback(&self, callback: impl FnOnce() + Send + 'static) {
        let mut slot = self.state.slot.lock().unwrap();
        if slot.done {
            drop(slot);
            callback();
        } else {
            slot.callbacks.push(Box::new(callback));
        }
    }

    pub fn wait(self) -> Result<R> {
        let mut slot = self.state.slot.lock().unwrap();
        while !slot.done {
            slot = self.state.cv.wait(slot).unwrap();
        }
        match slot.result.take().expect("result taken once") {
            Ok(v) => Ok(v),
            Err(payload) => Err(Error::TaskFailed(panic_message(&*payload))),
        }
    }

    /// Waits up to `timeout`; on timeout the future is handed back.
    pub fn wait_timeout(self, timeout: Duration) -> std::result::Result<Result<R>, Self> {
        let deadline = Instant::now() + timeout;
        {
            let mut slot = self.state.slot.lock().unwrap();
            while !slot.done {
                let now = Instant::now();
                if now >= deadline {
                    drop(slot);
                    return Err(self);
                }
                slot = self.state.cv.wait_timeout(slot, deadline - now).unwrap().0;
            }
        }
        Ok(self.wait())
    }
}

fn panic_message(payload: &(dyn Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_owned()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "task panicked".to_owned()
    }
}
