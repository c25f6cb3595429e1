//! Per-tool concurrency leases.
//!
//! A gate hands out at most `max_parallel` leases. Further requests wait in a
//! FIFO queue (bounded by `queue_limit`); releasing a lease transfers it
//! directly to the oldest live waiter, so the in-flight count never dips
//! and re-rises across a handoff.

use std::collections::VecDeque;
use std::future::Future;
use std::pin::Pin;
use std::sync::{Arc, Mutex};
use std::task::{Context, Poll};

use serde::{Deserialize, Serialize};
use tokio::sync::oneshot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CapacitySnapshot {
    pub max_parallel: usize,
    pub in_flight: usize,
    pub queued: usize,
    /// Highest `in_flight` ever observed.
    pub high_water: usize,
    pub granted_total: u64,
}

#[derive(Debug)]
struct GateState {
    in_flight: usize,
    high_water: usize,
    granted_total: u64,
    waiters: VecDeque<oneshot::Sender<()>>,
}

#[derive(Debug)]
pub struct CapacityGate {
    max_parallel: usize,
    queue_limit: usize,
    state: Mutex<GateState>,
}

/// Returned when the wait queue is already at its limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueueFull;

impl CapacityGate {
    pub fn new(max_parallel: usize, queue_limit: usize) -> Arc<Self> {
        assert!(max_parallel >= 1, "max_parallel must be at least 1");
        Arc::new(Self {
            max_parallel,
            queue_limit,
            state: Mutex::new(GateState { in_flight: 0, high_water: 0, granted_total: 0, waiters: VecDeque::new() }),
        })
    }

    pub fn max_parallel(&self) -> usize {
        self.max_parallel
    }

    pub fn snapshot(&self) -> CapacitySnapshot {
        let state = self.state.lock().expect("capacity lock");
        CapacitySnapshot {
            max_parallel: self.max_parallel,
            in_flight: state.in_flight,
            queued: state.waiters.iter().filter(|w| !w.is_closed()).count(),
            high_water: state.high_water,
            granted_total: state.granted_total,
        }
    }

    /// Grants immediately when below capacity, otherwise enqueues.
    pub fn acquire(self: &Arc<Self>) -> Result<LeaseGrant, QueueFull> {
        let mut state = self.state.lock().expect("capacity lock");
        if state.in_flight < self.max_parallel {
            state.in_flight += 1;
            state.high_water = state.high_water.max(state.in_flight);
            state.granted_total += 1;
            return Ok(LeaseGrant::Granted(Lease { gate: Some(self.clone()) }));
        }
        state.waiters.retain(|w| !w.is_closed());
        if state.waiters.len() >= self.queue_limit {
            return Err(QueueFull);
        }
        let (tx, rx) = oneshot::channel();
        state.waiters.push_back(tx);
        Ok(LeaseGrant::Queued(QueuedLease { gate: self.clone(), rx: Some(rx) }))
    }

    fn release(&self) {
        let mut state = self.state.lock().expect("capacity lock");
        while let Some(waiter) = state.waiters.pop_front() {
            if waiter.send(()).is_ok() {
                // Slot handed over; in_flight unchanged.
                state.granted_total += 1;
                return;
            }
        }
        state.in_flight = state.in_flight.saturating_sub(1);
    }
}

/// Result of a lease request. Queued grants resolve in FIFO order.
#[derive(Debug)]
pub enum LeaseGrant {
    Granted(Lease),
    Queued(QueuedLease),
}

impl LeaseGrant {
    pub fn is_granted(&self) -> bool {
        matches!(self, LeaseGrant::Granted(_))
    }

    /// Waits for the lease if it was queued.
    pub async fn into_lease(self) -> Lease {
        match self {
            LeaseGrant::Granted(lease) => lease,
            LeaseGrant::Queued(queued) => queued.await,
        }
    }
}

/// Held capacity slot; released on drop.
#[derive(Debug)]
pub struct Lease {
    gate: Option<Arc<CapacityGate>>,
}

impl Drop for Lease {
    fn drop(&mut self) {
        if let Some(gate) = self.gate.take() {
            gate.release();
        }
    }
}

/// A queued lease request. Dropping it before it resolves gives up the spot
/// (and passes on a slot that was handed over concurrently).
#[derive(Debug)]
pub struct QueuedLease {
    gate: Arc<CapacityGate>,
    rx: Option<oneshot::Receiver<()>>,
}

impl Future for QueuedLease {
    type Output = Lease;

    fn poll(mut self: Pin<&mut Self>, cx: &mut Context<'_>) -> Poll<Lease> {
        let rx = self.rx.as_mut().expect("polled after completion");
        match Pin::new(rx).poll(cx) {
            Poll::Ready(Ok(())) => {
                self.rx = None;
                Poll::Ready(Lease { gate: Some(self.gate.clone()) })
            }
            // The gate owns the sender for as long as the waiter is queued.
            Poll::Ready(Err(_)) => unreachable!("capacity gate dropped a queued waiter"),
            Poll::Pending => Poll::Pending,
        }
    }
}

impl Drop for QueuedLease {
    fn drop(&mut self) {
        if let Some(mut rx) = self.rx.take() {
            rx.close();
            if rx.try_recv().is_ok() {
                self.gate.release();
            }
        }
    }
}
