use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Mutex;

use super::FrameEvent;

/// Ordered fan-out of frame-start events to any number of observers.
#[derive(Default)]
pub struct FrameNotifier {
    observers: Mutex<Vec<Sender<FrameEvent>>>,
}

impl FrameNotifier {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn subscribe(&self) -> Receiver<FrameEvent> {
        let (tx, rx) = channel();
        self.observers.lock().expect("observer lock").push(tx);
        rx
    }

    /// Delivers to every live observer; dropped receivers are forgotten.
    pub fn notify(&self, event: FrameEvent) {
        self.observers.lock().expect("observer lock").retain(|o| o.send(event).is_ok());
    }
}

/// Counts events between reads, like a UIO interrupt line.
#[derive(Debug, Default)]
pub struct InterruptCounter(AtomicU64);

impl InterruptCounter {
    pub fn raise(&self) {
        self.0.fetch_add(1, Ordering::AcqRel);
    }

    /// Events since the previous read.
    pub fn read(&self) -> u64 {
        self.0.swap(0, Ordering::AcqRel)
    }
}
