//! Two-partition replay buffer with symmetric sampling.

use std::collections::VecDeque;

use bisync_core::sync::ActionSource;
use bisync_core::{Error, Result};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Partition {
    /// Expert and human-correction steps.
    Offline,
    /// Policy steps.
    Online,
}

impl Partition {
    pub fn of(source: ActionSource) -> Self {
        match source {
            ActionSource::Expert | ActionSource::HumanCorrection => Partition::Offline,
            ActionSource::Policy => Partition::Online,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SampleRef {
    pub partition: Partition,
    pub index: usize,
}

/// Each partition holds at most `capacity` items and drops its oldest beyond that.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    offline: VecDeque<T>,
    online: VecDeque<T>,
    capacity: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("replay capacity must be positive"));
        }
        Ok(Self {
            offline: VecDeque::new(),
            online: VecDeque::new(),
            capacity,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, source: ActionSource, item: T) {
        let part = match Partition::of(source) {
            Partition::Offline => &mut self.offline,
            Partition::Online => &mut self.online,
        };
        if part.len() == self.capacity {
            part.pop_front();
        }
        part.push_back(item);
    }

    pub fn len(&self, partition: Partition) -> usize {
        match partition {
            Partition::Offline => self.offline.len(),
            Partition::Online => self.online.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.offline.is_empty() && self.online.is_empty()
    }

    pub fn get(&self, r: SampleRef) -> &T {
        match r.partition {
            Partition::Offline => &self.offline[r.index],
            Partition::Online => &self.online[r.index],
        }
    }

    /// Half the batch from each partition when both hold data, otherwise all
    /// from the populated one. Uniform with replacement inside a partition.
    pub fn sample_symmetric<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Vec<SampleRef>> {
        if !batch_size.is_multiple_of(2) {
            return Err(Error::invalid(format!("batch size {batch_size} is odd")));
        }
        let (n_off, n_on) = match (self.offline.len(), self.online.len()) {
            (0, 0) => return Err(Error::invalid("both replay partitions are empty")),
            (_, 0) => (batch_size, 0),
            (0, _) => (0, batch_size),
            _ => (batch_size / 2, batch_size / 2),
        };
        let mut out = Vec::with_capacity(batch_size);
        for (partition, n, len) in [
            (Partition::Offline, n_off, self.offline.len()),
            (Partition::Online, n_on, self.online.len()),
        ] {
            for _ in 0..n {
                out.push(SampleRef {
                    partition,
                    index: rng.gen_range(0..len),
                });
            }
        }
        Ok(out)
    }
}
