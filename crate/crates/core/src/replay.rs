//! Sliding-window replay buffer shared by the whole population.

use alloc::collections::VecDeque;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::Rng;

use crate::game::FeatureTensor;
use crate::AgentId;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub features: FeatureTensor,
    /// MCTS visit distribution, pass last.
    pub pi: Vec<f32>,
    /// Outcome from the mover's side, one entry per value head output.
    pub z: Vec<f32>,
    pub source_agent: AgentId,
    pub iteration: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReplayError {
    #[error("iteration {got} appended after iteration {latest}")]
    OutOfOrder { latest: u32, got: u32 },
    #[error("replay buffer is empty")]
    Empty,
    #[error("replay window must be at least one iteration")]
    ZeroWindow,
}

/// Examples grouped by iteration; only the newest `window` iterations are
/// kept and eviction drops whole iterations. Groups are reference counted,
/// so cloning a buffer is cheap.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    window: usize,
    groups: VecDeque<(u32, Arc<Vec<TrainingExample>>)>,
    len: usize,
}

impl ReplayBuffer {
    pub fn new(window_iterations: usize) -> Result<ReplayBuffer, ReplayError> {
        if window_iterations == 0 {
            return Err(ReplayError::ZeroWindow);
        }
        Ok(ReplayBuffer {
            window: window_iterations,
            groups: VecDeque::new(),
            len: 0,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn iterations(&self) -> impl Iterator<Item = u32> + '_ {
        self.groups.iter().map(|(it, _)| *it)
    }

    pub fn latest_iteration(&self) -> Option<u32> {
        self.groups.back().map(|(it, _)| *it)
    }

    /// Examples stored for one iteration.
    pub fn iteration_examples(&self, iteration: u32) -> Option<&[TrainingExample]> {
        self.groups.iter().find(|(it, _)| *it == iteration).map(|(_, g)| g.as_slice())
    }

    pub fn examples(&self) -> impl Iterator<Item = &TrainingExample> {
        self.groups.iter().flat_map(|(_, g)| g.iter())
    }

    pub fn append_iteration(&mut self, iteration: u32, examples: Vec<TrainingExample>) -> Result<(), ReplayError> {
        self.append_shared(iteration, Arc::new(examples))
    }

    pub fn append_shared(&mut self, iteration: u32, examples: Arc<Vec<TrainingExample>>) -> Result<(), ReplayError> {
        match self.groups.back_mut() {
            Some((latest, _)) if iteration < *latest => {
                return Err(ReplayError::OutOfOrder {
                    latest: *latest,
                    got: iteration,
                })
            }
            Some((latest, group)) if iteration == *latest => {
                self.len += examples.len();
                Arc::make_mut(group).extend(examples.iter().cloned());
            }
            _ => {
                self.len += examples.len();
                self.groups.push_back((iteration, examples));
            }
        }
        while self.groups.len() > self.window {
            if let Some((_, old)) = self.groups.pop_front() {
                self.len -= old.len();
            }
        }
        Ok(())
    }

    pub fn get(&self, mut index: usize) -> Option<&TrainingExample> {
        for (_, group) in &self.groups {
            if index < group.len() {
                return Some(&group[index]);
            }
            index -= group.len();
        }
        None
    }

    /// Uniform sampling with replacement over every stored example.
    pub fn sample_batch<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<&TrainingExample>, ReplayError> {
        if self.is_empty() {
            return Err(ReplayError::Empty);
        }
        Ok((0..batch_size)
            .map(|_| {
                let i = rng.random_range(0..self.len);
                self.get(i).expect("index below len")
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ex(agent: AgentId, iteration: u32) -> TrainingExample {
        TrainingExample {
            features: FeatureTensor {
                board_size: 1,
                data: vec![agent as u8, 0, 1],
            },
            pi: vec![1.0],
            z: vec![0.0],
            source_agent: agent,
            iteration,
        }
    }

    #[test]
    fn evicts_oldest_iteration() {
        let mut buf = ReplayBuffer::new(2).unwrap();
        for it in 1..=3 {
            buf.append_iteration(it, vec![ex(0, it), ex(1, it)]).unwrap();
        }
        assert_eq!(buf.iterations().collect::<Vec<_>>(), vec![2, 3]);
        assert_eq!(buf.len(), 4);
        assert!(buf.iteration_examples(1).is_none());
    }

    #[test]
    fn keeps_every_agent() {
        let mut buf = ReplayBuffer::new(4).unwrap();
        buf.append_iteration(1, (0..16).map(|a| ex(a, 1)).collect()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut seen = [false; 16];
        for e in buf.sample_batch(2000, &mut rng).unwrap() {
            seen[e.source_agent] = true;
        }
        assert!(seen.iter().all(|s| *s));
    }

    #[test]
    fn rejects_out_of_order() {
        let mut buf = ReplayBuffer::new(4).unwrap();
        buf.append_iteration(5, vec![ex(0, 5)]).unwrap();
        assert_eq!(buf.append_iteration(4, vec![ex(0, 4)]), Err(ReplayError::OutOfOrder { latest: 5, got: 4 }));
        buf.append_iteration(5, vec![ex(1, 5)]).unwrap();
        assert_eq!(buf.len(), 2);
    }

    #[test]
    fn single_example_sampled_repeatedly() {
        let mut buf = ReplayBuffer::new(1).unwrap();
        buf.append_iteration(0, vec![ex(3, 0)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = buf.sample_batch(4, &mut rng).unwrap();
        assert_eq!(batch.len(), 4);
        assert!(batch.iter().all(|e| **e == ex(3, 0)));
    }

    #[test]
    fn empty_buffer_errors() {
        let buf = ReplayBuffer::new(1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(buf.sample_batch(1, &mut rng).unwrap_err(), ReplayError::Empty);
        assert_eq!(ReplayBuffer::new(0).unwrap_err(), ReplayError::ZeroWindow);
    }

    #[test]
    fn fixed_seed_repeats_batch() {
        let mut buf = ReplayBuffer::new(2).unwrap();
        buf.append_iteration(0, (0..50).map(|a| ex(a, 0)).collect()).unwrap();
        let a: Vec<_> = buf.sample_batch(16, &mut ChaCha8Rng::seed_from_u64(7)).unwrap().into_iter().map(|e| e.source_agent).collect();
        let b: Vec<_> = buf.sample_batch(16, &mut ChaCha8Rng::seed_from_u64(7)).unwrap().into_iter().map(|e| e.source_agent).collect();
        assert_eq!(a, b);
    }
}
