//! Synthetic position-sensitive tasks.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Example;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// `target_i = input_{L−1−i}`, tokens distinct within a sequence.
    Reverse,
    /// `target_i = i mod 2`.
    PositionalParity,
    /// `target_i = input_{(i+k) mod L}`.
    ShiftByK,
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reverse" => Ok(TaskKind::Reverse),
            "positional_parity" | "parity" => Ok(TaskKind::PositionalParity),
            "shift_by_k" | "shift" => Ok(TaskKind::ShiftByK),
            _ => Err(Error::Parse(format!("unknown task {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub vocab: usize,
    pub min_len: usize,
    pub train_len: usize,
    /// Inclusive evaluation length ranges.
    pub bins: Vec<(usize, usize)>,
    /// Offset for [`TaskKind::ShiftByK`].
    pub shift: usize,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            kind: TaskKind::PositionalParity,
            vocab: 32,
            min_len: 5,
            train_len: 20,
            bins: vec![(21, 30), (31, 40), (41, 60), (61, 80)],
            shift: 1,
        }
    }
}

impl TaskSpec {
    pub fn out_vocab(&self) -> usize {
        match self.kind {
            TaskKind::PositionalParity => 2,
            _ => self.vocab,
        }
    }

    pub fn max_len(&self) -> usize {
        self.bins.iter().map(|b| b.1).fold(self.train_len, usize::max)
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab == 0 || self.min_len == 0 || self.min_len > self.train_len {
            return Err(Error::contract(format!(
                "need vocab ≥ 1 and 1 ≤ min_len ≤ train_len, got vocab {}, lengths [{}, {}]",
                self.vocab, self.min_len, self.train_len
            )));
        }
        let mut prev = 0;
        for &(lo, hi) in &self.bins {
            if lo == 0 || lo > hi || lo <= prev {
                return Err(Error::contract(format!(
                    "length bins must be non-empty, disjoint and ascending; bad bin [{lo}, {hi}]"
                )));
            }
            prev = hi;
        }
        if self.kind == TaskKind::Reverse && self.vocab < self.max_len() {
            return Err(Error::contract(format!(
                "reverse draws distinct tokens, so vocab {} must cover length {}",
                self.vocab,
                self.max_len()
            )));
        }
        Ok(())
    }

    pub fn targets(&self, input: &[usize]) -> Vec<usize> {
        let l = input.len();
        (0..l)
            .map(|i| match self.kind {
                TaskKind::Reverse => input[l - 1 - i],
                TaskKind::PositionalParity => i % 2,
                TaskKind::ShiftByK => input[(i + self.shift) % l],
            })
            .collect()
    }

    fn sample_input<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<usize> {
        match self.kind {
            TaskKind::Reverse => sample(rng, self.vocab, len).into_vec(),
            _ => (0..len).map(|_| rng.random_range(0..self.vocab)).collect(),
        }
    }

    /// `n` examples with lengths uniform in `[lo, hi]`.
    pub fn generate<R: Rng + ?Sized>(&self, n: usize, lo: usize, hi: usize, rng: &mut R) -> Vec<Example> {
        (0..n)
            .map(|_| {
                let len = rng.random_range(lo..=hi);
                let input = self.sample_input(len, rng);
                let target = self.targets(&input);
                Example { input, target }
            })
            .collect()
    }
}

/// `n` training examples (lengths in `[min_len, train_len]`) determined by `seed`.
pub fn generate_batch(task: &TaskSpec, n: usize, seed: u64) -> Result<Vec<Example>> {
    task.validate()?;
    if n == 0 {
        return Err(Error::contract("batch size must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(task.generate(n, task.min_len, task.train_len, &mut rng))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(kind: TaskKind) -> TaskSpec {
        TaskSpec {
            kind,
            vocab: 40,
            bins: vec![(21, 30), (31, 40)],
            ..TaskSpec::default()
        }
    }

    #[test]
    fn target_rules() {
        assert_eq!(task(TaskKind::Reverse).targets(&[1, 2, 3]), vec![3, 2, 1]);
        assert_eq!(task(TaskKind::PositionalParity).targets(&[9, 9, 4, 7]), vec![0, 1, 0, 1]);
        let mut s = task(TaskKind::ShiftByK);
        s.shift = 2;
        assert_eq!(s.targets(&[5, 6, 7, 8]), vec![7, 8, 5, 6]);
    }

    #[test]
    fn batches_are_seeded() {
        let t = task(TaskKind::Reverse);
        let a = generate_batch(&t, 8, 17).unwrap();
        assert_eq!(a, generate_batch(&t, 8, 17).unwrap());
        assert_ne!(a, generate_batch(&t, 8, 18).unwrap());
        for e in &a {
            assert!((5..=20).contains(&e.input.len()));
            let mut s = e.input.clone();
            s.sort();
            s.dedup();
            assert_eq!(s.len(), e.input.len());
        }
    }

    #[test]
    fn validation() {
        let mut t = TaskSpec::default();
        t.kind = TaskKind::Reverse;
        assert!(t.validate().is_err());
        let mut t = TaskSpec::default();
        t.bins = vec![(21, 30), (25, 40)];
        assert!(t.validate().is_err());
        assert!(TaskSpec::default().validate().is_ok());
        assert!(generate_batch(&TaskSpec::default(), 0, 1).is_err());
    }
}
