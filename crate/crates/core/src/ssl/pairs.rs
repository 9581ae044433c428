use std::collections::{HashSet, VecDeque};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::Tensor;

use super::objectives::ContrastiveBatch;

/// FIFO of past target-encoder keys used as extra negatives, each tagged
/// with the video it came from when known.
#[derive(Debug, Clone, PartialEq)]
pub struct MocoQueue {
    capacity: usize,
    dim: usize,
    keys: VecDeque<Vec<f64>>,
    ids: VecDeque<Option<String>>,
}

impl MocoQueue {
    pub fn new(capacity: usize, dim: usize) -> Self {
        Self {
            capacity,
            dim,
            keys: VecDeque::with_capacity(capacity),
            ids: VecDeque::with_capacity(capacity),
        }
    }

    /// A full queue of random unit vectors, which real keys then push out.
    pub fn random_unit(capacity: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let mut q = Self::new(capacity, dim);
        for _ in 0..capacity {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            q.keys.push_back(v.iter().map(|x| x / n).collect());
            q.ids.push_back(None);
        }
        q
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn keys(&self) -> impl Iterator<Item = &[f64]> {
        self.keys.iter().map(|k| k.as_slice())
    }

    /// Source video of each key, aligned with [`MocoQueue::keys`].
    pub fn ids(&self) -> impl Iterator<Item = Option<&str>> {
        self.ids.iter().map(|i| i.as_deref())
    }

    /// Appends an untagged key, evicting the oldest beyond capacity.
    pub fn push(&mut self, key: &[f64]) -> Result<()> {
        self.push_tagged(key, None)
    }

    /// Appends a key from video `id`, evicting the oldest beyond capacity.
    pub fn push_tagged(&mut self, key: &[f64], id: Option<&str>) -> Result<()> {
        if key.len() != self.dim {
            return Err(Error::contract(format!(
                "queue holds {}-dimensional keys, got {}",
                self.dim,
                key.len()
            )));
        }
        if self.capacity == 0 {
            return Ok(());
        }
        if self.keys.len() == self.capacity {
            self.keys.pop_front();
            self.ids.pop_front();
        }
        self.keys.push_back(key.to_vec());
        self.ids.push_back(id.map(str::to_string));
        Ok(())
    }
}

/// How many same-video keys count as positives for a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PositiveMode {
    /// Only the other clip of the same video.
    #[default]
    OtherClip,
    /// Both clips of the same video (multi-positive form).
    SameVideo,
}

/// Builds the temporal-persistency contrastive batch.
///
/// `online` and `target` hold two clips per video, rows ordered
/// `(v0 a, v0 b, v1 a, v1 b, ...)`. Queries are the online rows; the key pool
/// is the target rows followed by the queue. Negatives are every key of other
/// videos, queued ones included; queued keys of the query's own video are
/// left out.
pub fn temporal_persistency_pairs(
    video_ids: &[String],
    online: &Tensor,
    target: &Tensor,
    queue: &MocoQueue,
    temperature: f64,
    mode: PositiveMode,
) -> Result<ContrastiveBatch> {
    let v = video_ids.len();
    if v < 2 {
        return Err(Error::Degenerate(
            "temporal persistency needs at least two videos for negatives".into(),
        ));
    }
    let mut seen = HashSet::new();
    for id in video_ids {
        if !seen.insert(id) {
            return Err(Error::Dataset(format!("video {id} appears twice in one batch")));
        }
    }
    if online.shape.len() != 2 || online.shape != target.shape || online.shape[0] != 2 * v {
        return Err(Error::contract(format!(
            "expected [{}, D] online and target embeddings",
            2 * v
        )));
    }
    let d = online.shape[1];
    let mut keys = target.data.clone();
    for k in queue.keys() {
        if k.len() != d {
            return Err(Error::contract("queue dimension differs from embeddings"));
        }
        keys.extend_from_slice(k);
    }
    let pool = 2 * v + queue.len();
    let queued: Vec<Option<&str>> = queue.ids().collect();
    let mut positives = Vec::with_capacity(2 * v);
    let mut negatives = Vec::with_capacity(2 * v);
    for vid in 0..v {
        for clip in 0..2 {
            positives.push(match mode {
                PositiveMode::OtherClip => vec![2 * vid + (1 - clip)],
                PositiveMode::SameVideo => vec![2 * vid, 2 * vid + 1],
            });
            negatives.push(
                (0..pool)
                    .filter(|&j| {
                        if j < 2 * v {
                            j / 2 != vid
                        } else {
                            queued[j - 2 * v] != Some(video_ids[vid].as_str())
                        }
                    })
                    .collect::<Vec<_>>(),
            );
        }
    }
    Ok(ContrastiveBatch {
        queries: online.clone(),
        keys: Tensor::new(vec![pool, d], keys),
        positives,
        negatives,
        temperature,
    })
}
