//! Episodic replay storage, uniform segment sampling and the buffer file.
//!
//! File layout, all little-endian:
//!
//! ```text
//! magic         8 bytes "HWMBUF\0\0"
//! version       u32
//! obs rank      u32, then dims u32 × rank
//! action arity  u32
//! episodes      u32, then step count u64 × episodes
//! per episode:  obs u8[len·obs], actions u8[len], rewards f64[len],
//!               dones u8[len], states f64[len·4]
//! ```

use std::collections::VecDeque;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use thiserror::Error;

use crate::grid::{EnvStep, GroundTruth};

pub const MAGIC: [u8; 8] = *b"HWMBUF\0\0";
pub const VERSION: u32 = 1;
/// Stored in place of the action preceding the first step of an episode.
pub const NO_ACTION: u8 = u8::MAX;
pub const STATE_DIM: usize = 4;

#[derive(Debug, Error)]
pub enum BufferError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a buffer file (bad magic)")]
    Magic,
    #[error("unsupported buffer version {0}")]
    Version(u32),
    #[error("malformed buffer: {0}")]
    Malformed(String),
    #[error("cannot sample segments of length {length}: {valid} valid start offsets across {episodes} episodes")]
    Insufficient {
        length: usize,
        valid: usize,
        episodes: usize,
    },
    #[error("episode is inconsistent: {0}")]
    Episode(String),
}

/// One episode: step 0 is the reset observation with no preceding action and
/// zero reward; step `t > 0` holds the action that led to it and its reward.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Episode {
    pub obs: Vec<u8>,
    pub actions: Vec<u8>,
    pub rewards: Vec<f64>,
    pub dones: Vec<u8>,
    pub states: Vec<f64>,
}

impl Episode {
    pub fn start(first: &EnvStep) -> Self {
        let mut e = Self::default();
        e.push(NO_ACTION, first);
        e
    }

    pub fn push(&mut self, action: u8, step: &EnvStep) {
        self.obs.extend_from_slice(&step.obs);
        self.actions.push(action);
        self.rewards.push(step.reward);
        self.dones.push(step.done as u8);
        self.states.extend_from_slice(&step.state);
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Sum of rewards after the reset step.
    pub fn total_return(&self) -> f64 {
        self.rewards.iter().skip(1).sum()
    }

    pub fn state(&self, t: usize) -> GroundTruth {
        let s = &self.states[t * STATE_DIM..(t + 1) * STATE_DIM];
        [s[0], s[1], s[2], s[3]]
    }

    fn check(&self, obs_len: usize) -> Result<(), BufferError> {
        let n = self.len();
        if n == 0
            || self.obs.len() != n * obs_len
            || self.rewards.len() != n
            || self.dones.len() != n
            || self.states.len() != n * STATE_DIM
        {
            return Err(BufferError::Episode(format!(
                "array lengths disagree for {n} steps"
            )));
        }
        if self.dones[..n - 1].iter().any(|&d| d != 0) {
            return Err(BufferError::Episode(
                "done flag before the final step".into(),
            ));
        }
        Ok(())
    }
}

/// Aligned window of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySegment {
    pub episode: usize,
    pub offset: usize,
    pub obs: Vec<u8>,
    pub actions: Vec<u8>,
    pub rewards: Vec<f64>,
    pub dones: Vec<u8>,
    pub states: Vec<f64>,
}

impl TrajectorySegment {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    obs_shape: Vec<usize>,
    action_arity: usize,
    capacity: usize,
    episodes: VecDeque<Episode>,
    /// Id of `episodes[0]`; ids count every episode ever added.
    first_id: usize,
    steps: usize,
}

impl ReplayBuffer {
    pub fn new(obs_shape: &[usize], action_arity: usize, capacity: usize) -> Self {
        Self {
            obs_shape: obs_shape.to_vec(),
            action_arity,
            capacity,
            episodes: VecDeque::new(),
            first_id: 0,
            steps: 0,
        }
    }

    pub fn obs_shape(&self) -> &[usize] {
        &self.obs_shape
    }

    pub fn obs_len(&self) -> usize {
        self.obs_shape.iter().product()
    }

    pub fn action_arity(&self) -> usize {
        self.action_arity
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Steps currently stored.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// Number of episodes ever added, including evicted ones.
    pub fn total_episodes(&self) -> usize {
        self.first_id + self.episodes.len()
    }

    pub fn episodes(&self) -> impl Iterator<Item = &Episode> {
        self.episodes.iter()
    }

    pub fn episode(&self, i: usize) -> &Episode {
        &self.episodes[i]
    }

    /// Appends a finished episode, evicting the oldest whole episodes while
    /// the step count exceeds capacity. The newest episode is always kept.
    pub fn add(&mut self, episode: Episode) -> Result<(), BufferError> {
        episode.check(self.obs_len())?;
        if let Some(&a) = episode
            .actions
            .iter()
            .skip(1)
            .find(|&&a| a as usize >= self.action_arity)
        {
            return Err(BufferError::Episode(format!(
                "action {a} outside arity {}",
                self.action_arity
            )));
        }
        self.steps += episode.len();
        self.episodes.push_back(episode);
        while self.steps > self.capacity && self.episodes.len() > 1 {
            let old = self.episodes.pop_front().unwrap();
            self.steps -= old.len();
            self.first_id += 1;
        }
        Ok(())
    }

    /// Number of valid segment start offsets for length `t`.
    pub fn valid_offsets(&self, t: usize) -> usize {
        self.episodes
            .iter()
            .map(|e| (e.len() + 1).saturating_sub(t))
            .sum()
    }

    /// Draws `batch` segments of length `t`, uniformly over every valid
    /// `(episode, offset)` pair.
    pub fn sample_segments(
        &self,
        batch: usize,
        t: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<TrajectorySegment>, BufferError> {
        let counts: Vec<usize> = self
            .episodes
            .iter()
            .map(|e| (e.len() + 1).saturating_sub(t))
            .collect();
        let mut prefix = Vec::with_capacity(counts.len());
        let mut total = 0;
        for &c in &counts {
            total += c;
            prefix.push(total);
        }
        if total == 0 || t == 0 {
            return Err(BufferError::Insufficient {
                length: t,
                valid: total,
                episodes: self.episodes.len(),
            });
        }
        Ok((0..batch)
            .map(|_| {
                let k = rng.random_range(0..total);
                let e = prefix.partition_point(|&p| p <= k);
                let offset = k - (prefix[e] - counts[e]);
                self.segment(e, offset, t)
            })
            .collect())
    }

    /// Window `[offset, offset + t)` of the `e`-th stored episode.
    pub fn segment(&self, e: usize, offset: usize, t: usize) -> TrajectorySegment {
        let ep = &self.episodes[e];
        let o = self.obs_len();
        let r = offset..offset + t;
        TrajectorySegment {
            episode: self.first_id + e,
            offset,
            obs: ep.obs[r.start * o..r.end * o].to_vec(),
            actions: ep.actions[r.clone()].to_vec(),
            rewards: ep.rewards[r.clone()].to_vec(),
            dones: ep.dones[r.clone()].to_vec(),
            states: ep.states[r.start * STATE_DIM..r.end * STATE_DIM].to_vec(),
        }
    }

    pub fn write(&self, w: &mut impl Write) -> Result<(), BufferError> {
        w.write_all(&MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u32::<LittleEndian>(self.obs_shape.len() as u32)?;
        for &d in &self.obs_shape {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        w.write_u32::<LittleEndian>(self.action_arity as u32)?;
        w.write_u32::<LittleEndian>(self.episodes.len() as u32)?;
        for e in &self.episodes {
            w.write_u64::<LittleEndian>(e.len() as u64)?;
        }
        for e in &self.episodes {
            w.write_all(&e.obs)?;
            w.write_all(&e.actions)?;
            for &r in &e.rewards {
                w.write_f64::<LittleEndian>(r)?;
            }
            w.write_all(&e.dones)?;
            for &s in &e.states {
                w.write_f64::<LittleEndian>(s)?;
            }
        }
        Ok(())
    }

    /// Reads a buffer; capacity is set to the stored step count unless a
    /// larger one is given.
    pub fn read(r: &mut impl Read, capacity: Option<usize>) -> Result<Self, BufferError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(BufferError::Magic);
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(BufferError::Version(version));
        }
        let rank = r.read_u32::<LittleEndian>()? as usize;
        if rank == 0 || rank > 8 {
            return Err(BufferError::Malformed(format!("observation rank {rank}")));
        }
        let mut obs_shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            obs_shape.push(r.read_u32::<LittleEndian>()? as usize);
        }
        let arity = r.read_u32::<LittleEndian>()? as usize;
        let count = r.read_u32::<LittleEndian>()? as usize;
        let mut lengths = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            lengths.push(r.read_u64::<LittleEndian>()? as usize);
        }
        let total: usize = lengths.iter().sum();
        let mut buf = Self::new(&obs_shape, arity, capacity.unwrap_or(total).max(total));
        let o = buf.obs_len();
        for len in lengths {
            let mut e = Episode {
                obs: vec![0; len * o],
                actions: vec![0; len],
                rewards: vec![0.0; len],
                dones: vec![0; len],
                states: vec![0.0; len * STATE_DIM],
            };
            r.read_exact(&mut e.obs)?;
            r.read_exact(&mut e.actions)?;
            r.read_f64_into::<LittleEndian>(&mut e.rewards)?;
            r.read_exact(&mut e.dones)?;
            r.read_f64_into::<LittleEndian>(&mut e.states)?;
            buf.add(e)
                .map_err(|e| BufferError::Malformed(e.to_string()))?;
        }
        Ok(buf)
    }

    pub fn save(&self, path: &Path) -> Result<(), BufferError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, BufferError> {
        Self::read(&mut BufReader::new(File::open(path)?), None)
    }
}
