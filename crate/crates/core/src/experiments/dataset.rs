//! Transition dataset files and the random-lane-change collection agent.
//!
//! Layout (little endian):
//!
//! ```text
//! magic "SETRLDS1" | u32 version | str schema | [u8; 32] config hash | u64 count
//! record*: u32 byte length | state | u8 action | f32 reward | next state
//! state:   u16 n | n x (f32 dr, f32 dv, i8 dl) | f32 v_ego | u8 left | u8 right
//! ```
//!
//! Strings are a u32 length followed by UTF-8 bytes. Files are written to
//! `<path>.partial` and renamed once complete, so an interrupted collection
//! leaves the marker file behind instead of a truncated dataset.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use setrl_highway::{Action, DynamicFeature, Observation, ScenarioConfig, Simulator, StaticFeature};

use crate::error::{CoreError, Result};
use crate::qlearning::Transition;

const MAGIC: &[u8; 8] = b"SETRLDS1";
pub const DATASET_VERSION: u32 = 1;
pub const SCHEMA: &str = "state=(n:u16,[dr:f32,dv:f32,dl:i8]*n,v_ego:f32,left:u8,right:u8);action:u8;reward:f32;next=state";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetHeader {
    pub version: u32,
    pub schema: String,
    pub config_hash: [u8; 32],
    pub count: u64,
}

/// Scenario distribution used by the collection agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectConfig {
    pub samples: usize,
    pub seed: u64,
    pub min_vehicles: usize,
    pub max_vehicles: usize,
    pub lanes: usize,
    pub episode_actions: usize,
    pub driver_pool_seed: u64,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            samples: 50_000,
            seed: 0,
            min_vehicles: 30,
            max_vehicles: 60,
            lanes: 3,
            episode_actions: setrl_highway::params::DEFAULT_EPISODE_ACTIONS,
            driver_pool_seed: 0,
        }
    }
}

impl CollectConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(CoreError::Config("sample count must be positive".into()));
        }
        if self.min_vehicles > self.max_vehicles || self.lanes == 0 || self.episode_actions == 0 {
            return Err(CoreError::Config(format!("invalid scenario range {self:?}")));
        }
        Ok(())
    }

    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(serde_json::to_vec(self).expect("config serializes")).into()
    }
}

fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn encode_state(buf: &mut Vec<u8>, obs: &Observation) -> Result<()> {
    let n = u16::try_from(obs.dynamic.len())
        .map_err(|_| CoreError::Dataset(format!("{} vehicles do not fit a record", obs.dynamic.len())))?;
    buf.extend_from_slice(&n.to_le_bytes());
    for f in &obs.dynamic {
        buf.extend_from_slice(&f.dr.to_le_bytes());
        buf.extend_from_slice(&f.dv.to_le_bytes());
        buf.push(f.dl as u8);
    }
    let s = &obs.static_features;
    buf.extend_from_slice(&s.v_ego.to_le_bytes());
    buf.push(s.left_available as u8);
    buf.push(s.right_available as u8);
    Ok(())
}

pub fn encode_transition(t: &Transition) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(64);
    encode_state(&mut buf, &t.state)?;
    buf.push(t.action.index() as u8);
    buf.extend_from_slice(&t.reward.to_le_bytes());
    encode_state(&mut buf, &t.next_state)?;
    Ok(buf)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        let s = self
            .buf
            .get(self.pos..end)
            .ok_or_else(|| CoreError::Dataset("record ends early".into()))?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(CoreError::Dataset(format!("bad flag byte {v}"))),
        }
    }

    fn state(&mut self) -> Result<Observation> {
        let n = u16::from_le_bytes(self.take(2)?.try_into().unwrap()) as usize;
        let mut dynamic = Vec::with_capacity(n);
        for _ in 0..n {
            dynamic.push(DynamicFeature {
                dr: self.f32()?,
                dv: self.f32()?,
                dl: self.u8()? as i8,
            });
        }
        Ok(Observation {
            dynamic,
            static_features: StaticFeature {
                v_ego: self.f32()?,
                left_available: self.flag()?,
                right_available: self.flag()?,
            },
        })
    }
}

pub fn decode_transition(buf: &[u8]) -> Result<Transition> {
    let mut c = Cursor { buf, pos: 0 };
    let state = c.state()?;
    let a = c.u8()?;
    let action = Action::from_index(a as usize).ok_or_else(|| CoreError::Dataset(format!("bad action {a}")))?;
    let reward = c.f32()?;
    let next_state = c.state()?;
    if c.pos != buf.len() {
        return Err(CoreError::Dataset("trailing bytes in record".into()));
    }
    Ok(Transition {
        state,
        action,
        reward,
        next_state,
    })
}

/// Append-only writer. The count in the header is patched in `finish`.
pub struct DatasetWriter {
    out: BufWriter<File>,
    partial: PathBuf,
    path: PathBuf,
    count: u64,
    count_offset: u64,
}

fn partial_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".partial");
    PathBuf::from(p)
}

impl DatasetWriter {
    pub fn create(path: impl AsRef<Path>, config_hash: [u8; 32]) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let partial = partial_path(&path);
        let mut out = BufWriter::new(File::create(&partial)?);
        out.write_all(MAGIC)?;
        out.write_all(&DATASET_VERSION.to_le_bytes())?;
        write_str(&mut out, SCHEMA)?;
        out.write_all(&config_hash)?;
        let count_offset = (MAGIC.len() + 4 + 4 + SCHEMA.len() + 32) as u64;
        out.write_all(&0u64.to_le_bytes())?;
        Ok(Self {
            out,
            partial,
            path,
            count: 0,
            count_offset,
        })
    }

    pub fn append(&mut self, t: &Transition) -> Result<()> {
        let rec = encode_transition(t)?;
        self.out.write_all(&(rec.len() as u32).to_le_bytes())?;
        self.out.write_all(&rec)?;
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Writes the final count and moves the file into place.
    pub fn finish(self) -> Result<u64> {
        let mut f = self.out.into_inner().map_err(|e| e.into_error())?;
        f.seek(SeekFrom::Start(self.count_offset))?;
        f.write_all(&self.count.to_le_bytes())?;
        f.sync_all()?;
        drop(f);
        std::fs::rename(&self.partial, &self.path)?;
        Ok(self.count)
    }
}

/// Streaming reader; records are decoded one at a time.
pub struct DatasetReader<R = BufReader<File>> {
    input: R,
    header: DatasetHeader,
    read: u64,
    buf: Vec<u8>,
}

impl DatasetReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(BufReader::new(File::open(path)?))
    }
}

impl<R: Read> DatasetReader<R> {
    pub fn new(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CoreError::Dataset("not a dataset file".into()));
        }
        let mut u4 = [0u8; 4];
        input.read_exact(&mut u4)?;
        let version = u32::from_le_bytes(u4);
        if version != DATASET_VERSION {
            return Err(CoreError::Dataset(format!("unsupported version {version}")));
        }
        input.read_exact(&mut u4)?;
        let len = u32::from_le_bytes(u4) as usize;
        if len > 1 << 16 {
            return Err(CoreError::Dataset("schema string too long".into()));
        }
        let mut schema = vec![0u8; len];
        input.read_exact(&mut schema)?;
        let schema = String::from_utf8(schema).map_err(|_| CoreError::Dataset("schema not UTF-8".into()))?;
        let mut config_hash = [0u8; 32];
        input.read_exact(&mut config_hash)?;
        let mut u8b = [0u8; 8];
        input.read_exact(&mut u8b)?;
        Ok(Self {
            input,
            header: DatasetHeader {
                version,
                schema,
                config_hash,
                count: u64::from_le_bytes(u8b),
            },
            read: 0,
            buf: Vec::new(),
        })
    }

    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }

    fn next_record(&mut self) -> Result<Transition> {
        let mut u4 = [0u8; 4];
        self.input.read_exact(&mut u4)?;
        let len = u32::from_le_bytes(u4) as usize;
        self.buf.resize(len, 0);
        self.input.read_exact(&mut self.buf)?;
        self.read += 1;
        decode_transition(&self.buf)
    }
}

impl<R: Read> Iterator for DatasetReader<R> {
    type Item = Result<Transition>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.read >= self.header.count {
            return None;
        }
        Some(self.next_record())
    }
}

/// Reads a whole dataset into memory.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<(DatasetHeader, Vec<Transition>)> {
    let reader = DatasetReader::open(path)?;
    let header = reader.header().clone();
    let items = reader.collect::<Result<Vec<_>>>()?;
    Ok((header, items))
}

/// Collection policy: a uniformly random action among those the safety
/// module would execute unchanged. Keep is always among them.
pub fn collection_action(sim: &Simulator, rng: &mut impl Rng) -> Action {
    let safe: Vec<Action> = Action::ALL
        .into_iter()
        .filter(|a| sim.effective_action(*a) == *a)
        .collect();
    *safe.choose(rng).expect("keep is always safe")
}

/// Runs the collection agent until `config.samples` transitions were handed
/// to `sink`. Scenario sizes are uniform over the configured range.
pub fn collect_transitions(config: &CollectConfig, mut sink: impl FnMut(Transition) -> Result<()>) -> Result<()> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut produced = 0;
    while produced < config.samples {
        let scenario = ScenarioConfig {
            vehicles: rng.random_range(config.min_vehicles..=config.max_vehicles),
            lanes: config.lanes,
            seed: rng.next_u64(),
            episode_actions: config.episode_actions,
            driver_pool_seed: config.driver_pool_seed,
        };
        let mut sim = Simulator::spawn(scenario)?;
        let mut obs = sim.observe();
        while !sim.done() && produced < config.samples {
            let action = collection_action(&sim, &mut rng);
            let out = sim.step_agent_action(action);
            let next = sim.observe();
            sink(Transition {
                state: obs,
                action,
                reward: out.reward as f32,
                next_state: next.clone(),
            })?;
            obs = next;
            produced += 1;
        }
    }
    Ok(())
}

/// Collects straight into a dataset file.
pub fn collect_dataset(config: &CollectConfig, path: impl AsRef<Path>) -> Result<u64> {
    let mut w = DatasetWriter::create(path, config.hash())?;
    collect_transitions(config, |t| w.append(&t))?;
    w.finish()
}

/// Vehicles visible in state and next state are both at most `max`.
pub fn within_vehicle_limit(t: &Transition, max: usize) -> bool {
    t.state.vehicles_in_range() <= max && t.next_state.vehicles_in_range() <= max
}

/// Copies the transitions of `input` with at most `max` visible vehicles in
/// both states, keeping their order. Returns `(read, kept)`.
pub fn filter_dataset(input: impl AsRef<Path>, output: impl AsRef<Path>, max: usize) -> Result<(u64, u64)> {
    let reader = DatasetReader::open(input)?;
    let hash = reader.header().config_hash;
    let mut w = DatasetWriter::create(output, hash)?;
    let mut read = 0;
    for t in reader {
        let t = t?;
        read += 1;
        if within_vehicle_limit(&t, max) {
            w.append(&t)?;
        }
    }
    let kept = w.finish()?;
    Ok((read, kept))
}

/// The "at most six surrounding vehicles" subset.
pub fn filter_dataset_max6(input: impl AsRef<Path>, output: impl AsRef<Path>) -> Result<(u64, u64)> {
    filter_dataset(input, output, 6)
}
