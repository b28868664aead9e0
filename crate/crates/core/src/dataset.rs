//! Dataset generation, equalization, stratified splitting and persistence.
//!
//! # File layout
//!
//! All integers and floats little-endian.
//!
//! Header, 72 bytes:
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 8    | magic `QCORRDS\0`                       |
//! | 8      | 4    | format version (`u32`, currently 1)     |
//! | 12     | 4    | reserved, zero                          |
//! | 16     | 8    | record count (`u64`)                    |
//! | 24     | 40   | per-class counts, 5 × `u64`             |
//! | 64     | 8    | generator seed (`u64`)                  |
//!
//! Followed by `record count` records of 120 bytes each:
//! 10 × `f64` features in canonical order, 4 × `f64` quantities
//! (`N`, `FEF_w`, `S3`, `B`), 1 × `u8` class label, 7 zero bytes.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::collective::{CollectiveSimulator, NUM_FEATURES};
use crate::correlations::{classify, label_state, ClassLabel, Quantities, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::states::{random_state_with, DensityMatrix, StateMeasure, StateSeed};

pub const MAGIC: [u8; 8] = *b"QCORRDS\0";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 72;
pub const RECORD_BYTES: usize = 120;

/// States generated per random stream. Fixed so that output does not depend
/// on the number of worker threads.
pub const SHARD_SIZE: usize = 1 << 15;

const EQUALIZE_STREAM: u64 = 0xE0_0001;
const SPLIT_STREAM: u64 = 0xE0_0002;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleRecord {
    pub features: [f64; NUM_FEATURES],
    pub quantities: Quantities,
    pub label: ClassLabel,
}

impl SampleRecord {
    pub fn from_state(sim: &CollectiveSimulator, rho: &DensityMatrix) -> Result<Self> {
        let q = label_state(rho)?;
        Ok(Self {
            features: sim.features(rho).values,
            quantities: q.quantities,
            label: q.label,
        })
    }

    pub fn encode(&self, buf: &mut [u8; RECORD_BYTES]) {
        let quantities = self.quantities.to_array();
        let floats = self.features.iter().chain(quantities.iter()).copied();
        for (k, v) in floats.enumerate() {
            buf[8 * k..8 * k + 8].copy_from_slice(&v.to_le_bytes());
        }
        buf[112] = self.label as u8;
        buf[113..].fill(0);
    }

    pub fn decode(buf: &[u8; RECORD_BYTES]) -> Result<Self> {
        let f = |k: usize| f64::from_le_bytes(buf[8 * k..8 * k + 8].try_into().expect("8 bytes"));
        let features = std::array::from_fn(f);
        let quantities = Quantities::from_array(std::array::from_fn(|k| f(NUM_FEATURES + k)));
        let label = ClassLabel::try_from(buf[112])?;
        if buf[113..].iter().any(|&b| b != 0) {
            return Err(Error::Corrupt("nonzero record padding".into()));
        }
        let record = Self {
            features,
            quantities,
            label,
        };
        record.validate()?;
        Ok(record)
    }

    fn validate(&self) -> Result<()> {
        if self.features.iter().any(|p| !(p.abs() <= 1.0)) {
            return Err(Error::Corrupt("feature outside [-1, 1]".into()));
        }
        if classify(&self.quantities) != self.label {
            return Err(Error::Corrupt(format!("label {} inconsistent with quantities", self.label)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DatasetHeader {
    pub version: u32,
    pub record_count: u64,
    pub class_counts: [u64; NUM_CLASSES],
    pub generator_seed: u64,
}

impl DatasetHeader {
    fn encode(&self) -> [u8; HEADER_BYTES] {
        let mut buf = [0u8; HEADER_BYTES];
        buf[..8].copy_from_slice(&MAGIC);
        buf[8..12].copy_from_slice(&self.version.to_le_bytes());
        buf[16..24].copy_from_slice(&self.record_count.to_le_bytes());
        for (c, count) in self.class_counts.iter().enumerate() {
            buf[24 + 8 * c..32 + 8 * c].copy_from_slice(&count.to_le_bytes());
        }
        buf[64..72].copy_from_slice(&self.generator_seed.to_le_bytes());
        buf
    }

    fn decode(buf: &[u8; HEADER_BYTES]) -> Result<Self> {
        if buf[..8] != MAGIC {
            return Err(Error::Corrupt("bad dataset magic".into()));
        }
        let u64_at = |o: usize| u64::from_le_bytes(buf[o..o + 8].try_into().expect("8 bytes"));
        let version = u32::from_le_bytes(buf[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Corrupt(format!("unsupported dataset version {version}")));
        }
        let header = Self {
            version,
            record_count: u64_at(16),
            class_counts: std::array::from_fn(|c| u64_at(24 + 8 * c)),
            generator_seed: u64_at(64),
        };
        if header.class_counts.iter().sum::<u64>() != header.record_count {
            return Err(Error::Corrupt("class counts do not sum to record count".into()));
        }
        Ok(header)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub generator_seed: u64,
    pub records: Vec<SampleRecord>,
}

impl Dataset {
    pub fn new(generator_seed: u64, records: Vec<SampleRecord>) -> Self {
        Self {
            generator_seed,
            records,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn class_counts(&self) -> [u64; NUM_CLASSES] {
        let mut counts = [0u64; NUM_CLASSES];
        for r in &self.records {
            counts[r.label.index()] += 1;
        }
        counts
    }

    pub fn header(&self) -> DatasetHeader {
        DatasetHeader {
            version: FORMAT_VERSION,
            record_count: self.records.len() as u64,
            class_counts: self.class_counts(),
            generator_seed: self.generator_seed,
        }
    }

    pub fn labels(&self) -> Vec<ClassLabel> {
        self.records.iter().map(|r| r.label).collect()
    }

    /// Row-major `len × retained.len()` matrix of the retained features.
    pub fn feature_matrix(&self, retained: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.records.len() * retained.len());
        for r in &self.records {
            out.extend(retained.iter().map(|&k| r.features[k]));
        }
        out
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.header().encode())?;
        let mut buf = [0u8; RECORD_BYTES];
        for r in &self.records {
            r.encode(&mut buf);
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut hbuf = [0u8; HEADER_BYTES];
        r.read_exact(&mut hbuf).map_err(truncated)?;
        let header = DatasetHeader::decode(&hbuf)?;
        let count = usize::try_from(header.record_count).map_err(|_| Error::Corrupt("record count overflow".into()))?;
        let mut records = Vec::with_capacity(count.min(1 << 24));
        let mut buf = [0u8; RECORD_BYTES];
        for _ in 0..count {
            r.read_exact(&mut buf).map_err(truncated)?;
            records.push(SampleRecord::decode(&buf)?);
        }
        if r.read(&mut [0u8; 1])? != 0 {
            return Err(Error::Corrupt("trailing bytes after last record".into()));
        }
        let ds = Self::new(header.generator_seed, records);
        if ds.class_counts() != header.class_counts {
            return Err(Error::Corrupt("header class counts disagree with records".into()));
        }
        Ok(ds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }

    /// One row per record: `p11..p34,N,FEFw,S3,B,label`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let names = crate::collective::FEATURE_NAMES.join(",");
        writeln!(w, "{names},N,FEFw,S3,B,label")?;
        for r in &self.records {
            for v in r.features.iter().chain(r.quantities.to_array().iter()) {
                write!(w, "{v},")?;
            }
            writeln!(w, "{}", r.label as u8)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn truncated(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::Corrupt("file truncated".into())
    } else {
        Error::Io(e)
    }
}

/// Generates `count` labelled, featurized random states. Shard `k` of
/// [`SHARD_SIZE`] states draws from stream `(seed, k)`, so the output is
/// identical for any number of worker threads.
pub fn generate(count: usize, seed: u64, measure: StateMeasure) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::Config("count must be at least 1".into()));
    }
    let sim = CollectiveSimulator::shared();
    let shards = count.div_ceil(SHARD_SIZE);
    let parts: Vec<Vec<SampleRecord>> = (0..shards)
        .into_par_iter()
        .map(|shard| {
            let mut rng = StateSeed::new(seed, shard as u64).rng();
            let n = SHARD_SIZE.min(count - shard * SHARD_SIZE);
            (0..n)
                .map(|_| SampleRecord::from_state(sim, &random_state_with(measure, &mut rng)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(Dataset::new(seed, parts.concat()))
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Subsamples every class down to the size of the smallest one. Surplus
/// records are dropped at random: records are visited in a seeded shuffled
/// order and the first `k` of each class are kept, in that order.
pub fn equalize(ds: &Dataset, seed: u64) -> Result<Dataset> {
    let counts = ds.class_counts();
    if let Some(c) = (0..NUM_CLASSES).find(|&c| counts[c] == 0) {
        return Err(Error::CannotEqualize {
            class: ClassLabel::ALL[c].name(),
        });
    }
    let k = *counts.iter().min().expect("five classes");
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut stream_rng(seed, EQUALIZE_STREAM));
    let mut taken = [0u64; NUM_CLASSES];
    let mut records = Vec::with_capacity(k as usize * NUM_CLASSES);
    for i in order {
        let r = ds.records[i];
        let slot = &mut taken[r.label.index()];
        if *slot < k {
            *slot += 1;
            records.push(r);
        }
    }
    Ok(Dataset::new(ds.generator_seed, records))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

pub const SPLIT_FILES: [&str; 3] = ["train.qds", "validation.qds", "test.qds"];

impl Split {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for (name, part) in SPLIT_FILES.iter().zip([&self.train, &self.validation, &self.test]) {
            part.save(dir.join(name))?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        Ok(Self {
            train: Dataset::load(dir.join(SPLIT_FILES[0]))?,
            validation: Dataset::load(dir.join(SPLIT_FILES[1]))?,
            test: Dataset::load(dir.join(SPLIT_FILES[2]))?,
        })
    }
}

/// Part sizes for a 12:3:1 split of `n` records; the remainder goes to train.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let test = n / 16;
    let validation = 3 * n / 16;
    (n - test - validation, validation, test)
}

/// Stratified 12:3:1 train/validation/test split.
///
/// Records are shuffled, each class is spread evenly along a common ordering
/// (by relative rank within its class), and the ordering is cut into
/// test, validation and train; each part is then shuffled again.
pub fn split(ds: &Dataset, seed: u64) -> Result<Split> {
    let n = ds.len();
    if n < 16 {
        return Err(Error::TooFewRecords { needed: 16, got: n });
    }
    let mut rng = stream_rng(seed, SPLIT_STREAM);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let counts = ds.class_counts();
    let mut rank = [0u64; NUM_CLASSES];
    let mut keyed: Vec<(f64, u8, usize)> = order
        .iter()
        .map(|&i| {
            let c = ds.records[i].label.index();
            let key = (rank[c] as f64 + 0.5) / counts[c] as f64;
            rank[c] += 1;
            (key, c as u8, i)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let (_, n_val, n_test) = split_sizes(n);
    let mut take = |range: std::ops::Range<usize>| {
        let mut part: Vec<SampleRecord> = keyed[range].iter().map(|&(_, _, i)| ds.records[i]).collect();
        part.shuffle(&mut rng);
        Dataset::new(ds.generator_seed, part)
    };
    let test = take(0..n_test);
    let validation = take(n_test..n_test + n_val);
    let train = take(n_test + n_val..n);
    Ok(Split {
        train,
        validation,
        test,
    })
}
