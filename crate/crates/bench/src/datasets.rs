//! Key sets: SOSD-style binary files and deterministic synthetic generators.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

use hire_core::MASK_BIT;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("file too short for its header ({0} bytes)")]
    Truncated(usize),
    #[error("header declares {declared} keys, file holds {found}")]
    CountMismatch { declared: u64, found: u64 },
    #[error("key {key} at position {index} is not below 2^63")]
    OutOfDomain { index: usize, key: u64 },
    #[error("unknown dataset `{0}` (expected sosd:PATH, uniform:N, lognormal:N or segmented:N)")]
    BadDescriptor(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticKind {
    Uniform,
    Lognormal,
    /// Piecewise-linear runs with random slopes.
    Segmented,
}

/// Where the keys come from.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub enum DatasetSource {
    Sosd(PathBuf),
    Synthetic { kind: SyntheticKind, n: usize },
}

impl DatasetSource {
    /// Loads or generates the keys. `shift` right-shifts SOSD keys that do
    /// not fit below 2^63 instead of rejecting them.
    pub fn keys(&self, seed: u64, shift: bool) -> Result<Vec<u64>, DatasetError> {
        match self {
            DatasetSource::Sosd(p) => load_sosd(p, shift),
            DatasetSource::Synthetic { kind, n } => Ok(gen_synthetic(*kind, *n, seed)),
        }
    }
}

impl fmt::Display for DatasetSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetSource::Sosd(p) => write!(f, "sosd:{}", p.display()),
            DatasetSource::Synthetic { kind, n } => {
                let k = match kind {
                    SyntheticKind::Uniform => "uniform",
                    SyntheticKind::Lognormal => "lognormal",
                    SyntheticKind::Segmented => "segmented",
                };
                write!(f, "{k}:{n}")
            }
        }
    }
}

impl FromStr for DatasetSource {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DatasetError::BadDescriptor(s.to_string());
        let (kind, arg) = s.split_once(':').ok_or_else(bad)?;
        let kind = match kind {
            "sosd" => return Ok(DatasetSource::Sosd(PathBuf::from(arg))),
            "uniform" => SyntheticKind::Uniform,
            "lognormal" => SyntheticKind::Lognormal,
            "segmented" => SyntheticKind::Segmented,
            _ => return Err(bad()),
        };
        let n = arg.replace('_', "").parse().map_err(|_| bad())?;
        Ok(DatasetSource::Synthetic { kind, n })
    }
}

/// Reads a SOSD file: a little-endian u64 count followed by that many
/// little-endian u64 keys. The result is sorted and deduplicated. With
/// `shift`, all keys are halved so that none reaches 2^63.
pub fn load_sosd(path: &Path, shift: bool) -> Result<Vec<u64>, DatasetError> {
    let bytes = std::fs::read(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_sosd(&bytes, shift)
}

pub fn parse_sosd(bytes: &[u8], shift: bool) -> Result<Vec<u64>, DatasetError> {
    if bytes.len() < 8 {
        return Err(DatasetError::Truncated(bytes.len()));
    }
    let declared = u64::from_le_bytes(bytes[..8].try_into().unwrap());
    let body = &bytes[8..];
    let found = (body.len() / 8) as u64;
    if found != declared || body.len() % 8 != 0 {
        return Err(DatasetError::CountMismatch { declared, found });
    }
    let mut keys = Vec::with_capacity(found as usize);
    for (index, chunk) in body.chunks_exact(8).enumerate() {
        let key = u64::from_le_bytes(chunk.try_into().unwrap());
        if key & MASK_BIT != 0 && !shift {
            return Err(DatasetError::OutOfDomain { index, key });
        }
        // Shifting every key keeps the order.
        keys.push(if shift { key >> 1 } else { key });
    }
    if !keys.windows(2).all(|w| w[0] < w[1]) {
        keys.sort_unstable();
        keys.dedup();
    }
    Ok(keys)
}

/// Writes keys in the SOSD layout.
pub fn write_sosd(path: &Path, keys: &[u64]) -> std::io::Result<()> {
    let mut out = Vec::with_capacity(8 * (keys.len() + 1));
    out.extend_from_slice(&(keys.len() as u64).to_le_bytes());
    for k in keys {
        out.extend_from_slice(&k.to_le_bytes());
    }
    std::fs::write(path, out)
}

/// `n` strictly increasing keys below 2^63, fully determined by
/// `(kind, n, seed)`.
pub fn gen_synthetic(kind: SyntheticKind, n: usize, seed: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ kind_salt(kind));
    match kind {
        SyntheticKind::Uniform => sample_distinct(n, &mut rng, |r| r.random_range(0..MASK_BIT)),
        SyntheticKind::Lognormal => {
            let d = LogNormal::new(0.0, 2.0).expect("valid parameters");
            sample_distinct(n, &mut rng, |r| {
                let x: f64 = d.sample(r) * 1e12;
                (x as u64).min(MASK_BIT - 1)
            })
        }
        SyntheticKind::Segmented => segmented(n, &mut rng),
    }
}

fn kind_salt(kind: SyntheticKind) -> u64 {
    match kind {
        SyntheticKind::Uniform => 0x756e_6966,
        SyntheticKind::Lognormal => 0x6c6f_676e,
        SyntheticKind::Segmented => 0x7365_676d,
    }
}

fn sample_distinct(
    n: usize,
    rng: &mut ChaCha8Rng,
    mut draw: impl FnMut(&mut ChaCha8Rng) -> u64,
) -> Vec<u64> {
    let mut keys: Vec<u64> = Vec::with_capacity(n + n / 64);
    while keys.len() < n {
        let missing = n - keys.len();
        keys.extend((0..missing + missing / 64 + 16).map(|_| draw(rng)));
        keys.sort_unstable();
        keys.dedup();
    }
    // Drop surplus keys at random positions so the kept set stays unbiased.
    if keys.len() > n {
        let mut drop = vec![false; keys.len()];
        for i in rand::seq::index::sample(rng, keys.len(), keys.len() - n) {
            drop[i] = true;
        }
        let mut i = 0;
        keys.retain(|_| {
            i += 1;
            !drop[i - 1]
        });
    }
    keys
}

/// Short runs of 32 to 256 keys mixed with occasional long runs of 4096 to
/// 65536 keys that carry most of the mass. Each run picks a gap from a wide
/// log-uniform range and jitters it slightly, so consecutive runs have very
/// different slopes and short runs defeat wide models.
fn segmented(n: usize, rng: &mut ChaCha8Rng) -> Vec<u64> {
    const LONG_RUN_P: f64 = 0.01;
    let mut keys = Vec::with_capacity(n);
    let mut k: u64 = rng.random_range(0..1 << 20);
    // Leave headroom so the largest gaps cannot reach 2^63.
    let max_gap = ((MASK_BIT / 4) / n.max(1) as u64).max(2);
    let max_bits = 63 - max_gap.leading_zeros();
    while keys.len() < n {
        let len = if rng.random_bool(LONG_RUN_P) {
            rng.random_range(4096..=65536)
        } else {
            rng.random_range(32..=256)
        };
        let len = len.min(n - keys.len());
        let gap = 1u64 << rng.random_range(0..max_bits);
        let jitter = (gap / 8).max(1);
        for _ in 0..len {
            k += gap + rng.random_range(0..jitter);
            keys.push(k);
        }
        // A jump between runs.
        k += rng.random_range(0..gap.saturating_mul(64).max(1));
    }
    keys
}
