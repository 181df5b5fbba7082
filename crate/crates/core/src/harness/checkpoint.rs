//! Versioned single-file checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "ETTRLCKP"                      8-byte magic
//! u64 len | header                version: u32, episode: u64
//! u64 len | config                UTF-8 JSON echo of the run config
//! u64 len | params                vocab: u32, buckets: u32, count: u64,
//!                                 then per entry (key order):
//!                                 fingerprint: u64, last: u32 (u32::MAX = start),
//!                                 bucket: u32, logits: vocab × f64
//! u64 len | rng                   seed: u64, stream: u64, next_episode: u64
//! [u8; 32]                        SHA-256 of every preceding byte
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::policy::{ContextKey, PolicyParams};
use crate::primitives::TokenId;

use super::trainer::TrainingState;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"ETTRLCKP";
const START_SENTINEL: u32 = u32::MAX;
const DIGEST_LEN: usize = 32;
const ROOT_STREAM: u64 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_json: String,
    pub state: TrainingState,
}

fn section(out: &mut Vec<u8>, body: &[u8]) {
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(body);
}

pub(crate) fn encode(state: &TrainingState, config_json: &str) -> Vec<u8> {
    let mut out = MAGIC.to_vec();

    let mut header = Vec::with_capacity(12);
    header.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    header.extend_from_slice(&state.next_episode.to_le_bytes());
    section(&mut out, &header);

    section(&mut out, config_json.as_bytes());

    let params = &state.params;
    let mut body = Vec::new();
    body.extend_from_slice(&(params.vocab_size() as u32).to_le_bytes());
    body.extend_from_slice(&params.bucket_count().to_le_bytes());
    body.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for (k, row) in params.entries() {
        body.extend_from_slice(&k.prompt_fingerprint.to_le_bytes());
        body.extend_from_slice(&k.last_token.map_or(START_SENTINEL, |t| t.0).to_le_bytes());
        body.extend_from_slice(&k.position_bucket.to_le_bytes());
        for x in row {
            body.extend_from_slice(&x.to_bits().to_le_bytes());
        }
    }
    section(&mut out, &body);

    let mut rng = Vec::with_capacity(24);
    rng.extend_from_slice(&state.seed.to_le_bytes());
    rng.extend_from_slice(&ROOT_STREAM.to_le_bytes());
    rng.extend_from_slice(&state.next_episode.to_le_bytes());
    section(&mut out, &rng);

    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.buf.len() < n {
            return Err(format!("truncated: wanted {n} bytes, {} left", self.buf.len()));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn section(&mut self) -> std::result::Result<Reader<'a>, String> {
        let len = self.u64()? as usize;
        Ok(Reader { buf: self.take(len)? })
    }

    fn finish(&self, what: &str) -> std::result::Result<(), String> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(format!("{} trailing bytes in {what} section", self.buf.len()))
        }
    }
}

pub(crate) fn decode(bytes: &[u8]) -> std::result::Result<Checkpoint, String> {
    if bytes.len() < MAGIC.len() + DIGEST_LEN {
        return Err("file too short".into());
    }
    let (payload, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(payload).as_slice() != digest {
        return Err("integrity digest mismatch".into());
    }
    let mut r = Reader { buf: payload };
    if r.take(MAGIC.len())? != MAGIC {
        return Err("not a checkpoint (bad magic)".into());
    }

    let mut header = r.section()?;
    let version = header.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(format!("unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"));
    }
    let episode = header.u64()?;
    header.finish("header")?;

    let config = r.section()?;
    let config_json = std::str::from_utf8(config.buf).map_err(|e| format!("config echo: {e}"))?.to_string();

    let mut p = r.section()?;
    let vocab = p.u32()? as usize;
    let buckets = p.u32()?;
    let count = p.u64()?;
    if vocab < 2 || buckets == 0 {
        return Err("invalid policy dimensions".into());
    }
    let mut params = PolicyParams::uniform(vocab, buckets);
    let mut previous: Option<ContextKey> = None;
    for _ in 0..count {
        let fingerprint = p.u64()?;
        let last = p.u32()?;
        let bucket = p.u32()?;
        let key = ContextKey {
            prompt_fingerprint: fingerprint,
            last_token: (last != START_SENTINEL).then_some(TokenId(last)),
            position_bucket: bucket,
        };
        if previous.is_some_and(|prev| prev >= key) {
            return Err("policy entries are not strictly sorted".into());
        }
        previous = Some(key);
        let row = (0..vocab).map(|_| p.u64().map(f64::from_bits)).collect::<std::result::Result<Vec<_>, _>>()?;
        params.set_logits(key, row).map_err(|e| e.to_string())?;
    }
    p.finish("params")?;

    let mut rng = r.section()?;
    let seed = rng.u64()?;
    let stream = rng.u64()?;
    let next_episode = rng.u64()?;
    rng.finish("rng")?;
    if stream != ROOT_STREAM || next_episode != episode {
        return Err("rng cursor disagrees with header".into());
    }
    r.finish("file")?;

    Ok(Checkpoint { config_json, state: TrainingState { params, next_episode, seed } })
}

/// Writes to a sibling temp file and renames it into place.
pub fn save_checkpoint(state: &TrainingState, config_json: &str, path: &Path) -> Result<()> {
    let bytes = encode(state, config_json);
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, &bytes).map_err(|source| Error::Io { path: tmp.clone(), source })?;
    std::fs::rename(&tmp, path).map_err(|source| Error::Io { path: path.into(), source })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::LoadFailure { path: path.into(), reason: e.to_string() })?;
    decode(&bytes).map_err(|reason| Error::LoadFailure { path: path.into(), reason })
}
