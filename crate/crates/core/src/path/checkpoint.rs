//! Binary chain checkpoints (`NIRC1`): everything needed to resume a chain
//! bit-for-bit, little-endian throughout.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::mcmc::{MoveTally, Tuner};
use crate::error::{Error, Result};

const MAGIC: &[u8; 5] = b"NIRC1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: u64,
    pub chain_id: u64,
    pub sweep: u64,
    pub rng_seed: [u8; 32],
    pub rng_stream: u64,
    pub rng_word_pos: u128,
    pub tuner: Tuner,
    pub tally: MoveTally,
    pub d: usize,
    pub coords: Vec<f64>,
    pub log_ref: f64,
    pub action: f64,
    pub names: Vec<String>,
    pub series: Vec<Vec<f64>>,
}

fn write_tally<W: Write>(w: &mut W, t: &MoveTally) -> std::io::Result<()> {
    for &x in t.proposed.iter().chain(&t.accepted) {
        w.write_u64::<LittleEndian>(x)?;
    }
    Ok(())
}

fn read_tally<R: Read>(r: &mut R) -> std::io::Result<MoveTally> {
    let mut t = MoveTally::default();
    for x in t.proposed.iter_mut() {
        *x = r.read_u64::<LittleEndian>()?;
    }
    for x in t.accepted.iter_mut() {
        *x = r.read_u64::<LittleEndian>()?;
    }
    Ok(t)
}

impl Checkpoint {
    /// Writes atomically: to a temporary sibling, then renamed into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(&tmp, e))?;
        w.flush().map_err(|e| Error::io(&tmp, e))?;
        drop(w);
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u64::<LittleEndian>(self.config_hash)?;
        w.write_u64::<LittleEndian>(self.chain_id)?;
        w.write_u64::<LittleEndian>(self.sweep)?;
        w.write_all(&self.rng_seed)?;
        w.write_u64::<LittleEndian>(self.rng_stream)?;
        w.write_u128::<LittleEndian>(self.rng_word_pos)?;
        w.write_f64::<LittleEndian>(self.tuner.step)?;
        w.write_u64::<LittleEndian>(self.tuner.block_len as u64)?;
        w.write_u64::<LittleEndian>(self.tuner.end_len as u64)?;
        w.write_u8(self.tuner.frozen as u8)?;
        write_tally(w, &self.tuner.window)?;
        write_tally(w, &self.tally)?;
        w.write_u64::<LittleEndian>(self.d as u64)?;
        w.write_u64::<LittleEndian>(self.coords.len() as u64)?;
        for &x in &self.coords {
            w.write_f64::<LittleEndian>(x)?;
        }
        w.write_f64::<LittleEndian>(self.log_ref)?;
        w.write_f64::<LittleEndian>(self.action)?;
        w.write_u64::<LittleEndian>(self.names.len() as u64)?;
        for (name, s) in self.names.iter().zip(&self.series) {
            w.write_u64::<LittleEndian>(name.len() as u64)?;
            w.write_all(name.as_bytes())?;
            w.write_u64::<LittleEndian>(s.len() as u64)?;
            for &x in s {
                w.write_f64::<LittleEndian>(x)?;
            }
        }
        Ok(())
    }
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let fmt = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    read_from(&mut r).map_err(|e| match e {
        ReadError::Io(e) => fmt(format!("truncated or unreadable: {e}")),
        ReadError::Bad(s) => fmt(s),
    })
}

enum ReadError {
    Io(std::io::Error),
    Bad(String),
}

impl From<std::io::Error> for ReadError {
    fn from(e: std::io::Error) -> Self {
        ReadError::Io(e)
    }
}

const MAX_LEN: u64 = 1 << 32;

fn read_len<R: Read>(r: &mut R) -> std::result::Result<usize, ReadError> {
    let n = r.read_u64::<LittleEndian>()?;
    if n > MAX_LEN {
        return Err(ReadError::Bad(format!("implausible length {n}")));
    }
    Ok(n as usize)
}

fn read_from<R: Read>(r: &mut R) -> std::result::Result<Checkpoint, ReadError> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ReadError::Bad("not a chain checkpoint (bad magic)".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(ReadError::Bad(format!("unsupported version {version}")));
    }
    let config_hash = r.read_u64::<LittleEndian>()?;
    let chain_id = r.read_u64::<LittleEndian>()?;
    let sweep = r.read_u64::<LittleEndian>()?;
    let mut rng_seed = [0u8; 32];
    r.read_exact(&mut rng_seed)?;
    let rng_stream = r.read_u64::<LittleEndian>()?;
    let rng_word_pos = r.read_u128::<LittleEndian>()?;
    let step = r.read_f64::<LittleEndian>()?;
    let block_len = read_len(r)?;
    let end_len = read_len(r)?;
    let frozen = r.read_u8()? != 0;
    let window = read_tally(r)?;
    let tally = read_tally(r)?;
    let d = read_len(r)?;
    let n = read_len(r)?;
    let mut coords = vec![0.0; n];
    r.read_f64_into::<LittleEndian>(&mut coords)?;
    let log_ref = r.read_f64::<LittleEndian>()?;
    let action = r.read_f64::<LittleEndian>()?;
    let n_series = read_len(r)?;
    let mut names = Vec::with_capacity(n_series);
    let mut series = Vec::with_capacity(n_series);
    for _ in 0..n_series {
        let len = read_len(r)?;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)?;
        names.push(
            String::from_utf8(buf)
                .map_err(|_| ReadError::Bad("series name is not UTF-8".into()))?,
        );
        let len = read_len(r)?;
        let mut s = vec![0.0; len];
        r.read_f64_into::<LittleEndian>(&mut s)?;
        series.push(s);
    }
    Ok(Checkpoint {
        config_hash,
        chain_id,
        sweep,
        rng_seed,
        rng_stream,
        rng_word_pos,
        tuner: Tuner {
            step,
            block_len,
            end_len,
            frozen,
            window,
        },
        tally,
        d,
        coords,
        log_ref,
        action,
        names,
        series,
    })
}
