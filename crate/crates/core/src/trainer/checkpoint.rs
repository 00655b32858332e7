//! Full-precision training state on disk.
//!
//! Layout (little endian): magic, config hash (64 hex bytes), iteration,
//! SH degree, then parameters and both Adam moments group by group, the Adam
//! step, the densification statistics and the CSV log text.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::density::DensifyState;
use crate::gaussians::{GaussianSet, ParamGroup};

use super::optimizer::Adam;

const MAGIC: &[u8; 8] = b"GSSRCKP1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub iteration: usize,
    pub gaussians: GaussianSet,
    pub optimizer: Adam,
    pub densify: DensifyState,
    pub log_csv: String,
}

fn write_f64s<W: Write>(w: &mut W, v: &[f64]) -> io::Result<()> {
    w.write_u64::<LE>(v.len() as u64)?;
    v.iter().try_for_each(|x| w.write_f64::<LE>(*x))
}

fn read_len<R: Read>(r: &mut R) -> io::Result<usize> {
    let n = r.read_u64::<LE>()?;
    // guards against allocating from a corrupt length
    if n > (1 << 34) {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("implausible length {n}")));
    }
    Ok(n as usize)
}

fn read_f64s<R: Read>(r: &mut R) -> io::Result<Vec<f64>> {
    let n = read_len(r)?;
    let mut v = vec![0.0; n];
    r.read_f64_into::<LE>(&mut v)?;
    Ok(v)
}

fn write_set<W: Write>(w: &mut W, s: &GaussianSet) -> io::Result<()> {
    ParamGroup::ALL.iter().try_for_each(|&g| write_f64s(w, s.group(g)))
}

fn read_set<R: Read>(r: &mut R, sh_degree: usize) -> io::Result<GaussianSet> {
    let mut s = GaussianSet::new(sh_degree);
    for g in ParamGroup::ALL {
        *s.group_mut(g) = read_f64s(r)?;
    }
    let n = s.len();
    for g in ParamGroup::ALL {
        if s.group(g).len() != n * g.stride(sh_degree) {
            return Err(io::Error::new(io::ErrorKind::InvalidData, format!("{} has inconsistent length", g.name())));
        }
    }
    Ok(s)
}

impl Checkpoint {
    pub fn write(&self, path: &Path) -> io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(MAGIC)?;
        let mut hash = [b'0'; 64];
        let bytes = self.config_hash.as_bytes();
        hash[..bytes.len().min(64)].copy_from_slice(&bytes[..bytes.len().min(64)]);
        w.write_all(&hash)?;
        w.write_u64::<LE>(self.iteration as u64)?;
        w.write_u64::<LE>(self.gaussians.sh_degree as u64)?;
        write_set(w, &self.gaussians)?;
        write_set(w, &self.optimizer.m)?;
        write_set(w, &self.optimizer.v)?;
        w.write_u64::<LE>(self.optimizer.step)?;
        write_f64s(w, &self.densify.grad_accum)?;
        w.write_u64::<LE>(self.densify.counts.len() as u64)?;
        self.densify.counts.iter().try_for_each(|c| w.write_u32::<LE>(*c))?;
        write_f64s(w, &self.densify.max_radii)?;
        w.write_u64::<LE>(self.log_csv.len() as u64)?;
        w.write_all(self.log_csv.as_bytes())
    }

    pub fn read(path: &Path) -> io::Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    pub fn read_from<R: Read>(r: &mut R) -> io::Result<Self> {
        let invalid = |m: String| io::Error::new(io::ErrorKind::InvalidData, m);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(invalid("not a checkpoint file".into()));
        }
        let mut hash = [0u8; 64];
        r.read_exact(&mut hash)?;
        let config_hash = String::from_utf8(hash.to_vec()).map_err(|e| invalid(e.to_string()))?;
        let iteration = r.read_u64::<LE>()? as usize;
        let sh_degree = r.read_u64::<LE>()? as usize;
        if sh_degree > 3 {
            return Err(invalid(format!("SH degree {sh_degree}")));
        }
        let gaussians = read_set(r, sh_degree)?;
        let m = read_set(r, sh_degree)?;
        let v = read_set(r, sh_degree)?;
        let step = r.read_u64::<LE>()?;
        let grad_accum = read_f64s(r)?;
        let n = read_len(r)?;
        let mut counts = vec![0u32; n];
        r.read_u32_into::<LE>(&mut counts)?;
        let max_radii = read_f64s(r)?;
        let len = read_len(r)?;
        let mut log = vec![0u8; len];
        r.read_exact(&mut log)?;
        let log_csv = String::from_utf8(log).map_err(|e| invalid(e.to_string()))?;
        let count = gaussians.len();
        if m.len() != count || v.len() != count || grad_accum.len() != count || counts.len() != count || max_radii.len() != count {
            return Err(invalid("state arrays disagree in length".into()));
        }
        Ok(Checkpoint {
            config_hash,
            iteration,
            gaussians,
            optimizer: Adam { m, v, step },
            densify: DensifyState { grad_accum, counts, max_radii },
            log_csv,
        })
    }
}
