//! Chain serialization: the `INKW` model file.
//!
//! Byte layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "INKW"
//! 4       2     u16 format version (currently 1)
//! 6       1     mode byte: 0 = recurrent, 1 = stacked
//! 7       2     u16 iteration count m
//! 9       2     u16 depth
//! 11      2     u16 kernel size (3)
//! 13      2     u16 input channels
//! 15      2     u16 output channels
//! 17      4     f32 leaky-ReLU slope
//! 21      4     u32 training patch size
//! 25      4*d   u32 widths, one per level
//! ```
//!
//! followed by each network's parameter blocks (one network for recurrent
//! chains, m for stacked) in canonical order — `enc0.kernel, enc0.bias, ...,
//! up*, dec*, proj.kernel, proj.bias` — each block as a u32 value count and
//! that many f32 values. No trailing bytes are permitted. Weights are stored
//! in 32-bit precision; loading widens them back to the engine's 64-bit
//! reals.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::{UNetConfig, UNetParams};
use crate::refine::{RefineChain, RefineMode};

pub const MODEL_MAGIC: &[u8; 4] = b"INKW";
pub const MODEL_VERSION: u16 = 1;

/// Serialize a chain together with its training patch size.
pub fn save_chain(chain: &RefineChain, patch_size: usize) -> Result<Vec<u8>> {
    chain.validate()?;
    let cfg = &chain.cfg;
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.push(chain.mode.mode_byte());
    out.extend_from_slice(&u16::try_from(chain.m).map_err(big("m"))?.to_le_bytes());
    out.extend_from_slice(&u16::try_from(cfg.depth).map_err(big("depth"))?.to_le_bytes());
    out.extend_from_slice(&u16::try_from(cfg.kernel).map_err(big("kernel"))?.to_le_bytes());
    out.extend_from_slice(&u16::try_from(cfg.in_channels).map_err(big("in_channels"))?.to_le_bytes());
    out.extend_from_slice(
        &u16::try_from(cfg.out_channels).map_err(big("out_channels"))?.to_le_bytes(),
    );
    out.extend_from_slice(&(cfg.leaky_slope as f32).to_le_bytes());
    out.extend_from_slice(&u32::try_from(patch_size).map_err(big("patch_size"))?.to_le_bytes());
    for &w in &cfg.widths {
        out.extend_from_slice(&u32::try_from(w).map_err(big("width"))?.to_le_bytes());
    }
    for net in &chain.nets {
        for (_, block) in net.blocks() {
            out.extend_from_slice(&u32::try_from(block.len()).map_err(big("block"))?.to_le_bytes());
            for &v in block {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn big(field: &'static str) -> impl Fn(std::num::TryFromIntError) -> Error {
    move |_| Error::Argument(format!("{field} too large for the model format"))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Model {
                offset: self.bytes.len(),
                reason: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Deserialize a chain and its training patch size.
pub fn load_chain(bytes: &[u8]) -> Result<(RefineChain, usize)> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MODEL_MAGIC {
        return Err(Error::Model { offset: 0, reason: format!("bad magic {magic:?}") });
    }
    let version = r.u16("version")?;
    if version != MODEL_VERSION {
        return Err(Error::Model {
            offset: 4,
            reason: format!("unsupported version {version} (expected {MODEL_VERSION})"),
        });
    }
    let mode_offset = r.pos;
    let mode = RefineMode::from_byte(r.u8("mode")?)
        .map_err(|e| Error::Model { offset: mode_offset, reason: e.to_string() })?;
    let m = r.u16("m")? as usize;
    let depth = r.u16("depth")? as usize;
    let kernel = r.u16("kernel")? as usize;
    let in_channels = r.u16("in_channels")? as usize;
    let out_channels = r.u16("out_channels")? as usize;
    let leaky_slope = r.f32("leaky_slope")? as f64;
    let patch_size = r.u32("patch_size")? as usize;
    if depth == 0 || depth > 16 {
        return Err(Error::Model { offset: 9, reason: format!("implausible depth {depth}") });
    }
    let mut widths = Vec::with_capacity(depth);
    for _ in 0..depth {
        widths.push(r.u32("width")? as usize);
    }
    let cfg = UNetConfig { depth, widths, kernel, leaky_slope, in_channels, out_channels };
    cfg.validate().map_err(|e| Error::Model { offset: 9, reason: e.to_string() })?;
    if m == 0 {
        return Err(Error::Model { offset: 7, reason: "iteration count is zero".into() });
    }

    let net_count = match mode {
        RefineMode::Recurrent => 1,
        RefineMode::Stacked => m,
    };
    let mut nets = Vec::with_capacity(net_count);
    for _ in 0..net_count {
        let mut net = UNetParams::zeros(&cfg);
        for (name, block) in net.blocks_mut() {
            let at = r.pos;
            let len = r.u32(&format!("{name} length"))? as usize;
            if len != block.len() {
                return Err(Error::Model {
                    offset: at,
                    reason: format!("block {name}: expected {} values, found {len}", block.len()),
                });
            }
            for v in block.iter_mut() {
                let f = r.f32(&name)?;
                if !f.is_finite() {
                    return Err(Error::Model {
                        offset: r.pos - 4,
                        reason: format!("non-finite value in block {name}"),
                    });
                }
                *v = f as f64;
            }
        }
        nets.push(net);
    }
    if r.pos != bytes.len() {
        return Err(Error::Model {
            offset: r.pos,
            reason: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    let chain = RefineChain { mode, nets, m, cfg };
    chain.validate().map_err(|e| Error::Model { offset: 0, reason: e.to_string() })?;
    Ok((chain, patch_size))
}

pub fn save_chain_file(chain: &RefineChain, patch_size: usize, path: &Path) -> Result<()> {
    fs::write(path, save_chain(chain, patch_size)?)?;
    Ok(())
}

pub fn load_chain_file(path: &Path) -> Result<(RefineChain, usize)> {
    load_chain(&fs::read(path)?)
}
