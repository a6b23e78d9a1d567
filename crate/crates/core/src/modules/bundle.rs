//! Self-describing single-file module bundles.
//!
//! ```text
//! LEGONN-BUNDLE 1\n
//! manifest <bytes> <fnv1a-64 hex>\n
//! <canonical TOML manifest>
//! params <bytes> <fnv1a-64 hex>\n
//! <u32 count> { <u32 name len> <name> <u32 rank> <u64 dims…> <f64 values…> }…
//! ```
//!
//! All binary integers and floats are little-endian.

use std::path::Path;

use super::arch::{ModuleKind, ModuleManifest};
use super::module::Module;
use super::vocab::fnv1a;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &str = "LEGONN-BUNDLE";
pub const FORMAT_VERSION: u32 = 1;

/// Canonical TOML text for a manifest.
pub fn manifest_to_toml(m: &ModuleManifest) -> Result<String> {
    toml::to_string(m).map_err(|e| Error::Format(format!("cannot serialise manifest: {e}")))
}

/// Parses a manifest, reporting an unknown module kind as a version error.
pub fn manifest_from_toml(text: &str) -> Result<ModuleManifest> {
    let value: toml::Table = text
        .parse()
        .map_err(|e| Error::Format(format!("manifest is not valid TOML: {e}")))?;
    match value.get("kind").and_then(toml::Value::as_str) {
        Some(k) if ModuleKind::parse(k).is_some() => {}
        Some(k) => return Err(Error::Version(format!("unknown module kind {k:?}"))),
        None => return Err(Error::Format("manifest lacks a kind".into())),
    }
    let m: ModuleManifest =
        toml::from_str(text).map_err(|e| Error::Format(format!("manifest does not match the schema: {e}")))?;
    m.validate()?;
    Ok(m)
}

pub fn to_bytes(module: &Module) -> Result<Vec<u8>> {
    let manifest = manifest_to_toml(module.manifest())?;
    let mut params = Vec::new();
    let set = module.params();
    params.extend_from_slice(&(set.len() as u32).to_le_bytes());
    for (name, t) in set.iter() {
        params.extend_from_slice(&(name.len() as u32).to_le_bytes());
        params.extend_from_slice(name.as_bytes());
        params.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            params.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in t.data() {
            params.extend_from_slice(&x.to_le_bytes());
        }
    }
    let mut out = format!("{MAGIC} {FORMAT_VERSION}\n").into_bytes();
    for (section, body) in [("manifest", manifest.as_bytes()), ("params", &params[..])] {
        out.extend_from_slice(format!("{section} {} {:016x}\n", body.len(), fnv1a(body)).as_bytes());
        out.extend_from_slice(body);
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Module> {
    let mut r = Reader { bytes, pos: 0 };
    let header = r.line()?;
    let version = header
        .strip_prefix(MAGIC)
        .and_then(|v| v.strip_prefix(' '))
        .ok_or_else(|| Error::Format("missing bundle header".into()))?;
    if version != FORMAT_VERSION.to_string() {
        return Err(Error::Version(format!(
            "bundle format {version:?}, this build reads {FORMAT_VERSION}"
        )));
    }
    let manifest = r.section("manifest")?;
    let manifest =
        std::str::from_utf8(manifest).map_err(|_| Error::Format("manifest section is not UTF-8".into()))?;
    let manifest = manifest_from_toml(manifest)?;
    let params = r.section("params")?;
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Module::from_params(manifest, decode_params(params)?)
}

pub fn save(module: &Module, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(module)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Module> {
    let path = path.as_ref();
    from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("bundle truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn line(&mut self) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let n = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("bundle truncated".into()))?;
        let line = std::str::from_utf8(&rest[..n]).map_err(|_| Error::Format("header line is not UTF-8".into()))?;
        self.pos += n + 1;
        Ok(line)
    }

    fn section(&mut self, name: &'static str) -> Result<&'a [u8]> {
        let line = self.line()?;
        let bad = || Error::Format(format!("bad {name} section header {line:?}"));
        let mut parts = line.split(' ');
        if parts.next() != Some(name) {
            return Err(bad());
        }
        let len: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let expected = parts
            .next()
            .and_then(|s| u64::from_str_radix(s, 16).ok())
            .ok_or_else(bad)?;
        if parts.next().is_some() {
            return Err(bad());
        }
        let body = self.take(len)?;
        let found = fnv1a(body);
        if found != expected {
            return Err(Error::Checksum {
                section: name,
                expected,
                found,
            });
        }
        Ok(body)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn decode_params(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes, pos: 0 };
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let len = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&l| l.checked_mul(8).is_some_and(|b| b <= bytes.len()))
            .ok_or_else(|| Error::Format(format!("parameter {name} has an impossible shape {shape:?}")))?;
        let raw = r.take(len * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("params section has trailing bytes".into()));
    }
    Ok(out)
}
