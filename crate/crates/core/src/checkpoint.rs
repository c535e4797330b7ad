//! Versioned binary checkpoint plus a human-readable JSON sidecar.
//!
//! Layout: `FVAE`, u32 version, then tagged sections (`[u8; 4]` tag, u64
//! length, payload) terminated by an empty `DONE` section. All integers and
//! floats are little-endian. Parameter tensors are stored as f32.

use std::io::{Cursor, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::discriminator::{Discriminator, DiscriminatorConfig};
use crate::error::{Error, Result};
use crate::latent::LatentPost;
use crate::multiband::PqmfBank;
use crate::nn::{ParamStore, Tensor};
use crate::vae::{ModelConfig, Vae};

pub const MAGIC: &[u8; 4] = b"FVAE";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub model: Vae<f32>,
    pub discriminator: Option<Discriminator>,
    pub latent: Option<LatentPost>,
}

/// Sidecar contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub format_version: u32,
    pub config: ModelConfig,
    pub parameter_count: usize,
    pub tensors: Vec<(String, Vec<usize>)>,
    pub pqmf_delay: usize,
    pub frame_rate_hz: f64,
    pub has_discriminator: bool,
    pub kept_dims: Option<Vec<usize>>,
    pub controls: Option<usize>,
    pub explained_variance: Option<Vec<f64>>,
}

impl ModelBundle {
    pub fn new(model: Vae<f32>) -> Self {
        Self {
            model,
            discriminator: None,
            latent: None,
        }
    }

    pub fn info(&self) -> CheckpointInfo {
        let m = &self.model;
        CheckpointInfo {
            format_version: VERSION,
            config: m.config.clone(),
            parameter_count: m.params.count(),
            tensors: m.params.tensors.iter().map(|t| (t.name.clone(), t.shape.clone())).collect(),
            pqmf_delay: m.bank.delay(),
            frame_rate_hz: m.frame_rate(),
            has_discriminator: self.discriminator.is_some(),
            kept_dims: self.latent.as_ref().map(|l| l.kept_dims.clone()),
            controls: self.latent.as_ref().map(|l| l.k()),
            explained_variance: self.latent.as_ref().map(|l| l.explained_variance.clone()),
        }
    }
}

fn json<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).expect("serializable")
}

fn section(out: &mut Vec<u8>, tag: &[u8; 4], payload: &[u8]) {
    out.extend_from_slice(tag);
    out.write_u64::<LE>(payload.len() as u64).unwrap();
    out.extend_from_slice(payload);
}

fn write_tensors(params: &ParamStore<f32>) -> Vec<u8> {
    let mut b = Vec::new();
    b.write_u32::<LE>(params.tensors.len() as u32).unwrap();
    for t in &params.tensors {
        b.write_u32::<LE>(t.name.len() as u32).unwrap();
        b.extend_from_slice(t.name.as_bytes());
        b.write_u32::<LE>(t.shape.len() as u32).unwrap();
        for &d in &t.shape {
            b.write_u32::<LE>(d as u32).unwrap();
        }
        for &v in &t.data {
            b.write_f32::<LE>(v).unwrap();
        }
    }
    b
}

fn write_bank(bank: &PqmfBank) -> Vec<u8> {
    let mut b = Vec::new();
    b.write_u32::<LE>(bank.bands as u32).unwrap();
    b.write_f64::<LE>(bank.attenuation_db).unwrap();
    b.write_f64::<LE>(bank.cutoff).unwrap();
    b.write_u32::<LE>(bank.prototype.len() as u32).unwrap();
    for &v in &bank.prototype {
        b.write_f64::<LE>(v).unwrap();
    }
    b
}

pub fn to_bytes(bundle: &ModelBundle) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.write_u32::<LE>(VERSION).unwrap();
    section(&mut out, b"CONF", &json(&bundle.model.config));
    section(&mut out, b"TENS", &write_tensors(&bundle.model.params));
    section(&mut out, b"BANK", &write_bank(&bundle.model.bank));
    if let Some(l) = &bundle.latent {
        section(&mut out, b"LPST", &json(l));
    }
    if let Some(d) = &bundle.discriminator {
        section(&mut out, b"DCFG", &json(&d.config));
        section(&mut out, b"DTNS", &write_tensors(&d.params));
    }
    section(&mut out, b"DONE", &[]);
    out
}

fn truncated<E>(_: E) -> Error {
    Error::Format("checkpoint is truncated".into())
}

fn read_tensors(payload: &[u8]) -> Result<ParamStore<f32>> {
    let mut r = Cursor::new(payload);
    let count = r.read_u32::<LE>().map_err(truncated)?;
    let mut store = ParamStore::default();
    for _ in 0..count {
        let len = r.read_u32::<LE>().map_err(truncated)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let ndim = r.read_u32::<LE>().map_err(truncated)? as usize;
        let shape = (0..ndim)
            .map(|_| r.read_u32::<LE>().map(|d| d as usize).map_err(truncated))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        if n > payload.len() {
            return Err(truncated(()));
        }
        let mut data = vec![0f32; n];
        r.read_f32_into::<LE>(&mut data).map_err(truncated)?;
        store.tensors.push(Tensor { name, shape, data });
    }
    Ok(store)
}

fn read_bank(payload: &[u8]) -> Result<PqmfBank> {
    let mut r = Cursor::new(payload);
    let bands = r.read_u32::<LE>().map_err(truncated)? as usize;
    let atten = r.read_f64::<LE>().map_err(truncated)?;
    let cutoff = r.read_f64::<LE>().map_err(truncated)?;
    let len = r.read_u32::<LE>().map_err(truncated)? as usize;
    if len * 8 > payload.len() {
        return Err(truncated(()));
    }
    let mut proto = vec![0f64; len];
    r.read_f64_into::<LE>(&mut proto).map_err(truncated)?;
    PqmfBank::from_prototype(bands, atten, cutoff, proto)
}

fn parse_json<T: for<'a> Deserialize<'a>>(payload: &[u8], what: &str) -> Result<T> {
    serde_json::from_slice(payload).map_err(|e| Error::Format(format!("{what}: {e}")))
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelBundle> {
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, not a model checkpoint")));
    }
    let version = r.read_u32::<LE>().map_err(truncated)?;
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let (mut config, mut tensors, mut bank, mut latent, mut dcfg, mut dtens) = (None, None, None, None, None, None);
    loop {
        let mut tag = [0u8; 4];
        r.read_exact(&mut tag).map_err(truncated)?;
        let len = r.read_u64::<LE>().map_err(truncated)? as usize;
        let start = r.position() as usize;
        let end = start.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| truncated(()))?;
        let payload = &bytes[start..end];
        r.set_position(end as u64);
        match &tag {
            b"CONF" => config = Some(parse_json::<ModelConfig>(payload, "config")?),
            b"TENS" => tensors = Some(read_tensors(payload)?),
            b"BANK" => bank = Some(read_bank(payload)?),
            b"LPST" => latent = Some(parse_json::<LatentPost>(payload, "latent block")?),
            b"DCFG" => dcfg = Some(parse_json::<DiscriminatorConfig>(payload, "discriminator config")?),
            b"DTNS" => dtens = Some(read_tensors(payload)?),
            b"DONE" => break,
            other => return Err(Error::Format(format!("unknown section {other:?}"))),
        }
    }
    let config = config.ok_or_else(|| Error::Format("missing config section".into()))?;
    let mut model = Vae::new(config, 0)?;
    model.load_params(tensors.ok_or_else(|| Error::Format("missing tensor section".into()))?)?;
    let bank = bank.ok_or_else(|| Error::Format("missing filter-bank section".into()))?;
    if bank.bands != model.config.bands {
        return Err(Error::Format("filter bank does not match band count".into()));
    }
    model.bank = bank;
    let discriminator = match (dcfg, dtens) {
        (Some(c), Some(t)) => {
            let mut d = Discriminator::new(c, 0)?;
            d.load_params(t)?;
            Some(d)
        }
        (None, None) => None,
        _ => return Err(Error::Format("incomplete discriminator sections".into())),
    };
    Ok(ModelBundle {
        model,
        discriminator,
        latent,
    })
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_checkpoint(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&to_bytes(bundle)).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&bundle.info()).expect("serializable");
    std::fs::write(&side, text + "\n").map_err(|e| Error::io(&side, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelBundle> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
