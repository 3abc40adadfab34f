//! Versioned binary checkpoint: config echo plus named flat parameter
//! arrays, all little-endian. Round-trip load is bit-exact.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::net::ModelConfig;
use crate::numerics::{ParamSet, Tensor};

const MAGIC: &[u8; 4] = b"ECGM";
const VERSION: u32 = 1;

fn config_to_kv(cfg: &ModelConfig) -> String {
    format!(
        "image_size={}\npatch_size={}\nembed_dim={}\nenc_blocks={}\ndec_dim={}\ndec_blocks={}\ndisc_dim={}\ndisc_blocks={}\nheads={}\nmlp_ratio={}\nln_eps={}\n",
        cfg.image_size,
        cfg.patch_size,
        cfg.embed_dim,
        cfg.enc_blocks,
        cfg.dec_dim,
        cfg.dec_blocks,
        cfg.disc_dim,
        cfg.disc_blocks,
        cfg.heads,
        cfg.mlp_ratio,
        cfg.ln_eps
    )
}

fn config_from_kv(text: &str) -> Result<ModelConfig> {
    let mut cfg = ModelConfig::default();
    for line in text.lines() {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("bad config line {line:?}")))?;
        let int = || -> Result<usize> {
            value
                .parse()
                .map_err(|_| Error::Parse(format!("bad value for {key}: {value:?}")))
        };
        match key {
            "image_size" => cfg.image_size = int()?,
            "patch_size" => cfg.patch_size = int()?,
            "embed_dim" => cfg.embed_dim = int()?,
            "enc_blocks" => cfg.enc_blocks = int()?,
            "dec_dim" => cfg.dec_dim = int()?,
            "dec_blocks" => cfg.dec_blocks = int()?,
            "disc_dim" => cfg.disc_dim = int()?,
            "disc_blocks" => cfg.disc_blocks = int()?,
            "heads" => cfg.heads = int()?,
            "mlp_ratio" => cfg.mlp_ratio = int()?,
            "ln_eps" => {
                cfg.ln_eps = value
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad value for ln_eps: {value:?}")))?;
            }
            _ => return Err(Error::Parse(format!("unknown config key {key:?}"))),
        }
    }
    Ok(cfg)
}

fn write_param_set(out: &mut Vec<u8>, params: &ParamSet) {
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Parse("checkpoint truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn read_param_set(r: &mut Reader) -> Result<ParamSet> {
    let count = r.u32()? as usize;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Parse("non-utf8 parameter name".into()))?;
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
        }
        params.insert(&name, Tensor::new(shape, data)?);
    }
    Ok(params)
}

pub fn save_checkpoint(
    path: &Path,
    cfg: &ModelConfig,
    generator: &ParamSet,
    discriminator: &ParamSet,
) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let kv = config_to_kv(cfg);
    out.extend_from_slice(&(kv.len() as u32).to_le_bytes());
    out.extend_from_slice(kv.as_bytes());
    write_param_set(&mut out, generator);
    write_param_set(&mut out, discriminator);
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ParamSet, ParamSet)> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
    };
    if r.take(4)? != MAGIC {
        return Err(Error::Parse("not a model checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Parse(format!("unsupported checkpoint version {version}")));
    }
    let kv_len = r.u32()? as usize;
    let kv = std::str::from_utf8(r.take(kv_len)?)
        .map_err(|_| Error::Parse("non-utf8 config echo".into()))?;
    let cfg = config_from_kv(kv)?;
    let generator = read_param_set(&mut r)?;
    let discriminator = read_param_set(&mut r)?;
    Ok((cfg, generator, discriminator))
}
