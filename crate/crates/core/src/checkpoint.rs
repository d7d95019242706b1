//! Binary model checkpoints. Layout is documented in `docs/checkpoint.md`.

use std::io::{Read, Write};
use std::path::Path;

use crate::config::{model_config_text, parse_model_config};
use crate::error::{Error, Result};
use crate::model::HaKanModel;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"HAKANCK1";

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn write_checkpoint<W: Write>(model: &HaKanModel, mut w: W) -> Result<()> {
    let header = model_config_text(model.config());
    w.write_all(MAGIC)?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(header.as_bytes())?;
    let params = model.named_params();
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params {
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[t.rank() as u8])?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_exact<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| bad(format!("truncated checkpoint: {e}")))?;
    Ok(buf)
}

fn read_string<R: Read>(r: &mut R, len: usize) -> Result<String> {
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(|e| bad(format!("truncated checkpoint: {e}")))?;
    String::from_utf8(buf).map_err(|_| bad("non-UTF-8 text in checkpoint"))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<HaKanModel> {
    if &read_exact::<_, 8>(&mut r)? != MAGIC {
        return Err(bad("not a model checkpoint (bad magic)"));
    }
    let hlen = u32::from_le_bytes(read_exact(&mut r)?) as usize;
    let config = parse_model_config(&read_string(&mut r, hlen)?)?;
    let mut model = HaKanModel::zeros(&config)?;
    let expected: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    let count = u32::from_le_bytes(read_exact(&mut r)?) as usize;
    if count != expected.len() {
        return Err(bad(format!(
            "checkpoint holds {count} tensors, configuration implies {}",
            expected.len()
        )));
    }
    let mut seen = Vec::with_capacity(count);
    for _ in 0..count {
        let nlen = u16::from_le_bytes(read_exact(&mut r)?) as usize;
        let name = read_string(&mut r, nlen)?;
        let rank = read_exact::<_, 1>(&mut r)?[0] as usize;
        let shape = (0..rank)
            .map(|_| Ok(u64::from_le_bytes(read_exact(&mut r)?) as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes)
            .map_err(|e| bad(format!("truncated tensor `{name}`: {e}")))?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        model.set_param(&name, Tensor::new(shape, data)?)?;
        if seen.contains(&name) {
            return Err(bad(format!("duplicate tensor `{name}`")));
        }
        seen.push(name);
    }
    Ok(model)
}

pub fn save(model: &HaKanModel, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<HaKanModel> {
    let file = std::fs::File::open(path)
        .map_err(|e| bad(format!("cannot open {}: {e}", path.display())))?;
    read_checkpoint(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn round_trip_is_exact() {
        let cfg = ModelConfig {
            d_model: 8,
            blocks: 2,
            channels: 7,
            inter: false,
            ..ModelConfig::default()
        };
        let model = HaKanModel::new(&cfg, 11).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&model, &mut buf).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, model);
        for ((_, a), (_, b)) in model.named_params().iter().zip(back.named_params()) {
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        assert!(read_checkpoint(&b"NOTACKPT"[..]).is_err());
        let model = HaKanModel::zeros(&ModelConfig { d_model: 4, blocks: 1, ..ModelConfig::default() })
            .unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&model, &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_checkpoint(buf.as_slice()), Err(Error::Checkpoint(_))));
    }
}
