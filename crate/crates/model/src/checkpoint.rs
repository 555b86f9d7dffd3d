//! Versioned binary checkpoints: config followed by the flat parameter array.

use std::path::Path;

use regent_core::codec::{ByteReader, ByteWriter};
use regent_core::{Error, Result};

use crate::config::ModelConfig;
use crate::model::SeqModel;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"REGENTCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(model: &SeqModel) -> Vec<u8> {
    let c = model.config();
    let mut w = ByteWriter::new();
    w.bytes(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.section(|s| {
        for v in [c.n_layers, c.n_heads, c.hidden, c.max_positions, c.max_cont_input, c.n_act_max] {
            s.u64(v as u64);
        }
        s.u64(c.seed);
    });
    w.section(|s| {
        s.u64(model.param_count() as u64);
        s.f64s(model.params());
    });
    w.into_bytes()
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<SeqModel> {
    let mut r = ByteReader::new(bytes);
    r.header(CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    let mut s = r.section()?;
    let mut dim = || -> Result<usize> {
        usize::try_from(s.u64()?).map_err(|_| Error::Format("dimension overflows usize".into()))
    };
    let (n_layers, n_heads, hidden, max_positions, max_cont_input, n_act_max) =
        (dim()?, dim()?, dim()?, dim()?, dim()?, dim()?);
    let config =
        ModelConfig { n_layers, n_heads, hidden, max_positions, max_cont_input, n_act_max, seed: s.u64()? };
    s.finish("checkpoint config")?;
    config.validate()?;
    let mut p = r.section()?;
    let count = p.u64()? as usize;
    if count != config.param_count() {
        return Err(Error::Format(format!(
            "checkpoint holds {count} parameters, config implies {}",
            config.param_count()
        )));
    }
    let params = p.f64s(count)?;
    p.finish("checkpoint parameters")?;
    r.finish("checkpoint")?;
    SeqModel::from_params(config, params)
}

pub fn write_checkpoint(path: &Path, model: &SeqModel) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<SeqModel> {
    decode_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> SeqModel {
        SeqModel::new(ModelConfig {
            n_layers: 1,
            n_heads: 2,
            hidden: 4,
            max_positions: 6,
            max_cont_input: 5,
            n_act_max: 3,
            seed: 42,
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let back = decode_checkpoint(&encode_checkpoint(&m)).unwrap();
        assert_eq!(back.config(), m.config());
        assert!(back.params().iter().zip(m.params()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn corrupt_inputs() {
        let bytes = encode_checkpoint(&model());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(decode_checkpoint(&bad), Err(Error::VersionMismatch { found: 9, .. })));
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        let mut nan = bytes.clone();
        let at = nan.len() - 8;
        nan[at..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(decode_checkpoint(&nan).is_err());
    }
}
