//! Encoder checkpoints as a concatenation of UEMB records.
//!
//! Each parameter tensor is one `f64` UEMB record whose row ids are
//! `"<name>:<row>"`. Records appear in this order:
//!
//! | name            | shape              | present        |
//! |-----------------|--------------------|----------------|
//! | `w1`            | `d_in x hidden`    | always         |
//! | `b1`            | `1 x hidden`       | always         |
//! | `w2`            | `hidden x d_out`   | always         |
//! | `b2`            | `1 x d_out`        | always         |
//! | `adapter.a`     | `hidden x rank`    | with adapter   |
//! | `adapter.b`     | `rank x d_out`     | with adapter   |
//! | `adapter.alpha` | `1 x 1`            | with adapter   |
//!
//! The encoding is a pure function of the parameters, so equal parameters
//! give byte-identical files.

use std::fs;
use std::path::Path;

use crate::dataio::uemb::{decode_record, encode_record, Dtype};
use crate::encoder::{LowRankAdapter, ToyEncoder};
use crate::error::{Error, Result};
use crate::tensor::{DenseMatrix, RowVector};

fn section(name: &str, m: &DenseMatrix, out: &mut Vec<u8>) -> Result<()> {
    if m.rows() == 0 || m.cols() == 0 {
        return Err(Error::shape(format!("checkpoint tensor {name} is empty")));
    }
    let ids: Vec<String> = (0..m.rows()).map(|r| format!("{name}:{r}")).collect();
    out.extend(encode_record(&ids, m, Dtype::F64)?);
    Ok(())
}

fn row(v: &RowVector) -> DenseMatrix {
    DenseMatrix::from_raw(1, v.dim(), v.to_vec())
}

pub fn encode_checkpoint(enc: &ToyEncoder) -> Result<Vec<u8>> {
    enc.validate()?;
    let mut out = Vec::new();
    section("w1", &enc.w1, &mut out)?;
    section("b1", &row(&enc.b1), &mut out)?;
    section("w2", &enc.w2, &mut out)?;
    section("b2", &row(&enc.b2), &mut out)?;
    if let Some(ad) = &enc.adapter {
        section("adapter.a", &ad.a, &mut out)?;
        section("adapter.b", &ad.b, &mut out)?;
        section(
            "adapter.alpha",
            &DenseMatrix::from_raw(1, 1, vec![ad.alpha]),
            &mut out,
        )?;
    }
    Ok(out)
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<ToyEncoder> {
    let mut sections: Vec<(String, DenseMatrix)> = Vec::new();
    let mut pos = 0;
    while pos < buf.len() {
        let (emb, _, used) = decode_record(&buf[pos..])?;
        pos += used;
        let (ids, m) = emb.into_parts();
        let name = ids
            .first()
            .and_then(|id| id.rsplit_once(':'))
            .map(|(n, _)| n.to_string())
            .ok_or_else(|| Error::SizeMismatch("empty checkpoint section".into()))?;
        for (r, id) in ids.iter().enumerate() {
            if *id != format!("{name}:{r}") {
                return Err(Error::SizeMismatch(format!(
                    "unexpected row id {id:?} in section {name}"
                )));
            }
        }
        sections.push((name, m));
    }
    let names: Vec<String> = sections.iter().map(|(n, _)| n.clone()).collect();
    let base = ["w1", "b1", "w2", "b2"];
    let with_adapter = [
        "w1",
        "b1",
        "w2",
        "b2",
        "adapter.a",
        "adapter.b",
        "adapter.alpha",
    ];
    if names != base && names != with_adapter {
        return Err(Error::SizeMismatch(format!(
            "unexpected checkpoint sections {names:?}"
        )));
    }
    let mut it = sections.into_iter().map(|(_, m)| m);
    let mut next = || it.next().expect("section count checked");
    let w1 = next();
    let b1 = RowVector::new(next().into_values())?;
    let w2 = next();
    let b2 = RowVector::new(next().into_values())?;
    let enc = ToyEncoder::new(w1, b1, w2, b2)?;
    if names.len() == with_adapter.len() {
        let a = next();
        let b = next();
        let alpha = next().values()[0];
        if alpha.is_nan() || alpha <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "adapter alpha {alpha} in checkpoint"
            )));
        }
        return enc.with_adapter(LowRankAdapter { a, b, alpha });
    }
    Ok(enc)
}

pub fn save_checkpoint(path: impl AsRef<Path>, enc: &ToyEncoder) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(enc)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ToyEncoder> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_with_and_without_adapter() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = ToyEncoder::random(3, 4, 2, &mut rng);
        let bytes = encode_checkpoint(&enc).unwrap();
        assert_eq!(&bytes[..4], b"UEMB");
        assert_eq!(decode_checkpoint(&bytes).unwrap(), enc);

        let ad = LowRankAdapter::init(4, 2, 2, 32.0, &mut rng).unwrap();
        let enc = enc.with_adapter(ad).unwrap();
        let bytes = encode_checkpoint(&enc).unwrap();
        assert_eq!(decode_checkpoint(&bytes).unwrap(), enc);
        assert_eq!(
            encode_checkpoint(&decode_checkpoint(&bytes).unwrap()).unwrap(),
            bytes
        );
    }

    #[test]
    fn rejects_damaged_files() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let enc = ToyEncoder::random(3, 4, 2, &mut rng);
        let bytes = encode_checkpoint(&enc).unwrap();
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        let first = decode_record(&bytes).unwrap().2;
        assert!(decode_checkpoint(&bytes[first..]).is_err());
        assert!(decode_checkpoint(&[]).is_err());
    }
}
