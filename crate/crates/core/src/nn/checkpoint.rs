//! `TGM1` checkpoints: magic, u32 layer count, then per layer the weight
//! shape (u32 rows, u32 cols) and values, followed by the bias length (u32)
//! and values. All numbers little-endian, values as `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::layers::DenseLayer;
use super::tensor::Tensor2;
use crate::error::{Error, Result};

const MODEL_MAGIC: &[u8; 4] = b"TGM1";

pub fn write_checkpoint(layers: &[DenseLayer], writer: impl Write) -> Result<()> {
    let mut w = BufWriter::new(writer);
    w.write_all(MODEL_MAGIC)?;
    w.write_u32::<LittleEndian>(layers.len() as u32)?;
    for layer in layers {
        w.write_u32::<LittleEndian>(layer.weight.rows() as u32)?;
        w.write_u32::<LittleEndian>(layer.weight.cols() as u32)?;
        for &v in layer.weight.data() {
            w.write_f64::<LittleEndian>(v)?;
        }
        w.write_u32::<LittleEndian>(layer.bias.cols() as u32)?;
        for &v in layer.bias.data() {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(reader: impl Read) -> Result<Vec<DenseLayer>> {
    let mut r = BufReader::new(reader);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(Error::Format(format!("bad model magic {magic:?}")));
    }
    let count = r.read_u32::<LittleEndian>()? as usize;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let rows = r.read_u32::<LittleEndian>()? as usize;
        let cols = r.read_u32::<LittleEndian>()? as usize;
        let mut weight = vec![0.0; rows * cols];
        r.read_f64_into::<LittleEndian>(&mut weight)?;
        let len = r.read_u32::<LittleEndian>()? as usize;
        let mut bias = vec![0.0; len];
        r.read_f64_into::<LittleEndian>(&mut bias)?;
        layers.push(DenseLayer::new(
            Tensor2::from_vec(rows, cols, weight)?,
            Tensor2::from_vec(1, len, bias)?,
        )?);
    }
    Ok(layers)
}

pub fn save_checkpoint(layers: &[DenseLayer], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(layers, file)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Vec<DenseLayer>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn roundtrip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let layers = vec![DenseLayer::init(3, 4, &mut rng), DenseLayer::init(4, 1, &mut rng)];
        let mut buf = Vec::new();
        write_checkpoint(&layers, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"TGM1");
        assert_eq!(buf.len(), 8 + (8 + 12 * 8 + 4 + 4 * 8) + (8 + 4 * 8 + 4 + 8));
        assert_eq!(read_checkpoint(buf.as_slice()).unwrap(), layers);
        buf[3] = b'2';
        assert!(read_checkpoint(buf.as_slice()).is_err());
    }
}
