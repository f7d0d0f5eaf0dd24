//! `TCHK` checkpoint files.
//!
//! Layout, all integers little-endian, no padding:
//! magic `TCHK`, `u32` version (1), `u32` tensor count, then per tensor
//! `u32` name length, UTF-8 name, `u32` rank, `rank × u32` dims and
//! `product(dims) × f32` values.
//!
//! Values are narrowed to `f32` on write. Loading widens them back, so a
//! save → load → save cycle is byte-identical while a single save loses the
//! low bits of the `f64` training state. Values beyond `f32` range are an
//! error rather than a silent infinity.

use std::io::{Read, Write};
use std::path::Path;

use super::error::{NumericsError, Result};
use super::tensor::{ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"TCHK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

pub fn write_checkpoint<W: Write>(mut w: W, store: &ParamStore) -> Result<()> {
    let u32_of = |n: usize, what: &str| {
        u32::try_from(n).map_err(|_| NumericsError::Checkpoint(format!("{what} {n} exceeds u32")))
    };
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&u32_of(store.len(), "tensor count")?.to_le_bytes())?;
    for p in store.iter() {
        let name = p.name.as_bytes();
        w.write_all(&u32_of(name.len(), "name length")?.to_le_bytes())?;
        w.write_all(name)?;
        let shape = p.tensor.shape();
        w.write_all(&u32_of(shape.len(), "rank")?.to_le_bytes())?;
        for &d in shape {
            w.write_all(&u32_of(d, "dim")?.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(p.tensor.numel() * 4);
        for &v in p.tensor.data() {
            let narrow = v as f32;
            if !narrow.is_finite() {
                return Err(NumericsError::Checkpoint(format!("{}: value {v} does not fit in f32", p.name)));
            }
            buf.extend_from_slice(&narrow.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| NumericsError::Checkpoint("truncated file".into()))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<NamedTensor>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| NumericsError::Checkpoint("truncated file".into()))?;
    if &magic != MAGIC {
        return Err(NumericsError::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(NumericsError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|_| NumericsError::Checkpoint("truncated name".into()))?;
        let name = String::from_utf8(name)
            .map_err(|_| NumericsError::Checkpoint("name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        let shape = (0..rank)
            .map(|_| read_u32(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let mut raw = vec![0u8; numel * 4];
        r.read_exact(&mut raw)
            .map_err(|_| NumericsError::Checkpoint(format!("truncated values for `{name}`")))?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push(NamedTensor {
            name,
            shape,
            values,
        });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(NumericsError::Checkpoint("trailing bytes".into()));
    }
    Ok(out)
}

pub fn save(path: &Path, store: &ParamStore) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, store)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<NamedTensor>> {
    let bytes =
        std::fs::read(path).map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    read_checkpoint(bytes.as_slice())
}

/// Overwrites the values of `store` from a checkpoint. Every stored parameter
/// must be present with a matching shape.
pub fn restore_into(store: &mut ParamStore, tensors: &[NamedTensor]) -> Result<()> {
    if tensors.len() != store.len() {
        return Err(NumericsError::Checkpoint(format!(
            "checkpoint has {} tensors, model expects {}",
            tensors.len(),
            store.len()
        )));
    }
    for nt in tensors {
        let t = store
            .get_mut(&nt.name)
            .ok_or_else(|| NumericsError::Checkpoint(format!("unexpected tensor `{}`", nt.name)))?;
        if t.shape() != nt.shape.as_slice() {
            return Err(NumericsError::Shape {
                op: "checkpoint restore",
                lhs: t.shape().to_vec(),
                rhs: nt.shape.clone(),
            });
        }
        for (d, &v) in t.data_mut().iter_mut().zip(&nt.values) {
            *d = f64::from(v);
        }
    }
    Ok(())
}

/// Builds a store directly from checkpoint contents (names in file order).
pub fn to_store(tensors: &[NamedTensor]) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    for nt in tensors {
        let t = Tensor::new(
            nt.shape.clone(),
            nt.values.iter().map(|&v| f64::from(v)).collect(),
        )?;
        store.insert(&nt.name, t)?;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_store() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("a.w", Tensor::from_fn(&[2, 3], |i| i as f64 * 0.1 - 0.2))
            .unwrap();
        s.insert("b", Tensor::scalar(1.0 / 3.0)).unwrap();
        s
    }

    #[test]
    fn byte_layout_is_exact() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::new(vec![2], vec![1.0, -2.0]).unwrap())
            .unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &s).unwrap();
        let mut want = b"TCHK".to_vec();
        want.extend(1u32.to_le_bytes());
        want.extend(1u32.to_le_bytes());
        want.extend(1u32.to_le_bytes());
        want.push(b'w');
        want.extend(1u32.to_le_bytes());
        want.extend(2u32.to_le_bytes());
        want.extend(1.0f32.to_le_bytes());
        want.extend((-2.0f32).to_le_bytes());
        assert_eq!(buf, want);
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let store = sample_store();
        let mut first = Vec::new();
        write_checkpoint(&mut first, &store).unwrap();
        let loaded = to_store(&read_checkpoint(first.as_slice()).unwrap()).unwrap();
        let mut second = Vec::new();
        write_checkpoint(&mut second, &loaded).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn refuses_values_beyond_f32() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::new(vec![2], vec![1.0, 1e300]).unwrap()).unwrap();
        let err = write_checkpoint(Vec::new(), &s).unwrap_err();
        assert!(err.to_string().contains('w'), "{err}");
    }

    #[test]
    fn rejects_corrupt_input() {
        assert!(read_checkpoint(&b"XCHK"[..]).is_err());
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &sample_store()).unwrap();
        assert!(read_checkpoint(&buf[..buf.len() - 1]).is_err());
        buf.push(0);
        assert!(read_checkpoint(buf.as_slice()).is_err());
    }

    #[test]
    fn restore_checks_shapes() {
        let mut store = sample_store();
        let mut tensors = read_checkpoint({
            let mut b = Vec::new();
            write_checkpoint(&mut b, &store).unwrap();
            b
        }
        .as_slice())
        .unwrap();
        tensors[0].shape = vec![3, 2];
        assert!(restore_into(&mut store, &tensors).is_err());
    }

    proptest::proptest! {
        #[test]
        fn f32_values_survive_a_round_trip(vals in proptest::collection::vec(proptest::num::f32::NORMAL | proptest::num::f32::ZERO, 1..40)) {
            let mut s = ParamStore::new();
            let data: Vec<f64> = vals.iter().map(|&v| f64::from(v)).collect();
            s.insert("p", Tensor::new(vec![data.len()], data.clone()).unwrap()).unwrap();
            let mut buf = Vec::new();
            write_checkpoint(&mut buf, &s).unwrap();
            let back = read_checkpoint(buf.as_slice()).unwrap();
            proptest::prop_assert_eq!(&back[0].values, &vals);
        }
    }
}
