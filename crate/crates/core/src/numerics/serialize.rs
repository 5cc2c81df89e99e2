//! On-disk tensor format.
//!
//! ```text
//! MVTENSOR 1\n
//! dtype = f64\n            (f64 or f32)
//! shape = [2, 3]\n
//! end\n
//! <product(shape) little-endian IEEE-754 values, row-major>
//! ```

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &str = "MVTENSOR 1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F64,
    F32,
}

impl DType {
    fn name(self) -> &'static str {
        match self {
            DType::F64 => "f64",
            DType::F32 => "f32",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "f64" => Ok(DType::F64),
            "f32" => Ok(DType::F32),
            other => Err(Error::Format(format!("unknown dtype {other:?}"))),
        }
    }
}

pub fn write_tensor(w: &mut impl Write, t: &Tensor, dtype: DType) -> Result<()> {
    let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
    write!(
        w,
        "{MAGIC}\ndtype = {}\nshape = [{}]\nend\n",
        dtype.name(),
        dims.join(", ")
    )?;
    let mut buf = Vec::with_capacity(t.numel() * 8);
    for &v in t.data() {
        match dtype {
            DType::F64 => buf.extend_from_slice(&v.to_le_bytes()),
            DType::F32 => buf.extend_from_slice(&(v as f32).to_le_bytes()),
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_tensor(r: &mut impl BufRead) -> Result<Tensor> {
    let mut line = String::new();
    let mut next = |line: &mut String| -> Result<String> {
        line.clear();
        if r.read_line(line)? == 0 {
            return Err(Error::Format("truncated header".into()));
        }
        Ok(line.trim_end_matches(['\n', '\r']).to_string())
    };
    if next(&mut line)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let mut dtype = None;
    let mut shape: Option<Vec<usize>> = None;
    loop {
        let l = next(&mut line)?;
        if l == "end" {
            break;
        }
        let (k, v) = l
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("bad header line {l:?}")))?;
        match k.trim() {
            "dtype" => dtype = Some(DType::parse(v.trim())?),
            "shape" => {
                let inner = v
                    .trim()
                    .strip_prefix('[')
                    .and_then(|s| s.strip_suffix(']'))
                    .ok_or_else(|| Error::Format(format!("bad shape {v:?}")))?;
                let dims = inner
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<usize>().map_err(|e| Error::Format(e.to_string())))
                    .collect::<Result<Vec<_>>>()?;
                shape = Some(dims);
            }
            // unknown keys are ignored for forward compatibility
            _ => {}
        }
    }
    let dtype = dtype.ok_or_else(|| Error::Format("missing dtype".into()))?;
    let shape = shape.ok_or_else(|| Error::Format("missing shape".into()))?;
    let n: usize = shape.iter().product();
    let width = match dtype {
        DType::F64 => 8,
        DType::F32 => 4,
    };
    let mut bytes = vec![0u8; n * width];
    r.read_exact(&mut bytes)?;
    let data = match dtype {
        DType::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        DType::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
    };
    Tensor::new(&shape, data)
}

pub fn save_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_tensor(&mut f, t, DType::F64)?;
    f.flush()?;
    Ok(())
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    read_tensor(&mut r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_stable() {
        let t = Tensor::new(&[2], vec![1.0, -2.5]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t, DType::F64).unwrap();
        let header = b"MVTENSOR 1\ndtype = f64\nshape = [2]\nend\n";
        assert_eq!(&buf[..header.len()], header);
        assert_eq!(&buf[header.len()..header.len() + 8], &1.0f64.to_le_bytes());
        assert_eq!(buf.len(), header.len() + 16);
    }

    #[test]
    fn rejects_truncated_payload() {
        let mut bytes = b"MVTENSOR 1\ndtype = f64\nshape = [3]\nend\n".to_vec();
        bytes.extend_from_slice(&[0u8; 8]);
        assert!(read_tensor(&mut &bytes[..]).is_err());
    }

    proptest! {
        #[test]
        fn f64_round_trip_is_exact(
            dims in prop::collection::vec(1usize..4, 1..4),
            seed in any::<u64>(),
        ) {
            let n: usize = dims.iter().product();
            let data: Vec<f64> = (0..n).map(|i| ((seed ^ i as u64) as f64).sin() * 1e3).collect();
            let t = Tensor::new(&dims, data).unwrap();
            let mut buf = Vec::new();
            write_tensor(&mut buf, &t, DType::F64).unwrap();
            let back = read_tensor(&mut &buf[..]).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
