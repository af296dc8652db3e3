//! Binary dump of a cost volume: little-endian header
//! `magic, version, width, height, k, u_min, u_max, v_min, v_max` followed by
//! one `count` per pixel and `count` records of `(du: i32, dv: i32, score: f64)`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Candidate, SearchWindow, TopKCostVolume};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DUMP_MAGIC: [u8; 4] = *b"RFCV";
pub const DUMP_VERSION: u32 = 1;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_cost_volume<T: Scalar>(cv: &TopKCostVolume<T>, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    let win = cv.window();
    let mut buf = Vec::new();
    buf.extend_from_slice(&DUMP_MAGIC);
    for v in [DUMP_VERSION, cv.width() as u32, cv.height() as u32, cv.k() as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in [win.u_min, win.u_max, win.v_min, win.v_max] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for list in cv.lists() {
        buf.extend_from_slice(&(list.len() as u32).to_le_bytes());
        for c in list {
            buf.extend_from_slice(&c.du.to_le_bytes());
            buf.extend_from_slice(&c.dv.to_le_bytes());
            buf.extend_from_slice(&c.score.as_f64().to_le_bytes());
        }
    }
    out.write_all(&buf).map_err(io_err(path))?;
    out.flush().map_err(io_err(path))
}

pub fn read_cost_volume<T: Scalar>(path: &Path) -> Result<TopKCostVolume<T>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut bytes = Vec::new();
    BufReader::new(file).read_to_end(&mut bytes).map_err(io_err(path))?;
    let bad = |m: &str| Error::Codec {
        path: path.to_path_buf(),
        message: m.to_string(),
    };
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated cost volume"))?;
        pos += n;
        Ok(s)
    };
    if take(4)? != DUMP_MAGIC {
        return Err(bad("not a cost volume dump"));
    }
    let mut u32s = [0u32; 4];
    for v in &mut u32s {
        *v = u32::from_le_bytes(take(4)?.try_into().unwrap());
    }
    if u32s[0] != DUMP_VERSION {
        return Err(bad("unsupported cost volume version"));
    }
    let mut i32s = [0i32; 4];
    for v in &mut i32s {
        *v = i32::from_le_bytes(take(4)?.try_into().unwrap());
    }
    let window = SearchWindow::new(i32s[0], i32s[1], i32s[2], i32s[3])?;
    let (w, h, k) = (u32s[1] as usize, u32s[2] as usize, u32s[3] as usize);
    let mut lists = Vec::with_capacity(w * h);
    for _ in 0..w * h {
        let n = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let mut list = Vec::with_capacity(n);
        for _ in 0..n {
            let du = i32::from_le_bytes(take(4)?.try_into().unwrap());
            let dv = i32::from_le_bytes(take(4)?.try_into().unwrap());
            let score = f64::from_le_bytes(take(8)?.try_into().unwrap());
            list.push(Candidate {
                du,
                dv,
                score: T::lit(score),
            });
        }
        lists.push(list);
    }
    TopKCostVolume::from_lists(w, h, k, window, lists)
}
