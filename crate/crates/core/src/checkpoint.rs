//! Model checkpoint file format.
//!
//! Flat binary layout, little-endian throughout:
//!
//! ```text
//! magic    b"MCN1"
//! config   u64 length + UTF-8 config echo (key=value lines)
//! dims     7 x u64: in_dim, n_classes, n_motifs, k_max, c_width,
//!          self_attention (0/1), n_layers
//!          then n_layers x u64 head counts, (n_layers-1) x u64 hidden widths
//! tensors  u64 count, then per tensor: u64 name length + name,
//!          u64 rank, rank x u64 shape, f64 data
//! ```

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use crate::error::{McnError, Result};
use crate::model::{ModelDims, ModelParams};

const MAGIC: &[u8; 4] = b"MCN1";

fn push_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_str(buf: &mut Vec<u8>, s: &str) {
    push_u64(buf, s.len() as u64);
    buf.extend_from_slice(s.as_bytes());
}

fn push_tensor(buf: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    push_str(buf, name);
    push_u64(buf, shape.len() as u64);
    for &d in shape {
        push_u64(buf, d as u64);
    }
    debug_assert_eq!(shape.iter().product::<usize>(), data.len());
    for &v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_u64(cur: &mut Cursor<&[u8]>) -> Result<u64> {
    let mut b = [0u8; 8];
    cur.read_exact(&mut b)
        .map_err(|_| McnError::Checkpoint("truncated file".into()))?;
    Ok(u64::from_le_bytes(b))
}

fn read_str(cur: &mut Cursor<&[u8]>) -> Result<String> {
    let len = read_u64(cur)? as usize;
    let mut b = vec![0u8; len];
    cur.read_exact(&mut b)
        .map_err(|_| McnError::Checkpoint("truncated string".into()))?;
    String::from_utf8(b).map_err(|_| McnError::Checkpoint("bad UTF-8".into()))
}

fn read_tensor(cur: &mut Cursor<&[u8]>) -> Result<(String, Vec<usize>, Vec<f64>)> {
    let name = read_str(cur)?;
    let rank = read_u64(cur)? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u64(cur)? as usize);
    }
    let len: usize = shape.iter().product();
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        let mut b = [0u8; 8];
        cur.read_exact(&mut b)
            .map_err(|_| McnError::Checkpoint(format!("truncated tensor {name}")))?;
        data.push(f64::from_le_bytes(b));
    }
    Ok((name, shape, data))
}

pub fn save(path: &Path, config_echo: &str, dims: &ModelDims, params: &ModelParams) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    push_str(&mut buf, config_echo);
    for v in [
        dims.in_dim,
        dims.n_classes,
        dims.n_motifs,
        dims.k_max,
        dims.c_width,
        dims.self_attention as usize,
        dims.heads.len(),
    ] {
        push_u64(&mut buf, v as u64);
    }
    for &h in &dims.heads {
        push_u64(&mut buf, h as u64);
    }
    for &h in &dims.hidden {
        push_u64(&mut buf, h as u64);
    }

    let mut tensors: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
    for (l, layer) in params.layers.iter().enumerate() {
        for (h, head) in layer.heads.iter().enumerate() {
            tensors.push((
                format!("layer{l}.head{h}.w"),
                vec![head.w.rows, head.w.cols],
                head.w.data.clone(),
            ));
            tensors.push((
                format!("layer{l}.head{h}.a_src"),
                vec![head.a_src.len()],
                head.a_src.clone(),
            ));
            tensors.push((
                format!("layer{l}.head{h}.a_dst"),
                vec![head.a_dst.len()],
                head.a_dst.clone(),
            ));
        }
        let p = &layer.policy;
        tensors.push((
            format!("layer{l}.policy.w_f"),
            vec![p.w_f.rows, p.w_f.cols],
            p.w_f.data.clone(),
        ));
        tensors.push((format!("layer{l}.policy.b_f"), vec![p.b_f.len()], p.b_f.clone()));
        tensors.push((
            format!("layer{l}.policy.w_fp"),
            vec![p.w_fp.rows, p.w_fp.cols],
            p.w_fp.data.clone(),
        ));
        tensors.push((
            format!("layer{l}.policy.b_fp"),
            vec![p.b_fp.len()],
            p.b_fp.clone(),
        ));
    }
    push_u64(&mut buf, tensors.len() as u64);
    for (name, shape, data) in &tensors {
        push_tensor(&mut buf, name, shape, data);
    }
    fs::write(path, buf).map_err(|e| McnError::io(path, e))
}

pub struct Checkpoint {
    pub config_echo: String,
    pub dims: ModelDims,
    pub params: ModelParams,
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| McnError::io(path, e))?;
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(McnError::Checkpoint("bad magic".into()));
    }
    let mut cur = Cursor::new(&bytes[4..]);
    let config_echo = read_str(&mut cur)?;
    let in_dim = read_u64(&mut cur)? as usize;
    let n_classes = read_u64(&mut cur)? as usize;
    let n_motifs = read_u64(&mut cur)? as usize;
    let k_max = read_u64(&mut cur)? as usize;
    let c_width = read_u64(&mut cur)? as usize;
    let self_attention = read_u64(&mut cur)? != 0;
    let n_layers = read_u64(&mut cur)? as usize;
    let mut heads = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        heads.push(read_u64(&mut cur)? as usize);
    }
    let mut hidden = Vec::with_capacity(n_layers.saturating_sub(1));
    for _ in 0..n_layers.saturating_sub(1) {
        hidden.push(read_u64(&mut cur)? as usize);
    }
    let dims = ModelDims {
        in_dim,
        n_classes,
        hidden,
        heads,
        n_motifs,
        k_max,
        c_width,
        self_attention,
    };

    // Rebuild the parameter skeleton then overwrite from the tensor table.
    let mut params = ModelParams::init(&dims, 0);
    let n_tensors = read_u64(&mut cur)? as usize;
    let mut read = std::collections::HashMap::new();
    for _ in 0..n_tensors {
        let (name, shape, data) = read_tensor(&mut cur)?;
        read.insert(name, (shape, data));
    }
    let mut take = |name: String, want_shape: &[usize]| -> Result<Vec<f64>> {
        let (shape, data) = read
            .remove(&name)
            .ok_or_else(|| McnError::Checkpoint(format!("missing tensor {name}")))?;
        if shape != want_shape {
            return Err(McnError::Checkpoint(format!(
                "tensor {name} has shape {shape:?}, expected {want_shape:?}"
            )));
        }
        Ok(data)
    };
    for (l, layer) in params.layers.iter_mut().enumerate() {
        for (h, head) in layer.heads.iter_mut().enumerate() {
            head.w.data = take(
                format!("layer{l}.head{h}.w"),
                &[head.w.rows, head.w.cols],
            )?;
            head.a_src = take(format!("layer{l}.head{h}.a_src"), &[head.a_src.len()])?;
            head.a_dst = take(format!("layer{l}.head{h}.a_dst"), &[head.a_dst.len()])?;
        }
        let p = &mut layer.policy;
        p.w_f.data = take(format!("layer{l}.policy.w_f"), &[p.w_f.rows, p.w_f.cols])?;
        p.b_f = take(format!("layer{l}.policy.b_f"), &[p.b_f.len()])?;
        p.w_fp.data = take(format!("layer{l}.policy.w_fp"), &[p.w_fp.rows, p.w_fp.cols])?;
        p.b_fp = take(format!("layer{l}.policy.b_fp"), &[p.b_fp.len()])?;
    }
    if !read.is_empty() {
        return Err(McnError::Checkpoint(format!(
            "unexpected extra tensors: {:?}",
            read.keys().collect::<Vec<_>>()
        )));
    }
    Ok(Checkpoint {
        config_echo,
        dims,
        params,
    })
}
