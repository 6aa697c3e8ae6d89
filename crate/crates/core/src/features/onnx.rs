//! Loads the convolutional trunk of an ONNX model (e.g. a VGG export) as a
//! [`SequentialNet`].
//!
//! Only the protobuf fields needed to follow a linear chain are decoded.
//! Supported nodes: `Conv` (square kernel, stride 1, dilation 1, group 1,
//! symmetric zero padding), `Relu`, `MaxPool` (2×2, stride 2),
//! `Add`/`Sub`/`Mul`/`Div` against a per-channel or scalar constant,
//! `Identity`/`Dropout`, and `Constant`. The chain ends at the first node
//! consuming the current activation that is not supported (usually the
//! classifier's `Flatten`), so classifier layers are simply not available.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

use super::conv::{Conv2d, Padding};
use super::net::{Node, Op, SequentialNet};
use super::Extractor;

enum Wire<'a> {
    Varint(u64),
    Fixed64,
    Bytes(&'a [u8]),
    Fixed32(u32),
}

struct Fields<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn malformed(what: &str) -> Error {
    Error::BackendFailure(format!("ONNX model: {what}"))
}

impl<'a> Fields<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn varint(&mut self) -> Result<u64> {
        let mut v = 0u64;
        for shift in (0..64).step_by(7) {
            let b = *self
                .buf
                .get(self.pos)
                .ok_or_else(|| malformed("truncated varint"))?;
            self.pos += 1;
            v |= ((b & 0x7f) as u64) << shift;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(malformed("varint too long"))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| malformed("truncated field"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn next_field(&mut self) -> Result<Option<(u64, Wire<'a>)>> {
        if self.pos >= self.buf.len() {
            return Ok(None);
        }
        let key = self.varint()?;
        let wire = match key & 7 {
            0 => Wire::Varint(self.varint()?),
            1 => {
                self.take(8)?;
                Wire::Fixed64
            }
            2 => {
                let n = self.varint()? as usize;
                Wire::Bytes(self.take(n)?)
            }
            5 => {
                let b = self.take(4)?;
                Wire::Fixed32(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            }
            t => return Err(malformed(&format!("unsupported wire type {t}"))),
        };
        Ok(Some((key >> 3, wire)))
    }
}

fn utf8(b: &[u8]) -> Result<String> {
    String::from_utf8(b.to_vec()).map_err(|_| malformed("non-UTF-8 string"))
}

fn packed_varints(b: &[u8]) -> Result<Vec<i64>> {
    let mut f = Fields::new(b);
    let mut out = Vec::new();
    while f.pos < b.len() {
        out.push(f.varint()? as i64);
    }
    Ok(out)
}

fn packed_floats(b: &[u8]) -> Result<Vec<f32>> {
    if !b.len().is_multiple_of(4) {
        return Err(malformed("packed float length"));
    }
    Ok(b
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

#[derive(Clone, Debug, Default)]
struct TensorData {
    name: String,
    dims: Vec<i64>,
    data: Vec<f32>,
}

fn parse_tensor(b: &[u8]) -> Result<TensorData> {
    let mut t = TensorData::default();
    let mut data_type = 1;
    let mut raw: Option<&[u8]> = None;
    let mut f = Fields::new(b);
    while let Some((no, w)) = f.next_field()? {
        match (no, w) {
            (1, Wire::Varint(v)) => t.dims.push(v as i64),
            (1, Wire::Bytes(p)) => t.dims.extend(packed_varints(p)?),
            (2, Wire::Varint(v)) => data_type = v,
            (4, Wire::Fixed32(v)) => t.data.push(f32::from_bits(v)),
            (4, Wire::Bytes(p)) => t.data.extend(packed_floats(p)?),
            (8, Wire::Bytes(p)) => t.name = utf8(p)?,
            (9, Wire::Bytes(p)) => raw = Some(p),
            _ => {}
        }
    }
    if data_type != 1 {
        return Err(malformed(&format!(
            "tensor `{}` has data type {data_type}; only float32 is supported",
            t.name
        )));
    }
    if let Some(p) = raw {
        t.data = packed_floats(p)?;
    }
    let n: i64 = t.dims.iter().product();
    if n as usize != t.data.len() {
        return Err(malformed(&format!(
            "tensor `{}` has {} values for dims {:?}",
            t.name,
            t.data.len(),
            t.dims
        )));
    }
    Ok(t)
}

#[derive(Clone, Debug)]
enum Attr {
    Int(i64),
    Ints(Vec<i64>),
    Str(String),
    Tensor(TensorData),
    Other,
}

#[derive(Clone, Debug, Default)]
struct NodeData {
    inputs: Vec<String>,
    outputs: Vec<String>,
    op_type: String,
    attrs: HashMap<String, Attr>,
}

fn parse_attr(b: &[u8]) -> Result<(String, Attr)> {
    let mut name = String::new();
    let mut attr = Attr::Other;
    let mut ints = Vec::new();
    let mut f = Fields::new(b);
    while let Some((no, w)) = f.next_field()? {
        match (no, w) {
            (1, Wire::Bytes(p)) => name = utf8(p)?,
            (3, Wire::Varint(v)) => attr = Attr::Int(v as i64),
            (4, Wire::Bytes(p)) => attr = Attr::Str(utf8(p)?),
            (5, Wire::Bytes(p)) => attr = Attr::Tensor(parse_tensor(p)?),
            (8, Wire::Varint(v)) => ints.push(v as i64),
            (8, Wire::Bytes(p)) => ints.extend(packed_varints(p)?),
            _ => {}
        }
    }
    if !ints.is_empty() {
        attr = Attr::Ints(ints);
    }
    Ok((name, attr))
}

fn parse_node(b: &[u8]) -> Result<NodeData> {
    let mut n = NodeData::default();
    let mut f = Fields::new(b);
    while let Some((no, w)) = f.next_field()? {
        match (no, w) {
            (1, Wire::Bytes(p)) => n.inputs.push(utf8(p)?),
            (2, Wire::Bytes(p)) => n.outputs.push(utf8(p)?),
            (4, Wire::Bytes(p)) => n.op_type = utf8(p)?,
            (5, Wire::Bytes(p)) => {
                let (k, v) = parse_attr(p)?;
                n.attrs.insert(k, v);
            }
            _ => {}
        }
    }
    Ok(n)
}

struct Graph {
    nodes: Vec<NodeData>,
    initializers: HashMap<String, TensorData>,
    inputs: Vec<String>,
}

fn parse_value_info_name(b: &[u8]) -> Result<String> {
    let mut f = Fields::new(b);
    while let Some((no, w)) = f.next_field()? {
        if let (1, Wire::Bytes(p)) = (no, w) {
            return utf8(p);
        }
    }
    Err(malformed("graph input without a name"))
}

fn parse_graph(b: &[u8]) -> Result<Graph> {
    let mut g = Graph {
        nodes: Vec::new(),
        initializers: HashMap::new(),
        inputs: Vec::new(),
    };
    let mut f = Fields::new(b);
    while let Some((no, w)) = f.next_field()? {
        match (no, w) {
            (1, Wire::Bytes(p)) => g.nodes.push(parse_node(p)?),
            (5, Wire::Bytes(p)) => {
                let t = parse_tensor(p)?;
                g.initializers.insert(t.name.clone(), t);
            }
            (11, Wire::Bytes(p)) => g.inputs.push(parse_value_info_name(p)?),
            _ => {}
        }
    }
    Ok(g)
}

fn parse_model(bytes: &[u8]) -> Result<Graph> {
    let mut f = Fields::new(bytes);
    while let Some((no, w)) = f.next_field()? {
        if let (7, Wire::Bytes(p)) = (no, w) {
            return parse_graph(p);
        }
    }
    Err(malformed("no graph"))
}

fn ints_attr(n: &NodeData, key: &str) -> Option<Vec<i64>> {
    match n.attrs.get(key) {
        Some(Attr::Ints(v)) => Some(v.clone()),
        Some(Attr::Int(v)) => Some(vec![*v]),
        _ => None,
    }
}

/// Tries to turn one node into an op; `None` ends the chain.
fn convert(
    n: &NodeData,
    current: &str,
    channels: usize,
    consts: &HashMap<String, TensorData>,
) -> Result<Option<(Op, usize)>> {
    let op = match n.op_type.as_str() {
        "Relu" => Op::Relu,
        "Identity" | "Dropout" => Op::Identity,
        "MaxPool" => {
            let k = ints_attr(n, "kernel_shape").unwrap_or_default();
            let s = ints_attr(n, "strides").unwrap_or_else(|| vec![1, 1]);
            let p = ints_attr(n, "pads").unwrap_or_else(|| vec![0; 4]);
            if k != [2, 2] || s != [2, 2] || p.iter().any(|&v| v != 0) {
                return Ok(None);
            }
            Op::MaxPool2
        }
        "Conv" => {
            let Some(w) = n.inputs.get(1).and_then(|k| consts.get(k)) else {
                return Ok(None);
            };
            if w.dims.len() != 4 || w.dims[2] != w.dims[3] || w.dims[1] as usize != channels {
                return Ok(None);
            }
            let (outs, k) = (w.dims[0] as usize, w.dims[2] as usize);
            let ones = |key| ints_attr(n, key).is_none_or(|v| v.iter().all(|&x| x == 1));
            let group_ok = matches!(n.attrs.get("group"), None | Some(Attr::Int(1)));
            if !ones("strides") || !ones("dilations") || !group_ok {
                return Ok(None);
            }
            let pad = match (n.attrs.get("auto_pad"), ints_attr(n, "pads")) {
                (Some(Attr::Str(s)), _) if s == "SAME_UPPER" || s == "SAME_LOWER" => {
                    if k % 2 == 0 {
                        return Ok(None);
                    }
                    k / 2
                }
                (Some(Attr::Str(s)), _) if s != "NOTSET" && s != "VALID" => return Ok(None),
                (_, Some(p)) if p.iter().all(|&v| v == p[0]) => p[0] as usize,
                (_, None) => 0,
                _ => return Ok(None),
            };
            let bias = match n.inputs.get(2).filter(|s| !s.is_empty()) {
                Some(b) => match consts.get(b) {
                    Some(t) => t.data.clone(),
                    None => return Ok(None),
                },
                None => vec![0.0; outs],
            };
            Op::Conv(Conv2d::new(
                outs,
                channels,
                k,
                pad,
                Padding::Zero,
                w.data.clone(),
                bias,
            )?)
        }
        "Add" | "Sub" | "Mul" | "Div" => {
            // Only `x ∘ const` with x the running activation.
            if n.inputs.first().map(String::as_str) != Some(current) {
                return Ok(None);
            }
            let Some(c) = n.inputs.get(1).and_then(|k| consts.get(k)) else {
                return Ok(None);
            };
            if c.data.len() != 1 && c.data.len() != channels {
                return Ok(None);
            }
            let ones = vec![1.0; c.data.len()];
            let zeros = vec![0.0; c.data.len()];
            let (scale, shift) = match n.op_type.as_str() {
                "Add" => (ones, c.data.clone()),
                "Sub" => (ones, c.data.iter().map(|v| -v).collect()),
                "Mul" => (c.data.clone(), zeros),
                _ => {
                    if c.data.contains(&0.0) {
                        return Ok(None);
                    }
                    (c.data.iter().map(|v| 1.0 / v).collect(), zeros)
                }
            };
            Op::ChannelAffine { scale, shift }
        }
        _ => return Ok(None),
    };
    let out_channels = match &op {
        Op::Conv(c) => c.out_channels(),
        _ => channels,
    };
    Ok(Some((op, out_channels)))
}

/// Builds the longest supported chain starting at the graph's data input.
pub fn parse_net(bytes: &[u8]) -> Result<SequentialNet> {
    let graph = parse_model(bytes)?;
    let mut consts = graph.initializers;
    let mut current = graph
        .inputs
        .iter()
        .find(|i| !consts.contains_key(*i))
        .cloned()
        .ok_or_else(|| malformed("no data input"))?;
    let mut channels = 3;
    let mut nodes = Vec::new();
    for n in &graph.nodes {
        if n.op_type == "Constant" {
            if let (Some(out), Some(Attr::Tensor(t))) = (n.outputs.first(), n.attrs.get("value")) {
                consts.insert(out.clone(), t.clone());
            }
            continue;
        }
        if !n.inputs.contains(&current) {
            continue;
        }
        let Some((op, out_ch)) = convert(n, &current, channels, &consts)? else {
            break;
        };
        let Some(out) = n.outputs.first() else {
            break;
        };
        nodes.push(Node {
            name: out.clone(),
            op,
        });
        current = out.clone();
        channels = out_ch;
    }
    if nodes.is_empty() {
        return Err(malformed("no supported layers after the input"));
    }
    Ok(SequentialNet::new(3, nodes))
}

/// Reads an ONNX file into an extractor whose layers are the node outputs.
pub fn load_extractor(path: &Path, backend_id: &str) -> Result<Extractor> {
    let bytes = std::fs::read(path).map_err(|e| Error::read(path, e))?;
    Ok(Extractor::from_net(backend_id, parse_net(&bytes)?))
}
