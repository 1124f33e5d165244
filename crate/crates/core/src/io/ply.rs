//! Minimal PLY support: `vertex` elements with float `x y z`, ascii or
//! binary little-endian. Other vertex properties are skipped on load.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scene::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Ascii,
    BinaryLe,
}

#[derive(Debug, Clone, Copy)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

struct Element {
    name: String,
    count: usize,
    props: Vec<(String, Scalar)>,
}

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_ply_from(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_ply_from<R: BufRead>(mut r: R) -> Result<PointCloud> {
    let mut line = String::new();
    let next_line = |r: &mut R, line: &mut String| -> Result<()> {
        line.clear();
        let n = r.read_line(line).map_err(|e| Error::io("<ply>", e))?;
        if n == 0 {
            return Err(Error::MalformedHeader("unexpected end of PLY header".into()));
        }
        Ok(())
    };
    next_line(&mut r, &mut line)?;
    if line.trim_end() != "ply" {
        return Err(Error::MalformedHeader("missing 'ply' magic".into()));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        next_line(&mut r, &mut line)?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => format = Some(Format::Ascii),
            ["format", "binary_little_endian", _] => format = Some(Format::BinaryLe),
            ["format", other, _] => {
                return Err(Error::MalformedHeader(format!("unsupported PLY format {other}")))
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| Error::MalformedHeader(format!("bad element count {count}")))?,
                props: Vec::new(),
            }),
            ["property", "list", ..] => {
                return Err(Error::MalformedHeader("list properties are not supported".into()))
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::MalformedHeader("property before element".into()))?;
                let s = Scalar::parse(ty)
                    .ok_or_else(|| Error::MalformedHeader(format!("unknown property type {ty}")))?;
                el.props.push((name.to_string(), s));
            }
            _ => {
                return Err(Error::MalformedHeader(format!(
                    "unrecognized header line {:?}",
                    line.trim_end()
                )))
            }
        }
    }
    let format = format.ok_or_else(|| Error::MalformedHeader("missing format line".into()))?;
    if elements.first().map(|e| e.name.as_str()) != Some("vertex") {
        return Err(Error::MalformedHeader("first element must be 'vertex'".into()));
    }
    let vertex = &elements[0];
    let find = |n: &str| {
        vertex
            .props
            .iter()
            .position(|(p, _)| p == n)
            .ok_or_else(|| Error::MalformedHeader(format!("vertex property {n} missing")))
    };
    let (ix, iy, iz) = (find("x")?, find("y")?, find("z")?);
    let mut positions = Vec::with_capacity(vertex.count);
    match format {
        Format::Ascii => {
            let mut body = String::new();
            r.read_to_string(&mut body).map_err(|e| Error::io("<ply>", e))?;
            let mut lines = body.lines().filter(|l| !l.trim().is_empty());
            for k in 0..vertex.count {
                let l = lines
                    .next()
                    .ok_or_else(|| Error::MalformedHeader(format!("missing vertex {k}")))?;
                let vals: Vec<f64> = l
                    .split_whitespace()
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::InvalidValue(format!("vertex {k}: bad number")))?;
                if vals.len() != vertex.props.len() {
                    return Err(Error::DimensionMismatch {
                        expected: vertex.props.len(),
                        found: vals.len(),
                    });
                }
                positions.push([vals[ix] as f32, vals[iy] as f32, vals[iz] as f32]);
            }
        }
        Format::BinaryLe => {
            let stride: usize = vertex.props.iter().map(|(_, s)| s.size()).sum();
            let offsets: Vec<usize> = vertex
                .props
                .iter()
                .scan(0, |acc, (_, s)| {
                    let o = *acc;
                    *acc += s.size();
                    Some(o)
                })
                .collect();
            let mut buf = vec![0u8; stride];
            for _ in 0..vertex.count {
                r.read_exact(&mut buf).map_err(|e| Error::io("<ply>", e))?;
                let get = |i: usize| vertex.props[i].1.read_le(&buf[offsets[i]..]) as f32;
                positions.push([get(ix), get(iy), get(iz)]);
            }
        }
    }
    PointCloud::new(positions)
}

/// Writes a binary little-endian PLY, with per-vertex colors when given.
pub fn write_ply(path: &Path, cloud: &PointCloud, colors: Option<&[[u8; 3]]>) -> Result<()> {
    let mut out = Vec::with_capacity(cloud.len() * 15 + 256);
    write_ply_to(&mut out, cloud, colors)?;
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_ply_to<W: Write>(w: &mut W, cloud: &PointCloud, colors: Option<&[[u8; 3]]>) -> Result<()> {
    if let Some(c) = colors {
        if c.len() != cloud.len() {
            return Err(Error::DimensionMismatch {
                expected: cloud.len(),
                found: c.len(),
            });
        }
    }
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n",
        cloud.len()
    );
    if colors.is_some() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    header.push_str("end_header\n");
    let io = |e| Error::io("<ply>", e);
    w.write_all(header.as_bytes()).map_err(io)?;
    for (i, p) in cloud.positions().iter().enumerate() {
        for c in p {
            w.write_all(&c.to_le_bytes()).map_err(io)?;
        }
        if let Some(cols) = colors {
            w.write_all(&cols[i]).map_err(io)?;
        }
    }
    Ok(())
}
