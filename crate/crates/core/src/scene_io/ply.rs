//! PLY point clouds, ASCII and binary little-endian.
//!
//! Only the `vertex` element is interpreted (`x`, `y`, `z` and optional
//! `red`, `green`, `blue`); every other property and element is skipped.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use super::cloud::PointCloud;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn decode_le(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: ScalarType },
    List { count: ScalarType, item: ScalarType },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    BinaryLittleEndian,
}

/// Storage type for written coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyScalar {
    Float,
    Double,
}

#[derive(Debug, Clone, Copy)]
pub struct PlyWriteOptions {
    pub encoding: PlyEncoding,
    pub scalar: PlyScalar,
}

impl Default for PlyWriteOptions {
    fn default() -> Self {
        Self {
            encoding: PlyEncoding::BinaryLittleEndian,
            scalar: PlyScalar::Float,
        }
    }
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn read_header<R: BufRead>(r: &mut R) -> Result<(PlyEncoding, Vec<Element>)> {
    let mut line = String::new();
    let next_line = |r: &mut R, line: &mut String| -> Result<bool> {
        line.clear();
        Ok(r.read_line(line)? > 0)
    };
    if !next_line(r, &mut line)? || line.trim() != "ply" {
        return Err(format_err("missing 'ply' magic"));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        if !next_line(r, &mut line)? {
            return Err(format_err("header not terminated by end_header"));
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            [] => {}
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", fmt, _version] => {
                encoding = Some(match *fmt {
                    "ascii" => PlyEncoding::Ascii,
                    "binary_little_endian" => PlyEncoding::BinaryLittleEndian,
                    other => return Err(format_err(format!("unsupported PLY format {other}"))),
                });
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| format_err(format!("bad element count {count}")))?,
                props: Vec::new(),
            }),
            ["property", "list", count, item, _name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| format_err("property before element"))?;
                el.props.push(Property::List {
                    count: ScalarType::parse(count)
                        .ok_or_else(|| format_err(format!("bad list count type {count}")))?,
                    item: ScalarType::parse(item)
                        .ok_or_else(|| format_err(format!("bad list item type {item}")))?,
                });
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| format_err("property before element"))?;
                el.props.push(Property::Scalar {
                    name: name.to_string(),
                    ty: ScalarType::parse(ty)
                        .ok_or_else(|| format_err(format!("bad property type {ty}")))?,
                });
            }
            _ => return Err(format_err(format!("unrecognized header line {:?}", line.trim()))),
        }
    }
    let encoding = encoding.ok_or_else(|| format_err("missing format line"))?;
    Ok((encoding, elements))
}

struct VertexLayout {
    xyz: [usize; 3],
    rgb: Option<[usize; 3]>,
}

fn vertex_layout(el: &Element) -> Result<VertexLayout> {
    let find = |wanted: &str| {
        el.props.iter().position(
            |p| matches!(p, Property::Scalar { name, .. } if name == wanted),
        )
    };
    let xyz = match (find("x"), find("y"), find("z")) {
        (Some(x), Some(y), Some(z)) => [x, y, z],
        _ => return Err(format_err("vertex element lacks x/y/z properties")),
    };
    let rgb = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        _ => None,
    };
    Ok(VertexLayout { xyz, rgb })
}

fn truncated() -> Error {
    Error::Io(std::io::Error::new(
        std::io::ErrorKind::UnexpectedEof,
        "PLY payload truncated",
    ))
}

fn read_exact_or_truncated<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            truncated()
        } else {
            Error::Io(e)
        }
    })
}

fn read_binary_record<R: Read>(r: &mut R, el: &Element, values: &mut Vec<f64>) -> Result<()> {
    values.clear();
    let mut buf = [0u8; 8];
    for prop in &el.props {
        match *prop {
            Property::Scalar { ty, .. } => {
                read_exact_or_truncated(r, &mut buf[..ty.size()])?;
                values.push(ty.decode_le(&buf));
            }
            Property::List { count, item } => {
                read_exact_or_truncated(r, &mut buf[..count.size()])?;
                let n = count.decode_le(&buf);
                if !(n >= 0.0) {
                    return Err(format_err("negative list length"));
                }
                let mut skip = vec![0u8; n as usize * item.size()];
                read_exact_or_truncated(r, &mut skip)?;
                values.push(f64::NAN);
            }
        }
    }
    Ok(())
}

/// Reads one ASCII record into `values`; list properties are consumed and
/// recorded as NaN placeholders.
fn read_ascii_record<R: BufRead>(r: &mut R, el: &Element, values: &mut Vec<f64>) -> Result<()> {
    let mut line = String::new();
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(truncated());
        }
        if !line.trim().is_empty() {
            break;
        }
    }
    values.clear();
    let mut tokens = line.split_whitespace();
    let mut next = || -> Result<f64> {
        tokens
            .next()
            .ok_or_else(truncated)?
            .parse::<f64>()
            .map_err(|_| format_err(format!("bad number in {:?}", line.trim())))
    };
    for prop in &el.props {
        match prop {
            Property::Scalar { ty: ScalarType::F32, .. } => values.push(next()? as f32 as f64),
            Property::Scalar { .. } => values.push(next()?),
            Property::List { .. } => {
                let n = next()?;
                for _ in 0..n as usize {
                    next()?;
                }
                values.push(f64::NAN);
            }
        }
    }
    Ok(())
}

/// Parses a PLY stream into a point cloud.
pub fn parse_ply<R: BufRead>(mut reader: R) -> Result<PointCloud> {
    let (encoding, elements) = read_header(&mut reader)?;
    let vertex_pos = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| format_err("no vertex element"))?;
    let layout = vertex_layout(&elements[vertex_pos])?;

    let mut values = Vec::new();
    let read_record = |r: &mut R, el: &Element, values: &mut Vec<f64>| match encoding {
        PlyEncoding::Ascii => read_ascii_record(r, el, values),
        PlyEncoding::BinaryLittleEndian => read_binary_record(r, el, values),
    };
    for el in &elements[..vertex_pos] {
        for _ in 0..el.count {
            read_record(&mut reader, el, &mut values)?;
        }
    }
    let el = &elements[vertex_pos];
    let mut points = Vec::with_capacity(el.count);
    let mut colors = layout.rgb.map(|_| Vec::with_capacity(el.count));
    for _ in 0..el.count {
        read_record(&mut reader, el, &mut values)?;
        let [x, y, z] = layout.xyz;
        points.push(Vector3::new(values[x], values[y], values[z]));
        if let (Some(rgb), Some(colors)) = (layout.rgb, colors.as_mut()) {
            colors.push(rgb.map(|i| values[i].clamp(0.0, 255.0) as u8));
        }
    }
    let cloud = PointCloud { points, colors };
    cloud.validate()?;
    Ok(cloud)
}

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    parse_ply(BufReader::new(file))
}

/// Writes the cloud as a single `vertex` element.
pub fn write_ply<W: Write>(writer: W, cloud: &PointCloud, opts: PlyWriteOptions) -> Result<()> {
    cloud.validate()?;
    let mut w = BufWriter::new(writer);
    let format = match opts.encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
    };
    let scalar = match opts.scalar {
        PlyScalar::Float => "float",
        PlyScalar::Double => "double",
    };
    writeln!(w, "ply")?;
    writeln!(w, "format {format} 1.0")?;
    writeln!(w, "element vertex {}", cloud.len())?;
    for axis in ["x", "y", "z"] {
        writeln!(w, "property {scalar} {axis}")?;
    }
    if cloud.colors.is_some() {
        for c in ["red", "green", "blue"] {
            writeln!(w, "property uchar {c}")?;
        }
    }
    writeln!(w, "end_header")?;
    for (i, p) in cloud.points.iter().enumerate() {
        let color = cloud.colors.as_ref().map(|c| c[i]);
        match opts.encoding {
            PlyEncoding::Ascii => {
                match opts.scalar {
                    PlyScalar::Float => write!(w, "{} {} {}", p.x as f32, p.y as f32, p.z as f32)?,
                    PlyScalar::Double => write!(w, "{} {} {}", p.x, p.y, p.z)?,
                }
                if let Some([r, g, b]) = color {
                    write!(w, " {r} {g} {b}")?;
                }
                writeln!(w)?;
            }
            PlyEncoding::BinaryLittleEndian => {
                for v in p.iter() {
                    match opts.scalar {
                        PlyScalar::Float => w.write_all(&(*v as f32).to_le_bytes())?,
                        PlyScalar::Double => w.write_all(&v.to_le_bytes())?,
                    }
                }
                if let Some(rgb) = color {
                    w.write_all(&rgb)?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}
