//! Binary little-endian PLY: shared header parsing plus plain point clouds
//! with optional normals and colors.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::Vector3;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed PLY ({context}): {message}")]
    Malformed { context: String, message: String },
    #[error("refusing to write an empty point set")]
    Empty,
}

pub(crate) fn malformed(context: impl Into<String>, message: impl Into<String>) -> PlyError {
    PlyError::Malformed { context: context.into(), message: message.into() }
}



#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum ScalarKind {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarKind {
    pub(crate) fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => ScalarKind::I8,
            "uchar" | "uint8" => ScalarKind::U8,
            "short" | "int16" => ScalarKind::I16,
            "ushort" | "uint16" => ScalarKind::U16,
            "int" | "int32" => ScalarKind::I32,
            "uint" | "uint32" => ScalarKind::U32,
            "float" | "float32" => ScalarKind::F32,
            "double" | "float64" => ScalarKind::F64,
            _ => return None,
        })
    }

    pub(crate) fn size(self) -> usize {
        match self {
            ScalarKind::I8 | ScalarKind::U8 => 1,
            ScalarKind::I16 | ScalarKind::U16 => 2,
            ScalarKind::I32 | ScalarKind::U32 | ScalarKind::F32 => 4,
            ScalarKind::F64 => 8,
        }
    }

    pub(crate) fn read<R: Read>(self, r: &mut R) -> std::io::Result<f64> {
        Ok(match self {
            ScalarKind::I8 => r.read_i8()? as f64,
            ScalarKind::U8 => r.read_u8()? as f64,
            ScalarKind::I16 => r.read_i16::<LittleEndian>()? as f64,
            ScalarKind::U16 => r.read_u16::<LittleEndian>()? as f64,
            ScalarKind::I32 => r.read_i32::<LittleEndian>()? as f64,
            ScalarKind::U32 => r.read_u32::<LittleEndian>()? as f64,
            ScalarKind::F32 => r.read_f32::<LittleEndian>()? as f64,
            ScalarKind::F64 => r.read_f64::<LittleEndian>()?,
        })
    }
}

#[derive(Debug)]
pub(crate) struct PlyProperty {
    pub name: String,
    pub kind: ScalarKind,
}

#[derive(Debug)]
pub(crate) struct PlyElement {
    pub name: String,
    pub count: usize,
    pub properties: Vec<PlyProperty>,
}

#[derive(Debug)]
pub(crate) struct PlyHeader {
    pub elements: Vec<PlyElement>,
}

pub(crate) fn read_header<R: BufRead>(r: &mut R) -> Result<PlyHeader, PlyError> {
    let mut line = String::new();
    let mut next_line = |line: &mut String| -> Result<bool, PlyError> {
        line.clear();
        Ok(r.read_line(line)? > 0)
    };
    if !next_line(&mut line)? || line.trim_end() != "ply" {
        return Err(malformed("line 1", "missing 'ply' magic"));
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut format_ok = false;
    let mut n = 1;
    loop {
        if !next_line(&mut line)? {
            return Err(malformed(format!("line {}", n + 1), "unexpected end of header"));
        }
        n += 1;
        let ctx = format!("line {n}");
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["format", "binary_little_endian", _] => format_ok = true,
            ["format", other, ..] => {
                return Err(malformed(ctx, format!("unsupported format {other}")));
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| malformed(ctx.clone(), format!("bad element count {count}")))?;
                elements.push(PlyElement { name: name.to_string(), count, properties: Vec::new() });
            }
            ["property", "list", ..] => {
                return Err(malformed(ctx, "list properties are not supported"));
            }
            ["property", kind, name] => {
                let kind = ScalarKind::parse(kind)
                    .ok_or_else(|| malformed(ctx.clone(), format!("unknown property type {kind}")))?;
                let el = elements
                    .last_mut()
                    .ok_or_else(|| malformed(ctx.clone(), "property before any element"))?;
                el.properties.push(PlyProperty { name: name.to_string(), kind });
            }
            ["end_header"] => break,
            _ => return Err(malformed(ctx, format!("unrecognized header line {:?}", line.trim_end()))),
        }
    }
    if !format_ok {
        return Err(malformed("header", "missing format line"));
    }
    Ok(PlyHeader { elements })
}

pub(crate) fn skip_element<R: Read>(r: &mut R, e: &PlyElement) -> Result<(), PlyError> {
    let row: usize = e.properties.iter().map(|p| p.kind.size()).sum();
    let mut buf = vec![0u8; row];
    for i in 0..e.count {
        r.read_exact(&mut buf)
            .map_err(|err| malformed(format!("element {} row {i}", e.name), err.to_string()))?;
    }
    Ok(())
}

/// Points with optional per-point normals and 8-bit colors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub normals: Option<Vec<Vector3<f64>>>,
    pub colors: Option<Vec<[u8; 3]>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        Self { points, normals: None, colors: None }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Coordinates and normals are written as doubles.
    pub fn write(&self, path: &Path) -> Result<(), PlyError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), PlyError> {
        if self.is_empty() {
            return Err(PlyError::Empty);
        }
        let n = self.len();
        if self.normals.as_ref().is_some_and(|v| v.len() != n) || self.colors.as_ref().is_some_and(|v| v.len() != n) {
            return Err(malformed("point cloud", "attribute count differs from point count"));
        }
        let mut header = format!("ply\nformat binary_little_endian 1.0\nelement vertex {n}\n");
        for a in ["x", "y", "z"] {
            header.push_str(&format!("property double {a}\n"));
        }
        if self.normals.is_some() {
            for a in ["nx", "ny", "nz"] {
                header.push_str(&format!("property double {a}\n"));
            }
        }
        if self.colors.is_some() {
            for a in ["red", "green", "blue"] {
                header.push_str(&format!("property uchar {a}\n"));
            }
        }
        header.push_str("end_header\n");
        w.write_all(header.as_bytes())?;
        for i in 0..n {
            for v in self.points[i].iter() {
                w.write_f64::<LittleEndian>(*v)?;
            }
            if let Some(normals) = &self.normals {
                for v in normals[i].iter() {
                    w.write_f64::<LittleEndian>(*v)?;
                }
            }
            if let Some(colors) = &self.colors {
                w.write_all(&colors[i])?;
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<PointCloud, PlyError> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    pub fn read_from<R: BufRead>(r: &mut R) -> Result<PointCloud, PlyError> {
        let header = read_header(r)?;
        let vertex = header
            .elements
            .iter()
            .position(|e| e.name == "vertex")
            .ok_or_else(|| malformed("header", "no vertex element"))?;
        for e in &header.elements[..vertex] {
            skip_element(r, e)?;
        }
        let el = &header.elements[vertex];
        let find = |name: &str| el.properties.iter().position(|p| p.name == name);
        let triple = |names: [&str; 3]| -> Option<[usize; 3]> { Some([find(names[0])?, find(names[1])?, find(names[2])?]) };
        let pos = triple(["x", "y", "z"]).ok_or_else(|| malformed("element vertex", "missing coordinates"))?;
        let nrm = triple(["nx", "ny", "nz"]);
        let col = triple(["red", "green", "blue"]);
        let mut cloud = PointCloud {
            points: Vec::with_capacity(el.count),
            normals: nrm.map(|_| Vec::with_capacity(el.count)),
            colors: col.map(|_| Vec::with_capacity(el.count)),
        };
        let mut row = vec![0.0; el.properties.len()];
        for v in 0..el.count {
            for (k, prop) in el.properties.iter().enumerate() {
                row[k] = prop
                    .kind
                    .read(r)
                    .map_err(|e| malformed(format!("vertex {v}, property {}", prop.name), e.to_string()))?;
            }
            cloud.points.push(Vector3::new(row[pos[0]], row[pos[1]], row[pos[2]]));
            if let (Some(idx), Some(out)) = (nrm, cloud.normals.as_mut()) {
                out.push(Vector3::new(row[idx[0]], row[idx[1]], row[idx[2]]));
            }
            if let (Some(idx), Some(out)) = (col, cloud.colors.as_mut()) {
                out.push([row[idx[0]] as u8, row[idx[1]] as u8, row[idx[2]] as u8]);
            }
        }
        Ok(cloud)
    }
}
