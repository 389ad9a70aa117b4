use super::{fmt_f64, parse_error, unsupported};
use crate::error::{Error, Location, Result};
use crate::geometry::PointCloud;
use nalgebra::Vector3;

const FORMAT: &str = "PLY";

pub(super) struct Parsed {
    pub cloud: PointCloud,
    pub triangles: Vec<[usize; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
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

    fn is_integer(self) -> bool {
        !matches!(self, Self::F32 | Self::F64)
    }

    /// Little-endian decode; `b` holds exactly `size()` bytes.
    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F64 => f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]),
        }
    }

    fn parse_text(self, token: &str) -> Option<f64> {
        let (lo, hi) = match self {
            Self::I8 => (i8::MIN as i64, i8::MAX as i64),
            Self::U8 => (0, u8::MAX as i64),
            Self::I16 => (i16::MIN as i64, i16::MAX as i64),
            Self::U16 => (0, u16::MAX as i64),
            Self::I32 => (i32::MIN as i64, i32::MAX as i64),
            Self::U32 => (0, u32::MAX as i64),
            Self::F32 => return token.parse::<f32>().ok().map(|v| v as f64),
            Self::F64 => return token.parse::<f64>().ok(),
        };
        token.parse::<i64>().ok().filter(|v| (lo..=hi).contains(v)).map(|v| v as f64)
    }
}

#[derive(Debug, Clone)]
enum Kind {
    Scalar(Scalar),
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Property {
    name: String,
    kind: Kind,
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
    line: usize,
}

impl Element {
    fn min_binary_size(&self) -> usize {
        self.props
            .iter()
            .map(|p| match p.kind {
                Kind::Scalar(s) => s.size(),
                Kind::List { count, .. } => count.size(),
            })
            .sum()
    }

    fn find(&self, name: &str) -> Option<usize> {
        self.props.iter().position(|p| p.name == name && matches!(p.kind, Kind::Scalar(_)))
    }
}

struct Header {
    binary: bool,
    elements: Vec<Element>,
    body_start: usize,
    body_line: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut pos = 0;
    let mut line_no = 0;
    let mut binary = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        line_no += 1;
        let Some(len) = bytes[pos..].iter().position(|&b| b == b'\n') else {
            return Err(parse_error(FORMAT, Location::Line(line_no), "header is not terminated by end_header"));
        };
        let raw = &bytes[pos..pos + len];
        pos += len + 1;
        if !raw.is_ascii() {
            return Err(parse_error(FORMAT, Location::Line(line_no), "header contains non-ASCII bytes"));
        }
        let line = std::str::from_utf8(raw).expect("ascii").trim_end_matches('\r');
        let at = Location::Line(line_no);
        if line_no == 1 {
            if line != "ply" {
                return Err(parse_error(FORMAT, at, "missing 'ply' magic"));
            }
            continue;
        }
        let tokens: Vec<&str> = line.split_ascii_whitespace().collect();
        match tokens.first().copied() {
            None => return Err(parse_error(FORMAT, at, "empty header line")),
            Some("comment") | Some("obj_info") => {}
            Some("format") => {
                if binary.is_some() {
                    return Err(parse_error(FORMAT, at, "duplicate format line"));
                }
                if tokens.len() != 3 {
                    return Err(parse_error(FORMAT, at, "format line needs an encoding and a version"));
                }
                binary = Some(match tokens[1] {
                    "ascii" => false,
                    "binary_little_endian" => true,
                    "binary_big_endian" => return Err(unsupported(FORMAT, at, "big-endian encoding")),
                    other => return Err(parse_error(FORMAT, at, format!("unknown encoding {other:?}"))),
                });
                if tokens[2] != "1.0" {
                    return Err(unsupported(FORMAT, at, format!("version {}", tokens[2])));
                }
            }
            Some("element") => {
                if binary.is_none() {
                    return Err(parse_error(FORMAT, at, "element before format line"));
                }
                if tokens.len() != 3 {
                    return Err(parse_error(FORMAT, at, "element line needs a name and a count"));
                }
                let count = tokens[2]
                    .parse::<usize>()
                    .map_err(|_| parse_error(FORMAT, at, format!("bad element count {:?}", tokens[2])))?;
                if elements.iter().any(|e| e.name == tokens[1]) {
                    return Err(parse_error(FORMAT, at, format!("duplicate element {:?}", tokens[1])));
                }
                elements.push(Element {
                    name: tokens[1].to_string(),
                    count,
                    props: Vec::new(),
                    line: line_no,
                });
            }
            Some("property") => {
                let Some(element) = elements.last_mut() else {
                    return Err(parse_error(FORMAT, at, "property before any element"));
                };
                let scalar = |name: &str| {
                    Scalar::from_name(name)
                        .ok_or_else(|| parse_error(FORMAT, at, format!("unknown property type {name:?}")))
                };
                let (kind, name) = match tokens.as_slice() {
                    [_, "list", count, item, name] => {
                        let count = scalar(count)?;
                        if !count.is_integer() {
                            return Err(parse_error(FORMAT, at, "list count type must be an integer"));
                        }
                        (Kind::List { count, item: scalar(item)? }, *name)
                    }
                    [_, ty, name] => (Kind::Scalar(scalar(ty)?), *name),
                    _ => return Err(parse_error(FORMAT, at, "malformed property line")),
                };
                if element.props.iter().any(|p| p.name == name) {
                    return Err(parse_error(FORMAT, at, format!("duplicate property {name:?}")));
                }
                element.props.push(Property {
                    name: name.to_string(),
                    kind,
                });
            }
            Some("end_header") => {
                if tokens.len() != 1 {
                    return Err(parse_error(FORMAT, at, "trailing tokens after end_header"));
                }
                let Some(binary) = binary else {
                    return Err(parse_error(FORMAT, at, "missing format line"));
                };
                return Ok(Header {
                    binary,
                    elements,
                    body_start: pos,
                    body_line: line_no + 1,
                });
            }
            Some(other) => return Err(parse_error(FORMAT, at, format!("unknown header keyword {other:?}"))),
        }
    }
}

/// Per-element bookkeeping for the vertex and face elements we extract.
struct Plan {
    vertex_count: usize,
    xyz: [usize; 3],
    normals: Option<[usize; 3]>,
    colors: Option<([usize; 3], Scalar)>,
    face_list: Option<usize>,
}

fn plan(elements: &[Element]) -> Result<Plan> {
    let Some(vertex) = elements.iter().find(|e| e.name == "vertex") else {
        let line = elements.first().map_or(1, |e| e.line);
        return Err(parse_error(FORMAT, Location::Line(line), "no vertex element"));
    };
    let at = Location::Line(vertex.line);
    let triple = |names: [&str; 3]| -> Result<Option<[usize; 3]>> {
        let found = names.map(|n| vertex.find(n));
        match found {
            [Some(a), Some(b), Some(c)] => Ok(Some([a, b, c])),
            [None, None, None] => Ok(None),
            _ => Err(parse_error(FORMAT, at, format!("incomplete property group {names:?}"))),
        }
    };
    let xyz = triple(["x", "y", "z"])?.ok_or_else(|| parse_error(FORMAT, at, "vertex element lacks x, y, z"))?;
    let normals = triple(["nx", "ny", "nz"])?;
    let colors = match triple(["red", "green", "blue"])? {
        None => None,
        Some(idx) => {
            let types = idx.map(|i| match vertex.props[i].kind {
                Kind::Scalar(s) => s,
                Kind::List { .. } => unreachable!("find returns scalars"),
            });
            if types[1] != types[0] || types[2] != types[0] {
                return Err(unsupported(FORMAT, at, "color channels of different types"));
            }
            if !matches!(types[0], Scalar::U8 | Scalar::F32 | Scalar::F64) {
                return Err(unsupported(FORMAT, at, "colors must be uchar or float"));
            }
            Some((idx, types[0]))
        }
    };
    let face_list = match elements.iter().find(|e| e.name == "face") {
        None => None,
        Some(face) => {
            let pos = face
                .props
                .iter()
                .position(|p| (p.name == "vertex_indices" || p.name == "vertex_index") && matches!(p.kind, Kind::List { .. }))
                .ok_or_else(|| parse_error(FORMAT, Location::Line(face.line), "face element lacks vertex_indices"))?;
            if let Kind::List { item, .. } = face.props[pos].kind {
                if !item.is_integer() {
                    return Err(parse_error(FORMAT, Location::Line(face.line), "vertex indices must be integers"));
                }
            }
            Some(pos)
        }
    };
    Ok(Plan {
        vertex_count: vertex.count,
        xyz,
        normals,
        colors,
        face_list,
    })
}

/// Collects decoded items of the vertex and face elements.
struct Sink<'a> {
    plan: &'a Plan,
    cloud: PointCloud,
    triangles: Vec<[usize; 3]>,
}

impl Sink<'_> {
    fn vertex(&mut self, values: &[f64], at: Location) -> Result<()> {
        let get = |idx: [usize; 3]| Vector3::new(values[idx[0]], values[idx[1]], values[idx[2]]);
        let p = get(self.plan.xyz);
        if !p.iter().all(|v| v.is_finite()) {
            return Err(parse_error(FORMAT, at, "non-finite vertex coordinate"));
        }
        self.cloud.points.push(p);
        if let Some(idx) = self.plan.normals {
            let n = get(idx);
            if !n.iter().all(|v| v.is_finite()) {
                return Err(parse_error(FORMAT, at, "non-finite normal"));
            }
            self.cloud.normals.push(n);
        }
        if let Some((idx, ty)) = self.plan.colors {
            let mut c = get(idx);
            if ty == Scalar::U8 {
                c /= 255.0;
            } else if !c.iter().all(|v| (0.0..=1.0).contains(v)) {
                return Err(parse_error(FORMAT, at, "float color outside [0, 1]"));
            }
            self.cloud.colors.push(c);
        }
        Ok(())
    }

    fn face(&mut self, index: usize, list: &[f64], at: Location) -> Result<()> {
        if list.len() != 3 {
            return Err(unsupported(
                FORMAT,
                at,
                format!("face {index} has {} vertices; only triangles are supported", list.len()),
            ));
        }
        let mut tri = [0; 3];
        for (slot, &v) in tri.iter_mut().zip(list) {
            if !(v >= 0.0 && v < self.plan.vertex_count as f64) {
                return Err(parse_error(FORMAT, at, format!("face {index} references vertex {v}")));
            }
            *slot = v as usize;
        }
        self.triangles.push(tri);
        Ok(())
    }
}

fn parse_binary_body(header: &Header, bytes: &[u8], sink: &mut Sink) -> Result<()> {
    let mut pos = header.body_start;
    let mut values = Vec::new();
    let mut list = Vec::new();
    for element in &header.elements {
        let remaining = bytes.len() - pos;
        let needed = element.count.checked_mul(element.min_binary_size().max(1));
        if needed.is_none_or(|n| n > remaining) {
            return Err(parse_error(
                FORMAT,
                Location::Byte(pos),
                format!("element {:?} needs more data than the file holds", element.name),
            ));
        }
        let is_vertex = element.name == "vertex";
        let is_face = element.name == "face";
        for index in 0..element.count {
            let item_start = pos;
            values.clear();
            list.clear();
            for (pi, prop) in element.props.iter().enumerate() {
                let take = |s: Scalar, pos: &mut usize| -> Result<f64> {
                    let end = *pos + s.size();
                    if end > bytes.len() {
                        return Err(parse_error(FORMAT, Location::Byte(*pos), "unexpected end of data"));
                    }
                    let v = s.decode(&bytes[*pos..end]);
                    *pos = end;
                    Ok(v)
                };
                match prop.kind {
                    Kind::Scalar(s) => values.push(take(s, &mut pos)?),
                    Kind::List { count, item } => {
                        let at = pos;
                        let n = take(count, &mut pos)?;
                        if n < 0.0 {
                            return Err(parse_error(FORMAT, Location::Byte(at), "negative list length"));
                        }
                        let n = n as usize;
                        if n.checked_mul(item.size()).is_none_or(|b| b > bytes.len() - pos) {
                            return Err(parse_error(FORMAT, Location::Byte(at), "list runs past end of data"));
                        }
                        let keep = is_face && sink.plan.face_list == Some(pi);
                        for _ in 0..n {
                            let v = take(item, &mut pos)?;
                            if keep {
                                list.push(v);
                            }
                        }
                        values.push(f64::NAN);
                    }
                }
            }
            if is_vertex {
                sink.vertex(&values, Location::Byte(item_start))?;
            } else if is_face {
                sink.face(index, &list, Location::Byte(item_start))?;
            }
        }
    }
    if pos != bytes.len() {
        return Err(parse_error(FORMAT, Location::Byte(pos), "trailing bytes after last element"));
    }
    Ok(())
}

fn parse_ascii_body(header: &Header, bytes: &[u8], sink: &mut Sink) -> Result<()> {
    let body = &bytes[header.body_start..];
    let lines = super::text_lines(FORMAT, body).map_err(|e| match e {
        Error::Parse { location: Location::Line(l), message, .. } => {
            parse_error(FORMAT, Location::Line(l + header.body_line - 1), message)
        }
        other => other,
    })?;
    let mut lines = lines
        .into_iter()
        .map(|(n, l)| (n + header.body_line - 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let mut values = Vec::new();
    let mut list = Vec::new();
    for element in &header.elements {
        let is_vertex = element.name == "vertex";
        let is_face = element.name == "face";
        for index in 0..element.count {
            let Some((line_no, line)) = lines.next() else {
                return Err(parse_error(
                    FORMAT,
                    Location::Line(header.body_line + index),
                    format!("file ends before {} {:?} items were read", element.count, element.name),
                ));
            };
            let at = Location::Line(line_no);
            let mut tokens = line.split_ascii_whitespace();
            let mut next = |s: Scalar| -> Result<f64> {
                let tok = tokens.next().ok_or_else(|| parse_error(FORMAT, at, "too few values"))?;
                s.parse_text(tok)
                    .ok_or_else(|| parse_error(FORMAT, at, format!("{tok:?} is not a valid {s:?}")))
            };
            values.clear();
            list.clear();
            for (pi, prop) in element.props.iter().enumerate() {
                match prop.kind {
                    Kind::Scalar(s) => values.push(next(s)?),
                    Kind::List { count, item } => {
                        let n = next(count)?;
                        if n < 0.0 {
                            return Err(parse_error(FORMAT, at, "negative list length"));
                        }
                        let keep = is_face && sink.plan.face_list == Some(pi);
                        for _ in 0..n as usize {
                            let v = next(item)?;
                            if keep {
                                list.push(v);
                            }
                        }
                        values.push(f64::NAN);
                    }
                }
            }
            if tokens.next().is_some() {
                return Err(parse_error(FORMAT, at, "too many values"));
            }
            if is_vertex {
                sink.vertex(&values, at)?;
            } else if is_face {
                sink.face(index, &list, at)?;
            }
        }
    }
    if let Some((line_no, _)) = lines.next() {
        return Err(parse_error(FORMAT, Location::Line(line_no), "data after last element"));
    }
    Ok(())
}

pub(super) fn parse(bytes: &[u8]) -> Result<Parsed> {
    let header = parse_header(bytes)?;
    let plan = plan(&header.elements)?;
    let reserve = plan.vertex_count.min(bytes.len());
    let mut sink = Sink {
        plan: &plan,
        cloud: PointCloud::default(),
        triangles: Vec::new(),
    };
    sink.cloud.points.reserve(reserve);
    if header.binary {
        parse_binary_body(&header, bytes, &mut sink)?;
    } else {
        let remaining_lines = bytes[header.body_start..].iter().filter(|&&b| b == b'\n').count() + 1;
        let total = header.elements.iter().try_fold(0usize, |acc, e| acc.checked_add(e.count));
        if total.is_none_or(|t| t > remaining_lines) {
            return Err(parse_error(
                FORMAT,
                Location::Line(header.body_line),
                "element counts exceed the number of data lines",
            ));
        }
        parse_ascii_body(&header, bytes, &mut sink)?;
    }
    Ok(Parsed {
        cloud: sink.cloud,
        triangles: sink.triangles,
    })
}

fn color_u8(c: f64) -> u8 {
    (c * 255.0).round().clamp(0.0, 255.0) as u8
}

pub(super) fn encode(cloud: &PointCloud, triangles: Option<&[[usize; 3]]>, binary: bool) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut header = String::from("ply\n");
    header += if binary {
        "format binary_little_endian 1.0\n"
    } else {
        "format ascii 1.0\n"
    };
    header += &format!("element vertex {}\n", cloud.points.len());
    for c in ["x", "y", "z"] {
        header += &format!("property double {c}\n");
    }
    if cloud.has_normals() {
        for c in ["nx", "ny", "nz"] {
            header += &format!("property double {c}\n");
        }
    }
    if cloud.has_colors() {
        for c in ["red", "green", "blue"] {
            header += &format!("property uchar {c}\n");
        }
    }
    if let Some(tris) = triangles {
        if tris.iter().flatten().any(|&i| i > i32::MAX as usize) {
            return Err(Error::invalid("vertex index exceeds the PLY int range"));
        }
        header += &format!("element face {}\nproperty list uchar int vertex_indices\n", tris.len());
    }
    header += "end_header\n";
    out.extend_from_slice(header.as_bytes());

    for i in 0..cloud.points.len() {
        let mut reals: Vec<f64> = cloud.points[i].iter().copied().collect();
        if cloud.has_normals() {
            reals.extend(cloud.normals[i].iter());
        }
        let colors = cloud.has_colors().then(|| cloud.colors[i].map(color_u8));
        if binary {
            for v in reals {
                out.extend_from_slice(&v.to_le_bytes());
            }
            if let Some(c) = colors {
                out.extend(c.iter());
            }
        } else {
            let mut line: Vec<String> = reals.into_iter().map(fmt_f64).collect();
            if let Some(c) = colors {
                line.extend(c.iter().map(|v| v.to_string()));
            }
            out.extend_from_slice(line.join(" ").as_bytes());
            out.push(b'\n');
        }
    }
    for t in triangles.unwrap_or(&[]) {
        if binary {
            out.push(3);
            for &i in t {
                out.extend_from_slice(&(i as i32).to_le_bytes());
            }
        } else {
            out.extend_from_slice(format!("3 {} {} {}\n", t[0], t[1], t[2]).as_bytes());
        }
    }
    Ok(out)
}
