use super::{fmt_f64, parse_error, text_lines, unsupported};
use crate::error::{Location, Result};
use crate::geometry::PointCloud;
use nalgebra::Vector3;

const FORMAT: &str = "PCD";

#[derive(Debug, Clone, Copy, PartialEq)]
enum FieldType {
    Float,
    Unsigned,
    Signed,
}

#[derive(Default)]
struct Header {
    fields: Option<Vec<String>>,
    sizes: Option<Vec<usize>>,
    types: Option<Vec<FieldType>>,
    counts: Option<Vec<usize>>,
    width: Option<usize>,
    height: Option<usize>,
    points: Option<usize>,
}

fn list<T>(line: usize, tokens: &[&str], f: impl Fn(&str) -> Option<T>) -> Result<Vec<T>> {
    tokens[1..]
        .iter()
        .map(|t| f(t).ok_or_else(|| parse_error(FORMAT, Location::Line(line), format!("bad {} entry {t:?}", tokens[0]))))
        .collect()
}

fn single(line: usize, tokens: &[&str]) -> Result<usize> {
    match tokens {
        [_, v] => v
            .parse()
            .map_err(|_| parse_error(FORMAT, Location::Line(line), format!("bad {} value {v:?}", tokens[0]))),
        _ => Err(parse_error(FORMAT, Location::Line(line), format!("{} takes one value", tokens[0]))),
    }
}

pub(super) fn parse(bytes: &[u8]) -> Result<PointCloud> {
    let lines = text_lines(FORMAT, bytes)?;
    let mut header = Header::default();
    let mut iter = lines.iter();
    let data_line = loop {
        let Some(&(n, line)) = iter.next() else {
            let last = lines.len();
            return Err(parse_error(FORMAT, Location::Line(last), "header ends without a DATA line"));
        };
        let at = Location::Line(n);
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = line.split_ascii_whitespace().collect();
        let dup = |seen: bool| {
            if seen {
                Err(parse_error(FORMAT, at, format!("duplicate {}", tokens[0])))
            } else {
                Ok(())
            }
        };
        match tokens[0] {
            "VERSION" | "VIEWPOINT" => {}
            "FIELDS" => {
                dup(header.fields.is_some())?;
                header.fields = Some(tokens[1..].iter().map(|s| s.to_string()).collect());
            }
            "SIZE" => {
                dup(header.sizes.is_some())?;
                header.sizes = Some(list(n, &tokens, |t| t.parse().ok().filter(|s| [1, 2, 4, 8].contains(s)))?);
            }
            "TYPE" => {
                dup(header.types.is_some())?;
                header.types = Some(list(n, &tokens, |t| match t {
                    "F" => Some(FieldType::Float),
                    "U" => Some(FieldType::Unsigned),
                    "I" => Some(FieldType::Signed),
                    _ => None,
                })?);
            }
            "COUNT" => {
                dup(header.counts.is_some())?;
                header.counts = Some(list(n, &tokens, |t| t.parse().ok())?);
            }
            "WIDTH" => {
                dup(header.width.is_some())?;
                header.width = Some(single(n, &tokens)?);
            }
            "HEIGHT" => {
                dup(header.height.is_some())?;
                header.height = Some(single(n, &tokens)?);
            }
            "POINTS" => {
                dup(header.points.is_some())?;
                header.points = Some(single(n, &tokens)?);
            }
            "DATA" => match tokens.as_slice() {
                [_, "ascii"] => break n,
                [_, "binary"] | [_, "binary_compressed"] => {
                    return Err(unsupported(FORMAT, at, format!("DATA {}", tokens[1])));
                }
                _ => return Err(parse_error(FORMAT, at, "DATA must be ascii, binary or binary_compressed")),
            },
            other => return Err(parse_error(FORMAT, at, format!("unknown header keyword {other:?}"))),
        }
    };

    let at = Location::Line(data_line);
    let missing = |what: &str| parse_error(FORMAT, at, format!("header lacks {what}"));
    let fields = header.fields.ok_or_else(|| missing("FIELDS"))?;
    let sizes = header.sizes.ok_or_else(|| missing("SIZE"))?;
    let types = header.types.ok_or_else(|| missing("TYPE"))?;
    let counts = header.counts.unwrap_or_else(|| vec![1; fields.len()]);
    let width = header.width.ok_or_else(|| missing("WIDTH"))?;
    let height = header.height.ok_or_else(|| missing("HEIGHT"))?;
    if sizes.len() != fields.len() || types.len() != fields.len() || counts.len() != fields.len() {
        return Err(parse_error(FORMAT, at, "FIELDS, SIZE, TYPE and COUNT lengths differ"));
    }
    if counts.iter().any(|&c| c != 1) {
        return Err(unsupported(FORMAT, at, "fields with COUNT other than 1"));
    }
    let points = header.points.unwrap_or(width.saturating_mul(height));
    if width.checked_mul(height) != Some(points) {
        return Err(parse_error(FORMAT, at, "WIDTH * HEIGHT differs from POINTS"));
    }
    let find = |name: &str| fields.iter().position(|f| f == name);
    let triple = |names: [&str; 3]| -> Result<Option<[usize; 3]>> {
        match names.map(find) {
            [Some(a), Some(b), Some(c)] => Ok(Some([a, b, c])),
            [None, None, None] => Ok(None),
            _ => Err(parse_error(FORMAT, at, format!("incomplete field group {names:?}"))),
        }
    };
    let xyz = triple(["x", "y", "z"])?.ok_or_else(|| missing("x y z fields"))?;
    let normals = triple(["normal_x", "normal_y", "normal_z"])?;
    let rgb = find("rgb").or_else(|| find("rgba"));
    if let Some(i) = rgb {
        if sizes[i] != 4 {
            return Err(unsupported(FORMAT, at, "rgb field must have SIZE 4"));
        }
    }

    let body: Vec<(usize, &str)> = iter.copied().filter(|(_, l)| !l.trim().is_empty()).collect();
    if body.len() != points {
        let loc = body.get(points).map_or(Location::Line(lines.len()), |&(n, _)| Location::Line(n));
        return Err(parse_error(FORMAT, loc, format!("expected {points} data lines, found {}", body.len())));
    }
    let mut cloud = PointCloud::default();
    cloud.points.reserve(points);
    let mut values = vec![0.0f64; fields.len()];
    for &(n, line) in &body {
        let at = Location::Line(n);
        let tokens: Vec<&str> = line.split_ascii_whitespace().collect();
        if tokens.len() != fields.len() {
            return Err(parse_error(FORMAT, at, format!("expected {} values, found {}", fields.len(), tokens.len())));
        }
        let mut packed = 0u32;
        for (k, tok) in tokens.iter().enumerate() {
            let bad = || parse_error(FORMAT, at, format!("{tok:?} is not a valid {} value", fields[k]));
            if Some(k) == rgb {
                packed = match types[k] {
                    FieldType::Float => tok.parse::<f32>().map_err(|_| bad())?.to_bits(),
                    FieldType::Unsigned => tok.parse::<u32>().map_err(|_| bad())?,
                    FieldType::Signed => tok.parse::<i32>().map_err(|_| bad())? as u32,
                };
                continue;
            }
            values[k] = match types[k] {
                FieldType::Float => tok.parse::<f64>().map_err(|_| bad())?,
                FieldType::Unsigned => tok.parse::<u64>().map_err(|_| bad())? as f64,
                FieldType::Signed => tok.parse::<i64>().map_err(|_| bad())? as f64,
            };
        }
        let get = |idx: [usize; 3]| Vector3::new(values[idx[0]], values[idx[1]], values[idx[2]]);
        let p = get(xyz);
        if !p.iter().all(|v| v.is_finite()) {
            return Err(parse_error(FORMAT, at, "non-finite point coordinate"));
        }
        cloud.points.push(p);
        if let Some(idx) = normals {
            let nv = get(idx);
            if !nv.iter().all(|v| v.is_finite()) {
                return Err(parse_error(FORMAT, at, "non-finite normal"));
            }
            cloud.normals.push(nv);
        }
        if rgb.is_some() {
            let channel = |shift: u32| ((packed >> shift) & 0xff) as f64 / 255.0;
            cloud.colors.push(Vector3::new(channel(16), channel(8), channel(0)));
        }
    }
    Ok(cloud)
}

/// `0x00RRGGBB` stored in the bits of an `f32`.
pub(super) fn pack_rgb(c: &Vector3<f64>) -> f32 {
    let q = |v: f64| (v * 255.0).round().clamp(0.0, 255.0) as u32;
    f32::from_bits((q(c.x) << 16) | (q(c.y) << 8) | q(c.z))
}

pub(super) fn encode(cloud: &PointCloud) -> Vec<u8> {
    let mut fields = vec!["x", "y", "z"];
    let mut sizes = vec!["8"; 3];
    if cloud.has_normals() {
        fields.extend(["normal_x", "normal_y", "normal_z"]);
        sizes.extend(["8"; 3]);
    }
    if cloud.has_colors() {
        fields.push("rgb");
        sizes.push("4");
    }
    let n = cloud.points.len();
    let mut out = String::new();
    out += "# .PCD v0.7 - Point Cloud Data file format\nVERSION 0.7\n";
    out += &format!("FIELDS {}\n", fields.join(" "));
    out += &format!("SIZE {}\n", sizes.join(" "));
    out += &format!("TYPE {}\n", vec!["F"; fields.len()].join(" "));
    out += &format!("COUNT {}\n", vec!["1"; fields.len()].join(" "));
    out += &format!("WIDTH {n}\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS {n}\nDATA ascii\n");
    for i in 0..n {
        let mut row: Vec<String> = cloud.points[i].iter().map(|v| fmt_f64(*v)).collect();
        if cloud.has_normals() {
            row.extend(cloud.normals[i].iter().map(|v| fmt_f64(*v)));
        }
        if cloud.has_colors() {
            row.push(format!("{:?}", pack_rgb(&cloud.colors[i])));
        }
        out += &row.join(" ");
        out.push('\n');
    }
    out.into_bytes()
}
