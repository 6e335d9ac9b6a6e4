//! Point cloud readers (.ply ASCII / binary little-endian, .off, .xyz) and a
//! binary PLY writer.

use std::fs;
use std::path::Path;

use crate::pointcloud::PointCloud;
use crate::{Error, Result, Vec3};

/// Reads the vertices of a `.ply`, `.off` or `.xyz` file.
pub fn load_point_cloud(path: &Path) -> Result<PointCloud> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let points = match ext.as_str() {
        "ply" => parse_ply(path, &bytes)?,
        "off" => parse_off(path, &text(path, &bytes)?)?,
        "xyz" => parse_xyz(path, &text(path, &bytes)?)?,
        _ => {
            return Err(Error::parse(path, "file name", format!("unsupported extension {ext:?}")));
        }
    };
    if points.is_empty() {
        return Err(Error::parse(path, "end of file", "no points"));
    }
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    PointCloud::new(points, id)
}

fn text<'a>(path: &Path, bytes: &'a [u8]) -> Result<&'a str> {
    std::str::from_utf8(bytes).map_err(|e| Error::parse(path, format!("byte {}", e.valid_up_to()), "invalid UTF-8"))
}

fn finite_point(path: &Path, loc: impl Fn() -> String, v: [f64; 3]) -> Result<Vec3> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(Vec3::new(v[0], v[1], v[2]))
    } else {
        Err(Error::parse(path, loc(), "non-finite coordinate"))
    }
}

fn parse_num(path: &Path, line: usize, tok: &str) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| Error::parse(path, format!("line {line}"), format!("not a number: {tok:?}")))
}

/// Numbered lines with comments removed; blank lines skipped.
fn content_lines(s: &str) -> impl Iterator<Item = (usize, &str)> {
    s.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn parse_xyz(path: &Path, s: &str) -> Result<Vec<Vec3>> {
    let mut out = Vec::new();
    for (n, line) in content_lines(s) {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 3 {
            return Err(Error::parse(path, format!("line {n}"), format!("expected 3 coordinates, found {}", toks.len())));
        }
        let v = [parse_num(path, n, toks[0])?, parse_num(path, n, toks[1])?, parse_num(path, n, toks[2])?];
        out.push(finite_point(path, || format!("line {n}"), v)?);
    }
    Ok(out)
}

fn parse_off(path: &Path, s: &str) -> Result<Vec<Vec3>> {
    let mut lines = content_lines(s);
    let (n, first) = lines.next().ok_or_else(|| Error::parse(path, "line 1", "empty file"))?;
    let rest = first
        .strip_prefix("OFF")
        .ok_or_else(|| Error::parse(path, format!("line {n}"), "missing OFF header"))?
        .trim();
    let (cn, counts) = if rest.is_empty() {
        lines.next().ok_or_else(|| Error::parse(path, "end of file", "missing vertex/face counts"))?
    } else {
        (n, rest)
    };
    let counts: Vec<&str> = counts.split_whitespace().collect();
    if counts.len() < 2 {
        return Err(Error::parse(path, format!("line {cn}"), "expected vertex and face counts"));
    }
    let nv: usize = counts[0]
        .parse()
        .map_err(|_| Error::parse(path, format!("line {cn}"), format!("bad vertex count {:?}", counts[0])))?;
    let mut out = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (n, line) = lines
            .next()
            .ok_or_else(|| Error::parse(path, "end of file", format!("declared {nv} vertices, found {}", out.len())))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 3 {
            return Err(Error::parse(path, format!("line {n}"), "vertex needs 3 coordinates"));
        }
        let v = [parse_num(path, n, toks[0])?, parse_num(path, n, toks[1])?, parse_num(path, n, toks[2])?];
        out.push(finite_point(path, || format!("line {n}"), v)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
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

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes(b[..4].try_into().expect("4 bytes")) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().expect("4 bytes")) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().expect("4 bytes")) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar(String, Scalar),
    List(Scalar, Scalar),
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

impl Element {
    /// Positions of x, y, z among the scalar properties.
    fn xyz(&self) -> Option<[usize; 3]> {
        let find = |n: &str| {
            self.props
                .iter()
                .position(|p| matches!(p, Property::Scalar(name, _) if name == n))
        };
        Some([find("x")?, find("y")?, find("z")?])
    }
}

fn parse_ply(path: &Path, bytes: &[u8]) -> Result<Vec<Vec3>> {
    let mut pos = 0;
    let mut line_no = 0;
    let mut next_line = |pos: &mut usize| -> Option<(usize, String)> {
        if *pos >= bytes.len() {
            return None;
        }
        let end = bytes[*pos..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |i| *pos + i);
        let l = String::from_utf8_lossy(&bytes[*pos..end]).trim().to_string();
        *pos = (end + 1).min(bytes.len());
        line_no += 1;
        Some((line_no, l))
    };
    let eof = || Error::parse(path, "header", "missing end_header");
    let (_, magic) = next_line(&mut pos).ok_or_else(eof)?;
    if magic != "ply" {
        return Err(Error::parse(path, "line 1", "missing ply magic"));
    }
    let mut binary = None;
    let mut elements: Vec<Element> = Vec::new();
    let header_lines = loop {
        let (n, line) = next_line(&mut pos).ok_or_else(eof)?;
        let loc = || format!("line {n}");
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.first().copied() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                binary = Some(match toks.get(1).copied() {
                    Some("ascii") => false,
                    Some("binary_little_endian") => true,
                    Some("binary_big_endian") => {
                        return Err(Error::parse(path, loc(), "big-endian PLY is not supported"));
                    }
                    other => return Err(Error::parse(path, loc(), format!("unknown format {other:?}"))),
                });
            }
            Some("element") => {
                if toks.len() != 3 {
                    return Err(Error::parse(path, loc(), "element needs a name and a count"));
                }
                let count = toks[2]
                    .parse()
                    .map_err(|_| Error::parse(path, loc(), format!("bad element count {:?}", toks[2])))?;
                elements.push(Element {
                    name: toks[1].to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(path, loc(), "property before any element"))?;
                let ty = |s: &str| {
                    Scalar::parse(s).ok_or_else(|| Error::parse(path, loc(), format!("unsupported property type {s:?}")))
                };
                let prop = match toks.as_slice() {
                    ["property", "list", c, i, _] => Property::List(ty(c)?, ty(i)?),
                    ["property", t, name] => Property::Scalar((*name).to_string(), ty(t)?),
                    _ => return Err(Error::parse(path, loc(), "malformed property line")),
                };
                el.props.push(prop);
            }
            Some("end_header") => break n,
            Some(other) => return Err(Error::parse(path, loc(), format!("unknown header keyword {other:?}"))),
        }
    };
    let binary = binary.ok_or_else(|| Error::parse(path, "header", "missing format line"))?;
    let vi = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| Error::parse(path, "header", "no vertex element"))?;
    let xyz = elements[vi]
        .xyz()
        .ok_or_else(|| Error::parse(path, "header", "vertex element lacks x, y or z"))?;
    let body = &bytes[pos..];
    if binary {
        read_binary_body(path, body, pos, &elements, vi, xyz)
    } else {
        let s = text(path, body)?;
        read_ascii_body(path, s, header_lines, &elements, vi, xyz)
    }
}

fn read_ascii_body(
    path: &Path,
    s: &str,
    header_lines: usize,
    elements: &[Element],
    vi: usize,
    xyz: [usize; 3],
) -> Result<Vec<Vec3>> {
    let mut lines = s
        .lines()
        .enumerate()
        .map(|(i, l)| (header_lines + i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let mut out = Vec::with_capacity(elements[vi].count);
    for (ei, el) in elements.iter().enumerate() {
        for k in 0..el.count {
            let (n, line) = lines.next().ok_or_else(|| {
                Error::parse(path, "end of file", format!("element {} declares {} entries, found {k}", el.name, el.count))
            })?;
            let toks: Vec<&str> = line.split_whitespace().collect();
            let mut t = 0;
            let mut vals = Vec::with_capacity(el.props.len());
            for p in &el.props {
                let tok = toks.get(t).ok_or_else(|| Error::parse(path, format!("line {n}"), "too few values"))?;
                let v = parse_num(path, n, tok)?;
                t += 1;
                match p {
                    Property::Scalar(..) => vals.push(v),
                    Property::List(..) => {
                        vals.push(f64::NAN);
                        if !(v >= 0.0) || v.fract() != 0.0 {
                            return Err(Error::parse(path, format!("line {n}"), format!("bad list length {tok}")));
                        }
                        t += v as usize;
                    }
                }
            }
            if t != toks.len() {
                return Err(Error::parse(
                    path,
                    format!("line {n}"),
                    format!("{} entry has {} values, expected {t}", el.name, toks.len()),
                ));
            }
            if ei == vi {
                out.push(finite_point(path, || format!("line {n}"), [vals[xyz[0]], vals[xyz[1]], vals[xyz[2]]])?);
            }
        }
    }
    if let Some((n, _)) = lines.next() {
        return Err(Error::parse(path, format!("line {n}"), "data after the last declared element"));
    }
    Ok(out)
}

struct Cursor<'a> {
    path: &'a Path,
    body: &'a [u8],
    base: usize,
    at: usize,
}

impl<'a> Cursor<'a> {
    fn offset(&self) -> String {
        format!("byte offset {}", self.base + self.at)
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.at + n > self.body.len() {
            return Err(Error::parse(self.path, self.offset(), format!("truncated {what}")));
        }
        let s = &self.body[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }
}

fn read_binary_body(
    path: &Path,
    body: &[u8],
    base: usize,
    elements: &[Element],
    vi: usize,
    xyz: [usize; 3],
) -> Result<Vec<Vec3>> {
    let mut cur = Cursor { path, body, base, at: 0 };
    let mut out = Vec::with_capacity(elements[vi].count);
    for (ei, el) in elements.iter().enumerate() {
        for _ in 0..el.count {
            let mut vals = Vec::with_capacity(el.props.len());
            for p in &el.props {
                match *p {
                    Property::Scalar(_, ty) => vals.push(ty.read_le(cur.take(ty.size(), &el.name)?)),
                    Property::List(ct, it) => {
                        let c = ct.read_le(cur.take(ct.size(), &el.name)?);
                        if !(c >= 0.0) {
                            return Err(Error::parse(path, cur.offset(), "negative list length"));
                        }
                        cur.take(c as usize * it.size(), &el.name)?;
                        vals.push(f64::NAN);
                    }
                }
            }
            if ei == vi {
                let off = cur.offset();
                out.push(finite_point(path, || off.clone(), [vals[xyz[0]], vals[xyz[1]], vals[xyz[2]]])?);
            }
        }
    }
    Ok(out)
}

/// Binary little-endian PLY with double coordinates.
pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    let header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        cloud.len()
    );
    let mut bytes = header.into_bytes();
    for p in cloud.points() {
        for v in p.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
