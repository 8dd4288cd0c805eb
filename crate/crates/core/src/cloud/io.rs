use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::PointCloud;
use crate::error::{Error, Result};
use crate::geom::{Normal3, Point3, Vec3, UNIT_TOL};

/// On-disk point cloud formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    /// `x y z` per line.
    Xyz,
    /// `x y z nx ny nz` per line.
    Xyzn,
    /// ASCII PLY with a vertex element carrying x/y/z and optionally nx/ny/nz.
    PlyAscii,
}

impl CloudFormat {
    /// Guess the format from a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "xyz" => Some(CloudFormat::Xyz),
            "xyzn" => Some(CloudFormat::Xyzn),
            "ply" => Some(CloudFormat::PlyAscii),
            _ => None,
        }
    }
}

impl FromStr for CloudFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xyz" => Ok(CloudFormat::Xyz),
            "xyzn" => Ok(CloudFormat::Xyzn),
            "ply" | "ply-ascii" => Ok(CloudFormat::PlyAscii),
            other => Err(Error::InvalidArgument(format!("unknown cloud format '{other}'"))),
        }
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_fields(path: &Path, line_no: usize, fields: &[&str]) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|f| {
            f.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(path, line_no, format!("invalid number '{f}'")))
        })
        .collect()
}

fn make_normal(path: &Path, line_no: usize, v: Vec3) -> Result<Normal3> {
    let n = v.norm();
    if n == 0.0 {
        return Err(parse_err(path, line_no, "normal has zero norm"));
    }
    if (n - 1.0).abs() <= UNIT_TOL {
        Ok(Normal3::new_unchecked(v))
    } else {
        Ok(Normal3::new_unchecked(v / n))
    }
}

/// Load a point cloud. The cloud name is the file stem.
pub fn load_cloud(path: impl AsRef<Path>, format: CloudFormat) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let (points, normals) = match format {
        CloudFormat::Xyz | CloudFormat::Xyzn => parse_xyz(path, &text, format == CloudFormat::Xyzn)?,
        CloudFormat::PlyAscii => parse_ply(path, &text)?,
    };
    if points.is_empty() {
        return Err(parse_err(path, 0, "file contains no points"));
    }
    PointCloud::new(points, normals, name)
}

type Parsed = (Vec<Point3>, Option<Vec<Normal3>>);

fn parse_xyz(path: &Path, text: &str, with_normals: bool) -> Result<Parsed> {
    let width = if with_normals { 6 } else { 3 };
    let mut points = Vec::new();
    let mut normals = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != width {
            return Err(parse_err(
                path,
                line_no,
                format!("expected {width} fields, found {}", fields.len()),
            ));
        }
        let v = parse_fields(path, line_no, &fields)?;
        points.push(Point3::new(v[0], v[1], v[2]));
        if with_normals {
            normals.push(make_normal(path, line_no, Vec3::new(v[3], v[4], v[5]))?);
        }
    }
    Ok((points, with_normals.then_some(normals)))
}

struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<String>,
    has_list: bool,
}

fn parse_ply(path: &Path, text: &str) -> Result<Parsed> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(parse_err(path, 1, "missing 'ply' magic")),
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut saw_format = false;
    loop {
        let Some((i, line)) = lines.next() else {
            return Err(parse_err(path, 0, "unterminated PLY header"));
        };
        let line_no = i + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => saw_format = true,
            ["format", other, ..] => return Err(parse_err(path, line_no, format!("unsupported PLY format '{other}'"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| parse_err(path, line_no, format!("bad element count '{count}'")))?;
                elements.push(PlyElement {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                    has_list: false,
                });
            }
            ["property", "list", ..] => match elements.last_mut() {
                Some(e) => e.has_list = true,
                None => return Err(parse_err(path, line_no, "property before element")),
            },
            ["property", _ty, name] => match elements.last_mut() {
                Some(e) => e.properties.push(name.to_string()),
                None => return Err(parse_err(path, line_no, "property before element")),
            },
            _ => return Err(parse_err(path, line_no, format!("unrecognized header line '{line}'"))),
        }
    }
    if !saw_format {
        return Err(parse_err(path, 0, "PLY header has no format line"));
    }
    let Some(vertex) = elements.iter().find(|e| e.name == "vertex") else {
        return Err(parse_err(path, 0, "PLY file has no vertex element"));
    };
    if vertex.has_list {
        return Err(parse_err(
            path,
            0,
            "list properties on vertex element are not supported",
        ));
    }
    let find = |n: &str| vertex.properties.iter().position(|p| p == n);
    let (Some(xi), Some(yi), Some(zi)) = (find("x"), find("y"), find("z")) else {
        return Err(parse_err(path, 0, "vertex element lacks x/y/z properties"));
    };
    let normal_idx = match (find("nx"), find("ny"), find("nz")) {
        (Some(a), Some(b), Some(c)) => Some([a, b, c]),
        _ => None,
    };

    let mut points = Vec::with_capacity(vertex.count);
    let mut normals = Vec::new();
    for element in &elements {
        for _ in 0..element.count {
            let Some((i, line)) = lines.next() else {
                return Err(parse_err(
                    path,
                    0,
                    format!("file ends inside element '{}'", element.name),
                ));
            };
            if element.name != "vertex" {
                continue;
            }
            let line_no = i + 1;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != vertex.properties.len() {
                return Err(parse_err(
                    path,
                    line_no,
                    format!("expected {} fields, found {}", vertex.properties.len(), fields.len()),
                ));
            }
            let v = parse_fields(path, line_no, &fields)?;
            points.push(Point3::new(v[xi], v[yi], v[zi]));
            if let Some([a, b, c]) = normal_idx {
                normals.push(make_normal(path, line_no, Vec3::new(v[a], v[b], v[c]))?);
            }
        }
    }
    Ok((points, normal_idx.map(|_| normals)))
}

/// Write a point cloud. Coordinates use shortest round-trip formatting so a
/// reload reproduces every value bit-for-bit. The cloud name is not stored.
pub fn save_cloud(cloud: &PointCloud, path: impl AsRef<Path>, format: CloudFormat) -> Result<()> {
    let path = path.as_ref();
    let normals = cloud.normals();
    let mut out = String::with_capacity(cloud.len() * 64);
    match format {
        CloudFormat::Xyz => {
            for p in cloud.points() {
                let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
            }
        }
        CloudFormat::Xyzn => {
            let normals = normals.ok_or(Error::MissingNormals)?;
            for (p, n) in cloud.points().iter().zip(normals) {
                let n = n.as_vec();
                let _ = writeln!(out, "{} {} {} {} {} {}", p.x, p.y, p.z, n.x, n.y, n.z);
            }
        }
        CloudFormat::PlyAscii => {
            out.push_str("ply\nformat ascii 1.0\n");
            let _ = writeln!(out, "element vertex {}", cloud.len());
            out.push_str("property double x\nproperty double y\nproperty double z\n");
            if normals.is_some() {
                out.push_str("property double nx\nproperty double ny\nproperty double nz\n");
            }
            out.push_str("end_header\n");
            for (i, p) in cloud.points().iter().enumerate() {
                match normals {
                    Some(ns) => {
                        let n = ns[i].as_vec();
                        let _ = writeln!(out, "{} {} {} {} {} {}", p.x, p.y, p.z, n.x, n.y, n.z);
                    }
                    None => {
                        let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
                    }
                }
            }
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
