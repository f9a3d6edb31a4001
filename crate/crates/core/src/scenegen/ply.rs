//! ASCII PLY with `x y z red green blue` and optional integer `semantic` /
//! `instance` vertex properties. The class count travels in a
//! `comment n_class <k>` header line.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::{Scene, BACKGROUND};

#[derive(Debug, thiserror::Error)]
pub enum PlyError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid scene: {0}")]
    Scene(#[from] super::SceneError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn parse_err(line: usize, message: impl Into<String>) -> PlyError {
    PlyError::Parse {
        line,
        message: message.into(),
    }
}

/// Writes `scene`. With `labels`, colours come from a fixed palette indexed by
/// label (negative labels are grey) instead of the scene's own colours, and
/// the labels are written as the `instance` property.
pub fn write_ply_to<W: Write>(mut w: W, scene: &Scene, labels: Option<&[i32]>) -> Result<(), PlyError> {
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "comment n_class {}", scene.n_class)?;
    writeln!(w, "element vertex {}", scene.len())?;
    for p in ["x", "y", "z"] {
        writeln!(w, "property double {p}")?;
    }
    for p in ["red", "green", "blue"] {
        writeln!(w, "property uchar {p}")?;
    }
    writeln!(w, "property int semantic")?;
    writeln!(w, "property int instance")?;
    writeln!(w, "end_header")?;
    for i in 0..scene.len() {
        let [x, y, z] = scene.positions[i];
        let (rgb, inst) = match labels {
            Some(l) => (palette(l[i]), l[i]),
            None => (scene.colors[i].map(|c| (c * 255.0).round() as u8), scene.instance[i]),
        };
        writeln!(
            w,
            "{x} {y} {z} {} {} {} {} {inst}",
            rgb[0], rgb[1], rgb[2], scene.semantic[i]
        )?;
    }
    Ok(())
}

pub fn write_ply(path: &Path, scene: &Scene, labels: Option<&[i32]>) -> Result<(), PlyError> {
    let mut buf = Vec::new();
    write_ply_to(&mut buf, scene, labels)?;
    std::fs::write(path, buf)?;
    Ok(())
}

fn palette(label: i32) -> [u8; 3] {
    const COLORS: [[u8; 3]; 10] = [
        [230, 25, 75],
        [60, 180, 75],
        [255, 225, 25],
        [0, 130, 200],
        [245, 130, 48],
        [145, 30, 180],
        [70, 240, 240],
        [240, 50, 230],
        [210, 245, 60],
        [0, 128, 128],
    ];
    if label < 0 {
        [128, 128, 128]
    } else {
        COLORS[label as usize % COLORS.len()]
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    Int,
    Float,
}

pub fn read_ply(path: &Path) -> Result<Scene, PlyError> {
    let file = std::fs::File::open(path)?;
    read_ply_from(BufReader::new(file))
}

pub fn read_ply_from<R: BufRead>(r: R) -> Result<Scene, PlyError> {
    let all: Vec<String> = r.lines().collect::<Result<_, _>>()?;
    let mut cursor = 0usize;
    let mut next = |what: &str| -> Result<(usize, String), PlyError> {
        let line = all
            .get(cursor)
            .ok_or_else(|| parse_err(cursor + 1, format!("unexpected end of file, expected {what}")))?;
        cursor += 1;
        Ok((cursor, line.clone()))
    };

    let (n, magic) = next("magic")?;
    if magic.trim() != "ply" {
        return Err(parse_err(n, "missing 'ply' magic"));
    }
    let mut vertex_count: Option<usize> = None;
    let mut in_vertex = false;
    let mut props: Vec<(String, Kind)> = Vec::new();
    let mut n_class: Option<usize> = None;
    loop {
        let (n, line) = next("end_header")?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["format", "ascii", "1.0"] => {}
            ["format", other @ ..] => return Err(parse_err(n, format!("unsupported format {}", other.join(" ")))),
            ["comment", "n_class", k] => {
                n_class = Some(k.parse().map_err(|_| parse_err(n, format!("bad n_class {k}")))?);
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", "vertex", count] => {
                vertex_count = Some(
                    count
                        .parse()
                        .map_err(|_| parse_err(n, format!("bad vertex count {count}")))?,
                );
                in_vertex = true;
            }
            ["element", name, count] => {
                if *count != "0" {
                    return Err(parse_err(n, format!("unsupported element {name} with {count} entries")));
                }
                in_vertex = false;
            }
            ["property", "list", ..] if !in_vertex => {}
            ["property", ty, name] if in_vertex => {
                let kind = match *ty {
                    "char" | "uchar" | "short" | "ushort" | "int" | "uint" | "int8" | "uint8" | "int16" | "uint16"
                    | "int32" | "uint32" => Kind::Int,
                    "float" | "double" | "float32" | "float64" => Kind::Float,
                    other => return Err(parse_err(n, format!("unknown property type {other}"))),
                };
                props.push((name.to_string(), kind));
            }
            ["property", ..] if !in_vertex => {}
            ["end_header"] => break,
            _ => return Err(parse_err(n, format!("malformed header line: {line}"))),
        }
    }
    let count = vertex_count.ok_or_else(|| parse_err(0, "header declares no vertex element"))?;
    let col = |name: &str| props.iter().position(|(p, _)| p == name);
    let required = ["x", "y", "z", "red", "green", "blue"];
    let mut idx = [0usize; 6];
    for (slot, name) in idx.iter_mut().zip(required) {
        *slot = col(name).ok_or_else(|| parse_err(0, format!("missing vertex property {name}")))?;
    }
    let color_is_int: Vec<bool> = idx[3..].iter().map(|&i| props[i].1 == Kind::Int).collect();
    let (sem_col, inst_col) = (col("semantic"), col("instance"));

    let mut scene = Scene {
        positions: Vec::with_capacity(count),
        colors: Vec::with_capacity(count),
        semantic: Vec::with_capacity(count),
        instance: Vec::with_capacity(count),
        n_class: 0,
    };
    for _ in 0..count {
        let (n, line) = next("vertex data").map_err(|e| match e {
            PlyError::Parse { line, .. } => parse_err(
                line,
                format!(
                    "element count mismatch: header declares {count} vertices, found {}",
                    scene.len()
                ),
            ),
            other => other,
        })?;
        let values: Vec<&str> = line.split_whitespace().collect();
        if values.len() != props.len() {
            return Err(parse_err(
                n,
                format!("expected {} values, found {}", props.len(), values.len()),
            ));
        }
        let num = |i: usize| -> Result<f64, PlyError> {
            values[i]
                .parse::<f64>()
                .map_err(|_| parse_err(n, format!("bad number {}", values[i])))
        };
        let int = |i: usize| -> Result<i32, PlyError> {
            values[i]
                .parse::<i32>()
                .map_err(|_| parse_err(n, format!("bad integer {}", values[i])))
        };
        scene.positions.push([num(idx[0])?, num(idx[1])?, num(idx[2])?]);
        let mut rgb = [0.0; 3];
        for c in 0..3 {
            let v = num(idx[3 + c])?;
            rgb[c] = if color_is_int[c] { v / 255.0 } else { v };
        }
        scene.colors.push(rgb);
        scene.semantic.push(sem_col.map(int).transpose()?.unwrap_or(BACKGROUND));
        scene
            .instance
            .push(inst_col.map(int).transpose()?.unwrap_or(BACKGROUND));
    }
    while let Ok((n, line)) = next("trailing data") {
        if !line.trim().is_empty() {
            return Err(parse_err(
                n,
                format!("element count mismatch: data continues past {count} declared vertices"),
            ));
        }
    }
    let max_class = scene.semantic.iter().copied().max().unwrap_or(0).max(0) as usize;
    scene.n_class = n_class.unwrap_or(max_class + 1);
    scene.validate()?;
    Ok(scene)
}
