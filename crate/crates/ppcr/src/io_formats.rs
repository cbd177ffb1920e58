//! File formats: point clouds (ascii PLY and XYZ), 4x4 transform text
//! files, trace tables, and batch summaries.
//!
//! Parsers are strict about the documented grammar and always name the
//! offending line. Writers use fixed formatting so identical inputs
//! produce byte-identical files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write as _};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{
    nearest_orthonormal, orthonormality_defect, Mat3, Point3, PointCloud, RigidTransform, Vec3,
};
use crate::metrics::EvaluationSummary;
use crate::registration::IterationRecord;

/// Supported cloud file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    PlyAscii,
    Xyz,
}

impl CloudFormat {
    /// Pick a format from the file extension: `.ply` (any case) is PLY,
    /// everything else is treated as plain XYZ.
    pub fn from_path(path: &Path) -> CloudFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("ply") => CloudFormat::PlyAscii,
            _ => CloudFormat::Xyz,
        }
    }
}

/// Header line of a trace file; column order is part of the contract.
pub const TRACE_HEADER: &str =
    "iteration,initial_cost,final_cost,cost_drop,successful_steps,mse_prev,mse_gt";

/// Header line of a batch summary file.
pub const SUMMARY_HEADER: &str = "median_mse,q75_mse,q95_mse,mean_iterations";

/// 9-significant-digit scientific notation, shared by every writer that
/// serializes cloud coordinates or diagnostics.
pub fn format_number(x: f64) -> String {
    format!("{x:.8e}")
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn open_reader(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| io_error(path, e))
}

fn create_writer(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io_error(path, e))
}

fn parse_coordinate(token: &str, path: &Path, line: usize) -> Result<f64> {
    let value: f64 = token
        .parse()
        .map_err(|_| parse_error(path, line, format!("invalid number '{token}'")))?;
    if !value.is_finite() {
        return Err(parse_error(
            path,
            line,
            format!("non-finite coordinate '{token}'"),
        ));
    }
    Ok(value)
}

/// Read a point cloud, auto-detecting the format from the extension.
pub fn read_cloud_auto(path: &Path) -> Result<PointCloud> {
    read_cloud(path, CloudFormat::from_path(path))
}

pub fn read_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud> {
    match format {
        CloudFormat::PlyAscii => read_ply(path),
        CloudFormat::Xyz => read_xyz(path),
    }
}

/// XYZ: one `x y z` triple per line, blank lines and `#` comments skipped.
fn read_xyz(path: &Path) -> Result<PointCloud> {
    let reader = open_reader(path)?;
    let mut points = Vec::new();
    let mut line_count = 0;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        line_count = line_no;
        let line = line.map_err(|e| io_error(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = trimmed.split_whitespace().collect();
        if tokens.len() != 3 {
            return Err(parse_error(
                path,
                line_no,
                format!("expected 3 coordinates, found {}", tokens.len()),
            ));
        }
        points.push(Point3::new(
            parse_coordinate(tokens[0], path, line_no)?,
            parse_coordinate(tokens[1], path, line_no)?,
            parse_coordinate(tokens[2], path, line_no)?,
        ));
    }
    if points.is_empty() {
        return Err(parse_error(path, line_count + 1, "file contains no points"));
    }
    Ok(PointCloud::new(points))
}

const FLOAT_TYPES: [&str; 4] = ["float", "float32", "double", "float64"];

/// Ascii PLY subset: the vertex element must be declared first and its
/// first three properties must be float-typed x, y, z. Extra vertex
/// properties and extra elements (faces and the like) are tolerated and
/// skipped.
fn read_ply(path: &Path) -> Result<PointCloud> {
    let reader = open_reader(path)?;
    let mut lines = reader.lines().enumerate();

    let mut next_line = |eof_msg: &str, at: &mut usize| -> Result<String> {
        match lines.next() {
            Some((idx, line)) => {
                *at = idx + 1;
                line.map_err(|e| io_error(path, e))
            }
            None => Err(parse_error(path, *at + 1, eof_msg)),
        }
    };

    let mut line_no = 0;
    let magic = next_line("empty file, expected 'ply'", &mut line_no)?;
    if magic.trim() != "ply" {
        return Err(parse_error(path, line_no, "expected 'ply' magic line"));
    }

    let mut format_seen = false;
    let mut vertex_count: Option<usize> = None;
    let mut in_vertex_element = false;
    // (line, type, name) per vertex property, in declaration order
    let mut vertex_properties: Vec<(usize, String, String)> = Vec::new();

    loop {
        let line = next_line("header never ends, expected 'end_header'", &mut line_no)?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.first().copied() {
            None => continue, // blank header line
            Some("comment") | Some("obj_info") => continue,
            Some("format") => {
                if tokens != ["format", "ascii", "1.0"] {
                    return Err(parse_error(
                        path,
                        line_no,
                        "only 'format ascii 1.0' is supported",
                    ));
                }
                format_seen = true;
            }
            Some("element") => {
                if tokens.len() != 3 {
                    return Err(parse_error(path, line_no, "malformed element declaration"));
                }
                if tokens[1] == "vertex" {
                    if vertex_count.is_some() {
                        return Err(parse_error(path, line_no, "duplicate vertex element"));
                    }
                    let count: usize = tokens[2].parse().map_err(|_| {
                        parse_error(path, line_no, format!("invalid vertex count '{}'", tokens[2]))
                    })?;
                    if count == 0 {
                        return Err(parse_error(path, line_no, "file declares zero vertices"));
                    }
                    vertex_count = Some(count);
                    in_vertex_element = true;
                } else {
                    if vertex_count.is_none() {
                        return Err(parse_error(
                            path,
                            line_no,
                            "the vertex element must be declared first",
                        ));
                    }
                    in_vertex_element = false;
                }
            }
            Some("property") => {
                if in_vertex_element {
                    let (ty, name) = match tokens.as_slice() {
                        ["property", ty, name] => (ty.to_string(), name.to_string()),
                        // list properties have no fixed width; recording the
                        // declaration is enough since we never read past x,y,z
                        ["property", "list", .., name] => ("list".to_string(), name.to_string()),
                        _ => {
                            return Err(parse_error(
                                path,
                                line_no,
                                "malformed property declaration",
                            ))
                        }
                    };
                    vertex_properties.push((line_no, ty, name));
                }
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(parse_error(
                    path,
                    line_no,
                    format!("unrecognized header keyword '{other}'"),
                ));
            }
        }
    }

    if !format_seen {
        return Err(parse_error(path, line_no, "missing 'format ascii 1.0' line"));
    }
    let count =
        vertex_count.ok_or_else(|| parse_error(path, line_no, "missing vertex element"))?;
    if vertex_properties.len() < 3 {
        return Err(parse_error(
            path,
            line_no,
            "vertex element declares fewer than 3 properties",
        ));
    }
    for (expected, (prop_line, ty, name)) in
        ["x", "y", "z"].iter().zip(vertex_properties.iter())
    {
        if name != expected || !FLOAT_TYPES.contains(&ty.as_str()) {
            return Err(parse_error(
                path,
                *prop_line,
                format!(
                    "the first three vertex properties must be float-typed x, y, z; found '{ty} {name}'"
                ),
            ));
        }
    }

    let mut points = Vec::with_capacity(count);
    for i in 0..count {
        let line = next_line(
            &format!("expected {count} vertex rows, found {i}"),
            &mut line_no,
        )?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() < 3 {
            return Err(parse_error(
                path,
                line_no,
                format!("vertex row has {} values, expected at least 3", tokens.len()),
            ));
        }
        points.push(Point3::new(
            parse_coordinate(tokens[0], path, line_no)?,
            parse_coordinate(tokens[1], path, line_no)?,
            parse_coordinate(tokens[2], path, line_no)?,
        ));
    }
    // anything after the vertex rows belongs to other elements; skipped
    Ok(PointCloud::new(points))
}

pub fn write_cloud(path: &Path, cloud: &PointCloud, format: CloudFormat) -> Result<()> {
    let mut out = create_writer(path)?;
    let body = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        if format == CloudFormat::PlyAscii {
            writeln!(out, "ply")?;
            writeln!(out, "format ascii 1.0")?;
            writeln!(out, "element vertex {}", cloud.len())?;
            writeln!(out, "property double x")?;
            writeln!(out, "property double y")?;
            writeln!(out, "property double z")?;
            writeln!(out, "end_header")?;
        }
        for p in cloud.iter() {
            writeln!(
                out,
                "{} {} {}",
                format_number(p.x),
                format_number(p.y),
                format_number(p.z)
            )?;
        }
        out.flush()
    };
    body(&mut out).map_err(|e| io_error(path, e))
}

/// Read a 4x4 row-major homogeneous transform. The last row must be
/// `0 0 0 1`; the rotation block may be slightly off the manifold (it is
/// snapped back), but a defect beyond 1e-3 is rejected as not a rotation.
pub fn read_transform(path: &Path) -> Result<RigidTransform> {
    let reader = open_reader(path)?;
    let mut lines = reader.lines();
    let mut rows = [[0.0f64; 4]; 4];
    for (r, row) in rows.iter_mut().enumerate() {
        let line_no = r + 1;
        let line = match lines.next() {
            Some(line) => line.map_err(|e| io_error(path, e))?,
            None => return Err(parse_error(path, line_no, "expected 4 matrix rows")),
        };
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 4 {
            return Err(parse_error(
                path,
                line_no,
                format!("expected 4 numbers per row, found {}", tokens.len()),
            ));
        }
        for (c, token) in tokens.iter().enumerate() {
            row[c] = parse_coordinate(token, path, line_no)?;
        }
    }

    let last = rows[3];
    let last_ok = last[0].abs() <= 1e-9
        && last[1].abs() <= 1e-9
        && last[2].abs() <= 1e-9
        && (last[3] - 1.0).abs() <= 1e-9;
    if !last_ok {
        return Err(parse_error(path, 4, "last row must be 0 0 0 1"));
    }

    let rotation = Mat3::new(
        rows[0][0], rows[0][1], rows[0][2], rows[1][0], rows[1][1], rows[1][2], rows[2][0],
        rows[2][1], rows[2][2],
    );
    let defect = orthonormality_defect(&rotation);
    if defect > 1e-3 {
        return Err(parse_error(
            path,
            1,
            format!("rotation block is not a rotation (defect {defect:.3e})"),
        ));
    }
    let translation = Vec3::new(rows[0][3], rows[1][3], rows[2][3]);
    Ok(RigidTransform::new(
        nearest_orthonormal(&rotation),
        translation,
    ))
}

/// Write a 4x4 row-major homogeneous transform.
///
/// Entries use 17 significant digits rather than the 9 used everywhere
/// else: a transform is the product of a run, and re-reading it must
/// reproduce the pose to full double precision, which 9 digits cannot do
/// for translations of a meter or more.
pub fn write_transform(path: &Path, t: &RigidTransform) -> Result<()> {
    let mut out = create_writer(path)?;
    let r = t.rotation();
    let tr = t.translation();
    let rows = [
        [r[(0, 0)], r[(0, 1)], r[(0, 2)], tr.x],
        [r[(1, 0)], r[(1, 1)], r[(1, 2)], tr.y],
        [r[(2, 0)], r[(2, 1)], r[(2, 2)], tr.z],
        [0.0, 0.0, 0.0, 1.0],
    ];
    let body = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        for row in rows {
            writeln!(
                out,
                "{:.16e} {:.16e} {:.16e} {:.16e}",
                row[0], row[1], row[2], row[3]
            )?;
        }
        out.flush()
    };
    body(&mut out).map_err(|e| io_error(path, e))
}

/// One parsed trace row; the numeric mirror of [`IterationRecord`]
/// without the transform, which trace files do not carry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub cost_drop: f64,
    pub successful_steps: usize,
    pub mse_prev: Option<f64>,
    pub mse_gt: Option<f64>,
}

pub fn write_trace(path: &Path, trace: &[IterationRecord]) -> Result<()> {
    let mut out = create_writer(path)?;
    let body = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(out, "{TRACE_HEADER}")?;
        for rec in trace {
            let opt = |v: Option<f64>| v.map(format_number).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                rec.iteration,
                format_number(rec.initial_cost),
                format_number(rec.final_cost),
                format_number(rec.cost_drop),
                rec.successful_steps,
                opt(rec.mse_prev),
                opt(rec.mse_ground_truth),
            )?;
        }
        out.flush()
    };
    body(&mut out).map_err(|e| io_error(path, e))
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let reader = open_reader(path)?;
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => line.map_err(|e| io_error(path, e))?,
        None => return Err(parse_error(path, 1, "empty file, expected trace header")),
    };
    if header.trim_end() != TRACE_HEADER {
        return Err(parse_error(path, 1, "unrecognized trace header"));
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.map_err(|e| io_error(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        if fields.len() != 7 {
            return Err(parse_error(
                path,
                line_no,
                format!("expected 7 fields, found {}", fields.len()),
            ));
        }
        let int = |tok: &str, what: &str| -> Result<usize> {
            tok.parse()
                .map_err(|_| parse_error(path, line_no, format!("invalid {what} '{tok}'")))
        };
        let opt = |tok: &str| -> Result<Option<f64>> {
            if tok.is_empty() {
                Ok(None)
            } else {
                parse_coordinate(tok, path, line_no).map(Some)
            }
        };
        rows.push(TraceRow {
            iteration: int(fields[0], "iteration")?,
            initial_cost: parse_coordinate(fields[1], path, line_no)?,
            final_cost: parse_coordinate(fields[2], path, line_no)?,
            cost_drop: parse_coordinate(fields[3], path, line_no)?,
            successful_steps: int(fields[4], "step count")?,
            mse_prev: opt(fields[5])?,
            mse_gt: opt(fields[6])?,
        });
    }
    Ok(rows)
}

/// Write the aggregate half of an [`EvaluationSummary`] as a two-line
/// table in the trace file conventions.
pub fn write_summary(path: &Path, summary: &EvaluationSummary) -> Result<()> {
    let mut out = create_writer(path)?;
    let body = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(out, "{SUMMARY_HEADER}")?;
        writeln!(
            out,
            "{},{},{},{}",
            format_number(summary.median_mse),
            format_number(summary.q75_mse),
            format_number(summary.q95_mse),
            format_number(summary.mean_iterations),
        )?;
        out.flush()
    };
    body(&mut out).map_err(|e| io_error(path, e))
}
