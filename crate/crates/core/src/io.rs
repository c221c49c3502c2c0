//! File formats.
//!
//! All binary payloads are little-endian `f32` after a one-line ASCII header
//! (plus an angle line for projection stacks):
//!
//! - volume: `MVOL1 nx ny nz sx sy sz`, values x-fastest
//! - projection stack: `MPRJ1 nu nv count`, then the angles in radians, then
//!   `count` images u-fastest
//! - bilinear model: `BLMODEL1` followed by `key value…` lines up to `end`,
//!   then the payload listed in [`write_model`]
//!
//! Grayscale previews are binary PGM (`P5`, 8 bit) with the window written
//! to a `<file>.window` sidecar as `min max`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::bilinear::BilinearModel;
use crate::bspline::SplineCurve;
use crate::error::{Error, Result};
use crate::phantom::Phase;
use crate::projector::{ProjectionImage, ProjectionStack, Volume};
use crate::regression::RegressionMap;
use crate::tensor::Tensor3;

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn put_f32s<'a>(w: &mut impl Write, path: &Path, values: impl IntoIterator<Item = &'a f64>) -> Result<()> {
    for v in values {
        w.write_all(&(*v as f32).to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn get_f32s(r: &mut impl Read, path: &Path, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::format(path, format!("payload truncated, expected {n} values"))
        } else {
            Error::io(path, e)
        }
    })?;
    Ok(buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect())
}

fn expect_eof(r: &mut impl Read, path: &Path) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe) {
        Ok(0) => Ok(()),
        Ok(_) => Err(Error::format(path, "trailing bytes after payload")),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn read_line(r: &mut impl BufRead, path: &Path) -> Result<String> {
    let mut line = String::new();
    let n = r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    if n == 0 {
        return Err(Error::format(path, "unexpected end of header"));
    }
    Ok(line.trim_end_matches(['\n', '\r']).to_string())
}

fn parse<T: std::str::FromStr>(tok: Option<&str>, path: &Path, what: &str) -> Result<T> {
    tok.and_then(|t| t.parse().ok()).ok_or_else(|| Error::format(path, format!("bad or missing {what}")))
}

fn flush(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_volume(path: &Path, v: &Volume) -> Result<()> {
    let mut w = create(path)?;
    let [nx, ny, nz] = v.dims();
    let [sx, sy, sz] = v.spacing();
    writeln!(w, "MVOL1 {nx} {ny} {nz} {sx} {sy} {sz}").map_err(|e| Error::io(path, e))?;
    put_f32s(&mut w, path, v.values())?;
    flush(w, path)
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    let mut r = open(path)?;
    let header = read_line(&mut r, path)?;
    let mut it = header.split_whitespace();
    if it.next() != Some("MVOL1") {
        return Err(Error::format(path, "not an MVOL1 volume"));
    }
    let dims: [usize; 3] = [parse(it.next(), path, "nx")?, parse(it.next(), path, "ny")?, parse(it.next(), path, "nz")?];
    let spacing: [f64; 3] = [parse(it.next(), path, "sx")?, parse(it.next(), path, "sy")?, parse(it.next(), path, "sz")?];
    let values = get_f32s(&mut r, path, dims.iter().product())?;
    expect_eof(&mut r, path)?;
    Volume::new(dims, spacing, values).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_stack(path: &Path, s: &ProjectionStack) -> Result<()> {
    let first = s.images.first().ok_or_else(|| Error::Input("cannot write an empty projection stack".into()))?;
    let [nu, nv] = first.dims();
    let mut w = create(path)?;
    writeln!(w, "MPRJ1 {nu} {nv} {}", s.len()).map_err(|e| Error::io(path, e))?;
    let angles: Vec<String> = s.angles.iter().map(|a| a.to_string()).collect();
    writeln!(w, "{}", angles.join(" ")).map_err(|e| Error::io(path, e))?;
    for img in &s.images {
        put_f32s(&mut w, path, img.values())?;
    }
    flush(w, path)
}

/// Pixel spacing is not part of the stack format; pass it from the
/// trajectory manifest.
pub fn read_stack(path: &Path, pixel_spacing: [f64; 2]) -> Result<ProjectionStack> {
    let mut r = open(path)?;
    let header = read_line(&mut r, path)?;
    let mut it = header.split_whitespace();
    if it.next() != Some("MPRJ1") {
        return Err(Error::format(path, "not an MPRJ1 projection stack"));
    }
    let nu: usize = parse(it.next(), path, "nu")?;
    let nv: usize = parse(it.next(), path, "nv")?;
    let count: usize = parse(it.next(), path, "count")?;
    let angle_line = read_line(&mut r, path)?;
    let angles = angle_line
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| Error::format(path, format!("bad angle {t:?}"))))
        .collect::<Result<Vec<f64>>>()?;
    if angles.len() != count {
        return Err(Error::format(path, format!("header announces {count} images but lists {} angles", angles.len())));
    }
    let mut images = Vec::with_capacity(count);
    for _ in 0..count {
        let values = get_f32s(&mut r, path, nu * nv)?;
        images.push(ProjectionImage::new([nu, nv], pixel_spacing, values).map_err(|e| Error::format(path, e.to_string()))?);
    }
    expect_eof(&mut r, path)?;
    ProjectionStack::new(angles, images).map_err(|e| Error::format(path, e.to_string()))
}

/// Write a single projection as a one-image stack.
pub fn write_projection(path: &Path, img: &ProjectionImage, angle: f64) -> Result<()> {
    write_stack(path, &ProjectionStack::new(vec![angle], vec![img.clone()])?)
}

/// Model file. Header keys, one per line after `BLMODEL1`:
///
/// ```text
/// dims <pixels> <f> <g> <F> <G>
/// detector <nu> <nv> <du> <dv>
/// spline <degree> <periodic 0|1> <knots> <control points> <angle min> <angle max>
/// singular <resp count> <rot count>
/// truncation <relative error>
/// regression none | regression <e> <ridge>
/// end
/// ```
///
/// Payload order: angles (G), phases (F), A (F×f), B (G×g), core, knots,
/// control points, resp/rot singular values, then W (e×f) and its residuals
/// when present. Matrices are column-major.
pub fn write_model(path: &Path, m: &BilinearModel, reg: Option<&RegressionMap>) -> Result<()> {
    let mut w = create(path)?;
    let sp = &m.rot_spline;
    let io = |e| Error::io(path, e);
    writeln!(w, "BLMODEL1").map_err(io)?;
    writeln!(w, "dims {} {} {} {} {}", m.pixels(), m.f(), m.g(), m.phases.len(), m.angles.len()).map_err(io)?;
    writeln!(w, "detector {} {} {} {}", m.detector[0], m.detector[1], m.pixel_spacing[0], m.pixel_spacing[1]).map_err(io)?;
    let (amin, amax) = sp.angle_domain();
    writeln!(
        w,
        "spline {} {} {} {} {amin} {amax}",
        sp.degree(),
        u8::from(sp.is_periodic()),
        sp.knots().len(),
        sp.control_points().nrows()
    )
    .map_err(io)?;
    writeln!(w, "singular {} {}", m.resp_singular_values.len(), m.rot_singular_values.len()).map_err(io)?;
    writeln!(w, "truncation {}", m.truncation_error).map_err(io)?;
    match reg {
        Some(r) => writeln!(w, "regression {} {}", r.outputs(), r.ridge),
        None => writeln!(w, "regression none"),
    }
    .map_err(io)?;
    writeln!(w, "end").map_err(io)?;

    let phases: Vec<f64> = m.phases.iter().map(|p| p.t()).collect();
    put_f32s(&mut w, path, &m.angles)?;
    put_f32s(&mut w, path, &phases)?;
    put_f32s(&mut w, path, m.resp_weights.as_slice())?;
    put_f32s(&mut w, path, m.rot_weights.as_slice())?;
    put_f32s(&mut w, path, m.core.values())?;
    put_f32s(&mut w, path, sp.knots())?;
    put_f32s(&mut w, path, sp.control_points().as_slice())?;
    put_f32s(&mut w, path, &m.resp_singular_values)?;
    put_f32s(&mut w, path, &m.rot_singular_values)?;
    if let Some(r) = reg {
        put_f32s(&mut w, path, r.w.as_slice())?;
        put_f32s(&mut w, path, &r.residuals)?;
    }
    flush(w, path)
}

fn header_fields(r: &mut impl BufRead, key: &str, path: &Path) -> Result<Vec<String>> {
    let line = read_line(r, path)?;
    let mut it = line.split_whitespace();
    if it.next() != Some(key) {
        return Err(Error::format(path, format!("expected `{key}` line, got {line:?}")));
    }
    Ok(it.map(str::to_string).collect())
}

pub fn read_model(path: &Path) -> Result<(BilinearModel, Option<RegressionMap>)> {
    let mut r = open(path)?;
    if read_line(&mut r, path)? != "BLMODEL1" {
        return Err(Error::format(path, "not a BLMODEL1 model file"));
    }
    let dims = header_fields(&mut r, "dims", path)?;
    let [pixels, f, g, nf, ng]: [usize; 5] = std::array::from_fn(|i| dims.get(i).and_then(|t| t.parse().ok()).unwrap_or(0));
    if [pixels, f, g, nf, ng].contains(&0) {
        return Err(Error::format(path, "bad dims line"));
    }
    let det = header_fields(&mut r, "detector", path)?;
    let mut det = det.iter().map(String::as_str);
    let detector = [parse(det.next(), path, "nu")?, parse(det.next(), path, "nv")?];
    let pixel_spacing = [parse(det.next(), path, "du")?, parse(det.next(), path, "dv")?];
    let spl = header_fields(&mut r, "spline", path)?;
    let mut spl = spl.iter().map(String::as_str);
    let degree: usize = parse(spl.next(), path, "spline degree")?;
    let periodic: u8 = parse(spl.next(), path, "periodic flag")?;
    let n_knots: usize = parse(spl.next(), path, "knot count")?;
    let n_ctrl: usize = parse(spl.next(), path, "control point count")?;
    let amin: f64 = parse(spl.next(), path, "angle min")?;
    let amax: f64 = parse(spl.next(), path, "angle max")?;
    let sing = header_fields(&mut r, "singular", path)?;
    let n_rsv: usize = parse(sing.first().map(String::as_str), path, "resp singular count")?;
    let n_gsv: usize = parse(sing.get(1).map(String::as_str), path, "rot singular count")?;
    let trunc = header_fields(&mut r, "truncation", path)?;
    let truncation_error: f64 = parse(trunc.first().map(String::as_str), path, "truncation")?;
    let reg_line = header_fields(&mut r, "regression", path)?;
    let reg_fields: Vec<&str> = reg_line.iter().map(String::as_str).collect();
    let reg_shape = match reg_fields.as_slice() {
        ["none"] => None,
        [e, ridge] => Some((parse::<usize>(Some(e), path, "regression outputs")?, parse::<f64>(Some(ridge), path, "ridge")?)),
        _ => return Err(Error::format(path, "bad regression line")),
    };
    if read_line(&mut r, path)? != "end" {
        return Err(Error::format(path, "missing `end` line"));
    }
    if detector[0] * detector[1] != pixels {
        return Err(Error::format(path, "detector does not match pixel count"));
    }

    let angles = get_f32s(&mut r, path, ng)?;
    let phases = get_f32s(&mut r, path, nf)?
        .into_iter()
        .map(Phase::new)
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::format(path, e.to_string()))?;
    let a = DMatrix::from_vec(nf, f, get_f32s(&mut r, path, nf * f)?);
    let b = DMatrix::from_vec(ng, g, get_f32s(&mut r, path, ng * g)?);
    let core =
        Tensor3::new([pixels, f, g], get_f32s(&mut r, path, pixels * f * g)?).map_err(|e| Error::format(path, e.to_string()))?;
    let knots = get_f32s(&mut r, path, n_knots)?;
    let ctrl = DMatrix::from_vec(n_ctrl, g, get_f32s(&mut r, path, n_ctrl * g)?);
    let rot_spline = SplineCurve::from_parts(degree, periodic == 1, knots, ctrl, amin, amax)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let resp_singular_values = get_f32s(&mut r, path, n_rsv)?;
    let rot_singular_values = get_f32s(&mut r, path, n_gsv)?;
    let reg = match reg_shape {
        None => None,
        Some((e, ridge)) => Some(RegressionMap {
            w: DMatrix::from_vec(e, f, get_f32s(&mut r, path, e * f)?),
            ridge,
            residuals: get_f32s(&mut r, path, e)?,
        }),
    };
    expect_eof(&mut r, path)?;
    let model = BilinearModel {
        core,
        resp_weights: a,
        rot_weights: b,
        angles,
        phases,
        rot_spline,
        detector,
        pixel_spacing,
        resp_singular_values,
        rot_singular_values,
        truncation_error,
    };
    Ok((model, reg))
}

/// Linear min/max window mapped to 0..=255.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Window {
    pub min: f64,
    pub max: f64,
}

impl Window {
    pub fn of(values: &[f64]) -> Self {
        let (min, max) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if min.is_finite() {
            Self { min, max }
        } else {
            Self { min: 0.0, max: 0.0 }
        }
    }

    pub fn gray(&self, v: f64) -> u8 {
        if self.max <= self.min {
            return 0;
        }
        ((v - self.min) / (self.max - self.min) * 255.0).round().clamp(0.0, 255.0) as u8
    }
}

/// Write a `width × height` image (row-major from the top, first index
/// fastest) as an 8-bit PGM plus its window sidecar.
pub fn write_pgm(path: &Path, width: usize, height: usize, values: &[f64], window: Option<Window>) -> Result<Window> {
    if values.len() != width * height {
        return Err(Error::Dimension(format!("{width}×{height} image needs {} values, got {}", width * height, values.len())));
    }
    let window = window.unwrap_or_else(|| Window::of(values));
    let mut w = create(path)?;
    write!(w, "P5\n{width} {height}\n255\n").map_err(|e| Error::io(path, e))?;
    // Detector rows run along +z; write the top row first.
    for row in (0..height).rev() {
        let bytes: Vec<u8> = values[row * width..(row + 1) * width].iter().map(|&v| window.gray(v)).collect();
        w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    }
    flush(w, path)?;
    let side = sidecar(path);
    std::fs::write(&side, format!("{} {}\n", window.min, window.max)).map_err(|e| Error::io(&side, e))?;
    Ok(window)
}

fn sidecar(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".window");
    s.into()
}

pub fn write_image_pgm(path: &Path, img: &ProjectionImage, window: Option<Window>) -> Result<Window> {
    let [nu, nv] = img.dims();
    write_pgm(path, nu, nv, img.values(), window)
}

/// Read an 8-bit PGM back as raw gray levels (`width`, `height`, top row first).
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let mut r = open(path)?;
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        let line = read_line(&mut r, path)?;
        let line = line.split('#').next().unwrap_or("");
        tokens.extend(line.split_whitespace().map(str::to_string));
    }
    if tokens[0] != "P5" || tokens[3] != "255" {
        return Err(Error::format(path, "only 8-bit binary PGM is supported"));
    }
    let width: usize = parse(Some(&tokens[1]), path, "width")?;
    let height: usize = parse(Some(&tokens[2]), path, "height")?;
    let mut data = vec![0u8; width * height];
    r.read_exact(&mut data).map_err(|e| Error::io(path, e))?;
    Ok((width, height, data))
}

/// Write rows of already formatted fields under `header`.
pub fn write_csv<S: AsRef<str>>(path: &Path, header: &[&str], rows: &[Vec<S>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::Dimension(format!("CSV row has {} fields, header has {}", row.len(), header.len())));
        }
        w.write_record(row.iter().map(|s| s.as_ref())).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::io(path, e),
        other => Error::format(path, format!("{other:?}")),
    }
}

/// Read a CSV written by [`write_csv`]: header plus string rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(|e| csv_err(path, e))?.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

/// Shortest round-trip float formatting used in every CSV.
pub fn fmt(v: f64) -> String {
    v.to_string()
}
