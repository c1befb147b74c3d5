//! File formats: PNG/PGM rasters, Middlebury `.flo` flows with a validity
//! sidecar, JSON meshes and skeletons, and the person-bundle directory.
//!
//! Bundle directory layout:
//!
//! | file               | content                                   |
//! |--------------------|-------------------------------------------|
//! | `image.png`        | 8-bit RGB image                           |
//! | `parts.pgm`        | 8-bit body-part ids                       |
//! | `segmentation.pgm` | 8-bit garment-level labels                |
//! | `foreground.pgm`   | 0 / 255 foreground mask                   |
//! | `skeleton.json`    | `[{"name", "x", "y", "visible"}, ...]`    |
//! | `mesh.json`        | `{"vertices", "faces", "parts"}`          |

use std::fs;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{GrayImage, ImageFormat, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowfield::FlowField;
use crate::geometry::Mesh2D;
use crate::pipeline::{Joint, PersonBundle};
use crate::raster::{Image, Mask, PartMap};
use crate::scalar::Real;

/// `.flo` header tag, the bytes "PIEH" read as a little-endian f32.
pub const FLO_TAG: f32 = 202021.25;
/// Magnitudes at or above this mark unknown flow in `.flo` files.
pub const FLO_UNKNOWN: f32 = 1e10;
const FLO_UNKNOWN_THRESHOLD: f32 = 1e9;

pub const BUNDLE_IMAGE: &str = "image.png";
pub const BUNDLE_PARTS: &str = "parts.pgm";
pub const BUNDLE_SEGMENTATION: &str = "segmentation.pgm";
pub const BUNDLE_FOREGROUND: &str = "foreground.pgm";
pub const BUNDLE_SKELETON: &str = "skeleton.json";
pub const BUNDLE_MESH: &str = "mesh.json";

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| io_err(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn quantize<T: Real>(v: T) -> u8 {
    (v.to_f64_lossy().clamp(0.0, 1.0) * 255.0).round() as u8
}

fn unquantize<T: Real>(v: u8) -> T {
    T::lit(v as f64 / 255.0)
}

fn decode(path: &Path) -> Result<image::DynamicImage> {
    let bytes = read_bytes(path)?;
    image::load_from_memory(&bytes).map_err(|e| format_err(path, e.to_string()))
}

fn encode(path: &Path, img: image::DynamicImage, format: ImageFormat) -> Result<()> {
    let mut buf = std::io::Cursor::new(Vec::new());
    let written = if format == ImageFormat::Pnm {
        // binary PGM / PPM rather than the encoder's default PAM
        let subtype = match img.color() {
            image::ColorType::L8 => PnmSubtype::Graymap(SampleEncoding::Binary),
            _ => PnmSubtype::Pixmap(SampleEncoding::Binary),
        };
        img.write_with_encoder(PnmEncoder::new(&mut buf).with_subtype(subtype))
    } else {
        img.write_to(&mut buf, format)
    };
    written.map_err(|e| format_err(path, e.to_string()))?;
    write_bytes(path, buf.get_ref())
}

fn format_for(path: &Path) -> ImageFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") | Some("ppm") | Some("pnm") => ImageFormat::Pnm,
        _ => ImageFormat::Png,
    }
}

/// Writes a 1- or 3-channel image quantized to 8 bits. The format follows
/// the extension: `.pgm`/`.ppm` give PNM, anything else PNG.
pub fn save_image<T: Real>(path: &Path, img: &Image<T>) -> Result<()> {
    let (w, h) = img.dims();
    let dynimg = match img.channels() {
        1 => image::DynamicImage::ImageLuma8(GrayImage::from_fn(w as u32, h as u32, |x, y| {
            Luma([quantize(img.get(x as usize, y as usize, 0))])
        })),
        3 => image::DynamicImage::ImageRgb8(RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let p = img.pixel(x as usize, y as usize);
            Rgb([quantize(p[0]), quantize(p[1]), quantize(p[2])])
        })),
        c => return Err(format_err(path, format!("cannot store a {c}-channel image"))),
    };
    encode(path, dynimg, format_for(path))
}

/// Reads an image as RGB with values `k / 255`.
pub fn load_image<T: Real>(path: &Path) -> Result<Image<T>> {
    let rgb = decode(path)?.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    Ok(Image::from_fn(w, h, 3, |x, y, c| {
        unquantize(rgb.get_pixel(x as u32, y as u32)[c])
    }))
}

fn save_gray(path: &Path, w: usize, h: usize, f: impl Fn(usize, usize) -> u8) -> Result<()> {
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| Luma([f(x as usize, y as usize)]));
    encode(path, image::DynamicImage::ImageLuma8(img), format_for(path))
}

fn load_gray(path: &Path) -> Result<GrayImage> {
    let img = decode(path)?;
    match img {
        image::DynamicImage::ImageLuma8(g) => Ok(g),
        other => Err(format_err(
            path,
            format!("expected an 8-bit grayscale image, found {:?}", other.color()),
        )),
    }
}

pub fn save_mask<T: Real>(path: &Path, mask: &Mask<T>) -> Result<()> {
    let (w, h) = mask.dims();
    save_gray(path, w, h, |x, y| quantize(mask.get(x, y)))
}

pub fn load_mask<T: Real>(path: &Path) -> Result<Mask<T>> {
    let g = load_gray(path)?;
    let (w, h) = (g.width() as usize, g.height() as usize);
    Ok(Mask::from_fn(w, h, |x, y| unquantize(g.get_pixel(x as u32, y as u32)[0])))
}

/// Writes labels as raw 8-bit gray levels.
pub fn save_labels(path: &Path, labels: &PartMap) -> Result<()> {
    if let Some(&l) = labels.as_slice().iter().find(|&&l| l > 255) {
        return Err(format_err(path, format!("label {l} does not fit in 8 bits")));
    }
    let (w, h) = labels.dims();
    save_gray(path, w, h, |x, y| labels.get(x, y) as u8)
}

pub fn load_labels(path: &Path) -> Result<PartMap> {
    let g = load_gray(path)?;
    let (w, h) = (g.width() as usize, g.height() as usize);
    PartMap::from_vec(w, h, g.as_raw().iter().map(|&v| v as u32).collect())
}

/// Sidecar path holding flow validity: `flow.flo` → `flow.valid.pgm`.
pub fn validity_sidecar(flo: &Path) -> PathBuf {
    flo.with_extension("valid.pgm")
}

/// Encodes a flow as `.flo` bytes. Invalid pixels hold [`FLO_UNKNOWN`].
pub fn encode_flo<T: Real>(flow: &FlowField<T>) -> Vec<u8> {
    let (w, h) = flow.dims();
    let mut out = Vec::with_capacity(12 + 8 * w * h);
    out.extend_from_slice(&FLO_TAG.to_le_bytes());
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    for y in 0..h {
        for x in 0..w {
            let (u, v) = match flow.lookup(x, y) {
                Some((u, v)) => (u.to_f64_lossy() as f32, v.to_f64_lossy() as f32),
                None => (FLO_UNKNOWN, FLO_UNKNOWN),
            };
            out.extend_from_slice(&u.to_le_bytes());
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Decodes `.flo` bytes. Components at or above 1e9 in magnitude, or NaN,
/// are read as invalid.
pub fn decode_flo<T: Real>(bytes: &[u8], path: &Path) -> Result<FlowField<T>> {
    if bytes.len() < 12 {
        return Err(format_err(path, "truncated .flo header"));
    }
    let word = |i: usize| [bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]];
    let tag = f32::from_le_bytes(word(0));
    if tag != FLO_TAG {
        return Err(format_err(path, format!("bad .flo tag {tag}")));
    }
    let w = i32::from_le_bytes(word(4));
    let h = i32::from_le_bytes(word(8));
    if w <= 0 || h <= 0 {
        return Err(format_err(path, format!("bad .flo size {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let expected = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(12))
        .ok_or_else(|| format_err(path, "flow size overflows"))?;
    if bytes.len() != expected {
        return Err(format_err(
            path,
            format!("expected {expected} bytes for {w}x{h}, found {}", bytes.len()),
        ));
    }
    Ok(FlowField::from_fn(w, h, |x, y| {
        let i = 12 + 8 * (y * w + x);
        let u = f32::from_le_bytes(word(i));
        let v = f32::from_le_bytes(word(i + 4));
        let known = |c: f32| c.abs() < FLO_UNKNOWN_THRESHOLD;
        (known(u) && known(v)).then(|| (T::lit(u as f64), T::lit(v as f64)))
    }))
}

/// Writes `path` and its validity sidecar.
pub fn save_flo<T: Real>(path: &Path, flow: &FlowField<T>) -> Result<()> {
    write_bytes(path, &encode_flo(flow))?;
    let (w, h) = flow.dims();
    save_gray(&validity_sidecar(path), w, h, |x, y| if flow.is_valid(x, y) { 255 } else { 0 })
}

/// Reads a `.flo` file; the sidecar, when present, further restricts
/// validity.
pub fn load_flo<T: Real>(path: &Path) -> Result<FlowField<T>> {
    let mut flow = decode_flo(&read_bytes(path)?, path)?;
    let sidecar = validity_sidecar(path);
    if sidecar.exists() {
        let g = load_gray(&sidecar)?;
        if (g.width() as usize, g.height() as usize) != flow.dims() {
            return Err(format_err(&sidecar, "validity mask size differs from the flow"));
        }
        let (w, h) = flow.dims();
        for y in 0..h {
            for x in 0..w {
                if g.get_pixel(x as u32, y as u32)[0] < 128 {
                    flow.set(x, y, None);
                }
            }
        }
    }
    Ok(flow)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeshFile {
    vertices: Vec<[f64; 2]>,
    faces: Vec<[usize; 3]>,
    parts: Vec<u32>,
}

fn read_json<D: serde::de::DeserializeOwned>(path: &Path) -> Result<D> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| format_err(path, e.to_string()))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| format_err(path, e.to_string()))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn save_mesh<T: Real>(path: &Path, mesh: &Mesh2D<T>) -> Result<()> {
    let m = mesh.cast::<f64>();
    write_json(
        path,
        &MeshFile {
            vertices: m.vertices,
            faces: m.faces,
            parts: m.part_labels,
        },
    )
}

pub fn load_mesh<T: Real>(path: &Path) -> Result<Mesh2D<T>> {
    let f: MeshFile = read_json(path)?;
    let mesh = Mesh2D::new(f.vertices, f.faces, f.parts).map_err(|e| format_err(path, e.to_string()))?;
    Ok(mesh.cast())
}

pub fn save_skeleton<T: Real>(path: &Path, joints: &[Joint<T>]) -> Result<()> {
    let j: Vec<Joint<f64>> = joints
        .iter()
        .map(|j| Joint {
            name: j.name.clone(),
            x: j.x.to_f64_lossy(),
            y: j.y.to_f64_lossy(),
            visible: j.visible,
        })
        .collect();
    write_json(path, &j)
}

pub fn load_skeleton<T: Real>(path: &Path) -> Result<Vec<Joint<T>>> {
    let j: Vec<Joint<f64>> = read_json(path)?;
    Ok(j.into_iter()
        .map(|j| Joint {
            name: j.name,
            x: T::lit(j.x),
            y: T::lit(j.y),
            visible: j.visible,
        })
        .collect())
}

pub fn write_config<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    write_json(path, value)
}

pub fn read_config<D: serde::de::DeserializeOwned>(path: &Path) -> Result<D> {
    read_json(path)
}

/// Writes a bundle directory, creating it if needed.
pub fn save_bundle<T: Real>(dir: &Path, bundle: &PersonBundle<T>, mesh: &Mesh2D<T>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    save_image(&dir.join(BUNDLE_IMAGE), &bundle.image)?;
    save_labels(&dir.join(BUNDLE_PARTS), &bundle.part_map)?;
    save_labels(&dir.join(BUNDLE_SEGMENTATION), &bundle.segmentation)?;
    save_mask(&dir.join(BUNDLE_FOREGROUND), &bundle.foreground)?;
    save_skeleton(&dir.join(BUNDLE_SKELETON), &bundle.skeleton)?;
    save_mesh(&dir.join(BUNDLE_MESH), mesh)
}

/// Reads a bundle directory and checks that its rasters agree in size.
pub fn load_bundle<T: Real>(dir: &Path) -> Result<(PersonBundle<T>, Mesh2D<T>)> {
    let bundle = PersonBundle {
        image: load_image(&dir.join(BUNDLE_IMAGE))?,
        part_map: load_labels(&dir.join(BUNDLE_PARTS))?,
        segmentation: load_labels(&dir.join(BUNDLE_SEGMENTATION))?,
        skeleton: load_skeleton(&dir.join(BUNDLE_SKELETON))?,
        foreground: load_mask(&dir.join(BUNDLE_FOREGROUND))?,
    };
    bundle.validate().map_err(|e| format_err(dir, e.to_string()))?;
    let mesh = load_mesh(&dir.join(BUNDLE_MESH))?;
    Ok((bundle, mesh))
}

/// Middlebury colour wheel: hue encodes direction, saturation magnitude
/// relative to the largest valid vector. Invalid pixels are black.
pub fn flow_to_color<T: Real>(flow: &FlowField<T>) -> Image<T> {
    let wheel = color_wheel();
    let (w, h) = flow.dims();
    let mut max_r: f64 = 0.0;
    for y in 0..h {
        for x in 0..w {
            if let Some((u, v)) = flow.lookup(x, y) {
                max_r = max_r.max(u.to_f64_lossy().hypot(v.to_f64_lossy()));
            }
        }
    }
    let scale = if max_r > 0.0 { 1.0 / max_r } else { 0.0 };
    let ncols = wheel.len();
    Image::from_fn(w, h, 3, |x, y, c| {
        let Some((u, v)) = flow.lookup(x, y) else {
            return T::zero();
        };
        let (u, v) = (u.to_f64_lossy() * scale, v.to_f64_lossy() * scale);
        let rad = u.hypot(v);
        let a = (-v).atan2(-u) / std::f64::consts::PI;
        let fk = (a + 1.0) / 2.0 * (ncols - 1) as f64;
        let k0 = fk.floor() as usize % ncols;
        let k1 = (k0 + 1) % ncols;
        let f = fk - fk.floor();
        let col = (1.0 - f) * wheel[k0][c] + f * wheel[k1][c];
        let col = if rad <= 1.0 { 1.0 - rad * (1.0 - col) } else { col * 0.75 };
        T::lit(col)
    })
}

fn color_wheel() -> Vec<[f64; 3]> {
    const SEGMENTS: [(usize, [usize; 2]); 6] = [(15, [0, 1]), (6, [1, 0]), (4, [1, 2]), (11, [2, 1]), (13, [2, 0]), (6, [0, 2])];
    let mut wheel = Vec::new();
    for (i, &(n, [full, ramp])) in SEGMENTS.iter().enumerate() {
        for k in 0..n {
            let t = k as f64 / n as f64;
            let mut c = [0.0; 3];
            c[full] = 1.0;
            // even segments ramp a channel up, odd ones ramp it down
            c[ramp] = if i % 2 == 0 { t } else { 1.0 - t };
            wheel.push(c);
        }
    }
    wheel
}
