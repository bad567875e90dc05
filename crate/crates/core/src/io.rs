//! File formats: PFM float maps, PNG images (8-bit RGB, 16-bit depth in
//! millimeters, 16-bit IUV), camera JSON, and fixture directory layout.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

use crate::error::{Result, SvsError};
use crate::geometry::{Camera, CameraJson};
use crate::image_buf::{ImageBuf, Mask};
use crate::scenegen::{raytrace, Fixture, SceneSpec};
use crate::sphere_cloud::RgbdFrame;

fn decode_err(format: &str, reason: impl Into<String>) -> SvsError {
    SvsError::Decode {
        format: format.into(),
        reason: reason.into(),
    }
}

// ---------------------------------------------------------------------------
// PFM (little-endian, rows stored bottom-to-top)

/// Writes a 1-channel ("Pf") or 3-channel ("PF") float map.
pub fn write_pfm(path: &Path, img: &ImageBuf) -> Result<()> {
    let c = img.channels();
    let magic = match c {
        1 => "Pf",
        3 => "PF",
        _ => {
            return Err(decode_err(
                "pfm",
                format!("only 1 or 3 channels supported, got {c}"),
            ))
        }
    };
    let mut out = BufWriter::new(fs::File::create(path)?);
    write!(out, "{magic}\n{} {}\n-1.0\n", img.width(), img.height())?;
    for y in (0..img.height()).rev() {
        for x in 0..img.width() {
            for ch in 0..c {
                out.write_all(&(img.get(x, y, ch) as f32).to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Reads a PFM file (either endianness).
pub fn read_pfm(path: &Path) -> Result<ImageBuf> {
    let mut reader = BufReader::new(fs::File::open(path)?);
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;

    // header: magic, width, height, scale as whitespace-separated tokens
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(decode_err("pfm", "truncated header"));
        }
        let tok = String::from_utf8_lossy(&bytes[start..pos]).to_string();
        Ok(tok)
    };
    let magic = token(&bytes)?;
    let channels = match magic.as_str() {
        "PF" => 3usize,
        "Pf" => 1usize,
        other => return Err(decode_err("pfm", format!("bad magic {other}"))),
    };
    let width: usize = token(&bytes)?
        .parse()
        .map_err(|_| decode_err("pfm", "bad width"))?;
    let height: usize = token(&bytes)?
        .parse()
        .map_err(|_| decode_err("pfm", "bad height"))?;
    let scale: f64 = token(&bytes)?
        .parse()
        .map_err(|_| decode_err("pfm", "bad scale"))?;
    pos += 1; // single whitespace after the scale line

    let little_endian = scale < 0.0;
    let need = width * height * channels * 4;
    if bytes.len() < pos + need {
        return Err(decode_err("pfm", "truncated pixel data"));
    }
    let mut img = ImageBuf::new(width, height, channels);
    let mut offset = pos;
    for y in (0..height).rev() {
        for x in 0..width {
            for ch in 0..channels {
                let raw: [u8; 4] = bytes[offset..offset + 4].try_into().unwrap();
                let v = if little_endian {
                    f32::from_le_bytes(raw)
                } else {
                    f32::from_be_bytes(raw)
                };
                img.set(x, y, ch, v as f64);
                offset += 4;
            }
        }
    }
    Ok(img)
}

/// Writes an integer map (e.g. winner indices) as a 1-channel PFM; values are
/// exact for magnitudes below 2^24.
pub fn write_pfm_i32(path: &Path, values: &[i32], width: usize, height: usize) -> Result<()> {
    if values.len() != width * height {
        return Err(SvsError::shape(
            format!("{}x{} values", width, height),
            format!("{}", values.len()),
        ));
    }
    let img = ImageBuf::from_vec(
        width,
        height,
        1,
        values.iter().map(|&v| v as f64).collect(),
    );
    write_pfm(path, &img)
}

// ---------------------------------------------------------------------------
// PNG

/// 8-bit RGB; values clamped to [0, 1].
pub fn write_rgb8_png(path: &Path, img: &ImageBuf) -> Result<()> {
    if img.channels() != 3 {
        return Err(decode_err("png", "rgb writer needs 3 channels"));
    }
    let mut out = ImageBuffer::<Rgb<u8>, Vec<u8>>::new(img.width() as u32, img.height() as u32);
    for (x, y, px) in out.enumerate_pixels_mut() {
        let p = img.pixel(x as usize, y as usize);
        *px = Rgb([
            (p[0].clamp(0.0, 1.0) * 255.0).round() as u8,
            (p[1].clamp(0.0, 1.0) * 255.0).round() as u8,
            (p[2].clamp(0.0, 1.0) * 255.0).round() as u8,
        ]);
    }
    out.save(path)?;
    Ok(())
}

pub fn read_rgb8_png(path: &Path) -> Result<ImageBuf> {
    let img = image::open(path)?.into_rgb8();
    let (w, h) = img.dimensions();
    let mut out = ImageBuf::new(w as usize, h as usize, 3);
    for (x, y, px) in img.enumerate_pixels() {
        for ch in 0..3 {
            out.set(x as usize, y as usize, ch, px[ch] as f64 / 255.0);
        }
    }
    Ok(out)
}

/// Depth in meters stored as 16-bit millimeters; 0 stays "invalid".
pub fn write_depth_png(path: &Path, depth: &ImageBuf) -> Result<()> {
    if depth.channels() != 1 {
        return Err(decode_err("png", "depth writer needs 1 channel"));
    }
    let mut out = ImageBuffer::<Luma<u16>, Vec<u16>>::new(depth.width() as u32, depth.height() as u32);
    for (x, y, px) in out.enumerate_pixels_mut() {
        let mm = (depth.get(x as usize, y as usize, 0) * 1000.0).round();
        *px = Luma([mm.clamp(0.0, 65535.0) as u16]);
    }
    out.save(path)?;
    Ok(())
}

pub fn read_depth_png(path: &Path) -> Result<ImageBuf> {
    let img = image::open(path)?.into_luma16();
    let (w, h) = img.dimensions();
    let mut out = ImageBuf::new(w as usize, h as usize, 1);
    for (x, y, px) in img.enumerate_pixels() {
        out.set(x as usize, y as usize, 0, px[0] as f64 / 1000.0);
    }
    Ok(out)
}

/// Binary mask as 8-bit grayscale (0 / 255).
pub fn write_mask_png(path: &Path, mask: &Mask) -> Result<()> {
    let mut out = ImageBuffer::<Luma<u8>, Vec<u8>>::new(mask.width() as u32, mask.height() as u32);
    for (x, y, px) in out.enumerate_pixels_mut() {
        *px = Luma([if mask.get(x as usize, y as usize) { 255 } else { 0 }]);
    }
    out.save(path)?;
    Ok(())
}

pub fn read_mask_png(path: &Path) -> Result<Mask> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = img.dimensions();
    let mut out = Mask::new(w as usize, h as usize, false);
    for (x, y, px) in img.enumerate_pixels() {
        out.set(x as usize, y as usize, px[0] > 127);
    }
    Ok(out)
}

/// IUV as 16-bit RGB: part id raw in channel 0, U and V quantized to
/// [0, 65535].
pub fn write_iuv_png(path: &Path, iuv: &ImageBuf) -> Result<()> {
    if iuv.channels() != 3 {
        return Err(decode_err("png", "iuv writer needs 3 channels"));
    }
    let mut out = ImageBuffer::<Rgb<u16>, Vec<u16>>::new(iuv.width() as u32, iuv.height() as u32);
    for (x, y, px) in out.enumerate_pixels_mut() {
        let p = iuv.pixel(x as usize, y as usize);
        *px = Rgb([
            p[0].round().clamp(0.0, 65535.0) as u16,
            (p[1].clamp(0.0, 1.0) * 65535.0).round() as u16,
            (p[2].clamp(0.0, 1.0) * 65535.0).round() as u16,
        ]);
    }
    out.save(path)?;
    Ok(())
}

pub fn read_iuv_png(path: &Path) -> Result<ImageBuf> {
    let img = image::open(path)?.into_rgb16();
    let (w, h) = img.dimensions();
    let mut out = ImageBuf::new(w as usize, h as usize, 3);
    for (x, y, px) in img.enumerate_pixels() {
        out.set(x as usize, y as usize, 0, px[0] as f64);
        out.set(x as usize, y as usize, 1, px[1] as f64 / 65535.0);
        out.set(x as usize, y as usize, 2, px[2] as f64 / 65535.0);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Cameras and scenes

pub fn save_camera_json(path: &Path, cam: &Camera) -> Result<()> {
    let json = serde_json::to_string_pretty(&CameraJson::from(cam))?;
    fs::write(path, json + "\n")?;
    Ok(())
}

pub fn load_camera_json(path: &Path) -> Result<Camera> {
    let text = fs::read_to_string(path)?;
    let parsed: CameraJson = serde_json::from_str(&text)?;
    Camera::try_from(&parsed)
}

pub fn save_scene_json(path: &Path, scene: &SceneSpec) -> Result<()> {
    let json = serde_json::to_string_pretty(scene)?;
    fs::write(path, json + "\n")?;
    Ok(())
}

pub fn load_scene_json(path: &Path) -> Result<SceneSpec> {
    let text = fs::read_to_string(path)?;
    let scene: SceneSpec = serde_json::from_str(&text)?;
    scene.validate()?;
    Ok(scene)
}

// ---------------------------------------------------------------------------
// View directories: rgb.png, depth.png, mask.png, iuv.png, camera.json

/// Writes one observed view into `dir`.
pub fn save_view(dir: &Path, frame: &RgbdFrame, cam: &Camera) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_rgb8_png(&dir.join("rgb.png"), &frame.rgb)?;
    write_depth_png(&dir.join("depth.png"), &frame.depth)?;
    if let Some(mask) = &frame.fg_mask {
        write_mask_png(&dir.join("mask.png"), mask)?;
    }
    if let Some(iuv) = &frame.iuv {
        write_iuv_png(&dir.join("iuv.png"), iuv)?;
    }
    save_camera_json(&dir.join("camera.json"), cam)?;
    Ok(())
}

/// Reads a view directory; mask.png and iuv.png are optional.
pub fn load_view(dir: &Path) -> Result<(RgbdFrame, Camera)> {
    let rgb = read_rgb8_png(&dir.join("rgb.png"))?;
    let depth = read_depth_png(&dir.join("depth.png"))?;
    let cam = load_camera_json(&dir.join("camera.json"))?;
    let mut frame = RgbdFrame::new(rgb, depth)?;
    let mask_path = dir.join("mask.png");
    if mask_path.exists() {
        frame.fg_mask = Some(read_mask_png(&mask_path)?);
    }
    let iuv_path = dir.join("iuv.png");
    if iuv_path.exists() {
        frame.iuv = Some(read_iuv_png(&iuv_path)?);
    }
    Ok((frame, cam))
}

/// Renders and writes a full fixture: `input/`, `target_NN/`,
/// `occlusion_free/`, and `scene.json`.
pub fn save_fixture(dir: &Path, fixture: &Fixture) -> Result<()> {
    fs::create_dir_all(dir)?;
    save_scene_json(&dir.join("scene.json"), &fixture.scene)?;
    let input = raytrace(&fixture.scene, &fixture.input_camera)?;
    save_view(&dir.join("input"), &input, &fixture.input_camera)?;
    for (i, target) in fixture.target_cameras.iter().enumerate() {
        let frame = raytrace(&fixture.scene, target)?;
        save_view(&dir.join(format!("target_{i:02}")), &frame, target)?;
    }
    let of = raytrace(&fixture.scene, &fixture.occlusion_free_camera)?;
    save_view(
        &dir.join("occlusion_free"),
        &of,
        &fixture.occlusion_free_camera,
    )?;
    Ok(())
}
