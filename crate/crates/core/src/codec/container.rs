//! Raw video (`RAPV`) and mask (`RAPM`) containers, plus PPM/PGM frame export.
//!
//! Both containers are little-endian: magic, `u32` version, `u32` T, H, W,
//! then `f32` fps for video. Video payload is frame-major `f32` planes
//! (frame, then color); mask payload is one byte per pixel.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::VideoClip;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

const VIDEO_MAGIC: &[u8; 4] = b"RAPV";
const MASK_MAGIC: &[u8; 4] = b"RAPM";
const VERSION: u32 = 1;

/// Per-frame binary pixel mask, `[T, H, W]` of 0/1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskClip {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl MaskClip {
    pub fn get(&self, t: usize, y: usize, x: usize) -> bool {
        self.data[(t * self.height + y) * self.width + x] != 0
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))?;
    f.sync_all().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Little-endian cursor that turns short reads into format errors.
pub(crate) struct Reader<'a> {
    pub buf: &'a [u8],
    pub pos: usize,
    pub what: &'static str,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    pub fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                self.what,
                field,
                format!("truncated at byte {} (need {n} more)", self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self, field: &'static str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    pub fn u32(&mut self, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    pub fn u64(&mut self, field: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }

    pub fn f32(&mut self, field: &'static str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    pub fn magic(&mut self, expect: &[u8; 4]) -> Result<()> {
        let m = self.take(4, "magic")?;
        if m != expect {
            return Err(Error::format(self.what, "magic", format!("{m:?} is not {:?}", std::str::from_utf8(expect).unwrap())));
        }
        Ok(())
    }

    pub fn version(&mut self, expect: u32) -> Result<u32> {
        let v = self.u32("version")?;
        if v != expect {
            return Err(Error::format(self.what, "version", format!("unsupported version {v} (this build reads {expect})")));
        }
        Ok(v)
    }
}

fn header(magic: &[u8; 4], t: usize, h: usize, w: usize) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(magic);
    for v in [VERSION, t as u32, h as u32, w as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn video_bytes(v: &VideoClip) -> Vec<u8> {
    let (t, h, w) = (v.num_frames(), v.height(), v.width());
    let mut out = header(VIDEO_MAGIC, t, h, w);
    out.extend_from_slice(&v.fps.to_le_bytes());
    let d = v.frames.data();
    for f in 0..t {
        for c in 0..3 {
            let base = (c * t + f) * h * w;
            for x in &d[base..base + h * w] {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    out
}

pub fn write_video(path: &Path, v: &VideoClip) -> Result<()> {
    write_file(path, &video_bytes(v))
}

pub fn read_video(path: &Path) -> Result<VideoClip> {
    let buf = read_file(path)?;
    let mut r = Reader::new(&buf, "video container");
    r.magic(VIDEO_MAGIC)?;
    r.version(VERSION)?;
    let t = r.u32("frame count")? as usize;
    let h = r.u32("height")? as usize;
    let w = r.u32("width")? as usize;
    let fps = r.f32("fps")?;
    if !(fps > 0.0) {
        return Err(Error::format("video container", "fps", format!("{fps} is not positive")));
    }
    let mut data = vec![0.0f32; 3 * t * h * w];
    for f in 0..t {
        for c in 0..3 {
            let base = (c * t + f) * h * w;
            for x in &mut data[base..base + h * w] {
                *x = r.f32("payload")?;
            }
        }
    }
    if r.pos != buf.len() {
        return Err(Error::format("video container", "payload", format!("{} trailing bytes", buf.len() - r.pos)));
    }
    VideoClip::new(Tensor::from_vec(&[3, t, h, w], data), fps)
}

pub fn write_mask(path: &Path, m: &MaskClip) -> Result<()> {
    let mut out = header(MASK_MAGIC, m.frames, m.height, m.width);
    out.extend_from_slice(&m.data);
    write_file(path, &out)
}

pub fn read_mask(path: &Path) -> Result<MaskClip> {
    let buf = read_file(path)?;
    let mut r = Reader::new(&buf, "mask container");
    r.magic(MASK_MAGIC)?;
    r.version(VERSION)?;
    let frames = r.u32("frame count")? as usize;
    let height = r.u32("height")? as usize;
    let width = r.u32("width")? as usize;
    let data = r.take(frames * height * width, "payload")?.to_vec();
    if r.pos != buf.len() {
        return Err(Error::format("mask container", "payload", "trailing bytes"));
    }
    Ok(MaskClip {
        frames,
        height,
        width,
        data,
    })
}

fn to_byte(x: f32) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary PPM (P6) of a `[3, H, W]` image in `[0, 1]`.
pub fn write_ppm(path: &Path, img: &Tensor) -> Result<()> {
    let s = img.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::shape("write_ppm", s, &[3, 0, 0]));
    }
    let (h, w) = (s[1], s[2]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for i in 0..h * w {
        for c in 0..3 {
            out.push(to_byte(img.data()[c * h * w + i]));
        }
    }
    write_file(path, &out)
}

/// Binary PGM (P5) of a `[H, W]` map, scaled so the maximum is white.
pub fn write_pgm(path: &Path, map: &Tensor) -> Result<()> {
    let s = map.shape();
    if s.len() != 2 {
        return Err(Error::shape("write_pgm", s, &[0, 0]));
    }
    let peak = map.data().iter().fold(0.0f32, |m, &x| m.max(x));
    let norm = if peak > 0.0 { 1.0 / peak } else { 0.0 };
    let mut out = format!("P5\n{} {}\n255\n", s[1], s[0]).into_bytes();
    out.extend(map.data().iter().map(|&x| to_byte(x * norm)));
    write_file(path, &out)
}

/// Reads a binary PPM (P6, maxval ≤ 255) into `[3, H, W]` in `[0, 1]`.
pub fn read_ppm(path: &Path) -> Result<Tensor> {
    let buf = read_file(path)?;
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < buf.len() && buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < buf.len() && buf[pos] == b'#' {
            while pos < buf.len() && buf[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < buf.len() && !buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format("ppm", "header", "truncated"));
        }
        fields.push(String::from_utf8_lossy(&buf[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P6" {
        return Err(Error::format("ppm", "magic", format!("{} is not P6", fields[0])));
    }
    let num = |i: usize, name: &'static str| -> Result<usize> {
        fields[i].parse().map_err(|_| Error::format("ppm", name, fields[i].clone()))
    };
    let (w, h, maxval) = (num(1, "width")?, num(2, "height")?, num(3, "maxval")?);
    if maxval == 0 || maxval > 255 {
        return Err(Error::format("ppm", "maxval", format!("{maxval} unsupported")));
    }
    if buf.len() < pos + 3 * w * h {
        return Err(Error::format("ppm", "payload", "truncated"));
    }
    let mut data = vec![0.0f32; 3 * h * w];
    for i in 0..h * w {
        for c in 0..3 {
            data[c * h * w + i] = buf[pos + 3 * i + c] as f32 / maxval as f32;
        }
    }
    Ok(Tensor::from_vec(&[3, h, w], data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn video_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.rapv");
        let data: Vec<f32> = (0..3 * 5 * 4 * 2).map(|i| i as f32 / 120.0).collect();
        let v = VideoClip::new(Tensor::from_vec(&[3, 5, 4, 2], data), 25.0).unwrap();
        write_video(&p, &v).unwrap();
        assert_eq!(read_video(&p).unwrap(), v);

        let mut bytes = fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_video(&p), Err(Error::Format { field: "payload", .. })));
        bytes[0] = b'X';
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_video(&p), Err(Error::Format { field: "magic", .. })));
    }

    #[test]
    fn mask_and_ppm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = MaskClip {
            frames: 2,
            height: 2,
            width: 3,
            data: vec![0, 1, 0, 1, 1, 0, 0, 0, 0, 0, 1, 1],
        };
        let p = dir.path().join("m.rapm");
        write_mask(&p, &m).unwrap();
        assert_eq!(read_mask(&p).unwrap(), m);
        assert!(m.get(1, 1, 2));

        let img = Tensor::from_vec(&[3, 2, 2], (0..12).map(|i| i as f32 * 20.0 / 255.0).collect());
        let p = dir.path().join("f.ppm");
        write_ppm(&p, &img).unwrap();
        assert!(read_ppm(&p).unwrap().max_abs_diff(&img) < 1e-6);
    }
}
