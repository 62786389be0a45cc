//! Video files: YUV4MPEG2 (8-bit 4:2:0) and raw interleaved RGB24 with a
//! `<path>.dims` sidecar holding `width height`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// RGB frames `(T, 3, H, W)` in the unit interval.
#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    pub frames: Tensor,
    /// Frames per second as `(num, den)`.
    pub framerate: (usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VideoFormat {
    Y4m,
    Rgb24,
}

impl VideoFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("y4m") => VideoFormat::Y4m,
            _ => VideoFormat::Rgb24,
        }
    }
}

impl Video {
    pub fn new(frames: Tensor) -> Result<Self> {
        let s = frames.shape();
        if s.len() != 4 || s[1] != 3 || s[0] == 0 || s[2] == 0 || s[3] == 0 {
            return Err(Error::Video(format!("expected (T, 3, H, W) frames, got {s:?}")));
        }
        Ok(Self {
            frames,
            framerate: (25, 1),
        })
    }

    pub fn frame_count(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[3]
    }

    pub fn read(path: &Path) -> Result<Self> {
        match VideoFormat::from_path(path) {
            VideoFormat::Y4m => read_y4m(path),
            VideoFormat::Rgb24 => read_rgb24(path),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        match VideoFormat::from_path(path) {
            VideoFormat::Y4m => write_y4m(self, path),
            VideoFormat::Rgb24 => write_rgb24(self, path),
        }
    }
}

fn to_u8(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// BT.601 full-range YCbCr to RGB, all components in `[0, 255]`.
pub fn ycbcr_to_rgb(y: f64, cb: f64, cr: f64) -> [f64; 3] {
    let (u, v) = (cb - 128.0, cr - 128.0);
    [y + 1.402 * v, y - 0.344_136 * u - 0.714_136 * v, y + 1.772 * u]
}

pub fn rgb_to_ycbcr(r: f64, g: f64, b: f64) -> [f64; 3] {
    [
        0.299 * r + 0.587 * g + 0.114 * b,
        128.0 - 0.168_736 * r - 0.331_264 * g + 0.5 * b,
        128.0 + 0.5 * r - 0.418_688 * g - 0.081_312 * b,
    ]
}

fn y4m_err(e: y4m::Error) -> Error {
    match e {
        y4m::Error::IoError(e) => Error::Io(e),
        other => Error::Video(format!("y4m: {other:?}")),
    }
}

pub fn read_y4m(path: &Path) -> Result<Video> {
    let reader = BufReader::new(File::open(path)?);
    let mut dec = y4m::decode(reader).map_err(y4m_err)?;
    match dec.get_colorspace() {
        y4m::Colorspace::C420 | y4m::Colorspace::C420jpeg | y4m::Colorspace::C420paldv | y4m::Colorspace::C420mpeg2 => {}
        other => return Err(Error::Video(format!("unsupported colorspace {other:?}, need 8-bit 4:2:0"))),
    }
    let (w, h) = (dec.get_width(), dec.get_height());
    let (cw, _) = (w.div_ceil(2), h.div_ceil(2));
    let rate = dec.get_framerate();
    let mut data = Vec::new();
    let mut count = 0;
    loop {
        let frame = match dec.read_frame() {
            Ok(f) => f,
            Err(y4m::Error::EOF) => break,
            Err(e) => return Err(y4m_err(e)),
        };
        let (yp, up, vp) = (frame.get_y_plane(), frame.get_u_plane(), frame.get_v_plane());
        let mut planes = vec![0.0; 3 * h * w];
        for r in 0..h {
            for c in 0..w {
                let ci = (r / 2) * cw + c / 2;
                let rgb = ycbcr_to_rgb(f64::from(yp[r * w + c]), f64::from(up[ci]), f64::from(vp[ci]));
                for (k, v) in rgb.iter().enumerate() {
                    planes[(k * h + r) * w + c] = (v / 255.0).clamp(0.0, 1.0);
                }
            }
        }
        data.extend(planes);
        count += 1;
    }
    if count == 0 {
        return Err(Error::Video(format!("{} has no frames", path.display())));
    }
    let mut v = Video::new(Tensor::new(vec![count, 3, h, w], data)?)?;
    v.framerate = (rate.num, rate.den);
    Ok(v)
}

pub fn write_y4m(video: &Video, path: &Path) -> Result<()> {
    let (h, w) = (video.height(), video.width());
    let (cw, ch) = (w.div_ceil(2), h.div_ceil(2));
    let writer = BufWriter::new(File::create(path)?);
    let mut enc = y4m::encode(w, h, y4m::Ratio::new(video.framerate.0, video.framerate.1))
        .with_colorspace(y4m::Colorspace::C420)
        .write_header(writer)
        .map_err(y4m_err)?;
    let plane = h * w;
    for frame in video.frames.data().chunks(3 * plane) {
        let mut yp = vec![0u8; plane];
        let mut cb = vec![0.0; cw * ch];
        let mut cr = vec![0.0; cw * ch];
        let mut n = vec![0.0; cw * ch];
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                let [y, u, v] = rgb_to_ycbcr(frame[i] * 255.0, frame[plane + i] * 255.0, frame[2 * plane + i] * 255.0);
                yp[i] = y.round().clamp(0.0, 255.0) as u8;
                let ci = (r / 2) * cw + c / 2;
                cb[ci] += u;
                cr[ci] += v;
                n[ci] += 1.0;
            }
        }
        let pack = |p: &[f64]| -> Vec<u8> { p.iter().zip(&n).map(|(s, k)| (s / k).round().clamp(0.0, 255.0) as u8).collect() };
        let (up, vp) = (pack(&cb), pack(&cr));
        enc.write_frame(&y4m::Frame::new([&yp, &up, &vp], None)).map_err(y4m_err)?;
    }
    Ok(())
}

/// Path of the dimension sidecar of a raw file.
pub fn dims_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".dims");
    PathBuf::from(s)
}

fn read_dims(path: &Path) -> Result<(usize, usize)> {
    let side = dims_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::Video(format!("{}: {e}", side.display())))?;
    let nums: Vec<usize> = text
        .split(|c: char| c.is_whitespace() || c == 'x' || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Video(format!("{}: {e}", side.display())))?;
    match nums[..] {
        [w, h] if w > 0 && h > 0 => Ok((w, h)),
        _ => Err(Error::Video(format!("{} must hold `width height`", side.display()))),
    }
}

pub fn read_rgb24(path: &Path) -> Result<Video> {
    let (w, h) = read_dims(path)?;
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let frame_len = 3 * w * h;
    if bytes.is_empty() || bytes.len() % frame_len != 0 {
        return Err(Error::Video(format!(
            "{} is {} bytes, not a whole number of {w}x{h} RGB24 frames",
            path.display(),
            bytes.len()
        )));
    }
    let count = bytes.len() / frame_len;
    let mut data = vec![0.0; bytes.len()];
    for t in 0..count {
        for i in 0..w * h {
            for k in 0..3 {
                data[t * frame_len + k * w * h + i] = f64::from(bytes[t * frame_len + 3 * i + k]) / 255.0;
            }
        }
    }
    Video::new(Tensor::new(vec![count, 3, h, w], data)?)
}

pub fn write_rgb24(video: &Video, path: &Path) -> Result<()> {
    let (h, w) = (video.height(), video.width());
    let plane = h * w;
    let mut out = BufWriter::new(File::create(path)?);
    let mut buf = vec![0u8; 3 * plane];
    for frame in video.frames.data().chunks(3 * plane) {
        for i in 0..plane {
            for k in 0..3 {
                buf[3 * i + k] = to_u8(frame[k * plane + i]);
            }
        }
        out.write_all(&buf)?;
    }
    out.flush()?;
    fs::write(dims_path(path), format!("{w} {h}\n"))?;
    Ok(())
}

/// Round every sample to the nearest 8-bit level.
pub fn quantize_8bit(frames: &Tensor) -> Tensor {
    Tensor::from_fn(frames.shape(), |i| f64::from(to_u8(frames.data()[i])) / 255.0)
}

/// Replicate the last row and column until both sizes are multiples of
/// `multiple`.
pub fn pad_replicate(frames: &Tensor, multiple: usize) -> Result<Tensor> {
    let s = frames.shape();
    if s.len() != 4 {
        return Err(Error::Video(format!("expected (T, C, H, W), got {s:?}")));
    }
    let (t, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (ph, pw) = (h.div_ceil(multiple) * multiple, w.div_ceil(multiple) * multiple);
    let src = frames.data();
    let mut out = Vec::with_capacity(t * c * ph * pw);
    for plane in 0..t * c {
        for r in 0..ph {
            let sr = r.min(h - 1);
            for col in 0..pw {
                out.push(src[(plane * h + sr) * w + col.min(w - 1)]);
            }
        }
    }
    Tensor::new(vec![t, c, ph, pw], out)
}

/// Top-left `height x width` window of every plane.
pub fn crop(frames: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let s = frames.shape();
    if s.len() != 4 || s[2] < height || s[3] < width {
        return Err(Error::Video(format!("cannot crop {s:?} to {height}x{width}")));
    }
    let (t, c, h, w) = (s[0], s[1], s[2], s[3]);
    let src = frames.data();
    let mut out = Vec::with_capacity(t * c * height * width);
    for plane in 0..t * c {
        for r in 0..height {
            let base = (plane * h + r) * w;
            out.extend_from_slice(&src[base..base + width]);
        }
    }
    Tensor::new(vec![t, c, height, width], out)
}
