//! Binary PPM (P6) ingestion: decode to a `(1, 3, H, W)` tensor in [0, 1],
//! resize so the shorter side hits the configured test scale, and zero-pad
//! to multiples of 16 on the bottom-right.

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("unsupported image format: magic bytes {0:02x?} (binary PPM \"P6\" required)")]
    BadMagic([u8; 2]),
    #[error("malformed PPM header: {0}")]
    Header(String),
    #[error("unsupported PPM maxval {0} (8-bit RGB required)")]
    UnsupportedMaxval(u32),
    #[error("truncated PPM pixel data: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
}

/// A decoded, resized and padded network input plus the mapping back to the
/// original pixel grid.
#[derive(Debug, Clone)]
pub struct LoadedImage {
    /// `(1, 3, H, W)` with H, W multiples of 16.
    pub tensor: Tensor,
    pub orig_w: usize,
    pub orig_h: usize,
    pub resized_w: usize,
    pub resized_h: usize,
    /// Detection coordinates divide by these to return to original pixels.
    pub scale_x: f64,
    pub scale_y: f64,
    pub pad_right: usize,
    pub pad_bottom: usize,
}

impl LoadedImage {
    /// Wraps an already network-shaped tensor (dims divisible by 16) with an
    /// identity mapping; used for synthetic fixtures.
    pub fn from_network_input(tensor: Tensor) -> Self {
        let [_, _, h, w] = tensor.shape();
        LoadedImage {
            tensor,
            orig_w: w,
            orig_h: h,
            resized_w: w,
            resized_h: h,
            scale_x: 1.0,
            scale_y: 1.0,
            pad_right: 0,
            pad_bottom: 0,
        }
    }

    /// Width/height of the padded network input.
    pub fn input_dims(&self) -> (usize, usize) {
        let [_, _, h, w] = self.tensor.shape();
        (w, h)
    }
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    // whitespace and `#` comments separate header tokens
    fn skip_separators(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32, ImageError> {
        self.skip_separators();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(ImageError::Header(format!("missing {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ImageError::Header(format!("unreadable {what}")))
    }
}

/// Decodes a binary PPM into a `(1, 3, H, W)` tensor scaled to [0, 1].
pub fn ppm_to_tensor(bytes: &[u8]) -> Result<Tensor, ImageError> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        let mut magic = [0u8; 2];
        magic.copy_from_slice(&bytes.get(..2).unwrap_or(b"\0\0")[..2]);
        return Err(ImageError::BadMagic(magic));
    }
    let mut r = HeaderReader { bytes, pos: 2 };
    let width = r.number("width")? as usize;
    let height = r.number("height")? as usize;
    let maxval = r.number("maxval")?;
    if maxval != 255 {
        return Err(ImageError::UnsupportedMaxval(maxval));
    }
    if width == 0 || height == 0 {
        return Err(ImageError::Header("zero image dimension".into()));
    }
    // exactly one whitespace byte between maxval and pixel data
    if r.pos >= bytes.len() || !bytes[r.pos].is_ascii_whitespace() {
        return Err(ImageError::Header("missing separator before pixels".into()));
    }
    let data_start = r.pos + 1;
    let expected = width * height * 3;
    let found = bytes.len().saturating_sub(data_start);
    if found < expected {
        return Err(ImageError::Truncated { expected, found });
    }
    let pixels = &bytes[data_start..data_start + expected];
    Ok(Tensor::from_fn([1, 3, height, width], |_, c, y, x| {
        pixels[(y * width + x) * 3 + c] as f64 / 255.0
    }))
}

/// Serializes a `(1, 3, H, W)` tensor in [0, 1] as a binary PPM.
pub fn tensor_to_ppm(t: &Tensor) -> Vec<u8> {
    let [_, _, h, w] = t.shape();
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out.push((t.get(0, c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    out
}

// General bilinear resampling (up or down), align-corners=false, for
// ingestion only; the tensor engine's upsample keeps its grow-only contract.
fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let [batch, ch, in_h, in_w] = x.shape();
    if out_h == in_h && out_w == in_w {
        return x.clone();
    }
    let scale_y = in_h as f64 / out_h as f64;
    let scale_x = in_w as f64 / out_w as f64;
    Tensor::from_fn([batch, ch, out_h, out_w], |b, c, oy, ox| {
        let sy = ((oy as f64 + 0.5) * scale_y - 0.5).clamp(0.0, (in_h - 1) as f64);
        let sx = ((ox as f64 + 0.5) * scale_x - 0.5).clamp(0.0, (in_w - 1) as f64);
        let y0 = sy.floor() as usize;
        let x0 = sx.floor() as usize;
        let y1 = (y0 + 1).min(in_h - 1);
        let x1 = (x0 + 1).min(in_w - 1);
        let fy = sy - y0 as f64;
        let fx = sx - x0 as f64;
        let top = x.get(b, c, y0, x0) + fx * (x.get(b, c, y0, x1) - x.get(b, c, y0, x0));
        let bottom = x.get(b, c, y1, x0) + fx * (x.get(b, c, y1, x1) - x.get(b, c, y1, x0));
        top + fy * (bottom - top)
    })
}

fn pad_to_multiple_of_16(x: &Tensor) -> (Tensor, usize, usize) {
    let [batch, ch, h, w] = x.shape();
    let ph = h.div_ceil(16) * 16;
    let pw = w.div_ceil(16) * 16;
    if ph == h && pw == w {
        return (x.clone(), 0, 0);
    }
    let padded = Tensor::from_fn([batch, ch, ph, pw], |b, c, y, x_| {
        if y < h && x_ < w {
            x.get(b, c, y, x_)
        } else {
            0.0
        }
    });
    (padded, pw - w, ph - h)
}

/// Full ingestion: decode, resize the shorter side to `test_scale`, pad to
/// multiples of 16, and record the scale factors for mapping detections back.
pub fn load_image(bytes: &[u8], test_scale: usize) -> Result<LoadedImage, ImageError> {
    let decoded = ppm_to_tensor(bytes)?;
    let [_, _, h, w] = decoded.shape();
    let shorter = h.min(w) as f64;
    let factor = test_scale as f64 / shorter;
    let resized_h = ((h as f64 * factor).round() as usize).max(1);
    let resized_w = ((w as f64 * factor).round() as usize).max(1);
    let resized = resize_bilinear(&decoded, resized_h, resized_w);
    let (tensor, pad_right, pad_bottom) = pad_to_multiple_of_16(&resized);
    Ok(LoadedImage {
        tensor,
        orig_w: w,
        orig_h: h,
        resized_w,
        resized_h,
        scale_x: resized_w as f64 / w as f64,
        scale_y: resized_h as f64 / h as f64,
        pad_right,
        pad_bottom,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn white_ppm(w: usize, h: usize) -> Vec<u8> {
        let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
        bytes.extend(std::iter::repeat_n(255u8, w * h * 3));
        bytes
    }

    #[test]
    fn white_2x2_decodes_to_ones() {
        let t = ppm_to_tensor(&white_ppm(2, 2)).unwrap();
        assert_eq!(t.shape(), [1, 3, 2, 2]);
        assert!(t.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn comments_and_whitespace_in_header() {
        let mut bytes = b"P6\n# a comment\n 3 # widths\n2\n255\n".to_vec();
        bytes.extend(vec![0u8; 18]);
        let t = ppm_to_tensor(&bytes).unwrap();
        assert_eq!(t.shape(), [1, 3, 2, 3]);
    }

    #[test]
    fn bad_magic_names_bytes() {
        let err = ppm_to_tensor(b"P5\n1 1\n255\n\0").unwrap_err();
        match err {
            ImageError::BadMagic(m) => assert_eq!(&m, b"P5"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_data_is_reported() {
        let mut bytes = "P6\n4 4\n255\n".to_string().into_bytes();
        bytes.extend(vec![1u8; 10]);
        assert!(matches!(
            ppm_to_tensor(&bytes),
            Err(ImageError::Truncated {
                expected: 48,
                found: 10
            })
        ));
    }

    #[test]
    fn unsupported_maxval() {
        let bytes = b"P6\n1 1\n65535\n\0\0\0\0\0\0".to_vec();
        assert!(matches!(
            ppm_to_tensor(&bytes),
            Err(ImageError::UnsupportedMaxval(65535))
        ));
    }

    #[test]
    fn matching_scale_keeps_dims() {
        // 1024x512: shorter side already 512, dims already /16
        let img = load_image(&white_ppm(1024, 512), 512).unwrap();
        assert_eq!(img.input_dims(), (1024, 512));
        assert_eq!((img.resized_w, img.resized_h), (1024, 512));
        assert_eq!(img.scale_x, 1.0);
        assert_eq!(img.scale_y, 1.0);
        assert_eq!((img.pad_right, img.pad_bottom), (0, 0));
    }

    #[test]
    fn padding_records_offsets() {
        // 20x12 at scale 12: no resize, pad right 12 and bottom 4
        let img = load_image(&white_ppm(20, 12), 12).unwrap();
        assert_eq!(img.input_dims(), (32, 16));
        assert_eq!((img.pad_right, img.pad_bottom), (12, 4));
        // content kept in the top-left, padding zeroed
        assert_eq!(img.tensor.get(0, 0, 0, 0), 1.0);
        assert_eq!(img.tensor.get(0, 0, 11, 19), 1.0);
        assert_eq!(img.tensor.get(0, 0, 0, 20), 0.0);
        assert_eq!(img.tensor.get(0, 0, 12, 0), 0.0);
    }

    #[test]
    fn shorter_side_resize_scales_both_axes() {
        let img = load_image(&white_ppm(64, 32), 16).unwrap();
        assert_eq!((img.resized_w, img.resized_h), (32, 16));
        assert_eq!(img.scale_x, 0.5);
        assert_eq!(img.scale_y, 0.5);
        // white stays white through bilinear resampling
        for y in 0..16 {
            for x in 0..32 {
                assert_eq!(img.tensor.get(0, 1, y, x), 1.0);
            }
        }
    }

    #[test]
    fn upscale_works_too() {
        let img = load_image(&white_ppm(8, 4), 8).unwrap();
        assert_eq!((img.resized_w, img.resized_h), (16, 8));
        assert_eq!(img.scale_x, 2.0);
    }

    #[test]
    fn ppm_roundtrip() {
        let t = Tensor::from_fn([1, 3, 4, 5], |_, c, y, x| {
            ((c * 37 + y * 11 + x * 3) % 256) as f64 / 255.0
        });
        let bytes = tensor_to_ppm(&t);
        let back = ppm_to_tensor(&bytes).unwrap();
        for (a, b) in t.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1.0 / 255.0 / 2.0 + 1e-12);
        }
    }
}
