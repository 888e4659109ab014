//! Baseline JPEG round trip.
use alloc::vec::Vec;

use jpeg_encoder::{ColorType, Encoder, SamplingFactor};
use zune_core::bytestream::ZCursor;
use zune_core::colorspace::ColorSpace;
use zune_core::options::DecoderOptions;
use zune_jpeg::JpegDecoder;

use crate::error::{contract, Error, Result};
use crate::tensor::Tensor;

/// Qualities at or above this keep full-resolution chroma (4:4:4).
pub const FULL_CHROMA_QUALITY: u8 = 95;

/// Encodes an `[.., c, h, w]` image with values in `[0, 1]` at `quality`
/// and decodes it back. Three-channel images are coded as RGB; any other
/// channel count is coded one grayscale plane at a time.
pub fn jpeg_round_trip(image: &Tensor<f32>, quality: u8) -> Result<Tensor<f32>> {
    let s = image.shape();
    if s.len() < 3 {
        return Err(contract!("JPEG needs a c x h x w image, got {:?}", s));
    }
    let (c, h, w) = (s[s.len() - 3], s[s.len() - 2], s[s.len() - 1]);
    let mut out = image.clone();
    let n = c * h * w;
    if n == 0 {
        return Ok(out);
    }
    for img in out.data_mut().chunks_exact_mut(n) {
        round_trip_in_place(img, c, h, w, quality)?;
    }
    Ok(out)
}

pub(crate) fn round_trip_in_place(img: &mut [f32], c: usize, h: usize, w: usize, quality: u8) -> Result<()> {
    if !(1..=100).contains(&quality) {
        return Err(contract!("JPEG quality must be in 1..=100, got {}", quality));
    }
    if img.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(contract!("JPEG input must lie in [0, 1]"));
    }
    if h > u16::MAX as usize || w > u16::MAX as usize {
        return Err(contract!("image {}x{} too large for JPEG", h, w));
    }
    let hw = h * w;
    if c == 3 {
        let mut rgb = Vec::with_capacity(3 * hw);
        for i in 0..hw {
            for ch in 0..3 {
                rgb.push(to_byte(img[ch * hw + i]));
            }
        }
        let decoded = encode_decode(&rgb, w, h, ColorType::Rgb, quality)?;
        for i in 0..hw {
            for ch in 0..3 {
                img[ch * hw + i] = decoded[i * 3 + ch] as f32 / 255.0;
            }
        }
    } else {
        for plane in img.chunks_exact_mut(hw) {
            let luma: Vec<u8> = plane.iter().map(|&v| to_byte(v)).collect();
            let decoded = encode_decode(&luma, w, h, ColorType::Luma, quality)?;
            for (p, d) in plane.iter_mut().zip(decoded) {
                *p = d as f32 / 255.0;
            }
        }
    }
    Ok(())
}

fn to_byte(v: f32) -> u8 {
    (v * 255.0 + 0.5).clamp(0.0, 255.0) as u8
}

fn encode_decode(pixels: &[u8], w: usize, h: usize, color: ColorType, quality: u8) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    let mut encoder = Encoder::new(&mut bytes, quality);
    encoder.set_sampling_factor(if quality >= FULL_CHROMA_QUALITY {
        SamplingFactor::R_4_4_4
    } else {
        SamplingFactor::R_4_2_0
    });
    encoder
        .encode(pixels, w as u16, h as u16, color)
        .map_err(|e| Error::Codec(alloc::format!("encode: {e:?}")))?;
    let space = if matches!(color, ColorType::Rgb) { ColorSpace::RGB } else { ColorSpace::Luma };
    let options = DecoderOptions::default().jpeg_set_out_colorspace(space);
    let mut decoder = JpegDecoder::new_with_options(ZCursor::new(bytes.as_slice()), options);
    let decoded = decoder.decode().map_err(|e| Error::Codec(alloc::format!("decode: {e:?}")))?;
    let want = pixels.len();
    if decoded.len() != want {
        return Err(Error::Codec(alloc::format!("decoded {} bytes, expected {}", decoded.len(), want)));
    }
    Ok(decoded)
}
