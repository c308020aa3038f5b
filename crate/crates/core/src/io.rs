//! Raster ingestion (PGM, PNG, TIFF) and 8-bit output.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ::image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use ::image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageFormat};
use tiff::decoder::{Decoder, DecodingResult};

use crate::error::{Error, Result};
use crate::image::GrayImage;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Format {
    Pnm,
    Png,
    Tiff,
}

fn sniff(path: &Path) -> Result<Format> {
    let mut head = [0u8; 8];
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let n = f.read(&mut head).map_err(|e| Error::io(path, e))?;
    let head = &head[..n];
    if head.starts_with(b"P2") || head.starts_with(b"P5") {
        Ok(Format::Pnm)
    } else if head.starts_with(b"\x89PNG") {
        Ok(Format::Png)
    } else if head.starts_with(b"II*\0") || head.starts_with(b"MM\0*") {
        Ok(Format::Tiff)
    } else {
        Err(Error::UnsupportedFormat(path.display().to_string()))
    }
}

/// Reads one band of a raster as raw (un-normalized) sample values.
pub fn load_image(path: impl AsRef<Path>, band_index: usize) -> Result<GrayImage> {
    let path = path.as_ref();
    let (width, height, bands, samples) = match sniff(path)? {
        Format::Tiff => read_tiff(path)?,
        fmt @ (Format::Pnm | Format::Png) => {
            let format = if fmt == Format::Png { ImageFormat::Png } else { ImageFormat::Pnm };
            let reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
            let img = ::image::load(reader, format).map_err(|e| Error::io(path, e))?;
            dynamic_samples(img)?
        }
    };
    if band_index >= bands {
        return Err(Error::BandOutOfRange { index: band_index, count: bands });
    }
    let data = samples.iter().skip(band_index).step_by(bands).copied().collect();
    GrayImage::new(width, height, data)
}

type Samples = (usize, usize, usize, Vec<f64>);

fn dynamic_samples(img: DynamicImage) -> Result<Samples> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let bands = img.color().channel_count() as usize;
    let samples: Vec<f64> = match img {
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(f64::from).collect(),
        DynamicImage::ImageLumaA8(b) => b.into_raw().into_iter().map(f64::from).collect(),
        DynamicImage::ImageRgb8(b) => b.into_raw().into_iter().map(f64::from).collect(),
        DynamicImage::ImageRgba8(b) => b.into_raw().into_iter().map(f64::from).collect(),
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(f64::from).collect(),
        DynamicImage::ImageLumaA16(b) => b.into_raw().into_iter().map(f64::from).collect(),
        DynamicImage::ImageRgb16(b) => b.into_raw().into_iter().map(f64::from).collect(),
        DynamicImage::ImageRgba16(b) => b.into_raw().into_iter().map(f64::from).collect(),
        DynamicImage::ImageRgb32F(b) => b.into_raw().into_iter().map(f64::from).collect(),
        DynamicImage::ImageRgba32F(b) => b.into_raw().into_iter().map(f64::from).collect(),
        other => return Err(Error::UnsupportedFormat(format!("{:?}", other.color()))),
    };
    Ok((w, h, bands, samples))
}

fn read_tiff(path: &Path) -> Result<Samples> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = Decoder::new(BufReader::new(file)).map_err(|e| Error::io(path, e))?;
    let (w, h) = dec.dimensions().map_err(|e| Error::io(path, e))?;
    let bands = dec.colortype().map_err(|e| Error::io(path, e))?.num_samples() as usize;
    let samples: Vec<f64> = match dec.read_image().map_err(|e| Error::io(path, e))? {
        DecodingResult::U8(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::U16(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::U32(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::U64(v) => v.into_iter().map(|s| s as f64).collect(),
        DecodingResult::I8(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::I16(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::I32(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::I64(v) => v.into_iter().map(|s| s as f64).collect(),
        DecodingResult::F16(v) => v.into_iter().map(|s| s.to_f64()).collect(),
        DecodingResult::F32(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::F64(v) => v,
    };
    let (w, h) = (w as usize, h as usize);
    if samples.len() != w * h * bands {
        // planar layouts come back one plane at a time
        return Err(Error::UnsupportedFormat(format!("{}: planar TIFF", path.display())));
    }
    Ok((w, h, bands, samples))
}

fn to_u8(img: &GrayImage) -> Vec<u8> {
    img.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

/// Writes an image with values in `[0, 1]` as 8-bit grayscale; the format
/// follows the file extension (`.png` or `.pgm`).
pub fn save_image(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let buf = ::image::GrayImage::from_raw(img.width() as u32, img.height() as u32, to_u8(img))
        .expect("buffer length matches dimensions");
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") => buf.save_with_format(path, ImageFormat::Png).map_err(|e| Error::io(path, e)),
        Some("pgm") => {
            let file = File::create(path).map_err(|e| Error::io(path, e))?;
            let subtype = PnmSubtype::Graymap(SampleEncoding::Binary);
            let mut w = BufWriter::new(file);
            PnmEncoder::new(&mut w)
                .with_subtype(subtype)
                .write_image(buf.as_raw(), buf.width(), buf.height(), ExtendedColorType::L8)
                .map_err(|e| Error::io(path, e))?;
            w.flush().map_err(|e| Error::io(path, e))
        }
        other => Err(Error::UnsupportedFormat(format!("output extension {other:?}"))),
    }
}
