use std::io::Cursor;

use super::ImageBuf;
use crate::error::{Error, Result};

fn codec_err(e: impl std::fmt::Display) -> Error {
    Error::Codec(e.to_string())
}

/// Encode as 8-bit RGB PNG; metadata entries become `tEXt` chunks ahead of the image data.
pub fn encode_png(image: &ImageBuf) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, image.width() as u32, image.height() as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Fast);
        for (k, v) in &image.metadata {
            enc.add_text_chunk(k.clone(), v.clone())
                .map_err(codec_err)?;
        }
        let mut writer = enc.write_header().map_err(codec_err)?;
        writer.write_image_data(image.pixels()).map_err(codec_err)?;
        writer.finish().map_err(codec_err)?;
    }
    Ok(out)
}

/// Decode any 8/16-bit PNG into RGB8, dropping alpha. Text chunks land in `metadata`.
pub fn decode_png(bytes: &[u8]) -> Result<ImageBuf> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = dec.read_info().map_err(codec_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Codec("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(codec_err)?;
    buf.truncate(info.buffer_size());

    let (w, h) = (info.width as usize, info.height as usize);
    let rgb = match info.color_type {
        png::ColorType::Rgb => buf,
        png::ColorType::Rgba => buf
            .chunks_exact(4)
            .flat_map(|p| [p[0], p[1], p[2]])
            .collect(),
        png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g, g, g]).collect(),
        png::ColorType::GrayscaleAlpha => buf
            .chunks_exact(2)
            .flat_map(|p| [p[0], p[0], p[0]])
            .collect(),
        png::ColorType::Indexed => return Err(Error::Codec("palette not expanded".into())),
    };
    let mut image = ImageBuf::new(w, h, rgb)?;
    let text = &reader.info().uncompressed_latin1_text;
    for chunk in text {
        image
            .metadata
            .insert(chunk.keyword.clone(), chunk.text.clone());
    }
    Ok(image)
}
