use std::path::Path;

use super::{GrayImage, Result, RgbImage};

/// Decodes an 8-bit PNG or binary PPM (or anything else the codec
/// recognises) into RGB.
pub fn load_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    let img = image::open(path.as_ref())?.to_rgb8();
    let (w, h) = img.dimensions();
    RgbImage::new(w as usize, h as usize, img.into_raw())
}

pub fn save_png(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    image::save_buffer_with_format(
        path.as_ref(),
        img.data(),
        img.width() as u32,
        img.height() as u32,
        image::ExtendedColorType::Rgb8,
        image::ImageFormat::Png,
    )?;
    Ok(())
}

/// Writes a binary (P6) PPM.
pub fn save_ppm(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    let mut bytes = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    bytes.extend_from_slice(img.data());
    std::fs::write(path, bytes)?;
    Ok(())
}

impl GrayImage {
    pub fn load(path: impl AsRef<Path>) -> Result<GrayImage> {
        Ok(load_rgb(path)?.to_gray())
    }
}
