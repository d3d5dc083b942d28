//! Image sources: CIFAR-10 binary batches, a procedural generator, and a small
//! binary container for generated sets.
//!
//! Container layout (little-endian): magic `SCIMAGE1`, `u32` count, `u32` height,
//! `u32` width, then `count * 3 * height * width` `f64` pixels, planar RGB per image.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;

use crate::codec::{Geometry, Image};
use crate::error::{Error, Result};
use crate::params::CountingReader;
use crate::rng::{rng_for, SimRng};

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_RECORD: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;
const MAGIC: &[u8; 8] = b"SCIMAGE1";

/// Parses CIFAR-10 binary records (one label byte, then the R, G and B planes,
/// row-major). Labels are dropped and pixels scaled to `[0, 1]`.
pub fn parse_cifar10(bytes: &[u8]) -> Result<Vec<Image>> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_RECORD) {
        let whole = bytes.len() / CIFAR_RECORD;
        return Err(Error::Format {
            what: "CIFAR-10 batch",
            offset: (whole * CIFAR_RECORD) as u64,
            detail: format!(
                "file is {} bytes; expected a non-zero multiple of {CIFAR_RECORD} (record {} is truncated, expected {} bytes)",
                bytes.len(),
                whole,
                (whole + 1) * CIFAR_RECORD
            ),
        });
    }
    bytes
        .chunks(CIFAR_RECORD)
        .map(|rec| {
            Image::new(
                CIFAR_SIDE,
                CIFAR_SIDE,
                rec[1..].iter().map(|&b| b as f64 / 255.0).collect(),
            )
        })
        .collect()
}

pub fn load_cifar10(path: impl AsRef<Path>) -> Result<Vec<Image>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    parse_cifar10(&bytes)
}

/// 2x2 box downsampling.
pub fn downsample_half(img: &Image) -> Result<Image> {
    let (h, w) = (img.height / 2, img.width / 2);
    let p = img.pixels();
    let mut out = Vec::with_capacity(3 * h * w);
    for c in 0..3 {
        let plane = &p[c * img.height * img.width..];
        for i in 0..h {
            for j in 0..w {
                let at = |di: usize, dj: usize| plane[(2 * i + di) * img.width + 2 * j + dj];
                out.push((at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) / 4.0);
            }
        }
    }
    Image::new(h, w, out)
}

/// Brings CIFAR-sized images to `geometry` by repeated halving.
pub fn fit_to_geometry(images: Vec<Image>, geometry: &Geometry) -> Result<Vec<Image>> {
    images
        .into_iter()
        .map(|mut img| {
            while img.height > geometry.img_h && img.height % 2 == 0 && img.width % 2 == 0 {
                img = downsample_half(&img)?;
            }
            if img.height != geometry.img_h || img.width != geometry.img_w {
                return Err(Error::Config(format!(
                    "cannot fit {}x{} image to {}x{}",
                    img.height, img.width, geometry.img_h, geometry.img_w
                )));
            }
            Ok(img)
        })
        .collect()
}

fn color(rng: &mut SimRng) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

fn synth_one(h: usize, w: usize, rng: &mut SimRng) -> Vec<f64> {
    let (c0, c1) = (color(rng), color(rng));
    let theta = rng.random::<f64>() * 2.0 * PI;
    let (dx, dy) = (theta.cos(), theta.sin());
    let mut px = vec![0.0; 3 * h * w];
    for i in 0..h {
        for j in 0..w {
            let (x, y) = ((j as f64 + 0.5) / w as f64, (i as f64 + 0.5) / h as f64);
            let t = (((x - 0.5) * dx + (y - 0.5) * dy) / std::f64::consts::SQRT_2 + 0.5).clamp(0.0, 1.0);
            for c in 0..3 {
                px[c * h * w + i * w + j] = c0[c] * (1.0 - t) + c1[c] * t;
            }
        }
    }
    for _ in 0..rng.random_range(1..=3) {
        let col = color(rng);
        let alpha = rng.random_range(0.5..1.0);
        let (x0, y0) = (rng.random_range(0.0..0.8), rng.random_range(0.0..0.8));
        let (rw, rh) = (rng.random_range(0.15..0.6), rng.random_range(0.15..0.6));
        for i in 0..h {
            for j in 0..w {
                let (x, y) = ((j as f64 + 0.5) / w as f64, (i as f64 + 0.5) / h as f64);
                if x >= x0 && x < x0 + rw && y >= y0 && y < y0 + rh {
                    for c in 0..3 {
                        let v = &mut px[c * h * w + i * w + j];
                        *v = (1.0 - alpha) * *v + alpha * col[c];
                    }
                }
            }
        }
    }
    let amp = rng.random_range(0.05..0.2);
    let (fx, fy) = (rng.random_range(0.5..3.0), rng.random_range(0.5..3.0));
    let phase = rng.random::<f64>() * 2.0 * PI;
    let tint = color(rng);
    for i in 0..h {
        for j in 0..w {
            let (x, y) = (j as f64 / w as f64, i as f64 / h as f64);
            let wave = amp * (2.0 * PI * (fx * x + fy * y) + phase).sin();
            for c in 0..3 {
                let v = &mut px[c * h * w + i * w + j];
                *v = (*v + wave * (0.5 + tint[c])).clamp(0.0, 1.0);
            }
        }
    }
    px
}

/// Procedural images: a two-color linear gradient, one to three blended
/// rectangles, and a tinted sinusoidal texture, all parameters random per image.
/// Images with pixel variance at or below 0.001 are redrawn.
pub fn gen_synthetic_dataset(count: usize, geometry: &Geometry, seed: u64) -> Result<Vec<Image>> {
    if count == 0 {
        return Err(Error::Empty("synthetic dataset request"));
    }
    let (h, w) = (geometry.img_h, geometry.img_w);
    (0..count)
        .map(|i| {
            let mut rng = rng_for(seed, &[0x1A6E, i as u64]);
            loop {
                let img = Image::new(h, w, synth_one(h, w, &mut rng))?;
                if img.variance() > 0.001 {
                    return Ok(img);
                }
            }
        })
        .collect()
}

/// Leading `1 - test_fraction` for training, the rest for testing.
pub fn split_train_test(images: Vec<Image>, test_fraction: f64) -> (Vec<Image>, Vec<Image>) {
    let n_test = ((images.len() as f64) * test_fraction).round() as usize;
    let mut train = images;
    let test = train.split_off(train.len() - n_test.min(train.len()));
    (train, test)
}

pub fn write_images<W: Write>(images: &[Image], mut w: W) -> Result<()> {
    let first = images.first().ok_or(Error::Empty("image set"))?;
    w.write_all(MAGIC)?;
    w.write_all(&(images.len() as u32).to_le_bytes())?;
    w.write_all(&(first.height as u32).to_le_bytes())?;
    w.write_all(&(first.width as u32).to_le_bytes())?;
    for img in images {
        if (img.height, img.width) != (first.height, first.width) {
            return Err(Error::Config("all images in a container must share one size".into()));
        }
        for p in img.pixels() {
            w.write_all(&p.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_images<R: Read>(r: R) -> Result<Vec<Image>> {
    let mut r = CountingReader { inner: r, offset: 0 };
    let mut magic = [0u8; 8];
    r.fill(&mut magic)?;
    if &magic != MAGIC {
        return Err(r.error("not an image container".into()));
    }
    let count = r.u32()? as usize;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    (0..count)
        .map(|_| {
            let px = (0..3 * h * w).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            Image::new(h, w, px)
        })
        .collect()
}

pub fn save_images(images: &[Image], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_images(images, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_images(path: impl AsRef<Path>) -> Result<Vec<Image>> {
    read_images(BufReader::new(File::open(path)?))
}
