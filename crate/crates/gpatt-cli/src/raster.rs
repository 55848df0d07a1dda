//! Binary PGM (P5) and PPM (P6) rasters, 8 bits per sample. These are the
//! bit-exact baseline formats for image jobs.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};

#[derive(Debug, Clone)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    /// 1 (grayscale) or 3 (RGB).
    pub channels: usize,
    /// Row-major, interleaved samples.
    pub data: Vec<u8>,
}

impl Raster {
    pub fn sample(&self, x: usize, y: usize, ch: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + ch]
    }

    /// One channel as f64 values in grid order (x fastest), matching a grid
    /// with axes [0..width), [0..height).
    pub fn channel_values(&self, ch: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.width * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                out.push(self.sample(x, y, ch) as f64);
            }
        }
        out
    }

    pub fn from_channels(width: usize, height: usize, channels: &[Vec<f64>]) -> Result<Raster> {
        if channels.is_empty() || (channels.len() != 1 && channels.len() != 3) {
            bail!("rasters have 1 or 3 channels, got {}", channels.len());
        }
        let n = width * height;
        if channels.iter().any(|c| c.len() != n) {
            bail!("channel length does not match {width}x{height}");
        }
        let nc = channels.len();
        let mut data = vec![0u8; n * nc];
        for (ch, values) in channels.iter().enumerate() {
            for i in 0..n {
                data[i * nc + ch] = values[i].round().clamp(0.0, 255.0) as u8;
            }
        }
        Ok(Raster { width, height, channels: nc, data })
    }
}

pub fn read(path: &Path) -> Result<Raster> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let mut pos = 0usize;

    let magic = take_token(&bytes, &mut pos).context("missing raster magic")?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => bail!("unsupported raster magic '{other}' (want binary P5 or P6)"),
    };
    let width: usize = take_token(&bytes, &mut pos)
        .context("missing width")?
        .parse()
        .context("bad width")?;
    let height: usize = take_token(&bytes, &mut pos)
        .context("missing height")?
        .parse()
        .context("bad height")?;
    let maxval: usize = take_token(&bytes, &mut pos)
        .context("missing maxval")?
        .parse()
        .context("bad maxval")?;
    if maxval == 0 || maxval > 255 {
        bail!("only 8-bit rasters supported (maxval {maxval})");
    }
    // single whitespace byte after maxval, then the binary payload
    pos += 1;
    let need = width * height * channels;
    let payload = bytes
        .get(pos..pos + need)
        .with_context(|| format!("raster payload truncated (need {need} bytes)"))?;
    Ok(Raster { width, height, channels, data: payload.to_vec() })
}

pub fn write(path: &Path, raster: &Raster) -> Result<()> {
    let magic = match raster.channels {
        1 => "P5",
        3 => "P6",
        n => bail!("rasters have 1 or 3 channels, got {n}"),
    };
    let mut out = Vec::with_capacity(raster.data.len() + 32);
    write!(out, "{magic}\n{} {}\n255\n", raster.width, raster.height)?;
    out.extend_from_slice(&raster.data);
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Next whitespace-separated token, skipping '#' comment lines.
fn take_token(bytes: &[u8], pos: &mut usize) -> Option<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if *pos > start {
        Some(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_pgm_and_ppm() {
        let dir = std::env::temp_dir().join(format!("gpatt-raster-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();

        let gray = Raster {
            width: 3,
            height: 2,
            channels: 1,
            data: vec![0, 10, 255, 7, 8, 9],
        };
        let p = dir.join("t.pgm");
        write(&p, &gray).unwrap();
        let back = read(&p).unwrap();
        assert_eq!(back.data, gray.data);
        assert_eq!((back.width, back.height, back.channels), (3, 2, 1));

        let rgb = Raster {
            width: 2,
            height: 2,
            channels: 3,
            data: (0..12).map(|i| i as u8 * 20).collect(),
        };
        let p = dir.join("t.ppm");
        write(&p, &rgb).unwrap();
        let back = read(&p).unwrap();
        assert_eq!(back.data, rgb.data);
        assert_eq!(back.sample(1, 0, 2), rgb.data[5]);

        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn comments_in_header() {
        let dir = std::env::temp_dir().join(format!("gpatt-raster-c-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("c.pgm");
        std::fs::write(&p, b"P5\n# a comment\n2 1\n255\n\x01\x02").unwrap();
        let r = read(&p).unwrap();
        assert_eq!(r.data, vec![1, 2]);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn channel_extraction_matches_grid_order() {
        let rgb = Raster {
            width: 2,
            height: 2,
            channels: 3,
            data: vec![
                10, 11, 12, //
                20, 21, 22, //
                30, 31, 32, //
                40, 41, 42,
            ],
        };
        // grid linear order: x fastest
        assert_eq!(rgb.channel_values(0), vec![10.0, 20.0, 30.0, 40.0]);
        assert_eq!(rgb.channel_values(2), vec![12.0, 22.0, 32.0, 42.0]);
    }
}
