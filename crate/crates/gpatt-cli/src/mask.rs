//! Mask specifications for image jobs. A mask names the pixels to HIDE from
//! training (the inpainting target): either a raster whose zero pixels are
//! masked, or "rect:x0,y0,x1,y1" half-open rectangles. Multiple specs compose
//! by union of the masked regions.

use std::path::Path;

use anyhow::{bail, Context, Result};

use crate::raster;

/// Resolves mask specs against a width x height image. Returns the
/// observation mask in grid order (x fastest): true = visible to training.
pub fn resolve(specs: &[String], width: usize, height: usize, base: &Path) -> Result<Vec<bool>> {
    let mut visible = vec![true; width * height];
    for spec in specs {
        if let Some(rect) = spec.strip_prefix("rect:") {
            let parts: Vec<&str> = rect.split(',').collect();
            if parts.len() != 4 {
                bail!("bad rectangle '{spec}', want rect:x0,y0,x1,y1");
            }
            let nums: Vec<usize> = parts
                .iter()
                .map(|p| p.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .with_context(|| format!("bad rectangle '{spec}'"))?;
            let (x0, y0, x1, y1) = (nums[0], nums[1], nums[2], nums[3]);
            if x0 >= x1 || y0 >= y1 || x1 > width || y1 > height {
                bail!("rectangle '{spec}' does not fit a {width}x{height} image");
            }
            for y in y0..y1 {
                for x in x0..x1 {
                    visible[y * width + x] = false;
                }
            }
        } else {
            let path = base.join(spec);
            let mask_raster = raster::read(&path)
                .with_context(|| format!("reading mask raster '{}'", path.display()))?;
            if mask_raster.width != width || mask_raster.height != height {
                bail!(
                    "mask raster is {}x{}, image is {width}x{height}",
                    mask_raster.width,
                    mask_raster.height
                );
            }
            for y in 0..height {
                for x in 0..width {
                    // zero in any channel masks the pixel out
                    let hidden =
                        (0..mask_raster.channels).any(|c| mask_raster.sample(x, y, c) == 0);
                    if hidden {
                        visible[y * width + x] = false;
                    }
                }
            }
        }
    }
    Ok(visible)
}
