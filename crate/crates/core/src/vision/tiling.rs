use crate::error::{shape, Error, Result};
use crate::types::ImageTensor;

/// Square tiles cut from a resized image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TileSet {
    pub tiles: Vec<ImageTensor>,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub tile_size: usize,
}

impl TileSet {
    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }
}

/// Picks the `(rows, cols)` grid for an image.
///
/// Minimizes `|ln(w/h) − ln(cols/rows)|` over grids with at most `max_tiles`
/// tiles, scanning by increasing tile count. On an exact tie the larger grid
/// wins only when the image covers more than half of that grid's pixel area,
/// so a 1344×1344 image lands on 3×3 while a 448×448 image stays 1×1.
pub fn select_grid(height: usize, width: usize, tile_size: usize, max_tiles: usize) -> Result<(usize, usize)> {
    if max_tiles == 0 {
        return Err(Error::InvalidConfig("max_tiles must be at least 1".into()));
    }
    if tile_size == 0 {
        return Err(Error::InvalidConfig("tile_size must be positive".into()));
    }
    let mut candidates: Vec<(usize, usize)> = (1..=max_tiles)
        .flat_map(|r| (1..=max_tiles / r).map(move |c| (r, c)))
        .collect();
    candidates.sort_by_key(|&(r, c)| (r * c, r));

    let target = (width as f64 / height as f64).ln();
    let area = (height * width) as f64;
    let tile_area = (tile_size * tile_size) as f64;
    let mut best = (1, 1);
    let mut best_diff = f64::INFINITY;
    for (r, c) in candidates {
        let diff = (target - (c as f64 / r as f64).ln()).abs();
        if diff < best_diff {
            best = (r, c);
            best_diff = diff;
        } else if diff == best_diff && area > 0.5 * tile_area * (r * c) as f64 {
            best = (r, c);
        }
    }
    Ok(best)
}

/// Bilinear resize with half-pixel centers. Same-size resizes are exact copies.
pub fn resize_bilinear(img: &ImageTensor, height: usize, width: usize) -> ImageTensor {
    if img.height() == height && img.width() == width {
        return img.clone();
    }
    let ch = img.channels();
    let sy = img.height() as f64 / height as f64;
    let sx = img.width() as f64 / width as f64;
    let max_y = img.height() - 1;
    let max_x = img.width() - 1;
    let axis = |dst: usize, scale: f64, max: usize| {
        let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, max as f64);
        let lo = src.floor() as usize;
        (lo, (lo + 1).min(max), src - lo as f64)
    };
    let cols: Vec<(usize, usize, f64)> = (0..width).map(|x| axis(x, sx, max_x)).collect();
    let mut out = Vec::with_capacity(height * width * ch);
    for y in 0..height {
        let (y0, y1, fy) = axis(y, sy, max_y);
        for &(x0, x1, fx) in &cols {
            for c in 0..ch {
                let top = img.at(y0, x0, c) * (1.0 - fx) + img.at(y0, x1, c) * fx;
                let bottom = img.at(y1, x0, c) * (1.0 - fx) + img.at(y1, x1, c) * fx;
                out.push((top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0));
            }
        }
    }
    ImageTensor::new(height, width, out).expect("resize preserves shape and range")
}

/// Splits `img` into at most `max_tiles` square tiles of side `tile_size`.
pub fn tile_image(img: &ImageTensor, tile_size: usize, max_tiles: usize) -> Result<TileSet> {
    let (rows, cols) = select_grid(img.height().max(1), img.width().max(1), tile_size, max_tiles)?;
    if img.height() < tile_size || img.width() < tile_size {
        return Err(shape(format!(
            "image {}x{} smaller than tile size {tile_size}",
            img.height(),
            img.width()
        )));
    }
    let resized = resize_bilinear(img, rows * tile_size, cols * tile_size);
    let ch = resized.channels();
    let row_stride = resized.width() * ch;
    let mut tiles = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let mut px = Vec::with_capacity(tile_size * tile_size * ch);
            for y in 0..tile_size {
                let start = (r * tile_size + y) * row_stride + c * tile_size * ch;
                px.extend_from_slice(&resized.pixels()[start..start + tile_size * ch]);
            }
            tiles.push(ImageTensor::new(tile_size, tile_size, px)?);
        }
    }
    Ok(TileSet {
        tiles,
        grid_rows: rows,
        grid_cols: cols,
        tile_size,
    })
}
