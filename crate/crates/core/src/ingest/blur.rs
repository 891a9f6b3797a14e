use image::RgbImage;

use crate::error::{Error, Result};

/// Luma scaled by 1000 (BT.601 weights 299/587/114), exact in integers.
fn luma_milli(img: &RgbImage) -> Vec<i64> {
    img.pixels()
        .map(|p| 299 * i64::from(p[0]) + 587 * i64::from(p[1]) + 114 * i64::from(p[2]))
        .collect()
}

#[inline]
fn reflect101(i: isize, n: isize) -> usize {
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * n - 2 - i
    } else {
        i
    };
    r as usize
}

/// Sharpness as the variance of the 4-neighbour Laplacian of the grayscale
/// image, with reflect-101 borders. Higher is sharper; constant images score 0.
///
/// The Laplacian is evaluated in integer arithmetic, so the score is exactly
/// invariant to adding a constant to every pixel.
pub fn blur_score(img: &RgbImage) -> Result<f64> {
    let (w, h) = (img.width() as isize, img.height() as isize);
    if w < 3 || h < 3 {
        return Err(Error::param("image", format!("{w}x{h} is smaller than 3x3")));
    }
    let y = luma_milli(img);
    let at = |r: isize, c: isize| y[reflect101(r, h) * w as usize + reflect101(c, w)];
    let mut sum: i128 = 0;
    let mut sum_sq: i128 = 0;
    for r in 0..h {
        for c in 0..w {
            let lap = at(r - 1, c) + at(r + 1, c) + at(r, c - 1) + at(r, c + 1) - 4 * at(r, c);
            sum += i128::from(lap);
            sum_sq += i128::from(lap) * i128::from(lap);
        }
    }
    let n = i128::from(w as i64 * h as i64);
    let scaled = n * sum_sq - sum * sum;
    Ok(scaled as f64 / (n * n) as f64 / 1e6)
}
