//! Rotation about the image center and integer translation, both zero-filled.

use crate::error::{check_fraction, Result};
use crate::tensor::{Image, Rng};

/// Applies the rotation matrix `[[cos, -sin], [sin, cos]]` to `(x, y)`.
pub fn rotate_point(theta: f64, x: f64, y: f64) -> (f64, f64) {
    let (s, c) = theta.sin_cos();
    (c * x - s * y, s * x + c * y)
}

/// Rotates by `theta` radians about the center. `x` runs along columns and
/// `y` along rows; each output pixel is pulled back through the inverse
/// rotation and sampled bilinearly, with zero outside the frame.
pub fn rotate_by(image: &Image, theta: f64) -> Image {
    if theta == 0.0 {
        return image.clone();
    }
    let (h, w, c) = (image.height(), image.width(), image.channels());
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let src = image.as_slice();
    let mut out = Image::zeros(h, w, c).expect("shape of an existing image");
    let dst = out.as_mut_slice();
    let texel = |r: i64, col: i64, ch: usize| -> f64 {
        if r < 0 || col < 0 || r >= h as i64 || col >= w as i64 {
            0.0
        } else {
            src[(r as usize * w + col as usize) * c + ch] as f64
        }
    };
    for r in 0..h {
        for col in 0..w {
            let (sx, sy) = rotate_point(-theta, col as f64 - cx, r as f64 - cy);
            let (fx, fy) = (sx + cx, sy + cy);
            let (x0, y0) = (fx.floor(), fy.floor());
            let (ax, ay) = (fx - x0, fy - y0);
            let (x0, y0) = (x0 as i64, y0 as i64);
            for ch in 0..c {
                let v = (1.0 - ay) * ((1.0 - ax) * texel(y0, x0, ch) + ax * texel(y0, x0 + 1, ch))
                    + ay * ((1.0 - ax) * texel(y0 + 1, x0, ch) + ax * texel(y0 + 1, x0 + 1, ch));
                dst[(r * w + col) * c + ch] = v as f32;
            }
        }
    }
    out
}

/// Random rotation with angle uniform in `[0, ratio * 180 degrees]`.
pub fn rotate(image: &Image, ratio: f64, rng: &mut Rng) -> Result<Image> {
    rotate_traced(image, ratio, rng).map(|(img, _)| img)
}

pub(crate) fn rotate_traced(image: &Image, ratio: f64, rng: &mut Rng) -> Result<(Image, f64)> {
    check_fraction("rotation ratio", ratio)?;
    let degrees = rng.uniform(0.0, ratio * 180.0)?;
    Ok((rotate_by(image, degrees.to_radians()), degrees))
}

/// Shifts content by `dx` columns and `dy` rows; vacated pixels become zero.
pub fn translate_by(image: &Image, dx: i64, dy: i64) -> Image {
    let (h, w, c) = (image.height() as i64, image.width() as i64, image.channels());
    let mut out = Image::zeros(h as usize, w as usize, c).expect("shape of an existing image");
    let src = image.as_slice();
    let dst = out.as_mut_slice();
    for r in 0..h {
        let sr = r - dy;
        if sr < 0 || sr >= h {
            continue;
        }
        for col in 0..w {
            let sc = col - dx;
            if sc < 0 || sc >= w {
                continue;
            }
            let from = ((sr * w + sc) as usize) * c;
            let to = ((r * w + col) as usize) * c;
            dst[to..to + c].copy_from_slice(&src[from..from + c]);
        }
    }
    out
}

/// Largest shift magnitudes `(floor(ratio * W), floor(ratio * H))`.
pub fn translation_bounds(height: usize, width: usize, ratio: f64) -> (i64, i64) {
    (
        (ratio * width as f64).floor() as i64,
        (ratio * height as f64).floor() as i64,
    )
}

pub fn translate(image: &Image, ratio: f64, rng: &mut Rng) -> Result<Image> {
    translate_traced(image, ratio, rng).map(|(img, _)| img)
}

pub(crate) fn translate_traced(
    image: &Image,
    ratio: f64,
    rng: &mut Rng,
) -> Result<(Image, (i64, i64))> {
    check_fraction("translation ratio", ratio)?;
    let (max_dx, max_dy) = translation_bounds(image.height(), image.width(), ratio);
    let dx = rng.uniform_int(-max_dx, max_dx)?;
    let dy = rng.uniform_int(-max_dy, max_dy)?;
    Ok((translate_by(image, dx, dy), (dx, dy)))
}
