//! Binary greyscale PGM (P5) output.

/// `round(255 · clamp(v, 0, 1))`.
pub fn to_pixel(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

pub fn encode(width: usize, height: usize, values: &[f64]) -> Vec<u8> {
    assert_eq!(values.len(), width * height, "pixel count does not match image size");
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| to_pixel(v)));
    out
}

/// Square images when `n` is a perfect square, a single row otherwise.
pub fn image_dims(n: usize) -> (usize, usize) {
    let side = (n as f64).sqrt().round() as usize;
    if side * side == n {
        (side, side)
    } else {
        (n, 1)
    }
}
