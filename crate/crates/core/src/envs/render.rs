/// Side length of rendered observations.
pub const IMAGE_SIDE: usize = 16;

/// Bilinear splat of dots at unit-square positions onto a
/// `IMAGE_SIDE x IMAGE_SIDE` grid. Position `(0, 0)` is the centre of the
/// top-left pixel, `(1, 1)` of the bottom-right one. Pixels saturate at 1.
pub fn render_dots(dots: &[([f64; 2], f64)]) -> Vec<f64> {
    let n = IMAGE_SIDE;
    let mut img = vec![0.0; n * n];
    let top = (n - 1) as f64;
    for &([x, y], intensity) in dots {
        let px = x.clamp(0.0, 1.0) * top;
        let py = y.clamp(0.0, 1.0) * top;
        let (x0, y0) = (px.floor().min(top - 1.0), py.floor().min(top - 1.0));
        let (fx, fy) = (px - x0, py - y0);
        let (c, r) = (x0 as usize, y0 as usize);
        let w = [(0, 0, (1.0 - fx) * (1.0 - fy)), (1, 0, fx * (1.0 - fy)), (0, 1, (1.0 - fx) * fy), (1, 1, fx * fy)];
        for (dc, dr, wt) in w {
            img[(r + dr) * n + c + dc] += intensity * wt;
        }
    }
    for v in &mut img {
        *v = v.min(1.0);
    }
    img
}
