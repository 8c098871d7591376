//! Edge ground truth from object masks.

use crate::map::Map;

/// Erosion by a `(2r+1)^2` square. Pixels outside the map do not count as
/// background, so objects touching the border keep their border pixels.
pub fn erode(mask: &Map, radius: usize) -> Map {
    let (h, w) = (mask.height(), mask.width());
    let fg = |v: f64| v > 0.5;
    // Separable: horizontal then vertical minimum.
    let rows = Map::from_fn(h, w, |y, x| {
        let lo = x.saturating_sub(radius);
        let hi = (x + radius).min(w - 1);
        (lo..=hi).all(|xx| fg(mask.get(y, xx))) as u8 as f64
    });
    Map::from_fn(h, w, |y, x| {
        let lo = y.saturating_sub(radius);
        let hi = (y + radius).min(h - 1);
        (lo..=hi).all(|yy| rows.get(yy, x) > 0.5) as u8 as f64
    })
}

/// Inner boundary of `mask` of the given width: object pixels within
/// `width` (chessboard distance) of a background pixel. A filled square
/// yields its one-pixel perimeter ring for `width = 1`; the result is empty
/// iff the mask is constant.
pub fn derive_edge(mask: &Map, width: usize) -> Map {
    if mask.is_empty() || width == 0 {
        return Map::zeros(mask.height(), mask.width());
    }
    let inner = erode(mask, width);
    Map::from_fn(mask.height(), mask.width(), |y, x| {
        (mask.get(y, x) > 0.5 && inner.get(y, x) < 0.5) as u8 as f64
    })
}
