//! Binary morphology with Euclidean disk structuring elements.
//!
//! The disk of radius `r` holds every offset with `dy² + dx² <= r²`. Pixels
//! outside the raster count as background for dilation and as foreground for
//! erosion. Closing runs on a canvas padded by the radius, so it matches
//! closing in the unbounded plane.

use std::collections::VecDeque;

use crate::grid::BinaryMask;

/// Sets every pixel within Euclidean distance `radius` of a set pixel.
pub fn dilate(mask: &BinaryMask, radius: usize) -> BinaryMask {
    if radius == 0 || mask.is_empty() {
        return mask.clone();
    }
    let (h, w) = mask.dims();
    // Horizontal distance to the nearest set pixel in the same row.
    let far = usize::MAX / 4;
    let mut row_dist = vec![far; h * w];
    for r in 0..h {
        let row = &mut row_dist[r * w..(r + 1) * w];
        let mut last = None;
        for c in 0..w {
            if mask.get(r, c) {
                last = Some(c);
            }
            if let Some(l) = last {
                row[c] = c - l;
            }
        }
        last = None;
        for c in (0..w).rev() {
            if mask.get(r, c) {
                last = Some(c);
            }
            if let Some(l) = last {
                row[c] = row[c].min(l - c);
            }
        }
    }
    let r2 = radius * radius;
    BinaryMask::from_fn(h, w, |r, c| {
        let lo = r.saturating_sub(radius);
        let hi = (r + radius).min(h - 1);
        (lo..=hi).any(|rr| {
            let dy = rr.abs_diff(r);
            let dx = row_dist[rr * w + c];
            dx <= radius && dy * dy + dx * dx <= r2
        })
    })
}

/// Keeps pixels whose whole disk neighborhood (clipped to the raster) is set.
pub fn erode(mask: &BinaryMask, radius: usize) -> BinaryMask {
    dilate(&mask.complement(), radius).complement()
}

/// Dilation followed by erosion with the same disk.
pub fn close(mask: &BinaryMask, radius: usize) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let (h, w) = mask.dims();
    let pad = radius;
    let padded = BinaryMask::from_fn(h + 2 * pad, w + 2 * pad, |r, c| {
        r >= pad && c >= pad && r - pad < h && c - pad < w && mask.get(r - pad, c - pad)
    });
    let closed = erode(&dilate(&padded, radius), radius);
    BinaryMask::from_fn(h, w, |r, c| closed.get(r + pad, c + pad))
}

/// Sets every background pixel not 4-connected to the raster border.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let (h, w) = mask.dims();
    let mut outside = vec![false; h * w];
    let mut queue = VecDeque::new();
    let seed =
        |r: usize, c: usize, outside: &mut Vec<bool>, queue: &mut VecDeque<(usize, usize)>| {
            let i = r * w + c;
            if !mask.bits()[i] && !outside[i] {
                outside[i] = true;
                queue.push_back((r, c));
            }
        };
    for c in 0..w {
        seed(0, c, &mut outside, &mut queue);
        seed(h - 1, c, &mut outside, &mut queue);
    }
    for r in 0..h {
        seed(r, 0, &mut outside, &mut queue);
        seed(r, w - 1, &mut outside, &mut queue);
    }
    while let Some((r, c)) = queue.pop_front() {
        if r > 0 {
            seed(r - 1, c, &mut outside, &mut queue);
        }
        if r + 1 < h {
            seed(r + 1, c, &mut outside, &mut queue);
        }
        if c > 0 {
            seed(r, c - 1, &mut outside, &mut queue);
        }
        if c + 1 < w {
            seed(r, c + 1, &mut outside, &mut queue);
        }
    }
    BinaryMask::new(h, w, outside.into_iter().map(|o| !o).collect()).expect("same dims")
}

pub fn close_and_fill(mask: &BinaryMask, closing_radius: usize) -> BinaryMask {
    fill_holes(&close(mask, closing_radius))
}
