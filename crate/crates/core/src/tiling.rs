// Copyright 2026 The slstm Authors.
// Licensed under the Apache License, Version 2.0, see LICENSE for details.
// SPDX-License-Identifier: Apache-2.0

//! Equal-split tiling of a vector dimension across `n` grid columns or rows.

use std::ops::Range;

/// Tile length when `total` elements are split over `parts` tiles; the last
/// tile is shorter (zero-padded) when the split is uneven.
pub fn tile_len(total: usize, parts: usize) -> usize {
    assert!(parts > 0, "tile count must be positive");
    total.div_ceil(parts)
}

/// Index range of tile `idx`, possibly empty.
pub fn tile_range(total: usize, parts: usize, idx: usize) -> Range<usize> {
    let t = tile_len(total, parts);
    let start = (idx * t).min(total);
    let end = ((idx + 1) * t).min(total);
    start..end
}

/// Number of zero elements appended to make every tile `tile_len` long.
pub fn padding(total: usize, parts: usize) -> usize {
    tile_len(total, parts) * parts - total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_cover_exactly_once() {
        for total in 0..40 {
            for parts in 1..6 {
                let mut seen = vec![0u8; total];
                for i in 0..parts {
                    for k in tile_range(total, parts, i) {
                        seen[k] += 1;
                    }
                }
                assert!(seen.iter().all(|&s| s == 1), "total {total} parts {parts}");
            }
        }
    }

    #[test]
    fn padding_examples() {
        assert_eq!(tile_len(123, 2), 62);
        assert_eq!(padding(123, 2), 1);
        assert_eq!(padding(192, 2), 0);
        assert_eq!(tile_range(5, 3, 2), 4..5);
    }
}
