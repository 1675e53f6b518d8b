//! Four-direction cross-scan expansion and merge.

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Traversal order of a 2-D grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanDirection {
    RowForward,
    ColumnForward,
    RowReverse,
    ColumnReverse,
}

impl ScanDirection {
    pub const ALL: [ScanDirection; 4] = [
        ScanDirection::RowForward,
        ScanDirection::ColumnForward,
        ScanDirection::RowReverse,
        ScanDirection::ColumnReverse,
    ];

    /// Row-major grid index visited at sequence position `s`.
    #[inline]
    pub fn grid_index(self, s: usize, h: usize, w: usize) -> usize {
        let l = h * w;
        let column_major = |s: usize| (s % h) * w + s / h;
        match self {
            ScanDirection::RowForward => s,
            ScanDirection::ColumnForward => column_major(s),
            ScanDirection::RowReverse => l - 1 - s,
            ScanDirection::ColumnReverse => column_major(l - 1 - s),
        }
    }

    /// `grid_index` for every sequence position.
    pub fn order(self, h: usize, w: usize) -> Vec<usize> {
        (0..h * w).map(|s| self.grid_index(s, h, w)).collect()
    }
}

/// `[B, H, W, C]` → `[B, 4, H·W, C]`, one sequence per [`ScanDirection`].
pub fn cross_scan_expand<T: Scalar>(f: &Tensor<T>) -> Result<Tensor<T>> {
    if f.rank() != 4 {
        return Err(shape_err!(
            "cross_scan_expand: expected [B, H, W, C], got {:?}",
            f.shape()
        ));
    }
    let (b, h, w, c) = (f.dim(0), f.dim(1), f.dim(2), f.dim(3));
    let orders: Vec<Vec<usize>> = ScanDirection::ALL.iter().map(|d| d.order(h, w)).collect();
    let data = expand_raw(f.data(), b, h * w, c, &orders);
    Ok(Tensor::from_op(
        "cross_scan_expand",
        vec![b, 4, h * w, c],
        data,
        &[f],
        move |g| vec![Some(merge_raw(g, b, h * w, c, &orders))],
    ))
}

/// `[B, 4, H·W, C]` → `[B, H, W, C]`: each direction is put back on the grid
/// and the four grids are summed.
pub fn cross_scan_merge<T: Scalar>(s: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    if s.rank() != 4 || s.dim(1) != 4 || s.dim(2) != h * w {
        return Err(shape_err!(
            "cross_scan_merge: expected [B, 4, {}, C] for a {h}x{w} grid, got {:?}",
            h * w,
            s.shape()
        ));
    }
    let (b, c) = (s.dim(0), s.dim(3));
    let orders: Vec<Vec<usize>> = ScanDirection::ALL.iter().map(|d| d.order(h, w)).collect();
    let data = merge_raw(s.data(), b, h * w, c, &orders);
    Ok(Tensor::from_op(
        "cross_scan_merge",
        vec![b, h, w, c],
        data,
        &[s],
        move |g| vec![Some(expand_raw(g, b, h * w, c, &orders))],
    ))
}

fn expand_raw<T: Scalar>(x: &[T], b: usize, l: usize, c: usize, orders: &[Vec<usize>]) -> Vec<T> {
    let mut out = Vec::with_capacity(b * 4 * l * c);
    for bi in 0..b {
        let grid = &x[bi * l * c..(bi + 1) * l * c];
        for order in orders {
            for &p in order {
                out.extend_from_slice(&grid[p * c..(p + 1) * c]);
            }
        }
    }
    out
}

fn merge_raw<T: Scalar>(s: &[T], b: usize, l: usize, c: usize, orders: &[Vec<usize>]) -> Vec<T> {
    let mut out = vec![T::zero(); b * l * c];
    for bi in 0..b {
        let grid = &mut out[bi * l * c..(bi + 1) * l * c];
        for (di, order) in orders.iter().enumerate() {
            let seq = &s[(bi * 4 + di) * l * c..][..l * c];
            for (si, &p) in order.iter().enumerate() {
                for k in 0..c {
                    grid[p * c + k] += seq[si * c + k];
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_2x3() -> Tensor<f32> {
        Tensor::from_fn(&[1, 2, 3, 1], |i| (i + 1) as f32)
    }

    #[test]
    fn expand_orders_on_2x3() {
        let e = cross_scan_expand(&grid_2x3()).unwrap();
        assert_eq!(e.shape(), &[1, 4, 6, 1]);
        let d = e.data();
        assert_eq!(&d[0..6], &[1., 2., 3., 4., 5., 6.]);
        assert_eq!(&d[6..12], &[1., 4., 2., 5., 3., 6.]);
        assert_eq!(&d[12..18], &[6., 5., 4., 3., 2., 1.]);
        assert_eq!(&d[18..24], &[6., 3., 5., 2., 4., 1.]);
    }

    #[test]
    fn directions_are_bijections() {
        for (h, w) in [(1, 1), (2, 3), (5, 4), (7, 1)] {
            for dir in ScanDirection::ALL {
                let mut seen = dir.order(h, w);
                seen.sort_unstable();
                assert_eq!(seen, (0..h * w).collect::<Vec<_>>(), "{dir:?} {h}x{w}");
            }
        }
    }

    #[test]
    fn merge_of_expand_is_four_times() {
        let f = grid_2x3();
        let m = cross_scan_merge(&cross_scan_expand(&f).unwrap(), 2, 3).unwrap();
        let four: Vec<f32> = f.data().iter().map(|v| 4.0 * v).collect();
        assert_eq!(m.to_vec(), four);
    }

    #[test]
    fn merge_zero_and_shape_errors() {
        let z = cross_scan_merge(&Tensor::<f32>::zeros(&[2, 4, 6, 3]), 3, 2).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        assert!(cross_scan_merge(&Tensor::<f32>::zeros(&[1, 3, 6, 1]), 2, 3).is_err());
        assert!(cross_scan_merge(&Tensor::<f32>::zeros(&[1, 4, 6, 1]), 2, 2).is_err());
    }
}
