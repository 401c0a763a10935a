//! Fold orderings for periodic index sets.
//!
//! On a periodic axis the natural ordering puts the wrap coupling `(0, n-1)`
//! at bandwidth `n - 1`.  Interleaving the two halves — `0, n-1, 1, n-2, ...`
//! — keeps every periodic neighbor within distance 2, so banded solvers see a
//! narrow band regardless of the wrap.  In two dimensions both axes are
//! folded and positions ordered lexicographically by `(fold(y), fold(x))`.

use super::CsrMatrix;

/// Position of index `i` on a folded periodic axis of length `n`.
///
/// Neighbors `i` and `(i + 1) % n` end up at positions differing by at most 2.
#[inline]
pub fn fold_position(i: usize, n: usize) -> usize {
    debug_assert!(i < n);
    if 2 * i < n {
        2 * i
    } else {
        2 * (n - 1 - i) + 1
    }
}

/// Folded positions for all dofs of a periodic tensor grid.
///
/// Returns `pos` with `pos[dof]` the dof's position in the folded order;
/// `pos` is a permutation of `0..n_dofs`.  `dim` is 1 or 2 and `n` the number
/// of dofs per side (dof `= y * n + x` in 2D).
pub fn fold_positions(dim: usize, n: usize) -> Vec<usize> {
    match dim {
        1 => (0..n).map(|i| fold_position(i, n)).collect(),
        2 => {
            let mut pos = vec![0usize; n * n];
            for y in 0..n {
                let fy = fold_position(y, n);
                for x in 0..n {
                    pos[y * n + x] = fy * n + fold_position(x, n);
                }
            }
            pos
        }
        _ => panic!("fold_positions supports dim 1 or 2, got {dim}"),
    }
}

/// Half bandwidth of a symmetric-pattern matrix under a position map.
///
/// Returns `max |pos[i] - pos[j]|` over stored entries.
pub fn bandwidth_under(pos: &[usize], m: &CsrMatrix) -> usize {
    let mut bw = 0usize;
    for (i, j, _) in m.iter() {
        let (a, b) = (pos[i], pos[j]);
        bw = bw.max(a.abs_diff(b));
    }
    bw
}
