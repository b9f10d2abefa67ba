use nalgebra::{DMatrix, Vector2};

use crate::scalar::{lit, Real};

/// Planar serial chain with relative joint angles.
#[derive(Debug, Clone)]
pub struct PlanarChain<T: Real> {
    pub base: Vector2<T>,
    pub lengths: Vec<T>,
}

impl<T: Real> PlanarChain<T> {
    pub fn new(base: [f64; 2], lengths: &[f64]) -> Self {
        Self {
            base: Vector2::new(lit(base[0]), lit(base[1])),
            lengths: lengths.iter().map(|&l| lit(l)).collect(),
        }
    }

    pub fn reach(&self) -> T {
        self.lengths.iter().fold(T::zero(), |a, &b| a + b)
    }

    /// Position of the end of link `k` (1-based) and its `2 x dof` Jacobian.
    pub fn point(&self, q: &[T], k: usize) -> (Vector2<T>, DMatrix<T>) {
        let dof = self.lengths.len();
        let mut phi = T::zero();
        let mut p = self.base;
        let mut dirs = Vec::with_capacity(k);
        for i in 0..k {
            phi += q[i];
            let (s, c) = phi.sin_cos();
            p += Vector2::new(c, s) * self.lengths[i];
            dirs.push(Vector2::new(-s, c) * self.lengths[i]);
        }
        let mut jac = DMatrix::zeros(2, dof);
        for j in 0..k {
            let col = dirs[j..].iter().fold(Vector2::zeros(), |a, d| a + d);
            jac[(0, j)] = col.x;
            jac[(1, j)] = col.y;
        }
        (p, jac)
    }
}

/// Box-frame offset `R(theta)^T (f - b) - c` of a finger from a contact
/// point and its Jacobians with respect to the finger `(2)` and the box pose
/// `(x, y, theta)`.
pub fn contact_offset<T: Real>(finger: &[T], pose: &[T], contact: [T; 2]) -> (Vector2<T>, DMatrix<T>, DMatrix<T>) {
    let (s, c) = pose[2].sin_cos();
    let dx = finger[0] - pose[0];
    let dy = finger[1] - pose[1];
    let u = Vector2::new(c * dx + s * dy - contact[0], -s * dx + c * dy - contact[1]);
    let jf = DMatrix::from_row_slice(2, 2, &[c, s, -s, c]);
    let jb = DMatrix::from_row_slice(2, 3, &[-c, -s, -s * dx + c * dy, s, -c, -c * dx - s * dy]);
    (u, jf, jb)
}
