//! Covariance construction and perspective projection of Gaussians.

use super::camera::{Camera, Mat3};

pub type Mat2 = [[f64; 2]; 2];

/// Smallest eigenvalue a screen covariance may keep before the floor is added.
pub const COV_FLOOR: f64 = 0.3;

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn quat_to_rot(q: [f64; 4]) -> Mat3 {
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

/// Gradient with respect to `q` of `sum(G .* R(q))`.
pub(crate) fn quat_to_rot_vjp(q: [f64; 4], g: &Mat3) -> [f64; 4] {
    let [w, x, y, z] = q;
    [
        2.0 * (-z * g[0][1] + y * g[0][2] + z * g[1][0] - x * g[1][2] - y * g[2][0] + x * g[2][1]),
        2.0 * (y * g[0][1] + z * g[0][2] + y * g[1][0] - 2.0 * x * g[1][1] - w * g[1][2] + z * g[2][0] + w * g[2][1]
            - 2.0 * x * g[2][2]),
        2.0 * (-2.0 * y * g[0][0] + x * g[0][1] + w * g[0][2] + x * g[1][0] + z * g[1][2] - w * g[2][0] + z * g[2][1]
            - 2.0 * y * g[2][2]),
        2.0 * (-2.0 * z * g[0][0] - w * g[0][1] + x * g[0][2] + w * g[1][0] - 2.0 * z * g[1][1] + y * g[1][2]
            + x * g[2][0]
            + y * g[2][1]),
    ]
}

/// `R^T diag(s^2) R` with `R` from the quaternion.
pub fn covariance(scales: [f64; 3], quat: [f64; 4]) -> Mat3 {
    let r = quat_to_rot(quat);
    let mut s = [[0.0; 3]; 3];
    for (i, row) in s.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| r[k][i] * scales[k] * scales[k] * r[k][j]).sum();
        }
    }
    s
}

/// Perspective projection of one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub screen: [f64; 2],
    pub depth: f64,
    /// Jacobian of the screen position with respect to camera coordinates.
    pub jacobian: [[f64; 3]; 2],
    pub cam_point: [f64; 3],
}

/// Projects a world-space mean; `None` when it lies on or in front of the
/// near plane.
pub fn project(mean: [f64; 3], cam: &Camera) -> Option<Projection> {
    let t = cam.to_camera(mean);
    let [x, y, z] = t;
    if !(z > cam.near) {
        return None;
    }
    Some(Projection {
        screen: [cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy],
        depth: z,
        jacobian: [
            [cam.fx / z, 0.0, -cam.fx * x / (z * z)],
            [0.0, cam.fy / z, -cam.fy * y / (z * z)],
        ],
        cam_point: t,
    })
}

/// `M = J R_c` (2x3).
pub(crate) fn jw(j: &[[f64; 3]; 2], rc: &Mat3) -> [[f64; 3]; 2] {
    let mut m = [[0.0; 3]; 2];
    for (a, row) in m.iter_mut().enumerate() {
        for (b, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| j[a][k] * rc[k][b]).sum();
        }
    }
    m
}

/// `J R_c Sigma R_c^T J^T` without regularization.
pub fn screen_cov_raw(sigma: &Mat3, cam: &Camera, j: &[[f64; 3]; 2]) -> Mat2 {
    let m = jw(j, &cam.rotation);
    let mut out = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            let mut acc = 0.0;
            for k in 0..3 {
                for l in 0..3 {
                    acc += m[a][k] * sigma[k][l] * m[b][l];
                }
            }
            out[a][b] = acc;
        }
    }
    // exact symmetry
    let off = 0.5 * (out[0][1] + out[1][0]);
    out[0][1] = off;
    out[1][0] = off;
    out
}

pub fn min_eigenvalue(c: &Mat2) -> f64 {
    let mean = 0.5 * (c[0][0] + c[1][1]);
    let half = 0.5 * (c[0][0] - c[1][1]);
    mean - (half * half + c[0][1] * c[0][1]).sqrt()
}

/// Adds the floor to the diagonal when the smaller eigenvalue is below it.
/// Returns whether the floor was applied.
pub fn regularize(c: &mut Mat2) -> bool {
    if min_eigenvalue(c) < COV_FLOOR {
        c[0][0] += COV_FLOOR;
        c[1][1] += COV_FLOOR;
        true
    } else {
        false
    }
}

/// Regularized screen-space covariance.
pub fn screen_cov(sigma: &Mat3, cam: &Camera, j: &[[f64; 3]; 2]) -> Mat2 {
    let mut c = screen_cov_raw(sigma, cam, j);
    regularize(&mut c);
    c
}

pub fn det2(c: &Mat2) -> f64 {
    c[0][0] * c[1][1] - c[0][1] * c[1][0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;
    use crate::splat::camera::Intrinsics;
    use rand::Rng;

    fn random_quat<R: Rng>(rng: &mut R) -> [f64; 4] {
        loop {
            let q: [f64; 4] = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.1 && n <= 1.0 {
                return q.map(|v| v / n);
            }
        }
    }

    fn cam_identity(f: f64) -> Camera {
        let id = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        Camera::new(id, [0.0; 3], f, f, 0.0, 0.0, 8, 8, 0.01).unwrap()
    }

    #[test]
    fn rotation_examples() {
        let r = quat_to_rot([1.0, 0.0, 0.0, 0.0]);
        assert_eq!(r, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let h = std::f64::consts::FRAC_PI_4;
        let r = quat_to_rot([h.cos(), 0.0, 0.0, h.sin()]);
        let want = [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((r[i][j] - want[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rotations_orthonormal() {
        let mut rng = SeedTree::new(1).stream("q");
        for _ in 0..1000 {
            let r = quat_to_rot(random_quat(&mut rng));
            for i in 0..3 {
                for j in 0..3 {
                    let d: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                    assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn quat_vjp_matches_fd() {
        let mut rng = SeedTree::new(2).stream("q");
        for _ in 0..10 {
            let q: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            let g: Mat3 = std::array::from_fn(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0)));
            let an = quat_to_rot_vjp(q, &g);
            for k in 0..4 {
                let f = |d: f64| {
                    let mut qq = q;
                    qq[k] += d;
                    let r = quat_to_rot(qq);
                    (0..9).map(|i| r[i / 3][i % 3] * g[i / 3][i % 3]).sum::<f64>()
                };
                let fd = (f(1e-6) - f(-1e-6)) / 2e-6;
                assert!((fd - an[k]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn covariance_eigenvalues_are_squared_scales() {
        assert_eq!(
            covariance([1.0, 2.0, 3.0], [1.0, 0.0, 0.0, 0.0]),
            [[1.0, 0.0, 0.0], [0.0, 4.0, 0.0], [0.0, 0.0, 9.0]]
        );
        let mut rng = SeedTree::new(3).stream("cov");
        for _ in 0..200 {
            let s: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.1..3.0));
            let c = covariance(s, random_quat(&mut rng));
            for i in 0..3 {
                for j in 0..3 {
                    assert!((c[i][j] - c[j][i]).abs() < 1e-12);
                }
            }
            let m = nalgebra::Matrix3::from_fn(|i, j| c[i][j]);
            let mut ev: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
            ev.sort_by(f64::total_cmp);
            let mut want: Vec<f64> = s.iter().map(|v| v * v).collect();
            want.sort_by(f64::total_cmp);
            for (a, b) in ev.iter().zip(&want) {
                assert!((a - b).abs() < 1e-9, "{ev:?} {want:?}");
            }
        }
    }

    #[test]
    fn projection_basics() {
        let cam = cam_identity(1.0);
        let p = project([0.0, 0.0, 1.0], &cam).unwrap();
        assert_eq!(p.screen, [0.0, 0.0]);
        assert_eq!(p.jacobian, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        let p2 = project([0.0, 0.0, 2.0], &cam).unwrap();
        assert_eq!(p2.jacobian[0][0], 0.5 * p.jacobian[0][0]);
        assert_eq!(p2.jacobian[1][1], 0.5 * p.jacobian[1][1]);
        assert!(project([0.0, 0.0, -1.0], &cam).is_none());
        assert!(project([0.0, 0.0, 0.005], &cam).is_none());
    }

    #[test]
    fn jacobian_matches_fd() {
        let mut rng = SeedTree::new(4).stream("j");
        let cam = cam_identity(37.0);
        for _ in 0..50 {
            let t = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(1.0..5.0)];
            let p = project(t, &cam).unwrap();
            for k in 0..3 {
                let mut a = t;
                let mut b = t;
                a[k] += 1e-6;
                b[k] -= 1e-6;
                let (pa, pb) = (project(a, &cam).unwrap(), project(b, &cam).unwrap());
                for r in 0..2 {
                    let fd = (pa.screen[r] - pb.screen[r]) / 2e-6;
                    assert!((fd - p.jacobian[r][k]).abs() < 1e-6 * (1.0 + fd.abs()));
                }
            }
        }
    }

    #[test]
    fn screen_covariance() {
        let cam = cam_identity(1.0);
        let id = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let p = project([0.0, 0.0, 1.0], &cam).unwrap();
        assert_eq!(screen_cov(&id, &cam, &p.jacobian), [[1.0, 0.0], [0.0, 1.0]]);

        let mut rng = SeedTree::new(5).stream("sc");
        let intr = Intrinsics {
            width: 64,
            height: 64,
            fx: 80.0,
            fy: 70.0,
        };
        for _ in 0..1000 {
            let eye = [rng.gen_range(-20.0..20.0), rng.gen_range(-5.0..5.0), rng.gen_range(-20.0..20.0)];
            let Ok(cam) = Camera::look_at(eye, [0.0; 3], [0.0, 1.0, 0.0], intr) else {
                continue;
            };
            let mean: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            let Some(p) = project(mean, &cam) else { continue };
            let s: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.001..2.0));
            let sig = covariance(s, random_quat(&mut rng));
            let c = screen_cov(&sig, &cam, &p.jacobian);
            assert!(det2(&c) > 0.0);
            // direct 2x3 * 3x3 * 3x2 product oracle
            let jm = nalgebra::Matrix2x3::from_fn(|i, j| p.jacobian[i][j]);
            let rm = nalgebra::Matrix3::from_fn(|i, j| cam.rotation[i][j]);
            let sm = nalgebra::Matrix3::from_fn(|i, j| sig[i][j]);
            let want = jm * rm * sm * rm.transpose() * jm.transpose();
            let raw = screen_cov_raw(&sig, &cam, &p.jacobian);
            for i in 0..2 {
                for j in 0..2 {
                    assert!((raw[i][j] - want[(i, j)]).abs() < 1e-12 * (1.0 + want[(i, j)].abs()));
                }
            }
        }
    }
}
