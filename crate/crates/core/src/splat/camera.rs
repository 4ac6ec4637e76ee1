use crate::{Error, Result};

pub type Mat3 = [[f64; 3]; 3];

/// Pinhole camera. `rotation` maps world to camera axes (x right, y down,
/// z forward); a world point `p` lands at `rotation * p + translation`.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub rotation: Mat3,
    pub translation: [f64; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
}

/// Image size and focal lengths shared by a family of views.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

pub(crate) fn mat_vec(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

pub(crate) fn mat_t_vec(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    let mut o = [0.0; 3];
    for (r, row) in m.iter().enumerate() {
        for c in 0..3 {
            o[c] += row[c] * v[r];
        }
    }
    o
}

impl Camera {
    /// Validates orthonormality of the rotation and positivity of the focal
    /// lengths and near plane.
    pub fn new(
        rotation: Mat3,
        translation: [f64; 3],
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        near: f64,
    ) -> Result<Self> {
        for i in 0..3 {
            for j in 0..3 {
                let rtr: f64 = (0..3).map(|k| rotation[k][i] * rotation[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (rtr - want).abs() > 1e-10 {
                    return Err(Error::Config("camera rotation is not orthonormal".into()));
                }
            }
        }
        if !(fx > 0.0 && fy > 0.0 && near > 0.0) || width == 0 || height == 0 {
            return Err(Error::Config("camera needs positive focal lengths, near plane and size".into()));
        }
        Ok(Camera {
            rotation,
            translation,
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            near,
        })
    }

    /// Camera at `eye` looking at `target`; `up` is the world up direction.
    pub fn look_at(eye: [f64; 3], target: [f64; 3], up: [f64; 3], intr: Intrinsics) -> Result<Self> {
        let f = normalize(sub(target, eye));
        let r = cross(f, up);
        if dot(r, r) < 1e-20 {
            return Err(Error::Config("view direction is parallel to the up vector".into()));
        }
        let r = normalize(r);
        let d = cross(f, r);
        let rotation = [r, d, f];
        let t = mat_vec(&rotation, eye);
        Camera::new(
            rotation,
            [-t[0], -t[1], -t[2]],
            intr.fx,
            intr.fy,
            intr.width as f64 / 2.0,
            intr.height as f64 / 2.0,
            intr.width,
            intr.height,
            0.01,
        )
    }

    pub fn to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let r = mat_vec(&self.rotation, p);
        [r[0] + self.translation[0], r[1] + self.translation[1], r[2] + self.translation[2]]
    }

    /// World-space position of the optical center.
    pub fn center(&self) -> [f64; 3] {
        let t = mat_t_vec(&self.rotation, self.translation);
        [-t[0], -t[1], -t[2]]
    }

    /// World-space viewing direction.
    pub fn forward(&self) -> [f64; 3] {
        self.rotation[2]
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }
}

/// `count` cameras on a horizontal circle of `radius` around `look_at`,
/// raised by `height` along +y, at equal azimuth steps starting from +x.
pub fn camera_circle(count: usize, radius: f64, height: f64, look_at: [f64; 3], intr: Intrinsics) -> Result<Vec<Camera>> {
    (0..count)
        .map(|k| {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
            camera_at_azimuth(theta, radius, height, look_at, intr)
        })
        .collect()
}

pub fn camera_at_azimuth(theta: f64, radius: f64, height: f64, look_at: [f64; 3], intr: Intrinsics) -> Result<Camera> {
    let eye = [
        look_at[0] + radius * theta.cos(),
        look_at[1] + height,
        look_at[2] + radius * theta.sin(),
    ];
    Camera::look_at(eye, look_at, [0.0, 1.0, 0.0], intr)
}

#[cfg(test)]
mod tests {
    use super::*;

    const INTR: Intrinsics = Intrinsics {
        width: 32,
        height: 32,
        fx: 40.0,
        fy: 40.0,
    };

    #[test]
    fn circle_spacing_and_aim() {
        let target = [5.0, -2.0, 7.0];
        let cams = camera_circle(12, 30.0, 4.0, target, INTR).unwrap();
        assert_eq!(cams.len(), 12);
        let az: Vec<f64> = cams
            .iter()
            .map(|c| {
                let e = c.center();
                (e[2] - target[2]).atan2(e[0] - target[0])
            })
            .collect();
        for k in 0..12 {
            let gap = (az[(k + 1) % 12] - az[k]).rem_euclid(2.0 * std::f64::consts::PI);
            assert!((gap.to_degrees() - 30.0).abs() < 1e-9);
        }
        for c in &cams {
            let pc = c.to_camera(target);
            assert!(pc[0].abs() < 1e-9 && pc[1].abs() < 1e-9 && pc[2] > 0.0);
            // forward axis passes through the target
            let e = c.center();
            let to = normalize(sub(target, e));
            let f = c.forward();
            assert!((dot(to, f) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_view_looks_from_plus_x() {
        let cams = camera_circle(1, 10.0, 0.0, [0.0; 3], INTR).unwrap();
        let e = cams[0].center();
        assert!((e[0] - 10.0).abs() < 1e-12 && e[1].abs() < 1e-12 && e[2].abs() < 1e-12);
    }

    #[test]
    fn invalid_rotation_rejected() {
        let r = [[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(Camera::new(r, [0.0; 3], 1.0, 1.0, 0.0, 0.0, 4, 4, 0.1).is_err());
    }
}
