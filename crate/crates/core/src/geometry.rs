//! Orbit cameras, pinhole projection, pixel rays and Plücker ray maps.
//!
//! World frame is right-handed with +y up. Azimuth rotates about +y starting
//! from +z, elevation is measured from the xz-plane. Cameras always look at
//! the origin with zero roll. Camera space is x right, y down, z forward.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Vec2 = Vector2<f64>;

/// Serialized form of a camera; derived matrices never hit disk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraParams {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub radius: f64,
    pub fov_deg: f64,
    pub width: usize,
    pub height: usize,
}

/// Pinhole camera on an object-centric orbit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraParams", into = "CameraParams")]
pub struct CameraPose {
    params: CameraParams,
    /// Rows are the camera right, down and forward axes in world space.
    rotation: Matrix3<f64>,
    translation: Vec3,
    position: Vec3,
    focal: f64,
}

impl TryFrom<CameraParams> for CameraPose {
    type Error = Error;

    fn try_from(p: CameraParams) -> Result<Self> {
        CameraPose::new(p)
    }
}

impl From<CameraPose> for CameraParams {
    fn from(c: CameraPose) -> Self {
        c.params
    }
}

impl CameraPose {
    pub fn new(params: CameraParams) -> Result<Self> {
        let CameraParams {
            azimuth_deg,
            elevation_deg,
            radius,
            fov_deg,
            width,
            height,
        } = params;
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::invalid(format!("radius must be > 0, got {radius}")));
        }
        if !(fov_deg > 0.0 && fov_deg < 180.0) {
            return Err(Error::invalid(format!("fov must be in (0,180), got {fov_deg}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be >= 1"));
        }
        if !azimuth_deg.is_finite() || !elevation_deg.is_finite() {
            return Err(Error::invalid("camera angles must be finite"));
        }
        if elevation_deg.abs() >= 90.0 {
            return Err(Error::invalid("elevation must lie strictly between -90 and 90"));
        }
        let (a, e) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
        let position = Vec3::new(
            radius * e.cos() * a.sin(),
            radius * e.sin(),
            radius * e.cos() * a.cos(),
        );
        let forward = (-position).normalize();
        let up = Vec3::y();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * position);
        let focal = height as f64 / (2.0 * (fov_deg.to_radians() / 2.0).tan());
        Ok(CameraPose {
            params,
            rotation,
            translation,
            position,
            focal,
        })
    }

    pub fn params(&self) -> &CameraParams {
        &self.params
    }

    pub fn width(&self) -> usize {
        self.params.width
    }

    pub fn height(&self) -> usize {
        self.params.height
    }

    pub fn radius(&self) -> f64 {
        self.params.radius
    }

    pub fn position(&self) -> Vec3 {
        self.position
    }

    /// Rotation block of the world-to-camera transform.
    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> Vec3 {
        self.translation
    }

    /// Focal length in pixels (shared by both axes).
    pub fn focal(&self) -> f64 {
        self.focal
    }

    pub fn principal_point(&self) -> Vec2 {
        Vec2::new(self.params.width as f64 / 2.0, self.params.height as f64 / 2.0)
    }

    /// The 3×4 world-to-camera matrix, row-major.
    pub fn world_to_cam(&self) -> [[f64; 4]; 3] {
        let mut m = [[0.0; 4]; 3];
        for (r, row) in m.iter_mut().enumerate() {
            for c in 0..3 {
                row[c] = self.rotation[(r, c)];
            }
            row[3] = self.translation[r];
        }
        m
    }

    pub fn to_camera(&self, world: &Vec3) -> Vec3 {
        self.rotation * world + self.translation
    }

    /// Pixel-space projection of a camera-space point with positive depth.
    pub fn cam_to_pixel(&self, cam: &Vec3) -> Vec2 {
        let pp = self.principal_point();
        Vec2::new(
            self.focal * cam.x / cam.z + pp.x,
            self.focal * cam.y / cam.z + pp.y,
        )
    }
}

/// Result of projecting a world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Visible { pixel: Vec2, depth: f64 },
    BehindCamera,
}

impl Projection {
    pub fn visible(self) -> Option<(Vec2, f64)> {
        match self {
            Projection::Visible { pixel, depth } => Some((pixel, depth)),
            Projection::BehindCamera => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

/// Per-pixel Plücker coordinates `(d, o × d)`, row-major from the top-left.
#[derive(Debug, Clone, PartialEq)]
pub struct RayMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 6]>,
}

impl RayMap {
    pub fn at(&self, x: usize, y: usize) -> &[f64; 6] {
        &self.data[y * self.width + x]
    }
}

pub const DEFAULT_RADIUS: f64 = 2.0;
pub const DEFAULT_FOV_DEG: f64 = 50.0;
pub const DEFAULT_IMAGE_SIZE: usize = 64;

/// `n_views` cameras evenly spaced in azimuth, starting at 0°.
pub fn make_orbit_cameras(
    n_views: usize,
    elevation_deg: f64,
    radius: f64,
    fov_deg: f64,
    width: usize,
    height: usize,
) -> Result<Vec<CameraPose>> {
    if n_views == 0 {
        return Err(Error::invalid("n_views must be >= 1"));
    }
    (0..n_views)
        .map(|i| {
            CameraPose::new(CameraParams {
                azimuth_deg: 360.0 * i as f64 / n_views as f64,
                elevation_deg,
                radius,
                fov_deg,
                width,
                height,
            })
        })
        .collect()
}

pub fn project(cam: &CameraPose, point: &Vec3) -> Projection {
    let c = cam.to_camera(point);
    if c.z <= 1e-8 {
        return Projection::BehindCamera;
    }
    Projection::Visible {
        pixel: cam.cam_to_pixel(&c),
        depth: c.z,
    }
}

/// Ray through the center of pixel `px` (integer pixel coordinates, not yet
/// offset by one half).
pub fn pixel_ray(cam: &CameraPose, px: Vec2) -> Result<Ray> {
    let (w, h) = (cam.width() as f64, cam.height() as f64);
    if !(px.x >= 0.0 && px.x < w && px.y >= 0.0 && px.y < h) {
        return Err(Error::invalid(format!(
            "pixel ({}, {}) outside {}x{} image",
            px.x, px.y, cam.width(), cam.height()
        )));
    }
    Ok(ray_through(cam, px.x + 0.5, px.y + 0.5))
}

/// Ray through an arbitrary sub-pixel location (already center-offset).
pub(crate) fn ray_through(cam: &CameraPose, u: f64, v: f64) -> Ray {
    let pp = cam.principal_point();
    let local = Vec3::new((u - pp.x) / cam.focal, (v - pp.y) / cam.focal, 1.0);
    let direction = (cam.rotation.transpose() * local).normalize();
    Ray {
        origin: cam.position,
        direction,
    }
}

pub fn plucker(ray: &Ray) -> [f64; 6] {
    let d = ray.direction;
    let m = ray.origin.cross(&d);
    [d.x, d.y, d.z, m.x, m.y, m.z]
}

pub fn plucker_map(cam: &CameraPose) -> RayMap {
    let (w, h) = (cam.width(), cam.height());
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            data.push(plucker(&ray_through(cam, x as f64 + 0.5, y as f64 + 0.5)));
        }
    }
    RayMap {
        width: w,
        height: h,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cam(az: f64, el: f64, r: f64, fov: f64, w: usize, h: usize) -> CameraPose {
        CameraPose::new(CameraParams {
            azimuth_deg: az,
            elevation_deg: el,
            radius: r,
            fov_deg: fov,
            width: w,
            height: h,
        })
        .unwrap()
    }

    #[test]
    fn orbit_24_views() {
        let cams = make_orbit_cameras(24, 20.0, 2.0, 50.0, 64, 64).unwrap();
        assert_eq!(cams.len(), 24);
        for (i, c) in cams.iter().enumerate() {
            assert!((c.params().azimuth_deg - 15.0 * i as f64).abs() < 1e-12);
            assert_eq!(c.params().elevation_deg, 20.0);
            assert!((c.position().norm() - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_view_orbit() {
        let cams = make_orbit_cameras(1, 10.0, 2.0, 50.0, 64, 64).unwrap();
        assert_eq!(cams.len(), 1);
        assert_eq!(cams[0].params().azimuth_deg, 0.0);
    }

    #[test]
    fn four_view_positions() {
        let cams = make_orbit_cameras(4, 0.0, 2.0, 50.0, 64, 64).unwrap();
        let expected = [
            Vec3::new(0.0, 0.0, 2.0),
            Vec3::new(2.0, 0.0, 0.0),
            Vec3::new(0.0, 0.0, -2.0),
            Vec3::new(-2.0, 0.0, 0.0),
        ];
        for (c, e) in cams.iter().zip(expected) {
            assert!((c.position() - e).norm() < 1e-9, "{:?} vs {e:?}", c.position());
            // position recovered from the extrinsics
            let recovered = -(c.rotation().transpose() * c.translation());
            assert!((recovered - e).norm() < 1e-9);
        }
    }

    #[test]
    fn invalid_orbits_rejected() {
        assert!(make_orbit_cameras(4, 0.0, 0.0, 50.0, 64, 64).is_err());
        assert!(make_orbit_cameras(4, 0.0, -1.0, 50.0, 64, 64).is_err());
        assert!(make_orbit_cameras(4, 0.0, 2.0, 180.0, 64, 64).is_err());
        assert!(make_orbit_cameras(4, 0.0, 2.0, 0.0, 64, 64).is_err());
        assert!(make_orbit_cameras(0, 0.0, 2.0, 50.0, 64, 64).is_err());
    }

    #[test]
    fn origin_projects_to_center() {
        for c in make_orbit_cameras(7, 25.0, 2.5, 40.0, 48, 32).unwrap() {
            let (px, depth) = project(&c, &Vec3::zeros()).visible().unwrap();
            assert!((px - Vec2::new(24.0, 16.0)).norm() < 1e-6);
            assert!((depth - 2.5).abs() < 1e-9);
        }
    }

    #[test]
    fn projection_examples() {
        let c = cam(0.0, 0.0, 2.0, 90.0, 64, 64);
        assert_eq!(project(&c, &Vec3::new(0.0, 0.0, 2.5)), Projection::BehindCamera);
        let (px, depth) = project(&c, &Vec3::new(1.0, 0.0, 0.0)).visible().unwrap();
        assert!((px - Vec2::new(48.0, 32.0)).norm() < 1e-9);
        assert!((depth - 2.0).abs() < 1e-12);
    }

    #[test]
    fn pixel_ray_example() {
        let c = cam(0.0, 0.0, 2.0, 90.0, 64, 64);
        let ray = pixel_ray(&c, Vec2::new(0.0, 32.0)).unwrap();
        // pixel center (0.5, 32.5) sits half a pixel below the principal row
        let expected = Vec3::new(-31.5 / 32.0, -0.5 / 32.0, -1.0).normalize();
        assert!((ray.direction - expected).norm() < 1e-12);
        assert!((ray.origin - c.position()).norm() < 1e-12);
    }

    #[test]
    fn center_ray_points_at_origin() {
        for c in make_orbit_cameras(5, 30.0, 2.0, 50.0, 63, 63).unwrap() {
            let ray = pixel_ray(&c, Vec2::new(31.0, 31.0)).unwrap();
            let to_origin = (-c.position()).normalize();
            assert!((ray.direction - to_origin).norm() < 1e-6);
        }
    }

    #[test]
    fn pixel_ray_out_of_bounds() {
        let c = cam(0.0, 0.0, 2.0, 90.0, 64, 64);
        assert!(pixel_ray(&c, Vec2::new(64.0, 0.0)).is_err());
        assert!(pixel_ray(&c, Vec2::new(-0.1, 0.0)).is_err());
    }

    #[test]
    fn rotation_is_orthonormal() {
        for c in make_orbit_cameras(13, -35.0, 3.0, 60.0, 16, 16).unwrap() {
            let r = c.rotation();
            assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-9);
            assert!((r.determinant() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn plucker_properties() {
        let c = cam(40.0, 20.0, 2.0, 50.0, 64, 64);
        let map = plucker_map(&c);
        assert_eq!((map.width, map.height, map.data.len()), (64, 64, 64 * 64));
        for p in &map.data {
            let d = Vec3::new(p[0], p[1], p[2]);
            let m = Vec3::new(p[3], p[4], p[5]);
            assert!((d.norm() - 1.0).abs() < 1e-6);
            assert!(d.dot(&m).abs() < 1e-6);
        }
        // odd-sized image: the center pixel ray passes through the origin
        let odd = cam(40.0, 20.0, 2.0, 50.0, 63, 63);
        let center = plucker_map(&odd).at(31, 31).to_owned();
        for v in &center[3..] {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn camera_json_round_trip() {
        let cams = make_orbit_cameras(3, 20.0, 2.0, 50.0, 64, 64).unwrap();
        let text = serde_json::to_string(&cams).unwrap();
        assert!(!text.contains("rotation"));
        let back: Vec<CameraPose> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cams);
        assert!(serde_json::from_str::<CameraPose>(
            r#"{"azimuth_deg":0,"elevation_deg":0,"radius":-1,"fov_deg":50,"width":4,"height":4}"#
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn plucker_origin_invariance(az in 0.0..360.0f64, el in -60.0..60.0f64, x in 0usize..32, y in 0usize..32, lambda in -5.0..5.0f64) {
            let c = cam(az, el, 2.0, 50.0, 32, 32);
            let ray = pixel_ray(&c, Vec2::new(x as f64, y as f64)).unwrap();
            let moved = Ray { origin: ray.origin + lambda * ray.direction, direction: ray.direction };
            let (a, b) = (plucker(&ray), plucker(&moved));
            for i in 0..6 {
                prop_assert!((a[i] - b[i]).abs() < 1e-9);
            }
        }

        #[test]
        fn project_pixel_ray_round_trip(az in 0.0..360.0f64, el in -60.0..60.0f64, px in 0.0..63.99f64, py in 0.0..63.99f64) {
            let c = cam(az, el, 2.0, 50.0, 64, 64);
            let ray = pixel_ray(&c, Vec2::new(px, py)).unwrap();
            let p = ray.origin + c.radius() * ray.direction;
            let (back, _) = project(&c, &p).visible().unwrap();
            prop_assert!((back - Vec2::new(px + 0.5, py + 0.5)).norm() < 1e-3);
        }
    }

    #[test]
    fn project_pixel_ray_consistency_many_points() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for c in make_orbit_cameras(6, 20.0, 2.0, 50.0, 64, 64).unwrap() {
            for _ in 0..1000 {
                let p = Vec3::new(
                    rng.random_range(-0.8..0.8),
                    rng.random_range(-0.8..0.8),
                    rng.random_range(-0.8..0.8),
                );
                let (px, depth) = project(&c, &p).visible().unwrap();
                if px.x < 0.5 || px.y < 0.5 || px.x >= 63.5 || px.y >= 63.5 {
                    continue;
                }
                let ray = pixel_ray(&c, px - Vec2::new(0.5, 0.5)).unwrap();
                let along = ray.origin + ray.direction * (depth / ray.direction.dot(&c.rotation().row(2).transpose()));
                assert!((along - p).norm() < 1e-9);
                let (again, _) = project(&c, &along).visible().unwrap();
                assert!((again - px).norm() < 1e-3);
            }
        }
    }
}
