//! Capsule arm: a forearm and an upper-arm capsule joined at the elbow.
//!
//! The dressing axis is the polyline fingertip → elbow → shoulder. All
//! progress measurements are arc lengths along it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vec3};

const DEGENERATE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capsule {
    endpoint_a: Vec3,
    endpoint_b: Vec3,
    radius: f64,
}

impl Capsule {
    pub fn new(endpoint_a: Vec3, endpoint_b: Vec3, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::Geometry(format!("capsule radius {radius} must be > 0")));
        }
        if (endpoint_b - endpoint_a).norm() < DEGENERATE {
            return Err(Error::Geometry("capsule endpoints coincide".into()));
        }
        Ok(Self {
            endpoint_a,
            endpoint_b,
            radius,
        })
    }

    pub fn endpoint_a(&self) -> Vec3 {
        self.endpoint_a
    }

    pub fn endpoint_b(&self) -> Vec3 {
        self.endpoint_b
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn length(&self) -> f64 {
        (self.endpoint_b - self.endpoint_a).norm()
    }

    /// Axis parameter in `[0, length]` of the axis point closest to `p`.
    pub fn project(&self, p: &Vec3) -> f64 {
        let axis = self.endpoint_b - self.endpoint_a;
        let len = axis.norm();
        ((p - self.endpoint_a).dot(&axis) / len).clamp(0.0, len)
    }

    pub fn closest_axis_point(&self, p: &Vec3) -> Vec3 {
        let axis = self.endpoint_b - self.endpoint_a;
        let s = self.project(p) / axis.norm();
        self.endpoint_a + axis * s
    }

    /// Distance from `p` to the capsule surface; negative inside.
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        (p - self.closest_axis_point(p)).norm() - self.radius
    }

    /// Signed distance together with the outward surface normal at the
    /// closest surface point. Points exactly on the axis get an arbitrary
    /// normal perpendicular to it.
    pub fn contact(&self, p: &Vec3) -> (f64, Vec3) {
        let c = self.closest_axis_point(p);
        let offset = p - c;
        let dist = offset.norm();
        let normal = if dist > DEGENERATE {
            offset / dist
        } else {
            any_perpendicular(&(self.endpoint_b - self.endpoint_a))
        };
        (dist - self.radius, normal)
    }
}

fn any_perpendicular(v: &Vec3) -> Vec3 {
    let helper = if v.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    v.cross(&helper).normalize()
}

/// Pose parameters of one arm. Angles are in radians, lengths in meters.
///
/// The shoulder sits at the origin. `shoulder_angle` tilts the upper arm
/// downward from the horizontal +x direction (non-negative: no upward
/// poses), `elbow_angle` swings the forearm about the vertical axis
/// relative to the upper arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmPoseSpec {
    pub shoulder_angle: f64,
    pub elbow_angle: f64,
    pub forearm_length: f64,
    pub upperarm_length: f64,
    pub forearm_radius: f64,
    pub upperarm_radius: f64,
}

impl Default for ArmPoseSpec {
    fn default() -> Self {
        Self {
            shoulder_angle: 0.15,
            elbow_angle: 0.35,
            forearm_length: 0.27,
            upperarm_length: 0.28,
            forearm_radius: 0.035,
            upperarm_radius: 0.045,
        }
    }
}

impl ArmPoseSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("forearm_length", self.forearm_length),
            ("upperarm_length", self.upperarm_length),
            ("forearm_radius", self.forearm_radius),
            ("upperarm_radius", self.upperarm_radius),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Geometry(format!("{name} = {v} must be > 0")));
            }
        }
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&self.shoulder_angle) {
            return Err(Error::Geometry(format!(
                "shoulder_angle {} outside [0, pi/2)",
                self.shoulder_angle
            )));
        }
        if !(self.elbow_angle.abs() < 0.75 * std::f64::consts::PI) {
            return Err(Error::Geometry(format!(
                "elbow_angle {} outside (-3pi/4, 3pi/4)",
                self.elbow_angle
            )));
        }
        Ok(())
    }
}

/// A box of pose parameters; arms within a region are similar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmPoseRegion {
    pub name: String,
    pub shoulder_angle: [f64; 2],
    pub elbow_angle: [f64; 2],
    pub forearm_length: [f64; 2],
    pub upperarm_length: [f64; 2],
    pub forearm_radius: [f64; 2],
    pub upperarm_radius: [f64; 2],
}

impl ArmPoseRegion {
    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in self.ranges() {
            if !(lo <= hi) {
                return Err(Error::Geometry(format!(
                    "region {}: {name} range [{lo}, {hi}] is empty",
                    self.name
                )));
            }
        }
        self.sample_with(|lo, _| lo).validate()?;
        self.sample_with(|_, hi| hi).validate()
    }

    fn ranges(&self) -> [(&'static str, [f64; 2]); 6] {
        [
            ("shoulder_angle", self.shoulder_angle),
            ("elbow_angle", self.elbow_angle),
            ("forearm_length", self.forearm_length),
            ("upperarm_length", self.upperarm_length),
            ("forearm_radius", self.forearm_radius),
            ("upperarm_radius", self.upperarm_radius),
        ]
    }

    fn sample_with(&self, mut pick: impl FnMut(f64, f64) -> f64) -> ArmPoseSpec {
        let mut p = |r: [f64; 2]| pick(r[0], r[1]);
        ArmPoseSpec {
            shoulder_angle: p(self.shoulder_angle),
            elbow_angle: p(self.elbow_angle),
            forearm_length: p(self.forearm_length),
            upperarm_length: p(self.upperarm_length),
            forearm_radius: p(self.forearm_radius),
            upperarm_radius: p(self.upperarm_radius),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> ArmPoseSpec {
        self.sample_with(|lo, hi| if hi > lo { rng.random_range(lo..=hi) } else { lo })
    }

    pub fn center(&self) -> ArmPoseSpec {
        self.sample_with(|lo, hi| 0.5 * (lo + hi))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmModel {
    fingertip: Vec3,
    elbow: Vec3,
    shoulder: Vec3,
    forearm: Capsule,
    upperarm: Capsule,
}

impl ArmModel {
    pub fn new(
        fingertip: Vec3,
        elbow: Vec3,
        shoulder: Vec3,
        forearm_radius: f64,
        upperarm_radius: f64,
    ) -> Result<Self> {
        if (shoulder - fingertip).norm() < DEGENERATE {
            return Err(Error::Geometry("fingertip and shoulder coincide".into()));
        }
        let forearm = Capsule::new(fingertip, elbow, forearm_radius)?;
        let upperarm = Capsule::new(elbow, shoulder, upperarm_radius)?;
        Ok(Self {
            fingertip,
            elbow,
            shoulder,
            forearm,
            upperarm,
        })
    }

    /// Forward kinematics from pose angles, shoulder at the origin.
    pub fn from_pose(spec: &ArmPoseSpec) -> Result<Self> {
        spec.validate()?;
        let (ss, cs) = spec.shoulder_angle.sin_cos();
        let (se, ce) = spec.elbow_angle.sin_cos();
        let shoulder = Vec3::zeros();
        let upper_dir = Vec3::new(cs, 0.0, -ss);
        let fore_dir = Vec3::new(cs * ce, cs * se, -ss);
        let elbow = shoulder + upper_dir * spec.upperarm_length;
        let fingertip = elbow + fore_dir * spec.forearm_length;
        Self::new(
            fingertip,
            elbow,
            shoulder,
            spec.forearm_radius,
            spec.upperarm_radius,
        )
    }

    pub fn fingertip(&self) -> Vec3 {
        self.fingertip
    }

    pub fn elbow(&self) -> Vec3 {
        self.elbow
    }

    pub fn shoulder(&self) -> Vec3 {
        self.shoulder
    }

    pub fn forearm(&self) -> &Capsule {
        &self.forearm
    }

    pub fn upperarm(&self) -> &Capsule {
        &self.upperarm
    }

    pub fn forearm_length(&self) -> f64 {
        self.forearm.length()
    }

    pub fn total_length(&self) -> f64 {
        self.forearm.length() + self.upperarm.length()
    }

    /// Signed distance to the union of both capsules.
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.forearm
            .signed_distance(p)
            .min(self.upperarm.signed_distance(p))
    }

    /// Signed distance and outward normal of whichever capsule is nearer.
    pub fn contact(&self, p: &Vec3) -> (f64, Vec3) {
        let fore = self.forearm.contact(p);
        let upper = self.upperarm.contact(p);
        if upper.0 < fore.0 {
            upper
        } else {
            fore
        }
    }

    /// Distance from `p` to the nearest point on the arm axis polyline.
    pub fn axis_distance(&self, p: &Vec3) -> f64 {
        let a = (p - self.forearm.closest_axis_point(p)).norm();
        let b = (p - self.upperarm.closest_axis_point(p)).norm();
        a.min(b)
    }

    /// Arc length from the fingertip to the projection of `p` onto the
    /// fingertip → elbow → shoulder polyline, in `[0, total_length]`.
    /// Equidistant projections resolve to the forearm.
    pub fn dressed_distance(&self, p: &Vec3) -> f64 {
        let fore_t = self.forearm.project(p);
        let upper_t = self.upperarm.project(p);
        let fore_d = (p - self.forearm.closest_axis_point(p)).norm();
        let upper_d = (p - self.upperarm.closest_axis_point(p)).norm();
        let s = if upper_d < fore_d {
            self.forearm.length() + upper_t
        } else {
            fore_t
        };
        s.clamp(0.0, self.total_length())
    }

    /// Unit direction of the dressing axis at arc length `s`.
    pub fn axis_direction(&self, s: f64) -> Vec3 {
        if s <= self.forearm.length() {
            (self.elbow - self.fingertip).normalize()
        } else {
            (self.shoulder - self.elbow).normalize()
        }
    }

    /// Point on the dressing axis at arc length `s` (clamped).
    pub fn axis_point(&self, s: f64) -> Vec3 {
        let s = s.clamp(0.0, self.total_length());
        let lf = self.forearm.length();
        if s <= lf {
            self.fingertip + (self.elbow - self.fingertip) * (s / lf)
        } else {
            self.elbow + (self.shoulder - self.elbow) * ((s - lf) / self.upperarm.length())
        }
    }

    /// `n` deterministic points on the arm surface, spread along the axis
    /// in a helical pattern.
    pub fn surface_points(&self, n: usize) -> Vec<Vec3> {
        let total = self.total_length();
        (0..n)
            .map(|i| {
                let s = total * (i as f64 + 0.5) / n as f64;
                let axis = self.axis_direction(s);
                let radius = if s <= self.forearm.length() {
                    self.forearm.radius()
                } else {
                    self.upperarm.radius()
                };
                let u = any_perpendicular(&axis);
                let w = axis.cross(&u);
                let phi = i as f64 * 2.399_963_229_728_653; // golden angle
                self.axis_point(s) + (u * phi.cos() + w * phi.sin()) * radius
            })
            .collect()
    }
}
