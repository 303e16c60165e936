//! Mass-spring sleeve simulator.
//!
//! The sleeve is a tube of `rings × circumference` particles. Ring 0 is the
//! shoulder opening; a few of its particles are pinned to the gripper. The
//! arm is static and interacts with the cloth through penalty contact with
//! Coulomb-capped friction. Integration is semi-implicit Euler.

use nalgebra::Rotation3;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::ArmModel;
use crate::rng::rng_for;
use crate::{Error, Result, Vec3};

/// Physical parameters of one simulator configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClothParams {
    pub stretch_stiffness: f64,
    pub shear_stiffness: f64,
    /// Damping along each spring, on the relative velocity of its ends.
    pub damping: f64,
    /// Linear drag on each particle's absolute velocity, N s/m.
    #[serde(default = "default_drag")]
    pub drag: f64,
    pub friction_coeff: f64,
    pub contact_stiffness: f64,
    pub particle_mass: f64,
    /// Duration of one control step, seconds.
    pub dt: f64,
    pub substeps: usize,
    pub gravity: [f64; 3],
    /// Sim force units per newton used for every reported force.
    #[serde(default = "default_force_scale")]
    pub force_scale: f64,
    /// Particle speed (m/s) above which the step is reported as diverged.
    #[serde(default = "default_max_speed")]
    pub max_speed: f64,
}

fn default_force_scale() -> f64 {
    100.0
}

fn default_drag() -> f64 {
    0.004
}

fn default_max_speed() -> f64 {
    100.0
}

impl ClothParams {
    /// "Simulation" preset: the policy is trained here.
    pub fn sim_a() -> Self {
        Self {
            stretch_stiffness: 60.0,
            shear_stiffness: 15.0,
            damping: 0.08,
            drag: default_drag(),
            friction_coeff: 0.25,
            contact_stiffness: 400.0,
            particle_mass: 0.003,
            dt: 0.04,
            substeps: 20,
            gravity: [0.0, 0.0, -9.81],
            force_scale: default_force_scale(),
            max_speed: default_max_speed(),
        }
    }

    /// "Real world" stand-in: stickier, stiffer and less damped cloth.
    pub fn sim_b() -> Self {
        let a = Self::sim_a();
        Self {
            friction_coeff: a.friction_coeff * 2.0,
            stretch_stiffness: a.stretch_stiffness * 1.5,
            damping: a.damping * 0.7,
            ..a
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("stretch_stiffness", self.stretch_stiffness),
            ("shear_stiffness", self.shear_stiffness),
            ("damping", self.damping),
            ("contact_stiffness", self.contact_stiffness),
            ("particle_mass", self.particle_mass),
            ("dt", self.dt),
            ("force_scale", self.force_scale),
            ("max_speed", self.max_speed),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Params(format!("{name} = {v} must be > 0")));
            }
        }
        if self.substeps == 0 {
            return Err(Error::Params("substeps must be >= 1".into()));
        }
        if !(self.drag >= 0.0) {
            return Err(Error::Params("drag must be >= 0".into()));
        }
        if !(self.friction_coeff >= 0.0) {
            return Err(Error::Params("friction_coeff must be >= 0".into()));
        }
        if self.gravity.iter().any(|g| !g.is_finite()) {
            return Err(Error::Params("gravity must be finite".into()));
        }
        Ok(())
    }

    pub fn gravity(&self) -> Vec3 {
        Vec3::from(self.gravity)
    }

    pub fn substep(&self) -> f64 {
        self.dt / self.substeps as f64
    }

    fn stiffness(&self, kind: SpringKind) -> f64 {
        match kind {
            SpringKind::Stretch => self.stretch_stiffness,
            SpringKind::Shear => self.shear_stiffness,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpringKind {
    Stretch,
    Shear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spring {
    pub a: usize,
    pub b: usize,
    pub rest: f64,
    pub kind: SpringKind,
}

/// Garment description as it appears in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GarmentSpec {
    pub id: String,
    pub rings: usize,
    pub circumference: usize,
    pub ring_radius: f64,
    pub ring_spacing: f64,
    /// Number of leading-ring particles held by the gripper.
    #[serde(default = "default_grasp_count")]
    pub grasp_count: usize,
}

fn default_grasp_count() -> usize {
    3
}

impl Default for GarmentSpec {
    fn default() -> Self {
        Self {
            id: "sleeve".into(),
            rings: 8,
            circumference: 8,
            ring_radius: 0.075,
            ring_spacing: 0.035,
            grasp_count: default_grasp_count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SleeveTopology {
    rings: usize,
    circumference: usize,
    ring_radius: f64,
    ring_spacing: f64,
    grasp_count: usize,
    springs: Vec<Spring>,
}

impl SleeveTopology {
    pub fn tube(spec: &GarmentSpec) -> Result<Self> {
        let (r, c) = (spec.rings, spec.circumference);
        if r < 2 || c < 3 {
            return Err(Error::Params(format!(
                "sleeve needs rings >= 2 and circumference >= 3, got {r}x{c}"
            )));
        }
        if !(spec.ring_radius > 0.0) || !(spec.ring_spacing > 0.0) {
            return Err(Error::Params("ring radius and spacing must be > 0".into()));
        }
        if spec.grasp_count == 0 || spec.grasp_count > c {
            return Err(Error::Params(format!(
                "grasp_count {} must be in 1..={c}",
                spec.grasp_count
            )));
        }
        let local = canonical_positions(r, c, spec.ring_radius, spec.ring_spacing);
        let idx = |ring: usize, j: usize| ring * c + (j % c);
        let mut pairs = Vec::new();
        for ring in 0..r {
            for j in 0..c {
                pairs.push((idx(ring, j), idx(ring, j + 1), SpringKind::Stretch));
                if c >= 5 {
                    pairs.push((idx(ring, j), idx(ring, j + 2), SpringKind::Shear));
                }
                if ring + 1 < r {
                    pairs.push((idx(ring, j), idx(ring + 1, j), SpringKind::Stretch));
                    pairs.push((idx(ring, j), idx(ring + 1, j + 1), SpringKind::Shear));
                    pairs.push((idx(ring, j + 1), idx(ring + 1, j), SpringKind::Shear));
                }
            }
        }
        let springs = pairs
            .into_iter()
            .map(|(a, b, kind)| Spring {
                a,
                b,
                rest: (local[b] - local[a]).norm(),
                kind,
            })
            .collect();
        Ok(Self {
            rings: r,
            circumference: c,
            ring_radius: spec.ring_radius,
            ring_spacing: spec.ring_spacing,
            grasp_count: spec.grasp_count,
            springs,
        })
    }

    /// An arbitrary spring network without tube structure. Used for
    /// analytic checks of the integrator.
    pub fn network(particles: usize, springs: Vec<Spring>) -> Result<Self> {
        for s in &springs {
            if s.a >= particles || s.b >= particles || s.a == s.b || !(s.rest > 0.0) {
                return Err(Error::Params(format!("invalid spring {s:?}")));
            }
        }
        Ok(Self {
            rings: 1,
            circumference: particles,
            ring_radius: 0.0,
            ring_spacing: 0.0,
            grasp_count: 0,
            springs,
        })
    }

    pub fn rings(&self) -> usize {
        self.rings
    }

    pub fn circumference(&self) -> usize {
        self.circumference
    }

    pub fn particle_count(&self) -> usize {
        self.rings * self.circumference
    }

    pub fn ring_radius(&self) -> f64 {
        self.ring_radius
    }

    pub fn springs(&self) -> &[Spring] {
        &self.springs
    }

    /// Particle indices of ring `r`.
    pub fn ring(&self, r: usize) -> std::ops::Range<usize> {
        r * self.circumference..(r + 1) * self.circumference
    }

    /// Leading-ring particles held by the gripper, centered on the top one.
    pub fn grasp_indices(&self) -> Vec<usize> {
        let c = self.circumference;
        let half = self.grasp_count / 2;
        let mut idx: Vec<usize> = (0..self.grasp_count)
            .map(|k| (k + c - half) % c)
            .collect();
        idx.sort_unstable();
        idx
    }
}

/// Tube in its local frame: x along the tube (ring 0 at x = 0, later rings
/// at negative x), particle 0 of each ring on +y.
fn canonical_positions(rings: usize, circ: usize, radius: f64, spacing: f64) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(rings * circ);
    for r in 0..rings {
        for j in 0..circ {
            let phi = std::f64::consts::TAU * j as f64 / circ as f64;
            out.push(Vec3::new(
                -(r as f64) * spacing,
                radius * phi.cos(),
                radius * phi.sin(),
            ));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GripperState {
    pub position: Vec3,
    /// Axis-angle rotation vector.
    pub orientation: Vec3,
    pub attached: bool,
}

impl GripperState {
    pub fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_scaled_axis(self.orientation)
    }

    /// Start pose: holding the top of the opening, with the opening
    /// centered on the arm axis half a ring radius beyond the fingertip.
    pub fn initial(arm: &ArmModel, topology: &SleeveTopology) -> Self {
        let (axis, up, _) = dressing_frame(arm);
        let r = topology.ring_radius();
        Self {
            position: arm.fingertip() + (up - axis * 0.5) * r,
            orientation: Vec3::zeros(),
            attached: true,
        }
    }
}

/// Frame at the fingertip: dressing direction, "up" and their cross product.
fn dressing_frame(arm: &ArmModel) -> (Vec3, Vec3, Vec3) {
    let axis = (arm.elbow() - arm.fingertip()).normalize();
    let mut up = Vec3::z() - axis * axis.z;
    if up.norm() < 1e-6 {
        up = Vec3::y() - axis * axis.y;
    }
    let up = up.normalize();
    (axis, up, axis.cross(&up))
}

/// Rigid motion of the gripper for one control step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RigidDelta {
    pub translation: Vec3,
    /// Axis-angle rotation, applied in the world frame about the gripper.
    pub rotation: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceRecord {
    pub vector: Vec3,
    pub magnitude: f64,
}

impl ForceRecord {
    pub fn new(vector: Vec3) -> Self {
        Self {
            vector,
            magnitude: vector.norm(),
        }
    }

    pub fn zero() -> Self {
        Self::new(Vec3::zeros())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClothState {
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub grasped: Vec<usize>,
    /// Gripper-frame offsets of the grasped particles, parallel to `grasped`.
    pub anchors: Vec<Vec3>,
    pub gripper: GripperState,
    /// `true` for particles driven by the gripper.
    pinned: Vec<bool>,
}

impl ClothState {
    /// Assembles a state from raw parts. Anchors are taken from the current
    /// positions relative to the gripper.
    pub fn from_parts(
        positions: Vec<Vec3>,
        velocities: Vec<Vec3>,
        grasped: Vec<usize>,
        gripper: GripperState,
    ) -> Result<Self> {
        if positions.len() != velocities.len() {
            return Err(Error::Shape("positions and velocities differ in length".into()));
        }
        if grasped.is_empty() {
            return Err(Error::Params("at least one particle must be grasped".into()));
        }
        if positions.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::Params("non-finite particle position".into()));
        }
        let mut pinned = vec![false; positions.len()];
        for &g in &grasped {
            *pinned
                .get_mut(g)
                .ok_or_else(|| Error::Params(format!("grasped index {g} out of range")))? = true;
        }
        let inv = gripper.rotation().inverse();
        let anchors = grasped
            .iter()
            .map(|&g| inv * (positions[g] - gripper.position))
            .collect();
        Ok(Self {
            positions,
            velocities,
            grasped,
            anchors,
            gripper,
            pinned,
        })
    }

    pub fn particle_count(&self) -> usize {
        self.positions.len()
    }

    pub fn is_pinned(&self, i: usize) -> bool {
        self.pinned[i]
    }

    /// Centroid of the particles in `range`.
    pub fn centroid(&self, range: std::ops::Range<usize>) -> Vec3 {
        let n = range.len() as f64;
        self.positions[range].iter().sum::<Vec3>() / n
    }

    pub fn kinetic_energy(&self, params: &ClothParams) -> f64 {
        0.5 * params.particle_mass * self.velocities.iter().map(|v| v.norm_squared()).sum::<f64>()
    }

    /// Kinetic plus elastic plus gravitational potential energy.
    pub fn mechanical_energy(&self, topology: &SleeveTopology, params: &ClothParams) -> f64 {
        let elastic: f64 = topology
            .springs()
            .iter()
            .map(|s| {
                let stretch = (self.positions[s.b] - self.positions[s.a]).norm() - s.rest;
                0.5 * params.stiffness(s.kind) * stretch * stretch
            })
            .sum();
        let g = params.gravity();
        let potential: f64 = self
            .positions
            .iter()
            .map(|p| -params.particle_mass * g.dot(p))
            .sum();
        self.kinetic_energy(params) + elastic + potential
    }

    /// Advances one control step. The gripper moves by `delta`, interpolated
    /// across substeps; the returned force is the substep-averaged total
    /// contact force the cloth exerts on the arm, in sim units.
    pub fn step(
        &mut self,
        topology: &SleeveTopology,
        params: &ClothParams,
        delta: &RigidDelta,
        arm: &ArmModel,
    ) -> Result<ForceRecord> {
        let n = params.substeps;
        let h = params.substep();
        let start_pos = self.gripper.position;
        let start_rot = self.gripper.rotation();
        let gravity = params.gravity() * params.particle_mass;
        let inv_mass = 1.0 / params.particle_mass;
        let mut forces = vec![Vec3::zeros(); self.positions.len()];
        let mut arm_force = Vec3::zeros();

        for sub in 1..=n {
            let alpha = sub as f64 / n as f64;
            let grip_pos = start_pos + delta.translation * alpha;
            let grip_rot = Rotation3::from_scaled_axis(delta.rotation * alpha) * start_rot;

            for (f, v) in forces.iter_mut().zip(&self.velocities) {
                *f = gravity - v * params.drag;
            }
            accumulate_spring_forces(
                &self.positions,
                &self.velocities,
                topology.springs(),
                params,
                &mut forces,
            );
            for (i, (p, v)) in self.positions.iter().zip(&self.velocities).enumerate() {
                let (sd, normal) = arm.contact(p);
                if sd < 0.0 {
                    let fc = contact_force(sd, &normal, v, params, h);
                    forces[i] += fc;
                    arm_force -= fc;
                }
            }

            for i in 0..self.positions.len() {
                if self.pinned[i] {
                    continue;
                }
                self.velocities[i] += forces[i] * (h * inv_mass);
                self.positions[i] += self.velocities[i] * h;
            }
            for (&g, anchor) in self.grasped.iter().zip(&self.anchors) {
                let target = grip_pos + grip_rot * anchor;
                self.velocities[g] = (target - self.positions[g]) / h;
                self.positions[g] = target;
            }

            for (i, (p, v)) in self.positions.iter().zip(&self.velocities).enumerate() {
                let speed = v.norm();
                if !speed.is_finite() || !p.iter().all(|x| x.is_finite()) || speed > params.max_speed
                {
                    return Err(Error::Diverged {
                        substep: sub,
                        particle: i,
                        speed,
                    });
                }
            }
        }

        self.gripper.position = start_pos + delta.translation;
        self.gripper.orientation =
            (Rotation3::from_scaled_axis(delta.rotation) * start_rot).scaled_axis();
        Ok(ForceRecord::new(arm_force * (params.force_scale / n as f64)))
    }
}

/// Penalty normal force plus friction on a particle at signed distance
/// `sd < 0`. Friction opposes the tangential velocity, capped both by the
/// Coulomb limit and by the force that would stop the sliding in one substep.
fn contact_force(sd: f64, normal: &Vec3, v: &Vec3, params: &ClothParams, h: f64) -> Vec3 {
    let fn_mag = params.contact_stiffness * (-sd);
    let mut f = normal * fn_mag;
    let vt = v - normal * v.dot(normal);
    let vt_norm = vt.norm();
    if vt_norm > 1e-12 {
        let cap = params.particle_mass * vt_norm / h;
        f -= vt * (params.friction_coeff * fn_mag).min(cap) / vt_norm;
    }
    f
}

/// Hookean force on `pa` from a spring to `pb`. The force on `pb` is the
/// exact negation.
pub fn spring_force(pa: &Vec3, pb: &Vec3, rest: f64, k: f64) -> Vec3 {
    let d = pb - pa;
    let len = d.norm();
    if len < 1e-12 {
        return Vec3::zeros();
    }
    d * (k * (len - rest) / len)
}

fn accumulate_spring_forces(
    positions: &[Vec3],
    velocities: &[Vec3],
    springs: &[Spring],
    params: &ClothParams,
    out: &mut [Vec3],
) {
    for s in springs {
        let d = positions[s.b] - positions[s.a];
        let len = d.norm();
        if len < 1e-12 {
            continue;
        }
        let u = d / len;
        let rel_speed = (velocities[s.b] - velocities[s.a]).dot(&u);
        let f = u * (params.stiffness(s.kind) * (len - s.rest) + params.damping * rel_speed);
        out[s.a] += f;
        out[s.b] -= f;
    }
}

/// Sum of spring and spring-damping forces on every particle, with no
/// gravity or contact.
pub fn internal_forces(state: &ClothState, topology: &SleeveTopology, params: &ClothParams) -> Vec<Vec3> {
    let mut out = vec![Vec3::zeros(); state.particle_count()];
    accumulate_spring_forces(
        &state.positions,
        &state.velocities,
        topology.springs(),
        params,
        &mut out,
    );
    out
}

/// Places the sleeve at rest around the fingertip, opening held at the
/// top by `gripper`.
pub fn build_sleeve(
    topology: &SleeveTopology,
    arm: &ArmModel,
    gripper: &GripperState,
) -> Result<ClothState> {
    if topology.grasp_count == 0 {
        return Err(Error::Params("topology has no grasp points".into()));
    }
    let (axis, up, side) = dressing_frame(arm);
    let rot = gripper.rotation();
    let center = gripper.position - rot * (up * topology.ring_radius);
    let local = canonical_positions(
        topology.rings,
        topology.circumference,
        topology.ring_radius,
        topology.ring_spacing,
    );
    // local x is along the tube toward the elbow, local y is up
    let positions: Vec<Vec3> = local
        .iter()
        .map(|l| center + rot * (axis * l.x + up * l.y + side * l.z))
        .collect();
    for (i, p) in positions.iter().enumerate() {
        let sd = arm.signed_distance(p);
        if sd < 0.0 {
            return Err(Error::Placement {
                particle: i,
                depth: -sd,
            });
        }
    }
    let n = positions.len();
    ClothState::from_parts(positions, vec![Vec3::zeros(); n], topology.grasp_indices(), *gripper)
}

/// Deterministic subsample of `n` particle positions. Requests beyond the
/// particle count return every particle followed by draws with replacement.
pub fn sample_garment_points(state: &ClothState, n: usize, seed: u64) -> Vec<Vec3> {
    let count = state.particle_count();
    if n >= count {
        let mut out = state.positions.clone();
        let mut rng = rng_for(seed, &[n as u64]);
        out.extend((count..n).map(|_| state.positions[rng.random_range(0..count)]));
        return out;
    }
    let mut rng = rng_for(seed, &[n as u64]);
    index::sample(&mut rng, count, n)
        .into_iter()
        .map(|i| state.positions[i])
        .collect()
}
