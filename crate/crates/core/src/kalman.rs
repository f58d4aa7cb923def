//! Coupled 2D-3D extended Kalman filter.
//!
//! The 17-dimensional state stacks the image box, its rate of change, the
//! world position and velocity, and the 3D size:
//!
//! ```text
//! [x2d y2d w2d h2d | dx2d dy2d dw2d dh2d | px py pz | vx vy vz | w3d h3d l3d]
//! ```
//!
//! Prediction compensates ego motion on the box footpoint, propagates both
//! constant-velocity models and then mixes the 2D height and footpoint with
//! their projections of the 3D estimate (and the 3D height with the
//! back-projected 2D height), weighted by `w_a` / `w_b`. Covariances follow
//! the Jacobian of that composed map.

use nalgebra::{Cholesky, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{backproject_to_ground, ego_correct_bbox, BBox2D, CameraIntrinsics, EgoPose, Size3};
use crate::observations::{DepthNoise, FrameContext, Observation, SizeStats};

pub const STATE_DIM: usize = 17;

pub type StateVector = SVector<f64, STATE_DIM>;
pub type StateMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;

/// Offsets into the state vector.
pub mod idx {
    pub const X: usize = 0;
    pub const Y: usize = 1;
    pub const W: usize = 2;
    pub const H: usize = 3;
    pub const VX: usize = 4;
    pub const VY: usize = 5;
    pub const VW: usize = 6;
    pub const VH: usize = 7;
    pub const POS: usize = 8;
    pub const VEL: usize = 11;
    pub const SIZE: usize = 14;
    /// 3D height.
    pub const H3: usize = SIZE + 1;
}

/// Lower bound applied to box and object dimensions after every step.
pub const MIN_EXTENT: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledState {
    pub mean: StateVector,
    pub covariance: StateMatrix,
    /// Number of times a covariance had to be symmetrized and clamped back to PSD.
    pub psd_repairs: u32,
}

impl CoupledState {
    pub fn bbox(&self) -> BBox2D {
        BBox2D::new(self.mean[idx::X], self.mean[idx::Y], self.mean[idx::W], self.mean[idx::H])
    }

    pub fn bbox_velocity(&self) -> [f64; 4] {
        [
            self.mean[idx::VX],
            self.mean[idx::VY],
            self.mean[idx::VW],
            self.mean[idx::VH],
        ]
    }

    pub fn position(&self) -> Vector3<f64> {
        self.mean.fixed_rows::<3>(idx::POS).into_owned()
    }

    pub fn velocity(&self) -> Vector3<f64> {
        self.mean.fixed_rows::<3>(idx::VEL).into_owned()
    }

    pub fn size(&self) -> Size3 {
        Size3::from_vector(&self.mean.fixed_rows::<3>(idx::SIZE).into_owned())
    }

    pub fn position_covariance(&self) -> nalgebra::Matrix3<f64> {
        self.covariance.fixed_view::<3, 3>(idx::POS, idx::POS).into_owned()
    }

    fn clamp_extents(&mut self) {
        for i in [idx::W, idx::H, idx::SIZE, idx::SIZE + 1, idx::SIZE + 2] {
            self.mean[i] = self.mean[i].max(MIN_EXTENT);
        }
    }
}

/// Convex mixing weights of the 2D (`w_a`) and 3D (`w_b`) contributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingWeights {
    pub w_a: f64,
    pub w_b: f64,
}

impl Default for CouplingWeights {
    fn default() -> Self {
        Self { w_a: 0.7, w_b: 0.3 }
    }
}

impl CouplingWeights {
    pub fn new(w_a: f64, w_b: f64) -> Result<Self> {
        let cw = Self { w_a, w_b };
        cw.validate()?;
        Ok(cw)
    }

    /// Only the 2D state drives the 2D prediction.
    pub fn decoupled() -> Self {
        Self { w_a: 1.0, w_b: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.w_a) || !(0.0..=1.0).contains(&self.w_b) {
            return Err(Error::invalid("coupling", "w_a and w_b must lie in [0, 1]"));
        }
        if (self.w_a + self.w_b - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("coupling", "w_a + w_b must equal 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Acceleration spectral density of the box coordinates, px^2/s^3.
    pub process_box: f64,
    /// Acceleration spectral density of the world position, m^2/s^3.
    pub process_position: f64,
    /// Random-walk density of the 3D size, m^2/s.
    pub process_size: f64,
    /// Standard deviation of each measured box coordinate, px.
    pub box_sigma: f64,
    pub fused_position: DepthNoise,
    pub partial_position: DepthNoise,
    pub fused_velocity_sigma: f64,
    pub fused_size_sigma: f64,
    /// Standard deviation attached to the category mean size.
    pub mean_size_sigma: f64,
    pub init_box_velocity_sigma: f64,
    pub init_velocity_sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            process_box: 400.0,
            process_position: 1.0,
            process_size: 0.01,
            box_sigma: 2.0,
            fused_position: DepthNoise { sigma0: 0.15, k: 0.005 },
            partial_position: DepthNoise { sigma0: 0.5, k: 0.01 },
            fused_velocity_sigma: 0.5,
            fused_size_sigma: 0.2,
            mean_size_sigma: 0.5,
            init_box_velocity_sigma: 30.0,
            init_velocity_sigma: 3.0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("process_box", self.process_box),
            ("process_position", self.process_position),
            ("process_size", self.process_size),
            ("box_sigma", self.box_sigma),
            ("fused_velocity_sigma", self.fused_velocity_sigma),
            ("fused_size_sigma", self.fused_size_sigma),
            ("mean_size_sigma", self.mean_size_sigma),
            ("init_box_velocity_sigma", self.init_box_velocity_sigma),
            ("init_velocity_sigma", self.init_velocity_sigma),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("noise.{name}"), "must be positive"));
            }
        }
        self.fused_position.validate("noise.fused_position")?;
        self.partial_position.validate("noise.partial_position")?;
        if self.partial_position.sigma0 < self.fused_position.sigma0 || self.partial_position.k < self.fused_position.k {
            return Err(Error::invalid(
                "noise.partial_position",
                "partial-observation variance must not be below the fused one",
            ));
        }
        Ok(())
    }
}

/// Everything the transition map depends on besides the state.
#[derive(Debug, Clone, Copy)]
pub struct PredictParams<'a> {
    pub dt: f64,
    pub intrinsics: &'a CameraIntrinsics,
    pub ego_prev: &'a EgoPose,
    pub ego_curr: &'a EgoPose,
    pub coupling: CouplingWeights,
}

pub fn init_state(
    obs: &Observation,
    ctx: &FrameContext,
    stats: &SizeStats,
    noise: &NoiseConfig,
) -> Result<CoupledState> {
    let det = &obs.detection;
    let mut mean = StateVector::zeros();
    let mut cov = StateMatrix::zeros();
    let b = det.bbox;
    mean.fixed_rows_mut::<4>(idx::X).copy_from(&SVector::<f64, 4>::new(b.x, b.y, b.w, b.h));
    for i in idx::X..idx::VX {
        cov[(i, i)] = noise.box_sigma.powi(2);
    }
    for i in idx::VX..idx::POS {
        cov[(i, i)] = noise.init_box_velocity_sigma.powi(2);
    }

    let (position, pos_cov, velocity, vel_var, size, size_var) = match &obs.proposal {
        Some(prop) => {
            let (vel, vel_var) = match prop.velocity {
                Some(v) => (v, noise.fused_velocity_sigma.powi(2)),
                None => (Vector3::zeros(), noise.init_velocity_sigma.powi(2)),
            };
            (
                prop.position,
                noise.fused_position.covariance(&prop.position, &ctx.ego),
                vel,
                vel_var,
                prop.size,
                noise.fused_size_sigma.powi(2),
            )
        }
        None => {
            let foot = backproject_to_ground(&b.footpoint(), &ctx.intrinsics, &ctx.ego, &ctx.plane)?;
            (
                foot,
                noise.partial_position.covariance(&foot, &ctx.ego),
                Vector3::zeros(),
                noise.init_velocity_sigma.powi(2),
                stats.get(det.category).mean_size(),
                noise.mean_size_sigma.powi(2),
            )
        }
    };
    mean.fixed_rows_mut::<3>(idx::POS).copy_from(&position);
    mean.fixed_rows_mut::<3>(idx::VEL).copy_from(&velocity);
    mean.fixed_rows_mut::<3>(idx::SIZE).copy_from(&size.as_vector());
    cov.fixed_view_mut::<3, 3>(idx::POS, idx::POS).copy_from(&pos_cov);
    for k in 0..3 {
        cov[(idx::VEL + k, idx::VEL + k)] = vel_var;
        cov[(idx::SIZE + k, idx::SIZE + k)] = size_var;
    }
    let mut state = CoupledState {
        mean,
        covariance: cov,
        psd_repairs: 0,
    };
    state.clamp_extents();
    Ok(state)
}

/// Ego-motion correction followed by constant-velocity propagation and
/// coupling. Fails with [`Error::LeftFrustum`] when the object is not in
/// front of the previous or current camera.
pub fn transition(x: &StateVector, p: &PredictParams) -> Result<StateVector> {
    let intr = p.intrinsics;
    let (wa, wb) = (p.coupling.w_a, p.coupling.w_b);
    let dt = p.dt;

    let mut e = *x;
    let pos = x.fixed_rows::<3>(idx::POS).into_owned();
    if p.ego_prev != p.ego_curr {
        let z_prev = p.ego_prev.world_to_camera(&pos).z;
        if !(z_prev > 0.0) {
            return Err(Error::LeftFrustum);
        }
        let bbox = BBox2D::new(x[idx::X], x[idx::Y], x[idx::W], x[idx::H]);
        let corrected = ego_correct_bbox(&bbox, z_prev, intr, p.ego_prev, p.ego_curr).map_err(|_| Error::LeftFrustum)?;
        e[idx::X] = corrected.x;
        e[idx::Y] = corrected.y;
    }

    let vel = e.fixed_rows::<3>(idx::VEL).into_owned();
    let cam = p.ego_curr.world_to_camera(&pos);
    let cam_vel = p.ego_curr.rotation * vel;
    let d = cam.z;
    if !(d > 0.0) {
        return Err(Error::LeftFrustum);
    }
    let f = intr.f;

    let mut out = e;
    out[idx::W] = e[idx::W] + dt * e[idx::VW];
    for k in 0..3 {
        out[idx::POS + k] = e[idx::POS + k] + dt * e[idx::VEL + k];
    }

    let h2 = e[idx::H];
    let h3 = e[idx::H3];
    out[idx::H3] = wb * (d / f) * h2 + wa * h3;
    out[idx::H] = wa * (dt * e[idx::VH] + h2) + wb * (f / d) * h3;

    // the vertical coupling acts on the footpoint (bottom edge), not the box center
    let foot = e[idx::Y] + 0.5 * h2;
    let foot_rate = e[idx::VY] + 0.5 * e[idx::VH];
    let foot_next = wa * (dt * foot_rate + foot) + wb * ((f / d) * (dt * cam_vel.y + cam.y) + intr.v0);
    out[idx::Y] = foot_next - 0.5 * out[idx::H];
    out[idx::X] = wa * (dt * e[idx::VX] + e[idx::X]) + wb * ((f / d) * (dt * cam_vel.x + cam.x) + intr.u0);
    Ok(out)
}

/// Analytic Jacobian of [`transition`] at `x`.
pub fn transition_jacobian(x: &StateVector, p: &PredictParams) -> Result<StateMatrix> {
    let intr = p.intrinsics;
    let f = intr.f;
    let (wa, wb) = (p.coupling.w_a, p.coupling.w_b);
    let dt = p.dt;
    let pos = x.fixed_rows::<3>(idx::POS).into_owned();

    // ego correction
    let mut j1 = StateMatrix::identity();
    let mut e = *x;
    if p.ego_prev != p.ego_curr {
        let rel = p.ego_prev.relative_to(p.ego_curr);
        let m = rel.rotation;
        let r3 = p.ego_prev.rotation.row(2).transpose();
        let z = p.ego_prev.world_to_camera(&pos).z;
        if !(z > 0.0) {
            return Err(Error::LeftFrustum);
        }
        let u = x[idx::X];
        let v = x[idx::Y] + 0.5 * x[idx::H];
        let a = Vector3::new((u - intr.u0) / f, (v - intr.v0) / f, 1.0);
        let q = rel.world_to_camera(&(a * z));
        if !(q.z > 0.0) {
            return Err(Error::LeftFrustum);
        }
        let dq_du = m.column(0) * (z / f);
        let dq_dv = m.column(1) * (z / f);
        let dq_dz = m * a;
        let g_u = Vector3::new(f / q.z, 0.0, -f * q.x / (q.z * q.z));
        let g_v = Vector3::new(0.0, f / q.z, -f * q.y / (q.z * q.z));

        let xu = g_u.dot(&dq_du);
        let xv = g_u.dot(&dq_dv);
        let xz = g_u.dot(&dq_dz);
        let yu = g_v.dot(&dq_du);
        let yv = g_v.dot(&dq_dv);
        let yz = g_v.dot(&dq_dz);

        j1[(idx::X, idx::X)] = xu;
        j1[(idx::X, idx::Y)] = xv;
        j1[(idx::X, idx::H)] = 0.5 * xv;
        j1[(idx::Y, idx::X)] = yu;
        j1[(idx::Y, idx::Y)] = yv;
        j1[(idx::Y, idx::H)] = 0.5 * yv - 0.5;
        for k in 0..3 {
            j1[(idx::X, idx::POS + k)] = xz * r3[k];
            j1[(idx::Y, idx::POS + k)] = yz * r3[k];
        }
        e[idx::X] = f * q.x / q.z + intr.u0;
        e[idx::Y] = f * q.y / q.z + intr.v0 - 0.5 * x[idx::H];
    }

    // propagation and coupling, linearized at the corrected state
    let rc = p.ego_curr.rotation;
    let cam = p.ego_curr.world_to_camera(&pos);
    let cam_vel = rc * e.fixed_rows::<3>(idx::VEL).into_owned();
    let d = cam.z;
    if !(d > 0.0) {
        return Err(Error::LeftFrustum);
    }
    let h2 = e[idx::H];
    let h3 = e[idx::H3];

    let mut j2 = StateMatrix::identity();
    j2[(idx::W, idx::VW)] = dt;
    for k in 0..3 {
        j2[(idx::POS + k, idx::VEL + k)] = dt;
    }

    // 3D height
    j2[(idx::H3, idx::H3)] = wa;
    j2[(idx::H3, idx::H)] = wb * d / f;
    // 2D height
    j2[(idx::H, idx::H)] = wa;
    j2[(idx::H, idx::VH)] = wa * dt;
    j2[(idx::H, idx::H3)] = wb * f / d;
    // horizontal position
    j2[(idx::X, idx::X)] = wa;
    j2[(idx::X, idx::VX)] = wa * dt;
    let ax = dt * cam_vel.x + cam.x;
    let ay = dt * cam_vel.y + cam.y;
    for k in 0..3 {
        let dd = rc[(2, k)];
        j2[(idx::H3, idx::POS + k)] = wb * h2 / f * dd;
        j2[(idx::H, idx::POS + k)] = -wb * f * h3 / (d * d) * dd;
        j2[(idx::X, idx::POS + k)] = wb * f * (rc[(0, k)] / d - ax * dd / (d * d));
        j2[(idx::X, idx::VEL + k)] = wb * f * dt * rc[(0, k)] / d;
    }
    // box center row = footpoint row - half the 2D height row
    let mut foot_row = SVector::<f64, STATE_DIM>::zeros();
    foot_row[idx::Y] = wa;
    foot_row[idx::VY] = wa * dt;
    foot_row[idx::VH] = 0.5 * wa * dt;
    foot_row[idx::H] = 0.5 * wa;
    for k in 0..3 {
        let dd = rc[(2, k)];
        foot_row[idx::POS + k] = wb * f * (rc[(1, k)] / d - ay * dd / (d * d));
        foot_row[idx::VEL + k] = wb * f * dt * rc[(1, k)] / d;
    }
    for c in 0..STATE_DIM {
        j2[(idx::Y, c)] = foot_row[c] - 0.5 * j2[(idx::H, c)];
    }

    Ok(j2 * j1)
}

/// Adds white-noise-acceleration process noise for a constant-velocity pair.
fn add_cv_noise(q: &mut StateMatrix, value: usize, rate: usize, density: f64, dt: f64) {
    q[(value, value)] += density * dt.powi(3) / 3.0;
    q[(value, rate)] += density * dt.powi(2) / 2.0;
    q[(rate, value)] += density * dt.powi(2) / 2.0;
    q[(rate, rate)] += density * dt;
}

pub fn process_noise(dt: f64, noise: &NoiseConfig) -> StateMatrix {
    let mut q = StateMatrix::zeros();
    for k in 0..4 {
        add_cv_noise(&mut q, idx::X + k, idx::VX + k, noise.process_box, dt);
    }
    for k in 0..3 {
        add_cv_noise(&mut q, idx::POS + k, idx::VEL + k, noise.process_position, dt);
        q[(idx::SIZE + k, idx::SIZE + k)] += noise.process_size * dt;
    }
    q
}

pub fn predict(
    state: &CoupledState,
    dt: f64,
    intr: &CameraIntrinsics,
    ego_prev: &EgoPose,
    ego_curr: &EgoPose,
    cw: &CouplingWeights,
    noise: &NoiseConfig,
) -> Result<CoupledState> {
    if !(dt > 0.0) {
        return Err(Error::invalid("dt", "must be positive"));
    }
    let params = PredictParams {
        dt,
        intrinsics: intr,
        ego_prev,
        ego_curr,
        coupling: *cw,
    };
    let mean = transition(&state.mean, &params)?;
    let jac = transition_jacobian(&state.mean, &params)?;
    let covariance = jac * state.covariance * jac.transpose() + process_noise(dt, noise);
    let mut out = CoupledState {
        mean,
        covariance,
        psd_repairs: state.psd_repairs,
    };
    out.clamp_extents();
    out.covariance = symmetrize(&out.covariance);
    Ok(out)
}

/// Plain constant-velocity propagation of every component, used while a
/// hypothesis is extrapolated outside the camera frustum.
pub fn predict_extrapolate(state: &CoupledState, dt: f64, noise: &NoiseConfig) -> CoupledState {
    let mut jac = StateMatrix::identity();
    for k in 0..4 {
        jac[(idx::X + k, idx::VX + k)] = dt;
    }
    for k in 0..3 {
        jac[(idx::POS + k, idx::VEL + k)] = dt;
    }
    let mut out = CoupledState {
        mean: jac * state.mean,
        covariance: symmetrize(&(jac * state.covariance * jac.transpose() + process_noise(dt, noise))),
        psd_repairs: state.psd_repairs,
    };
    out.clamp_extents();
    out
}

fn symmetrize(m: &StateMatrix) -> StateMatrix {
    (m + m.transpose()) * 0.5
}

/// Returns true when the matrix had to be clamped back to PSD.
fn repair_covariance(cov: &mut StateMatrix) -> bool {
    *cov = symmetrize(cov);
    let scale = cov.diagonal().amax().max(1.0);
    if Cholesky::new(*cov + StateMatrix::identity() * (1e-12 * scale)).is_some() {
        return false;
    }
    let eig = cov.symmetric_eigen();
    let clamped = eig.eigenvalues.map(|v| v.max(0.0));
    *cov = symmetrize(&(eig.eigenvectors * StateMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose()));
    true
}

/// Linear update on the state components `indices` with measurement `z` and
/// noise covariance `r` (Joseph form).
fn update_block<const M: usize>(
    state: &mut CoupledState,
    indices: [usize; M],
    z: &SVector<f64, M>,
    r: &SMatrix<f64, M, M>,
) {
    let mut h = SMatrix::<f64, M, STATE_DIM>::zeros();
    for (row, &col) in indices.iter().enumerate() {
        h[(row, col)] = 1.0;
    }
    let p = &state.covariance;
    let pht = p * h.transpose();
    let s = h * pht + r;
    let s_inv = match Cholesky::new(s) {
        Some(ch) => ch.inverse(),
        None => match s.try_inverse() {
            Some(inv) => inv,
            None => return,
        },
    };
    let gain = pht * s_inv;
    let innovation = z - h * state.mean;
    state.mean += gain * innovation;
    let ikh = StateMatrix::identity() - gain * h;
    state.covariance = ikh * p * ikh.transpose() + gain * r * gain.transpose();
}

fn finish_update(state: &mut CoupledState) {
    state.clamp_extents();
    if repair_covariance(&mut state.covariance) {
        state.psd_repairs += 1;
    }
}

fn bbox_measurement(state: &mut CoupledState, bbox: &BBox2D, noise: &NoiseConfig) {
    let z = SVector::<f64, 4>::new(bbox.x, bbox.y, bbox.w, bbox.h);
    let r = SMatrix::<f64, 4, 4>::from_diagonal_element(noise.box_sigma.powi(2));
    update_block(state, [idx::X, idx::Y, idx::W, idx::H], &z, &r);
}

fn diag3(sigma: f64) -> SMatrix<f64, 3, 3> {
    SMatrix::<f64, 3, 3>::from_diagonal_element(sigma * sigma)
}

const POS_IDX: [usize; 3] = [idx::POS, idx::POS + 1, idx::POS + 2];
const VEL_IDX: [usize; 3] = [idx::VEL, idx::VEL + 1, idx::VEL + 2];
const SIZE_IDX: [usize; 3] = [idx::SIZE, idx::SIZE + 1, idx::SIZE + 2];

/// Sequential update with a fused observation: box, position, velocity (when
/// the proposal carries scene flow) and size.
pub fn update_fused(
    state: &CoupledState,
    obs: &Observation,
    ctx: &FrameContext,
    noise: &NoiseConfig,
) -> Result<CoupledState> {
    let prop = obs
        .proposal
        .as_ref()
        .ok_or_else(|| Error::invalid("observation", "fused update needs a proposal"))?;
    let mut out = state.clone();
    bbox_measurement(&mut out, &obs.detection.bbox, noise);
    update_block(
        &mut out,
        POS_IDX,
        &prop.position,
        &noise.fused_position.covariance(&prop.position, &ctx.ego),
    );
    if let Some(v) = prop.velocity {
        update_block(&mut out, VEL_IDX, &v, &diag3(noise.fused_velocity_sigma));
    }
    update_block(&mut out, SIZE_IDX, &prop.size.as_vector(), &diag3(noise.fused_size_sigma));
    finish_update(&mut out);
    Ok(out)
}

/// Update with a detection-only observation. Position comes from the ground
/// back-projection of the box footpoint and size from the category mean, both
/// with their own (larger) variances. Without a ground intersection only the
/// box is updated.
pub fn update_partial(
    state: &CoupledState,
    obs: &Observation,
    ctx: &FrameContext,
    stats: &SizeStats,
    noise: &NoiseConfig,
) -> CoupledState {
    let det = &obs.detection;
    let mut out = state.clone();
    bbox_measurement(&mut out, &det.bbox, noise);
    if let Ok(foot) = backproject_to_ground(&det.bbox.footpoint(), &ctx.intrinsics, &ctx.ego, &ctx.plane) {
        update_block(&mut out, POS_IDX, &foot, &noise.partial_position.covariance(&foot, &ctx.ego));
        update_block(
            &mut out,
            SIZE_IDX,
            &stats.get(det.category).mean_size().as_vector(),
            &diag3(noise.mean_size_sigma),
        );
    }
    finish_update(&mut out);
    out
}

/// Routes an observation to the fused or partial update.
pub fn update(
    state: &CoupledState,
    obs: &Observation,
    ctx: &FrameContext,
    stats: &SizeStats,
    noise: &NoiseConfig,
) -> CoupledState {
    if obs.fused() {
        update_fused(state, obs, ctx, noise).expect("fused observation carries a proposal")
    } else {
        update_partial(state, obs, ctx, stats, noise)
    }
}
