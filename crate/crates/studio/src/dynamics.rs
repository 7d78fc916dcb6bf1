//! Reference garment dynamics.
//!
//! Each cloth vertex carries an independent damped spring for its world-space
//! offset `u` from the skinned surface:
//!
//! ```text
//! u' = v
//! v' = −k·u − c·v − κ·a(t) + g
//! ```
//!
//! where `a(t)` is the vertex's own skinning acceleration (second finite
//! difference of its skinned track) and `g` a constant downward pull.
//! Integration is explicit Euler at the sequence frame rate. The acceleration
//! drive makes the ground truth depend on pose *history*: two tracks passing
//! through the same pose with different pasts produce different cloth — the
//! property the recurrent cloth model exists to capture. With both gains zero
//! the offset stays exactly zero and the cloth rigidly follows skinning.

use draper_core::scalar::Real;
use draper_core::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Spring coefficients for the reference cloth oscillator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GarmentParams {
    /// Restoring stiffness k (1/s²).
    pub stiffness: f64,
    /// Velocity damping c (1/s).
    pub damping: f64,
    /// Dimensionless gain κ on the negated body acceleration.
    pub drive_gain: f64,
    /// Constant downward pull (m/s²); static sag is `gravity_gain/stiffness`.
    pub gravity_gain: f64,
}

impl Default for GarmentParams {
    fn default() -> Self {
        Self { stiffness: 30.0, damping: 5.0, drive_gain: 0.8, gravity_gain: 0.3 }
    }
}

/// One explicit-Euler update of (u, v) under `u'' = f − k·u − c·u'`.
#[inline]
fn euler_step<T: Real>(u: &mut [T; 3], v: &mut [T; 3], f: [T; 3], k: T, c: T, dt: T) {
    for a in 0..3 {
        let un = u[a] + dt * v[a];
        let vn = v[a] + dt * (f[a] - k * u[a] - c * v[a]);
        u[a] = un;
        v[a] = vn;
    }
}

/// Offset track of one spring starting at rest under a prescribed per-step
/// force (gain and gravity already folded in). Entry `t` is the offset *at*
/// step `t`, before that step's update; entry 0 is always zero.
pub fn damped_spring_track<T: Real>(
    stiffness: T,
    damping: T,
    drive: &[[T; 3]],
    dt: T,
) -> Vec<[T; 3]> {
    let mut u = [T::zero(); 3];
    let mut v = [T::zero(); 3];
    let mut out = Vec::with_capacity(drive.len());
    for &f in drive {
        out.push(u);
        euler_step(&mut u, &mut v, f, stiffness, damping, dt);
    }
    out
}

/// Sequential per-vertex spring simulation over the cloth subset of a mesh.
///
/// Call [`ClothSim::step`] once per frame, in order, with the full-mesh
/// skinned positions; it returns world-space offsets for the full mesh
/// (zero on every non-cloth vertex).
pub struct ClothSim<T: Real> {
    k: T,
    c: T,
    kappa: T,
    gravity: [T; 3],
    dt: T,
    /// Vertex ids of the simulated subset within the full mesh.
    cloth: Vec<usize>,
    u: Vec<[T; 3]>,
    v: Vec<[T; 3]>,
    prev: Option<Vec<[T; 3]>>,
    prev2: Option<Vec<[T; 3]>>,
}

impl<T: Real> ClothSim<T> {
    pub fn new(params: &GarmentParams, fps: f64, cloth: Vec<usize>) -> Self {
        assert!(fps > 0.0, "frame rate must be positive");
        let m = cloth.len();
        Self {
            k: T::from_f64c(params.stiffness),
            c: T::from_f64c(params.damping),
            kappa: T::from_f64c(params.drive_gain),
            gravity: [T::zero(), T::from_f64c(-params.gravity_gain), T::zero()],
            dt: T::from_f64c(1.0 / fps),
            cloth,
            u: vec![[T::zero(); 3]; m],
            v: vec![[T::zero(); 3]; m],
            prev: None,
            prev2: None,
        }
    }

    /// Advance one frame. `skinned` is the `[N,3]` pure-LBS surface for the
    /// current pose; the result is that frame's `[N,3]` world-space offsets.
    pub fn step(&mut self, skinned: &Tensor<T>) -> Tensor<T> {
        let n = skinned.shape()[0];
        assert_eq!(skinned.shape(), [n, 3], "skinned positions must be [N,3]");
        let cur: Vec<[T; 3]> = self
            .cloth
            .iter()
            .map(|&vi| [skinned.at2(vi, 0), skinned.at2(vi, 1), skinned.at2(vi, 2)])
            .collect();

        let inv_dt2 = T::one() / (self.dt * self.dt);
        let mut out = Tensor::zeros([n, 3]);
        let dst = out.data_mut();
        for ci in 0..self.cloth.len() {
            let vi = self.cloth[ci];
            // emit the pre-update offset: frame 0 is exactly zero, and the
            // response to a drive at frame t appears from frame t+1 on
            dst[vi * 3] = self.u[ci][0];
            dst[vi * 3 + 1] = self.u[ci][1];
            dst[vi * 3 + 2] = self.u[ci][2];

            let accel = match (&self.prev, &self.prev2) {
                (Some(p1), Some(p2)) => {
                    let two = T::from_f64c(2.0);
                    [
                        (cur[ci][0] - two * p1[ci][0] + p2[ci][0]) * inv_dt2,
                        (cur[ci][1] - two * p1[ci][1] + p2[ci][1]) * inv_dt2,
                        (cur[ci][2] - two * p1[ci][2] + p2[ci][2]) * inv_dt2,
                    ]
                }
                _ => [T::zero(); 3],
            };
            let f = [
                self.gravity[0] - self.kappa * accel[0],
                self.gravity[1] - self.kappa * accel[1],
                self.gravity[2] - self.kappa * accel[2],
            ];
            euler_step(&mut self.u[ci], &mut self.v[ci], f, self.k, self.c, self.dt);
        }
        self.prev2 = self.prev.take();
        self.prev = Some(cur);
        out
    }

    /// Peak offset magnitude over the simulated subset so far is not tracked;
    /// compare emitted offset tensors instead.
    pub fn cloth_vertices(&self) -> &[usize] {
        &self.cloth
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Closed-form underdamped response of `u'' + c·u' + k·u = f0` from rest.
    fn analytic_step(k: f64, c: f64, f0: f64, t: f64) -> f64 {
        let ustar = f0 / k;
        let wd = (k - c * c / 4.0).sqrt();
        let e = (-c * t / 2.0).exp();
        ustar * (1.0 - e * ((wd * t).cos() + (c / (2.0 * wd)) * (wd * t).sin()))
    }

    fn step_response_error(k: f64, c: f64, f0: f64, fps: f64, duration: f64) -> f64 {
        let n = (fps * duration) as usize;
        let dt = 1.0 / fps;
        let drive = vec![[f0, 0.0, 0.0]; n];
        let track = damped_spring_track(k, c, &drive, dt);
        track
            .iter()
            .enumerate()
            .map(|(i, u)| (u[0] - analytic_step(k, c, f0, i as f64 * dt)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn step_response_matches_analytic_ode_within_2_percent() {
        let p = GarmentParams::default();
        let f0 = 1.7;
        let ustar = (f0 / p.stiffness).abs();
        let err = step_response_error(p.stiffness, p.damping, f0, 240.0, 2.0);
        assert!(
            err <= 0.02 * ustar,
            "explicit Euler at 240 fps deviates {:.3}% of steady state",
            err / ustar * 100.0
        );
        // first-order convergence: halving dt roughly halves the error
        let coarse = step_response_error(p.stiffness, p.damping, f0, 120.0, 2.0);
        assert!(err < 0.62 * coarse, "error did not shrink with dt: {err} vs {coarse}");
    }

    #[test]
    fn track_starts_at_zero_and_responds_after_drive() {
        let drive =
            [[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [5.0, 0.0, 0.0], [5.0, 0.0, 0.0], [5.0, 0.0, 0.0]];
        let track = damped_spring_track(20.0, 4.0, &drive, 0.1);
        assert_eq!(track[0], [0.0; 3]);
        assert_eq!(track[1], [0.0; 3]); // drive starts at step 2
        assert_eq!(track[2], [0.0; 3]); // step 2's update only changes velocity
        assert_eq!(track[3], [0.0; 3]); // position follows one step later
        assert!(track[4][0] > 0.0);
    }

    fn constant_positions(n: usize) -> Tensor<f64> {
        Tensor::from_vec([n, 3], (0..n * 3).map(|i| i as f64 * 0.01).collect::<Vec<_>>())
    }

    #[test]
    fn zero_gains_keep_offsets_exactly_zero() {
        let params =
            GarmentParams { drive_gain: 0.0, gravity_gain: 0.0, ..GarmentParams::default() };
        let mut sim = ClothSim::new(&params, 30.0, vec![0, 2]);
        let mut moving = constant_positions(3);
        for step in 0..50 {
            // arbitrary motion: without gains nothing may leak into u
            for v in moving.data_mut() {
                *v += (step as f64 * 0.37).sin() * 0.05;
            }
            let off = sim.step(&moving);
            assert!(off.data().iter().all(|&v| v == 0.0), "offset leaked at step {step}");
        }
    }

    #[test]
    fn gravity_sag_settles_to_gain_over_stiffness() {
        let params = GarmentParams { drive_gain: 0.5, gravity_gain: 0.6, ..Default::default() };
        let mut sim = ClothSim::new(&params, 60.0, vec![1]);
        let fixed = constant_positions(2);
        let mut last = Tensor::zeros([2, 3]);
        for _ in 0..600 {
            last = sim.step(&fixed);
        }
        let sag = -params.gravity_gain / params.stiffness;
        assert!((last.at2(1, 1) - sag).abs() < 1e-6, "sag {} vs {}", last.at2(1, 1), sag);
        assert_eq!(last.at2(0, 0), 0.0, "non-cloth vertex must stay untouched");
        assert!((last.at2(1, 0)).abs() < 1e-12);
    }

    #[test]
    fn same_final_pose_different_history_differs() {
        let params = GarmentParams::default();
        let base = constant_positions(2);
        // track A: parked the whole time; track B: swings and returns
        let mut sim_a = ClothSim::new(&params, 30.0, vec![0, 1]);
        let mut sim_b = ClothSim::new(&params, 30.0, vec![0, 1]);
        let mut last_a = Tensor::zeros([2, 3]);
        let mut last_b = Tensor::zeros([2, 3]);
        for step in 0..=20 {
            last_a = sim_a.step(&base);
            let mut swung = base.clone();
            // sin(π·step/10) is zero again at step 20: same pose, other past
            let phase = (std::f64::consts::PI * step as f64 / 10.0).sin();
            for v in swung.data_mut() {
                *v += 0.08 * phase;
            }
            last_b = sim_b.step(&swung);
        }
        let max_gap = last_a
            .data()
            .iter()
            .zip(last_b.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_gap > 1e-4, "history left no trace: gap {max_gap}");
    }
}
