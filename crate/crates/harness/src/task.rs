//! Planar reach tasks with ID / OOD goal placement.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};

use bisync_core::episode::{Observation, Scenario, DEFAULT_MAX_STEPS};
use bisync_core::kinematics::{clamp_to_limits, forward_kinematics};
use bisync_core::servo_wire::RawTicks;
use bisync_core::sim::{DevicePreset, SimRig};
use bisync_core::sync::{
    calibrate, CalibrationProfile, Sign, SyncEngine, DEFAULT_HANDOVER_TOLERANCE,
};
use bisync_core::{Error, JointVector, Result};
use rand::Rng;

/// Logit threshold that counts as task completion.
pub const SUCCESS_LOGIT: f64 = 0.85;

/// Annulus sector in the task plane. Angles in radians, measured from +x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub r: (f64, f64),
    pub theta: (f64, f64),
}

impl Region {
    pub fn new(r: (f64, f64), theta: (f64, f64)) -> Result<Self> {
        if !(r.0 > 0.0 && r.0 <= r.1 && theta.0 < theta.1 && theta.1 - theta.0 <= TAU) {
            return Err(Error::invalid(format!(
                "bad region r={r:?} theta={theta:?}"
            )));
        }
        Ok(Self { r, theta })
    }

    /// Area-uniform sample.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let r = if self.r.0 == self.r.1 {
            self.r.0
        } else {
            rng.gen_range(self.r.0 * self.r.0..self.r.1 * self.r.1)
                .sqrt()
        };
        let th = rng.gen_range(self.theta.0..self.theta.1);
        [r * th.cos(), r * th.sin()]
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let r = p[0].hypot(p[1]);
        let mut th = p[1].atan2(p[0]);
        while th < self.theta.0 {
            th += TAU;
        }
        r >= self.r.0 - 1e-9 && r <= self.r.1 + 1e-9 && th <= self.theta.1 + 1e-12
    }

    fn overlaps(&self, other: &Region) -> bool {
        let radial = self.r.0 <= other.r.1 && other.r.0 <= self.r.1;
        let angular = (-1..=1).any(|k| {
            let shift = k as f64 * TAU;
            self.theta.0 < other.theta.1 + shift && other.theta.0 + shift < self.theta.1
        });
        radial && angular
    }
}

/// Goal position over an episode. OOD-dynamic goals jump once.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Goal {
    pub initial: [f64; 2],
    pub teleport: Option<(usize, [f64; 2])>,
}

impl Goal {
    pub fn fixed(p: [f64; 2]) -> Self {
        Self {
            initial: p,
            teleport: None,
        }
    }

    pub fn at(&self, t: usize) -> [f64; 2] {
        match self.teleport {
            Some((step, p)) if t >= step => p,
            _ => self.initial,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReachTask {
    pub name: String,
    pub follower: DevicePreset,
    pub leader: DevicePreset,
    pub start: Vec<f64>,
    pub id_region: Region,
    pub ood_region: Region,
    /// Part of the ID region the demonstrator covers in the EADC and FCID
    /// experiments, so the base policy has somewhere to fail.
    pub demo_region: Region,
    pub teleport_step: usize,
    /// Success radius around the goal (m).
    pub margin: f64,
    pub max_steps: usize,
    pub rate_hz: f64,
    /// Sync periods per environment step.
    pub decimation: usize,
    pub handover_tolerance: f64,
    /// Weight of goal coordinates (per m) against joints (per rad) in lookup-BC.
    pub goal_weight: f64,
    /// Range of each Q feature (joint error to the IK goal, rad).
    pub feature_range: (f64, f64),
}

impl ReachTask {
    pub fn builtin_names() -> [&'static str; 2] {
        ["reach", "reach1"]
    }

    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "reach" => Self::reach(),
            "reach1" => Self::reach1(),
            other => Err(Error::invalid(format!(
                "unknown task `{other}` (known: reach, reach1)"
            ))),
        }
    }

    /// Two-link reacher. ID is the right half-plane annulus, OOD-static the left.
    pub fn reach() -> Result<Self> {
        Self::new(
            "reach",
            DevicePreset::builtin("planar2")?,
            DevicePreset::builtin("planar2-leader")?,
            vec![FRAC_PI_2, 0.0],
            Region::new((0.55, 0.75), (-FRAC_PI_4, FRAC_PI_4))?,
            Region::new((0.55, 0.75), (PI - FRAC_PI_4, PI + FRAC_PI_4))?,
            Region::new((0.55, 0.75), (-FRAC_PI_4, 0.0))?,
            (-PI, PI),
        )
    }

    /// One-joint reacher on a circle of radius 0.65.
    pub fn reach1() -> Result<Self> {
        Self::new(
            "reach1",
            DevicePreset::builtin("planar1")?,
            DevicePreset::builtin("planar1-leader")?,
            vec![FRAC_PI_2],
            Region::new((0.65, 0.65), (-FRAC_PI_4, FRAC_PI_4))?,
            Region::new((0.65, 0.65), (PI - FRAC_PI_4, PI + FRAC_PI_4))?,
            Region::new((0.65, 0.65), (-FRAC_PI_4, 0.0))?,
            (-0.75, 2.65),
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn new(
        name: &str,
        follower: DevicePreset,
        leader: DevicePreset,
        start: Vec<f64>,
        id_region: Region,
        ood_region: Region,
        demo_region: Region,
        feature_range: (f64, f64),
    ) -> Result<Self> {
        let task = Self {
            name: name.to_string(),
            follower,
            leader,
            start,
            id_region,
            ood_region,
            demo_region,
            teleport_step: 30,
            margin: 0.06,
            max_steps: DEFAULT_MAX_STEPS,
            rate_hz: 10.0,
            decimation: 5,
            handover_tolerance: DEFAULT_HANDOVER_TOLERANCE,
            goal_weight: 20.0,
            feature_range,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.joints();
        if !(1..=2).contains(&n) {
            return Err(Error::invalid("reach tasks support 1 or 2 joints"));
        }
        if self.leader.joint_count() != n || self.start.len() != n {
            return Err(Error::invalid("task joint counts disagree"));
        }
        if self.id_region.overlaps(&self.ood_region) {
            return Err(Error::invalid("ID and OOD-static regions overlap"));
        }
        let (d, i) = (&self.demo_region, &self.id_region);
        if d.r.0 < i.r.0 || d.r.1 > i.r.1 || d.theta.0 < i.theta.0 || d.theta.1 > i.theta.1 {
            return Err(Error::invalid("demo region must lie inside the ID region"));
        }
        if !(self.margin > 0.0 && self.rate_hz > 0.0 && self.decimation > 0 && self.max_steps > 0) {
            return Err(Error::invalid(
                "margin, rate, decimation and max_steps must be positive",
            ));
        }
        Ok(())
    }

    pub fn joints(&self) -> usize {
        self.follower.joint_count()
    }

    pub fn links(&self) -> Vec<f64> {
        self.follower.dh.rows().iter().map(|r| r.a).collect()
    }

    pub fn env_dt(&self) -> f64 {
        1.0 / self.rate_hz
    }

    pub fn sync_dt(&self) -> f64 {
        self.env_dt() / self.decimation as f64
    }

    pub fn start_joints(&self) -> JointVector {
        JointVector::from_q(self.start.clone()).expect("validated start")
    }

    /// Fresh leader/follower rig, both at the start pose, leader calibrated there.
    pub fn build_rig(&self) -> Result<SimRig> {
        self.build_rig_with_dt(self.sync_dt())
    }

    /// Same rig with a different control period (e.g. a live loop at `--rate-hz`).
    pub fn build_rig_with_dt(&self, dt: f64) -> Result<SimRig> {
        self.build_rig_calibrated(dt, self.default_profile()?)
    }

    /// The leader calibration the built-in rigs use: fixed raw readings at
    /// the start pose, alternating signs.
    pub fn default_profile(&self) -> Result<CalibrationProfile> {
        let n = self.joints();
        let res = self.leader.resolution;
        let signs: Vec<Sign> = (0..n)
            .map(|i| {
                if i % 2 == 0 {
                    Sign::Positive
                } else {
                    Sign::Negative
                }
            })
            .collect();
        let raw: Vec<u32> = (0..n).map(|i| (1000 + 1500 * i as u32) % res).collect();
        calibrate(&RawTicks::new(raw, res)?, &self.start_joints(), &signs)
    }

    /// Rig whose leader is read through `profile` (e.g. one saved by `calibrate`).
    pub fn build_rig_calibrated(&self, dt: f64, profile: CalibrationProfile) -> Result<SimRig> {
        if profile.joint_count() != self.joints() {
            return Err(Error::Dimension {
                expected: self.joints(),
                got: profile.joint_count(),
            });
        }
        if profile.resolution() != self.leader.resolution {
            return Err(Error::invalid(format!(
                "calibration resolution {} does not match the leader's {}",
                profile.resolution(),
                self.leader.resolution
            )));
        }
        let start = self.start_joints();
        let engine = SyncEngine::new(profile, self.follower.limits.clone(), dt)?;
        SimRig::new(
            engine,
            start.clone(),
            start,
            self.leader.limits.clone(),
            self.handover_tolerance,
        )
    }

    pub fn sample_goal<R: Rng + ?Sized>(&self, scenario: Scenario, rng: &mut R) -> Goal {
        match scenario {
            Scenario::InDistribution => Goal::fixed(self.id_region.sample(rng)),
            Scenario::OodStatic => Goal::fixed(self.ood_region.sample(rng)),
            Scenario::OodDynamic => {
                let p = self.id_region.sample(rng);
                Goal {
                    initial: p,
                    teleport: Some((self.teleport_step, [-p[0], p[1]])),
                }
            }
        }
    }

    pub fn observe(&self, q: &JointVector, goal: [f64; 2]) -> Observation {
        Observation::new(q, goal.to_vec())
    }

    pub fn end_effector(&self, q: &[f64]) -> Result<[f64; 2]> {
        let pose = forward_kinematics(&self.follower.dh, &JointVector::from_q(q.to_vec())?)?;
        Ok([pose.position[0], pose.position[1]])
    }

    pub fn goal_of(obs: &Observation) -> Result<[f64; 2]> {
        match obs.extras.as_slice() {
            [x, y] => Ok([*x, *y]),
            other => Err(Error::invalid(format!(
                "reach observation needs 2 goal extras, got {}",
                other.len()
            ))),
        }
    }

    pub fn distance(&self, obs: &Observation) -> Result<f64> {
        let p = self.end_effector(&obs.q)?;
        let g = Self::goal_of(obs)?;
        Ok((p[0] - g[0]).hypot(p[1] - g[1]))
    }

    /// Logistic in distance: 0.5 at 1.5 margins, 0.85 exactly at the margin.
    pub fn logit_of_distance(&self, d: f64) -> f64 {
        let m = self.margin;
        let k = (SUCCESS_LOGIT / (1.0 - SUCCESS_LOGIT)).ln() / (0.5 * m);
        1.0 / (1.0 + (k * (d - 1.5 * m)).exp())
    }

    pub fn reward_logit(&self, obs: &Observation) -> Result<f64> {
        Ok(self.logit_of_distance(self.distance(obs)?))
    }

    pub fn success(&self, obs: &Observation) -> Result<bool> {
        Ok(self.reward_logit(obs)? > SUCCESS_LOGIT)
    }

    /// Joint solution reaching `goal`, clamped to limits. With two links the
    /// elbow branch nearest the start pose is taken so a goal always maps to
    /// the same configuration.
    pub fn ik(&self, goal: [f64; 2]) -> JointVector {
        let links = self.links();
        let q = match links.as_slice() {
            [_] => vec![goal[1].atan2(goal[0])],
            [l1, l2] => {
                let r2 = goal[0] * goal[0] + goal[1] * goal[1];
                let c2 = ((r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).clamp(-1.0, 1.0);
                let phi = goal[1].atan2(goal[0]);
                let mut best: Option<(f64, Vec<f64>)> = None;
                for q2 in [c2.acos(), -c2.acos()] {
                    let beta = (l2 * q2.sin()).atan2(l1 + l2 * q2.cos());
                    let cand = vec![wrap_angle(phi - beta), q2];
                    let dist = cand
                        .iter()
                        .zip(&self.start)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max);
                    if best.as_ref().is_none_or(|(d, _)| dist < *d) {
                        best = Some((dist, cand));
                    }
                }
                best.expect("two candidates").1
            }
            _ => unreachable!("validated joint count"),
        };
        clamp_to_limits(
            &JointVector::from_q(q).expect("finite"),
            &self.follower.limits,
        )
        .expect("matching dims")
    }

    /// Per-joint error to the IK solution, wrapped to (-pi, pi].
    pub fn features(&self, obs: &Observation) -> Result<Vec<f64>> {
        let target = self.ik(Self::goal_of(obs)?);
        if obs.q.len() != target.len() {
            return Err(Error::Dimension {
                expected: target.len(),
                got: obs.q.len(),
            });
        }
        Ok(obs
            .q
            .iter()
            .zip(&target.q)
            .map(|(q, t)| wrap_angle(q - t))
            .collect())
    }

    /// Largest joint move in one environment step.
    pub fn max_step(&self) -> Vec<f64> {
        self.follower
            .limits
            .v_max
            .iter()
            .map(|v| v * self.env_dt())
            .collect()
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn logit_shape() {
        let t = ReachTask::reach().unwrap();
        assert!(t.logit_of_distance(0.0) >= 0.99);
        assert!((t.logit_of_distance(t.margin) - SUCCESS_LOGIT).abs() < 1e-12);
        assert!((t.logit_of_distance(1.5 * t.margin) - 0.5).abs() < 1e-12);
        assert!(t.logit_of_distance(1.5 * t.margin + 1e-9) < 0.5);
    }

    #[test]
    fn ik_reaches_sampled_goals() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for task in [ReachTask::reach().unwrap(), ReachTask::reach1().unwrap()] {
            for sc in Scenario::ALL {
                for _ in 0..200 {
                    let g = task.sample_goal(sc, &mut rng);
                    for p in [g.initial, g.at(1000)] {
                        let e = task.end_effector(&task.ik(p).q).unwrap();
                        assert!((e[0] - p[0]).hypot(e[1] - p[1]) < 1e-4, "{p:?} {e:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn placement_regions() {
        let t = ReachTask::reach().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let id = t.sample_goal(Scenario::InDistribution, &mut rng);
            assert!(t.id_region.contains(id.initial) && id.initial[0] > 0.0);
            assert_eq!(id.at(199), id.initial);
            let ood = t.sample_goal(Scenario::OodStatic, &mut rng);
            assert!(t.ood_region.contains(ood.initial) && ood.initial[0] < 0.0);
            let dy = t.sample_goal(Scenario::OodDynamic, &mut rng);
            assert_eq!(dy.at(29), dy.initial);
            assert!(t.ood_region.contains(dy.at(30)));
        }
    }

    #[test]
    fn overlapping_regions_rejected() {
        let mut t = ReachTask::reach().unwrap();
        t.ood_region = Region::new((0.5, 0.6), (0.5, 1.0)).unwrap();
        assert!(t.validate().is_err());
        t.ood_region = Region::new((0.5, 0.6), (-PI - 0.1, -3.0)).unwrap();
        assert!(t.validate().is_ok());
        t.ood_region = Region::new((0.5, 0.6), (TAU - 0.9, TAU - 0.5)).unwrap();
        assert!(t.validate().is_err());
    }

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + FRAC_PI_2).abs() < 1e-12);
    }
}
