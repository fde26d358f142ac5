//! Scripted stand-ins for the human on the pedal.

use bisync_core::episode::Observation;
use bisync_core::{Error, JointVector, Result};

use crate::task::ReachTask;

/// Decides, once per environment step, whether the operator holds the pedal
/// and where they push the leader.
pub trait Intervenor {
    fn reset(&mut self);

    /// `Some(hand target)` while the operator wants control.
    fn observe(
        &mut self,
        task: &ReachTask,
        t: usize,
        obs: &Observation,
    ) -> Result<Option<JointVector>>;
}

const PROGRESS_EPS: f64 = 1e-6;

/// Takes over once the distance to the goal has not decreased for `k`
/// consecutive steps, drives the leader to the IK goal and lets go inside the
/// success margin.
#[derive(Debug, Clone)]
pub struct StallIntervenor {
    pub k: usize,
    prev: Option<f64>,
    stalled: usize,
    engaged: bool,
}

impl StallIntervenor {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("stall window must be at least 1 step"));
        }
        Ok(Self {
            k,
            prev: None,
            stalled: 0,
            engaged: false,
        })
    }
}

impl Intervenor for StallIntervenor {
    fn reset(&mut self) {
        self.prev = None;
        self.stalled = 0;
        self.engaged = false;
    }

    fn observe(
        &mut self,
        task: &ReachTask,
        _t: usize,
        obs: &Observation,
    ) -> Result<Option<JointVector>> {
        let d = task.distance(obs)?;
        if self.engaged {
            if d < task.margin {
                self.engaged = false;
                self.stalled = 0;
                self.prev = Some(d);
                return Ok(None);
            }
            return Ok(Some(task.ik(ReachTask::goal_of(obs)?)));
        }
        match self.prev {
            Some(p) if d >= p - PROGRESS_EPS => self.stalled += 1,
            _ => self.stalled = 0,
        }
        self.prev = Some(d);
        if self.stalled >= self.k {
            self.engaged = true;
            return Ok(Some(task.ik(ReachTask::goal_of(obs)?)));
        }
        Ok(None)
    }
}

/// Takes over once the arm has covered `fraction` of its initial distance to
/// the goal, i.e. when d <= (1 - fraction) * d0, and finishes the reach.
#[derive(Debug, Clone)]
pub struct ProgressIntervenor {
    pub fraction: f64,
    d0: Option<f64>,
    engaged: bool,
}

impl ProgressIntervenor {
    pub fn new(fraction: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::invalid(format!(
                "progress fraction {fraction} not in [0,1]"
            )));
        }
        Ok(Self {
            fraction,
            d0: None,
            engaged: false,
        })
    }
}

impl Intervenor for ProgressIntervenor {
    fn reset(&mut self) {
        self.d0 = None;
        self.engaged = false;
    }

    fn observe(
        &mut self,
        task: &ReachTask,
        _t: usize,
        obs: &Observation,
    ) -> Result<Option<JointVector>> {
        let d = task.distance(obs)?;
        let d0 = *self.d0.get_or_insert(d);
        if !self.engaged && d <= (1.0 - self.fraction) * d0 {
            self.engaged = true;
        }
        if self.engaged && d < task.margin {
            self.engaged = false;
        }
        if self.engaged {
            Ok(Some(task.ik(ReachTask::goal_of(obs)?)))
        } else {
            Ok(None)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stall_waits_k_steps() {
        let task = ReachTask::reach1().unwrap();
        let mut s = StallIntervenor::new(3).unwrap();
        let o = task.observe(&task.start_joints(), [0.65, 0.0]);
        let got: Vec<bool> = (0..5)
            .map(|t| s.observe(&task, t, &o).unwrap().is_some())
            .collect();
        assert_eq!(got, vec![false, false, false, true, true]);
        s.reset();
        assert!(s.observe(&task, 0, &o).unwrap().is_none());
        assert!(StallIntervenor::new(0).is_err());
    }

    #[test]
    fn progress_engages_at_fraction() {
        let task = ReachTask::reach1().unwrap();
        let mut p = ProgressIntervenor::new(0.5).unwrap();
        let goal = [0.65, 0.0];
        let at = |q: f64| task.observe(&JointVector::from_q(vec![q]).unwrap(), goal);
        assert!(p.observe(&task, 0, &at(1.5)).unwrap().is_none());
        assert!(p.observe(&task, 1, &at(1.0)).unwrap().is_none());
        let hand = p.observe(&task, 2, &at(0.6)).unwrap().unwrap();
        assert!(hand.q[0].abs() < 1e-12);
        assert!(p.observe(&task, 3, &at(0.01)).unwrap().is_none());
    }
}
