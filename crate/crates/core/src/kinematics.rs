//! Denavit–Hartenberg chains and joint-space types.
//!
//! Chains use the standard (distal) convention: each row contributes
//! `Rz(theta) · Tz(d) · Tx(a) · Rx(alpha)` with `theta = q + theta_offset`.

use std::path::Path;

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, read_file, Error, Result};
use crate::kv::strip_comment;

/// Default length scale of a miniature leader relative to its follower.
pub const DEFAULT_LEADER_SCALE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhRow {
    /// Link length along the new x axis, metres.
    pub a: f64,
    /// Link twist about the new x axis, radians.
    pub alpha: f64,
    /// Link offset along the previous z axis, metres.
    pub d: f64,
    /// Constant added to the joint variable, radians.
    pub theta_offset: f64,
}

impl DhRow {
    pub fn new(a: f64, alpha: f64, d: f64, theta_offset: f64) -> Self {
        Self {
            a,
            alpha,
            d,
            theta_offset,
        }
    }

    fn is_finite(&self) -> bool {
        self.a.is_finite()
            && self.alpha.is_finite()
            && self.d.is_finite()
            && self.theta_offset.is_finite()
    }

    fn transform(&self, q: f64) -> Isometry3<f64> {
        let about_z = Isometry3::from_parts(
            Translation3::new(0.0, 0.0, self.d),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), q + self.theta_offset),
        );
        let about_x = Isometry3::from_parts(
            Translation3::new(self.a, 0.0, 0.0),
            UnitQuaternion::from_axis_angle(&Vector3::x_axis(), self.alpha),
        );
        about_z * about_x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DhTable {
    rows: Vec<DhRow>,
}

impl DhTable {
    pub fn new(rows: Vec<DhRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("DH table needs at least one row"));
        }
        if let Some(i) = rows.iter().position(|r| !r.is_finite()) {
            return Err(Error::invalid(format!("DH row {i} has a non-finite entry")));
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[DhRow] {
        &self.rows
    }

    pub fn joint_count(&self) -> usize {
        self.rows.len()
    }

    /// Parses `a alpha d theta_offset` rows, one per line. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            let fields = line
                .split_whitespace()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|e| Error::parse(line_no, format!("`{f}`: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            if fields.len() != 4 {
                return Err(Error::parse(
                    line_no,
                    format!(
                        "expected 4 fields `a alpha d theta_offset`, found {}",
                        fields.len()
                    ),
                ));
            }
            if fields.iter().any(|v| !v.is_finite()) {
                return Err(Error::parse(line_no, "non-finite value"));
            }
            rows.push(DhRow::new(fields[0], fields[1], fields[2], fields[3]));
        }
        if rows.is_empty() {
            return Err(Error::parse(
                text.lines().count().max(1),
                "no DH rows found",
            ));
        }
        Self::new(rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_file(path)?).map_err(|e| e.with_path(path))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# a alpha d theta_offset\n");
        for r in &self.rows {
            out.push_str(&format!("{} {} {} {}\n", r.a, r.alpha, r.d, r.theta_offset));
        }
        out
    }

    /// Multiplies every `a` and `d` by `factor`; angles are untouched.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::invalid(format!(
                "scale factor must be positive, got {factor}"
            )));
        }
        Ok(Self {
            rows: self
                .rows
                .iter()
                .map(|r| DhRow::new(r.a * factor, r.alpha, r.d * factor, r.theta_offset))
                .collect(),
        })
    }

    /// Pose of the frame after joint `upto` (exclusive count), so `upto == 0`
    /// is the base and `upto == joint_count` the end frame.
    pub fn partial_pose(&self, q: &[f64], upto: usize) -> Result<Pose> {
        check_dim(self.joint_count(), q.len())?;
        let upto = upto.min(self.rows.len());
        let iso = self.rows[..upto]
            .iter()
            .zip(q)
            .fold(Isometry3::identity(), |acc, (row, &qi)| {
                acc * row.transform(qi)
            });
        Ok(Pose::from_isometry(&iso))
    }
}

/// UR5 parameters shipped with the crate (standard DH, metres/radians).
pub fn ur5() -> DhTable {
    DhTable::parse(include_str!("../data/ur5.dh")).expect("bundled UR5 table is valid")
}

/// Two-link planar arm used by the desk-scale learning tasks.
pub fn planar(link_lengths: &[f64]) -> Result<DhTable> {
    DhTable::new(
        link_lengths
            .iter()
            .map(|&a| DhRow::new(a, 0.0, 0.0, 0.0))
            .collect(),
    )
}

pub fn scale_dh(dh: &DhTable, factor: f64) -> Result<DhTable> {
    dh.scaled(factor)
}

/// Joint angles (radians) plus a normalized gripper command in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointVector {
    pub q: Vec<f64>,
    pub gripper: f64,
}

impl JointVector {
    pub fn new(q: Vec<f64>, gripper: f64) -> Result<Self> {
        let v = Self { q, gripper };
        v.validate()?;
        Ok(v)
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            q: vec![0.0; n],
            gripper: 0.0,
        }
    }

    pub fn from_q(q: Vec<f64>) -> Result<Self> {
        Self::new(q, 0.0)
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.q.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("joint {i} is not finite")));
        }
        if !(0.0..=1.0).contains(&self.gripper) {
            return Err(Error::invalid(format!(
                "gripper {} outside [0, 1]",
                self.gripper
            )));
        }
        Ok(())
    }

    /// Largest absolute per-joint difference, gripper included.
    pub fn max_abs_diff(&self, other: &JointVector) -> f64 {
        self.q
            .iter()
            .zip(&other.q)
            .map(|(a, b)| (a - b).abs())
            .fold((self.gripper - other.gripper).abs(), f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointLimits {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Per-joint speed bound, rad/s.
    pub v_max: Vec<f64>,
    /// Gripper speed bound in normalized units per second.
    pub gripper_v_max: f64,
}

impl JointLimits {
    pub fn new(
        lower: Vec<f64>,
        upper: Vec<f64>,
        v_max: Vec<f64>,
        gripper_v_max: f64,
    ) -> Result<Self> {
        check_dim(lower.len(), upper.len())?;
        check_dim(lower.len(), v_max.len())?;
        for i in 0..lower.len() {
            if !(lower[i].is_finite() && upper[i].is_finite() && lower[i] <= upper[i]) {
                return Err(Error::invalid(format!(
                    "joint {i}: lower {} must not exceed upper {}",
                    lower[i], upper[i]
                )));
            }
            if !(v_max[i].is_finite() && v_max[i] > 0.0) {
                return Err(Error::invalid(format!("joint {i}: v_max must be positive")));
            }
        }
        if !(gripper_v_max.is_finite() && gripper_v_max > 0.0) {
            return Err(Error::invalid("gripper_v_max must be positive"));
        }
        Ok(Self {
            lower,
            upper,
            v_max,
            gripper_v_max,
        })
    }

    /// `[-bound, bound]` on every joint with a shared speed limit.
    pub fn symmetric(n: usize, bound: f64, v_max: f64) -> Result<Self> {
        Self::new(vec![-bound; n], vec![bound; n], vec![v_max; n], 2.0)
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn contains(&self, q: &JointVector) -> bool {
        q.len() == self.len()
            && q.q
                .iter()
                .enumerate()
                .all(|(i, v)| *v >= self.lower[i] && *v <= self.upper[i])
            && (0.0..=1.0).contains(&q.gripper)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: [f64; 3],
    /// Row-major rotation matrix.
    pub orientation: [[f64; 3]; 3],
}

impl Pose {
    fn from_isometry(iso: &Isometry3<f64>) -> Self {
        let t = iso.translation.vector;
        let r = iso.rotation.to_rotation_matrix();
        let m = r.matrix();
        let mut orientation = [[0.0; 3]; 3];
        for (i, row) in orientation.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = m[(i, j)];
            }
        }
        Self {
            position: [t.x, t.y, t.z],
            orientation,
        }
    }

    pub fn identity() -> Self {
        Self {
            position: [0.0; 3],
            orientation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }
}

pub fn forward_kinematics(dh: &DhTable, q: &JointVector) -> Result<Pose> {
    dh.partial_pose(&q.q, dh.joint_count())
}

/// Clamps every joint into its limits and the gripper into `[0, 1]`.
pub fn clamp_to_limits(q: &JointVector, limits: &JointLimits) -> Result<JointVector> {
    check_dim(limits.len(), q.len())?;
    Ok(JointVector {
        q: q.q
            .iter()
            .enumerate()
            .map(|(i, v)| v.clamp(limits.lower[i], limits.upper[i]))
            .collect(),
        gripper: q.gripper.clamp(0.0, 1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn assert_close(a: f64, b: f64) {
        assert!((a - b).abs() < 1e-12, "{a} != {b}");
    }

    #[test]
    fn single_joint_identity() {
        let dh = DhTable::new(vec![DhRow::new(0.0, 0.0, 0.0, 0.0)]).unwrap();
        let pose = forward_kinematics(&dh, &JointVector::zeros(1)).unwrap();
        assert_eq!(pose.position, [0.0; 3]);
        for i in 0..3 {
            for j in 0..3 {
                assert_close(pose.orientation[i][j], if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn quarter_turn_unit_link() {
        let dh = DhTable::new(vec![DhRow::new(1.0, 0.0, 0.0, 0.0)]).unwrap();
        let q = JointVector::from_q(vec![FRAC_PI_2]).unwrap();
        let p = forward_kinematics(&dh, &q).unwrap().position;
        assert_close(p[0], 0.0);
        assert_close(p[1], 1.0);
        assert_close(p[2], 0.0);
    }

    #[test]
    fn fk_rejects_wrong_dimension() {
        let dh = ur5();
        assert!(matches!(
            forward_kinematics(&dh, &JointVector::zeros(5)),
            Err(Error::Dimension {
                expected: 6,
                got: 5
            })
        ));
    }

    #[test]
    fn scale_identity_and_definition() {
        let dh = DhTable::new(vec![DhRow::new(1.0, 0.3, 2.0, 0.1)]).unwrap();
        assert_eq!(scale_dh(&dh, 1.0).unwrap(), dh);
        let half = scale_dh(&dh, 0.5).unwrap();
        assert_eq!(half.rows()[0], DhRow::new(0.5, 0.3, 1.0, 0.1));
        assert!(scale_dh(&dh, 0.0).is_err());
        assert!(scale_dh(&dh, -2.0).is_err());
    }

    #[test]
    fn clamp_examples() {
        let limits = JointLimits::symmetric(2, std::f64::consts::PI, 1.0).unwrap();
        let inside = JointVector::new(vec![0.5, -0.5], 0.3).unwrap();
        assert_eq!(clamp_to_limits(&inside, &limits).unwrap(), inside);
        let wild = JointVector {
            q: vec![10.0, -10.0],
            gripper: 1.5,
        };
        let c = clamp_to_limits(&wild, &limits).unwrap();
        assert_eq!(c.q, vec![std::f64::consts::PI, -std::f64::consts::PI]);
        assert_eq!(c.gripper, 1.0);
        assert!(clamp_to_limits(&JointVector::zeros(3), &limits).is_err());
    }

    #[test]
    fn dh_parse_errors_cite_lines() {
        let err = DhTable::parse("# comment\n0 0 0 0\n0 0 zero 0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = DhTable::parse("0 0 0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
        assert!(DhTable::parse("# nothing\n").is_err());
    }

    #[test]
    fn dh_text_round_trip() {
        let dh = ur5();
        assert_eq!(DhTable::parse(&dh.to_text()).unwrap(), dh);
    }

    #[test]
    fn limits_validation() {
        assert!(JointLimits::new(vec![1.0], vec![0.0], vec![1.0], 1.0).is_err());
        assert!(JointLimits::new(vec![0.0], vec![1.0], vec![0.0], 1.0).is_err());
        assert!(JointLimits::new(vec![0.0], vec![1.0, 2.0], vec![1.0], 1.0).is_err());
    }

    #[test]
    fn joint_vector_validation() {
        assert!(JointVector::new(vec![f64::NAN], 0.0).is_err());
        assert!(JointVector::new(vec![0.0], 1.2).is_err());
        let a = JointVector::new(vec![0.0, 1.0], 0.5).unwrap();
        let b = JointVector::new(vec![0.1, 0.7], 0.4).unwrap();
        assert!((a.max_abs_diff(&b) - 0.3).abs() < 1e-12);
    }
}
