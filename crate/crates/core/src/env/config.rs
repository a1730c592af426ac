use serde::{Deserialize, Serialize};

/// Geometry, physics, reward coefficients and rendering for [`super::BallInCup`].
///
/// Lengths in metres, times in seconds. The cup frame has its origin at the
/// centre of the cup base, which is also where the string is anchored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub string_length: f64,
    pub ball_radius: f64,
    pub ball_mass: f64,
    pub cup_radius: f64,
    pub cup_height: f64,
    pub gravity: f64,

    /// Control period; observations and actions run at `1 / control_dt` Hz.
    pub control_dt: f64,
    pub substeps: usize,
    /// Time constant of the cup velocity servo.
    pub cup_velocity_tau: f64,
    /// Filtered action `±1` maps to `±max_velocity` m/s.
    pub max_velocity: f64,
    pub filter_cutoff_hz: f64,

    pub workspace_x: [f64; 2],
    pub workspace_z: [f64; 2],
    pub start_position: [f64; 2],
    /// Half-width of the uniform initial swing angle, radians.
    pub reset_angle: f64,

    /// Ball is "near max height" above `string_length - max_height_margin`.
    pub max_height_margin: f64,
    /// Length scale of the shaped distance-to-opening reward.
    pub opening_distance_scale: f64,
    pub shaped_height_gain: f64,
    pub swing_up_sigma: f64,
    pub velocity_penalty: f64,

    pub render_size: usize,
    /// World-space centre of the square camera viewport.
    pub view_center: [f64; 2],
    pub view_half_extent: f64,

    pub scaling: ObservationScaling,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            string_length: 0.40,
            ball_radius: 0.025,
            ball_mass: 0.01,
            cup_radius: 0.10,
            cup_height: 0.16,
            gravity: 9.81,
            control_dt: 0.05,
            substeps: 20,
            cup_velocity_tau: 0.02,
            max_velocity: 2.0,
            filter_cutoff_hz: 0.5,
            workspace_x: [-0.5, 0.5],
            workspace_z: [0.0, 0.8],
            start_position: [0.0, 0.5],
            reset_angle: 0.05,
            max_height_margin: 0.05,
            opening_distance_scale: 0.2,
            shaped_height_gain: 7.5,
            swing_up_sigma: 0.09,
            velocity_penalty: 0.1,
            render_size: 32,
            view_center: [0.0, 0.4],
            view_half_extent: 0.85,
            scaling: ObservationScaling::default(),
        }
    }
}

impl EnvConfig {
    pub fn substep_dt(&self) -> f64 {
        self.control_dt / self.substeps as f64
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("string_length", self.string_length),
            ("ball_radius", self.ball_radius),
            ("ball_mass", self.ball_mass),
            ("cup_radius", self.cup_radius),
            ("cup_height", self.cup_height),
            ("control_dt", self.control_dt),
            ("cup_velocity_tau", self.cup_velocity_tau),
            ("max_velocity", self.max_velocity),
            ("filter_cutoff_hz", self.filter_cutoff_hz),
            ("opening_distance_scale", self.opening_distance_scale),
            ("swing_up_sigma", self.swing_up_sigma),
            ("view_half_extent", self.view_half_extent),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.substeps == 0 || self.render_size < 4 {
            return Err("substeps must be positive and render_size at least 4".into());
        }
        if self.ball_radius >= self.cup_radius {
            return Err("ball must fit in the cup".into());
        }
        for (name, r) in [
            ("workspace_x", self.workspace_x),
            ("workspace_z", self.workspace_z),
        ] {
            if r[0].partial_cmp(&r[1]) != Some(std::cmp::Ordering::Less) {
                return Err(format!("{name} must be an increasing interval"));
            }
        }
        let [x, z] = self.start_position;
        if x < self.workspace_x[0]
            || x > self.workspace_x[1]
            || z < self.workspace_z[0]
            || z > self.workspace_z[1]
        {
            return Err("start_position lies outside the workspace".into());
        }
        Ok(())
    }
}

/// Fixed affine input normalisation, `(raw - offset) * scale` per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationScaling {
    pub proprio_offset: [f64; 8],
    pub proprio_scale: [f64; 8],
    pub features_offset: [f64; 8],
    pub features_scale: [f64; 8],
}

impl Default for ObservationScaling {
    fn default() -> Self {
        Self {
            // cup x, z | cup vx, vz | previous action | filter state
            proprio_offset: [0.0, 0.4, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            proprio_scale: [2.5, 2.5, 0.5, 0.5, 1.0, 1.0, 1.0, 1.0],
            // ball in cup frame | ball velocity | cup position | cup velocity
            features_offset: [0.0, -0.2, 0.0, 0.0, 0.0, 0.4, 0.0, 0.0],
            features_scale: [2.5, 2.5, 0.25, 0.25, 2.5, 2.5, 0.5, 0.5],
        }
    }
}
