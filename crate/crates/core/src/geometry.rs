//! Deployment layout, path loss and nominal angles.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::rng::{purpose, substream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn at_height(&self, z: f64) -> Point3 {
        Point3 { x: self.x, y: self.y, z }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn ground(&self) -> Point2 {
        Point2 { x: self.x, y: self.y }
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

/// One random deployment: AP positions, the RP grid and the test points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub ap_positions: Vec<Point3>,
    /// RP coordinates, row-major with x varying fastest.
    pub rp_positions: Vec<Point2>,
    pub test_points: Vec<Point2>,
    pub config: ScenarioConfig,
}

impl Scenario {
    pub fn num_aps(&self) -> usize {
        self.ap_positions.len()
    }

    pub fn num_rps(&self) -> usize {
        self.rp_positions.len()
    }

    /// Pretty-printed JSON dump for debugging.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Cell centres of a uniform `side × side` partition of the square area.
pub fn rp_grid(area_side_m: f64, side: usize) -> Vec<Point2> {
    let cell = area_side_m / side as f64;
    let mut out = Vec::with_capacity(side * side);
    for j in 0..side {
        for i in 0..side {
            out.push(Point2::new((i as f64 + 0.5) * cell, (j as f64 + 0.5) * cell));
        }
    }
    out
}

/// Draws APs and test points uniformly over the area and lays the RPs on the
/// grid. The result depends only on `config` (including its seed).
pub fn generate_scenario(config: &ScenarioConfig, num_test_points: usize) -> Result<Scenario> {
    config.validate()?;
    let side = config.area_side_m;
    let mut rng = substream(config.seed, &[purpose::SCENARIO]);
    let ap_positions = (0..config.num_aps)
        .map(|_| Point3 {
            x: rng.random_range(0.0..side),
            y: rng.random_range(0.0..side),
            z: config.ap_height_m,
        })
        .collect();
    let test_points = (0..num_test_points)
        .map(|_| Point2::new(rng.random_range(0.0..side), rng.random_range(0.0..side)))
        .collect();
    Ok(Scenario {
        ap_positions,
        rp_positions: rp_grid(side, config.grid_side()),
        test_points,
        config: config.clone(),
    })
}

/// Log-distance path loss (dB) between an AP and a UE on the ground plane,
/// reference distance 1 m, shadowing excluded.
pub fn pathloss_db(ap: &Point3, loc: &Point2, config: &ScenarioConfig) -> Result<f64> {
    let d = ap.distance(&loc.at_height(config.ue_height_m));
    if d <= 0.0 {
        return Err(Error::Domain(format!(
            "UE at ({}, {}) coincides with the AP",
            loc.x, loc.y
        )));
    }
    Ok(config.pathloss_ref_db - 10.0 * config.pathloss_exp * d.log10())
}

/// Wraps an angle in degrees to (−180, 180].
pub fn wrap_deg(angle: f64) -> f64 {
    let mut a = angle % 360.0;
    if a <= -180.0 {
        a += 360.0;
    } else if a > 180.0 {
        a -= 360.0;
    }
    a
}

/// Four-quadrant azimuth from the AP to `loc`, degrees in (−180, 180].
pub fn nominal_aoa_deg(ap: &Point2, loc: &Point2) -> Result<f64> {
    let dx = loc.x - ap.x;
    let dy = loc.y - ap.y;
    if dx == 0.0 && dy == 0.0 {
        return Err(Error::Domain("AOA undefined for coincident ground points".into()));
    }
    Ok(wrap_deg(dy.atan2(dx).to_degrees()))
}
