//! Synthetic geometric environment: base station, single-bounce reflectors
//! and vehicle passages inside position/heading regions.
//!
//! World frame: x east, y north, z up. Headings and orientations are
//! counter-clockwise from +x. A local frame points its broadside along the
//! heading; azimuth is measured from broadside in the horizontal plane and
//! elevation from the horizontal. The vehicle transmits, so departure
//! directions are taken at the vehicle and arrival directions at the base
//! station.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{Direction, PathSet};
use crate::error::{invalid, Result};

pub type Point3 = [f64; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub bs_position: Point3,
    pub bs_orientation: f64,
    #[serde(default)]
    pub reflectors: Vec<Point3>,
    pub pathloss_exponent: f64,
    pub los_enabled: bool,
}

impl Environment {
    pub fn validate(&self) -> Result<()> {
        if !self.los_enabled && self.reflectors.is_empty() {
            return Err(invalid("environment has no propagation path"));
        }
        for r in &self.reflectors {
            if dist(r, &self.bs_position) < 1e-9 {
                return Err(invalid("reflector coincides with the base station"));
            }
        }
        if !self.pathloss_exponent.is_finite() {
            return Err(invalid("pathloss exponent must be finite"));
        }
        Ok(())
    }

    pub fn path_count(&self) -> usize {
        self.reflectors.len() + usize::from(self.los_enabled)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MvRegion {
    pub center: Point3,
    pub heading: f64,
    pub radius: f64,
}

impl MvRegion {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(invalid("region radius must be positive"));
        }
        Ok(())
    }

    pub fn center_pose(&self) -> VehiclePose {
        VehiclePose { position: self.center, heading: self.heading }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehiclePose {
    pub position: Point3,
    pub heading: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleMode {
    /// Angles evaluated at the region center for every passage.
    FrozenAtCenter,
    /// Angles evaluated at each jittered pose.
    PerPose,
}

fn dist(a: &Point3, b: &Point3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y <= -PI {
        y + 2.0 * PI
    } else {
        y
    }
}

/// Direction of `to - from` in a local frame rotated by `heading`.
pub fn local_direction(from: &Point3, to: &Point3, heading: f64) -> Result<Direction> {
    let (dx, dy, dz) = (to[0] - from[0], to[1] - from[1], to[2] - from[2]);
    let horiz = dx.hypot(dy);
    if horiz == 0.0 && dz == 0.0 {
        return Err(invalid("coincident points have no direction"));
    }
    let az = if horiz == 0.0 { 0.0 } else { wrap_angle(dy.atan2(dx) - heading) };
    let el = dz.atan2(horiz);
    Ok(Direction::new(az, el))
}

/// Uniform position on the ground disk of the region and a jittered heading.
pub fn sample_passage<R: Rng + ?Sized>(region: &MvRegion, jitter_heading: f64, rng: &mut R) -> VehiclePose {
    let u: f64 = rng.random();
    let v: f64 = rng.random();
    let w: f64 = rng.random();
    let r = region.radius * u.sqrt();
    let phi = 2.0 * PI * v;
    let position = [
        region.center[0] + r * phi.cos(),
        region.center[1] + r * phi.sin(),
        region.center[2],
    ];
    let heading = region.heading + jitter_heading * (2.0 * w - 1.0);
    VehiclePose { position, heading }
}

/// Path set seen by a vehicle: line of sight first, then one path per
/// reflector in configuration order.
pub fn geometry_to_paths(env: &Environment, pose: &VehiclePose, mode: AngleMode, region: &MvRegion) -> Result<PathSet> {
    env.validate()?;
    let pose = match mode {
        AngleMode::FrozenAtCenter => region.center_pose(),
        AngleMode::PerPose => *pose,
    };
    let ms = pose.position;
    let bs = env.bs_position;
    let mut aod = Vec::with_capacity(env.path_count());
    let mut aoa = Vec::with_capacity(env.path_count());
    let mut raw = Vec::with_capacity(env.path_count());
    if env.los_enabled {
        aod.push(local_direction(&ms, &bs, pose.heading)?);
        aoa.push(local_direction(&bs, &ms, env.bs_orientation)?);
        raw.push(dist(&ms, &bs).powf(-env.pathloss_exponent));
    }
    for r in &env.reflectors {
        aod.push(local_direction(&ms, r, pose.heading)?);
        aoa.push(local_direction(&bs, r, env.bs_orientation)?);
        raw.push((dist(&ms, r) + dist(r, &bs)).powf(-env.pathloss_exponent));
    }
    PathSet::from_raw_powers(aod, aoa, raw)
}

/// Named scenario with its regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub environment: Environment,
    pub regions: Vec<MvRegion>,
}

/// Three paths (line of sight and two reflectors), about 60 m from the base
/// station, region radius 2 m.
pub fn preset_s1() -> Scenario {
    Scenario {
        environment: Environment {
            bs_position: [0.0, 0.0, 6.0],
            bs_orientation: 0.0,
            reflectors: vec![[30.0, 45.0, 8.0], [70.0, -10.0, 5.0]],
            pathloss_exponent: 2.0,
            los_enabled: true,
        },
        regions: vec![MvRegion { center: [55.0, 25.0, 1.5], heading: PI, radius: 2.0 }],
    }
}

/// Line of sight only, about 8 m from the base station, region radius 0.5 m.
pub fn preset_s2() -> Scenario {
    Scenario {
        environment: Environment {
            bs_position: [0.0, 0.0, 6.0],
            bs_orientation: 0.0,
            reflectors: vec![],
            pathloss_exponent: 2.0,
            los_enabled: true,
        },
        regions: vec![MvRegion { center: [6.5, 3.0, 1.5], heading: PI, radius: 0.5 }],
    }
}

pub fn preset(name: &str) -> Result<Scenario> {
    match name.to_ascii_lowercase().as_str() {
        "s1" => Ok(preset_s1()),
        "s2" => Ok(preset_s2()),
        other => Err(invalid(format!("unknown scenario preset '{other}'"))),
    }
}
