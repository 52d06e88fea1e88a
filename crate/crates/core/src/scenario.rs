//! Driving scenes, the fixed kinematics of the cyclist-overtaking use case,
//! the three preset scenarios and the full-factorial context grid.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::LengthRegime;

pub const CYCLIST_SPEED_KMH: f64 = 13.0;
pub const SPEED_LIMIT_KMH: f64 = 50.0;
pub const LONGITUDINAL_DISTANCE_M: f64 = 10.0;
pub const LANE_WIDTH_M: f64 = 3.0;
pub const VEHICLE_WIDTH_M: f64 = 1.8;
pub const CYCLIST_LATERAL_OFFSET_M: f64 = 2.5;
/// Following time used by all three presets.
pub const PRESET_FOLLOWING_S: f64 = 24.0;
/// Time-to-collision of the oncoming vehicle in the Oncoming preset.
pub const PRESET_ONCOMING_TTC_S: f64 = 8.5;
/// The ego vehicle trails the cyclist, so it travels at the cyclist's speed
/// unless the experiment overrides it.
pub const DEFAULT_EGO_SPEED_KMH: f64 = CYCLIST_SPEED_KMH;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ScenarioId {
    Baseline,
    Oncoming,
    Behind,
    Custom(String),
}

impl ScenarioId {
    pub const PRESETS: [ScenarioId; 3] =
        [ScenarioId::Baseline, ScenarioId::Oncoming, ScenarioId::Behind];

    pub fn as_str(&self) -> &str {
        match self {
            ScenarioId::Baseline => "baseline",
            ScenarioId::Oncoming => "oncoming",
            ScenarioId::Behind => "behind",
            ScenarioId::Custom(name) => name,
        }
    }

    /// Human label used in report tables.
    pub fn label(&self) -> String {
        match self {
            ScenarioId::Baseline => "Scenario 1 (None)".to_owned(),
            ScenarioId::Oncoming => "Scenario 2 (Oncoming)".to_owned(),
            ScenarioId::Behind => "Scenario 3 (Follow)".to_owned(),
            ScenarioId::Custom(name) => name.clone(),
        }
    }

    pub fn is_preset(&self) -> bool {
        !matches!(self, ScenarioId::Custom(_))
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let trimmed = s.trim();
        if trimmed.is_empty() {
            return Err(Error::Config("empty scenario id".into()));
        }
        Ok(match trimmed.to_ascii_lowercase().as_str() {
            "baseline" | "1" | "scenario1" => ScenarioId::Baseline,
            "oncoming" | "2" | "scenario2" => ScenarioId::Oncoming,
            "behind" | "3" | "scenario3" => ScenarioId::Behind,
            _ => ScenarioId::Custom(trimmed.to_owned()),
        })
    }
}

impl TryFrom<String> for ScenarioId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ScenarioId> for String {
    fn from(id: ScenarioId) -> String {
        id.as_str().to_owned()
    }
}

/// Opaque reference to one visual observation. Never decoded by the
/// framework; the gateway resolves it when a request is dispatched.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VisualAsset(pub PathBuf);

impl VisualAsset {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        VisualAsset(path.into())
    }

    pub fn path(&self) -> &std::path::Path {
        &self.0
    }
}

pub fn default_visuals(id: &ScenarioId) -> Result<Vec<VisualAsset>> {
    match id {
        // Baseline and Behind share one dashboard image.
        ScenarioId::Baseline | ScenarioId::Behind => {
            Ok(vec![VisualAsset::new("assets/dashboard.png")])
        }
        ScenarioId::Oncoming => Ok(vec![
            VisualAsset::new("assets/oncoming_1.png"),
            VisualAsset::new("assets/oncoming_2.png"),
        ]),
        ScenarioId::Custom(name) => Err(Error::Config(format!(
            "unknown scenario '{name}': only baseline, oncoming and behind have presets"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableContext {
    /// `None` means no oncoming vehicle at all, which is not the same as a
    /// zero or infinite time-to-collision.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ttc_oncoming: Option<f64>,
    pub vehicle_behind: bool,
    #[serde(default)]
    pub passenger_urgency: bool,
    pub following_time: f64,
    pub cyclist_speed: f64,
    pub ego_speed: f64,
    pub speed_limit: f64,
    pub longitudinal_distance: f64,
    pub lane_width: f64,
    pub vehicle_width: f64,
    pub cyclist_lateral_offset: f64,
}

impl ObservableContext {
    /// Context with the fixed kinematics of the use case and no oncoming
    /// vehicle, no vehicle behind and no urgency.
    pub fn with_constants(following_time: f64) -> Self {
        ObservableContext {
            ttc_oncoming: None,
            vehicle_behind: false,
            passenger_urgency: false,
            following_time,
            cyclist_speed: CYCLIST_SPEED_KMH,
            ego_speed: DEFAULT_EGO_SPEED_KMH,
            speed_limit: SPEED_LIMIT_KMH,
            longitudinal_distance: LONGITUDINAL_DISTANCE_M,
            lane_width: LANE_WIDTH_M,
            vehicle_width: VEHICLE_WIDTH_M,
            cyclist_lateral_offset: CYCLIST_LATERAL_OFFSET_M,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("following_time", self.following_time),
            ("cyclist_speed", self.cyclist_speed),
            ("ego_speed", self.ego_speed),
            ("speed_limit", self.speed_limit),
            ("longitudinal_distance", self.longitudinal_distance),
            ("lane_width", self.lane_width),
            ("vehicle_width", self.vehicle_width),
            ("cyclist_lateral_offset", self.cyclist_lateral_offset),
        ];
        for (name, value) in finite {
            if !value.is_finite() {
                return Err(Error::Validation(format!("{name} must be finite")));
            }
        }
        if self.following_time <= 0.0 {
            return Err(Error::Validation("following_time must be > 0".into()));
        }
        for (name, value) in [
            ("cyclist_speed", self.cyclist_speed),
            ("ego_speed", self.ego_speed),
            ("speed_limit", self.speed_limit),
        ] {
            if value < 0.0 {
                return Err(Error::Validation(format!("{name} must be >= 0")));
            }
        }
        if self.longitudinal_distance <= 0.0 {
            return Err(Error::Validation("longitudinal_distance must be > 0".into()));
        }
        if let Some(ttc) = self.ttc_oncoming {
            if !(ttc.is_finite() && ttc > 0.0) {
                return Err(Error::Validation(
                    "ttc_oncoming must be > 0 when present".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scenario_id: ScenarioId,
    pub visuals: Vec<VisualAsset>,
    pub context: ObservableContext,
}

/// Returns one of the three fixed scene instances.
pub fn preset_scene(id: &ScenarioId) -> Result<Scene> {
    let visuals = default_visuals(id)?;
    let mut context = ObservableContext::with_constants(PRESET_FOLLOWING_S);
    match id {
        ScenarioId::Baseline => {}
        ScenarioId::Oncoming => context.ttc_oncoming = Some(PRESET_ONCOMING_TTC_S),
        ScenarioId::Behind => context.vehicle_behind = true,
        ScenarioId::Custom(_) => unreachable!("rejected by default_visuals"),
    }
    Ok(Scene {
        scenario_id: id.clone(),
        visuals,
        context,
    })
}

/// Level lists of the full-factorial design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextGrid {
    pub ttc_levels: Vec<f64>,
    pub behind_levels: Vec<bool>,
    pub urgency_levels: Vec<bool>,
    pub following_levels: Vec<f64>,
    pub length_levels: Vec<bool>,
}

impl Default for ContextGrid {
    fn default() -> Self {
        ContextGrid {
            ttc_levels: vec![1.7, 3.4, 5.1, 6.8, 8.5],
            behind_levels: vec![false, true],
            urgency_levels: vec![false, true],
            following_levels: vec![12.0, 18.0, 24.0],
            length_levels: vec![false, true],
        }
    }
}

impl ContextGrid {
    pub fn cell_count(&self) -> usize {
        self.ttc_levels.len()
            * self.behind_levels.len()
            * self.urgency_levels.len()
            * self.following_levels.len()
            * self.length_levels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let lists = [
            ("ttc_levels", self.ttc_levels.len()),
            ("behind_levels", self.behind_levels.len()),
            ("urgency_levels", self.urgency_levels.len()),
            ("following_levels", self.following_levels.len()),
            ("length_levels", self.length_levels.len()),
        ];
        for (name, len) in lists {
            if len == 0 {
                return Err(Error::Config(format!("grid level list '{name}' is empty")));
            }
        }
        if let Some(bad) = self.ttc_levels.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return Err(Error::Config(format!("ttc level {bad} must be > 0")));
        }
        if let Some(bad) = self
            .following_levels
            .iter()
            .find(|f| !(f.is_finite() && **f > 0.0))
        {
            return Err(Error::Config(format!("following level {bad} must be > 0")));
        }
        Ok(())
    }

    /// (min, max) of the ttc levels.
    pub fn ttc_range(&self) -> (f64, f64) {
        min_max(&self.ttc_levels)
    }

    /// (min, max) of the following-time levels.
    pub fn following_range(&self) -> (f64, f64) {
        min_max(&self.following_levels)
    }
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(*v), hi.max(*v))
        })
}

/// One cell of the grid, before model and strategy are attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub ttc: f64,
    pub behind: bool,
    pub urgency: bool,
    pub following: f64,
    pub length: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub point: GridPoint,
    pub scene: Scene,
    pub length: LengthRegime,
}

/// Cartesian product of the grid, nested in the order
/// ttc → behind → urgency → following → length, each in configured level order.
pub fn enumerate_grid(grid: &ContextGrid, base: &Scene) -> Result<Vec<GridCell>> {
    grid.validate()?;
    let mut cells = Vec::with_capacity(grid.cell_count());
    for &ttc in &grid.ttc_levels {
        for &behind in &grid.behind_levels {
            for &urgency in &grid.urgency_levels {
                for &following in &grid.following_levels {
                    for &length in &grid.length_levels {
                        let mut scene = base.clone();
                        scene.context.ttc_oncoming = Some(ttc);
                        scene.context.vehicle_behind = behind;
                        scene.context.passenger_urgency = urgency;
                        scene.context.following_time = following;
                        cells.push(GridCell {
                            point: GridPoint {
                                ttc,
                                behind,
                                urgency,
                                following,
                                length,
                            },
                            scene,
                            length: LengthRegime::from_flag(length),
                        });
                    }
                }
            }
        }
    }
    Ok(cells)
}
