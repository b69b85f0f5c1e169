//! Per-farm aligned power series and the transforms that feed the models:
//! min-max normalization, date splits, and sliding windows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Farm metadata row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FarmMeta {
    pub farm_id: String,
    pub latitude: f64,
    pub longitude: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<f64>,
}

impl FarmMeta {
    pub fn validate(&self) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.latitude) {
            return Err(Error::invalid(format!(
                "farm `{}`: latitude {} outside [-90, 90]",
                self.farm_id, self.latitude
            )));
        }
        if !(-180.0..=180.0).contains(&self.longitude) {
            return Err(Error::invalid(format!(
                "farm `{}`: longitude {} outside [-180, 180]",
                self.farm_id, self.longitude
            )));
        }
        Ok(())
    }
}

/// Min-max scaler fitted on one series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub min: f64,
    pub max: f64,
}

impl Scaler {
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.min) / (self.max - self.min)
    }

    pub fn invert(&self, y: f64) -> f64 {
        y * (self.max - self.min) + self.min
    }
}

/// Equispaced power series for one farm. Timestamps are epoch seconds
/// derived from `start + i * step`, which makes the equispacing invariant
/// structural rather than checked.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesFrame {
    pub farm_id: String,
    pub start: i64,
    pub step: i64,
    pub power: Vec<f64>,
    pub scaler: Option<Scaler>,
}

impl TimeSeriesFrame {
    pub fn new(farm_id: impl Into<String>, start: i64, step: i64, power: Vec<f64>) -> Result<Self> {
        if step <= 0 {
            return Err(Error::invalid(format!("step must be positive, got {step}")));
        }
        let farm_id = farm_id.into();
        if power.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("power series of `{farm_id}`")));
        }
        Ok(TimeSeriesFrame {
            farm_id,
            start,
            step,
            power,
            scaler: None,
        })
    }

    pub fn len(&self) -> usize {
        self.power.len()
    }

    pub fn is_empty(&self) -> bool {
        self.power.is_empty()
    }

    pub fn timestamp(&self, i: usize) -> i64 {
        self.start + self.step * i as i64
    }

    pub fn last_timestamp(&self) -> i64 {
        self.timestamp(self.len().saturating_sub(1))
    }

    pub fn timestamps(&self) -> impl Iterator<Item = i64> + '_ {
        (0..self.len()).map(|i| self.timestamp(i))
    }
}

/// Fit a min-max scaler on the frame and return the normalized frame plus
/// the scaler. Constant series have no defined scaler and are rejected.
pub fn normalize_minmax(frame: &TimeSeriesFrame) -> Result<(TimeSeriesFrame, Scaler)> {
    let min = frame.power.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = frame
        .power
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    if frame.len() < 2 || !(min < max) {
        return Err(Error::ConstantSeries(frame.farm_id.clone()));
    }
    let scaler = Scaler { min, max };
    Ok((apply_scaler(frame, &scaler), scaler))
}

/// Transform a frame with an existing scaler (e.g. one fitted on the
/// training split). Values outside the fitted range map outside [0, 1];
/// they are not clamped.
pub fn apply_scaler(frame: &TimeSeriesFrame, scaler: &Scaler) -> TimeSeriesFrame {
    let mut out = frame.clone();
    out.power.iter_mut().for_each(|v| *v = scaler.apply(*v));
    out.scaler = Some(*scaler);
    out
}

/// Invert a scaler transform.
pub fn invert_scaler(frame: &TimeSeriesFrame, scaler: &Scaler) -> TimeSeriesFrame {
    let mut out = frame.clone();
    out.power.iter_mut().for_each(|v| *v = scaler.invert(*v));
    out.scaler = None;
    out
}

/// Split into (train, test): train strictly before `boundary`, test at or
/// after. The boundary must lie within the frame's timestamp range.
pub fn split_by_date(
    frame: &TimeSeriesFrame,
    boundary: i64,
) -> Result<(TimeSeriesFrame, TimeSeriesFrame)> {
    if frame.is_empty() {
        return Err(Error::FrameTooShort {
            farm_id: frame.farm_id.clone(),
            required: 1,
            got: 0,
        });
    }
    let first = frame.timestamp(0);
    let last = frame.last_timestamp();
    if boundary < first || boundary > last {
        return Err(Error::BoundaryOutOfRange {
            boundary,
            first,
            last,
        });
    }
    // Index of the first element at or after the boundary.
    let cut = frame
        .timestamps()
        .position(|t| t >= boundary)
        .unwrap_or(frame.len());
    let mut train = TimeSeriesFrame::new(
        frame.farm_id.clone(),
        frame.start,
        frame.step,
        frame.power[..cut].to_vec(),
    )?;
    let mut test = TimeSeriesFrame::new(
        frame.farm_id.clone(),
        frame.timestamp(cut),
        frame.step,
        frame.power[cut..].to_vec(),
    )?;
    train.scaler = frame.scaler;
    test.scaler = frame.scaler;
    Ok((train, test))
}

/// One supervised sample: a length-W input window and the target `horizon`
/// steps past the window's last element.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub farm_id: String,
    pub window: Vec<f64>,
    pub target: f64,
    /// Index (into the source frame) of the window's last element.
    pub t_index: usize,
}

/// All complete (window, target) pairs of the frame. Sample count is
/// `len - window - horizon + 1`; sample `i` covers `[i, i+window)` and
/// targets `power[i + window - 1 + horizon]`.
pub fn sliding_windows(
    frame: &TimeSeriesFrame,
    window: usize,
    horizon: usize,
) -> Result<Vec<WindowSample>> {
    if window == 0 || horizon == 0 {
        return Err(Error::invalid(
            "window length and horizon must be positive",
        ));
    }
    let required = window + horizon;
    if frame.len() < required {
        return Err(Error::FrameTooShort {
            farm_id: frame.farm_id.clone(),
            required,
            got: frame.len(),
        });
    }
    let count = frame.len() - window - horizon + 1;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        out.push(WindowSample {
            farm_id: frame.farm_id.clone(),
            window: frame.power[i..i + window].to_vec(),
            target: frame.power[i + window - 1 + horizon],
            t_index: i + window - 1,
        });
    }
    Ok(out)
}
