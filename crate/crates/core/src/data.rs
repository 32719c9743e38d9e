//! Storm tracks: CSV ingestion, a synthetic generator, CLIPER-style
//! windowing, chronological splits, and the great-circle error metric.
//!
//! Track CSV header (exact): `storm_id,timestamp,lat,lon,wind,pressure`.
//! Timestamps are ISO-8601 (`2015-07-01T06:00:00`, optional trailing `Z`),
//! wind in m/s, pressure in hPa.

use std::collections::HashMap;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecaster::ForecastSample;

pub const EARTH_RADIUS_KM: f64 = 6371.0;
pub const CSV_HEADER: [&str; 6] = ["storm_id", "timestamp", "lat", "lon", "wind", "pressure"];
const TIME_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

// Per-step feature normalisation.
pub const LAT_SCALE: f64 = 100.0;
pub const LON_SCALE: f64 = 200.0;
pub const DELTA_SCALE: f64 = 1.0;
pub const WIND_SCALE: f64 = 100.0;
pub const PRESSURE_CENTER: f64 = 1000.0;
pub const PRESSURE_SCALE: f64 = 100.0;
/// `(lat, lon, dlat, dlon, wind, pressure)`.
pub const FEATURES_PER_STEP: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }
}

/// Wrap a longitude difference into `(-180, 180]`.
pub fn wrap_lon(delta: f64) -> f64 {
    let mut d = delta % 360.0;
    if d > 180.0 {
        d -= 360.0;
    } else if d <= -180.0 {
        d += 360.0;
    }
    d
}

/// Central angle between the points times `radius_km`.
///
/// Same angle as the spherical law of cosines, evaluated as
/// `atan2(|p1 x p2|, p1 . p2)` so it stays accurate near 0 and near
/// antipodes. Points are put in a fixed order first, which makes the
/// result exactly symmetric.
pub fn great_circle(p1: GeoPoint, p2: GeoPoint, radius_km: f64) -> f64 {
    let (a, b) = if (p1.lat, p1.lon) <= (p2.lat, p2.lon) { (p1, p2) } else { (p2, p1) };
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlambda = wrap_lon(b.lon - a.lon).to_radians();
    let (s1, c1) = phi1.sin_cos();
    let (s2, c2) = phi2.sin_cos();
    let (sl, cl) = dlambda.sin_cos();
    let x = c2 * sl;
    let y = c1 * s2 - s1 * c2 * cl;
    let dot = s1 * s2 + c1 * c2 * cl;
    radius_km * x.hypot(y).atan2(dot)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub time: NaiveDateTime,
    pub lat: f64,
    pub lon: f64,
    pub wind: f64,
    pub pressure: f64,
}

impl TrackPoint {
    pub fn position(&self) -> GeoPoint {
        GeoPoint::new(self.lat, self.lon)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if !(-90.0..=90.0).contains(&self.lat) {
            return Err(format!("latitude {} outside [-90, 90]", self.lat));
        }
        if !(-180.0..=180.0).contains(&self.lon) {
            return Err(format!("longitude {} outside [-180, 180]", self.lon));
        }
        if !self.wind.is_finite() || self.wind < 0.0 {
            return Err(format!("wind {} must be finite and >= 0", self.wind));
        }
        if !self.pressure.is_finite() || self.pressure <= 0.0 {
            return Err(format!("pressure {} must be finite and > 0", self.pressure));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub storm_id: String,
    pub points: Vec<TrackPoint>,
}

impl Track {
    pub fn new(storm_id: impl Into<String>, points: Vec<TrackPoint>) -> Result<Self> {
        let storm_id = storm_id.into();
        if points.is_empty() {
            return Err(Error::invalid(format!("storm {storm_id} has no points")));
        }
        for (i, p) in points.iter().enumerate() {
            p.validate()
                .map_err(|m| Error::invalid(format!("storm {storm_id} point {i}: {m}")))?;
        }
        if let Some(w) = points.windows(2).position(|w| w[1].time <= w[0].time) {
            return Err(Error::invalid(format!(
                "storm {storm_id}: timestamps not strictly increasing at point {}",
                w + 1
            )));
        }
        Ok(Self { storm_id, points })
    }

    pub fn start_year(&self) -> i32 {
        self.points[0].time.year()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn parse_time(s: &str) -> std::result::Result<NaiveDateTime, String> {
    let s = s.trim();
    let s = s.strip_suffix('Z').unwrap_or(s);
    NaiveDateTime::parse_from_str(s, TIME_FORMAT)
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M"))
        .map_err(|e| format!("bad timestamp `{s}`: {e}"))
}

pub fn format_time(t: &NaiveDateTime) -> String {
    format!("{}Z", t.format(TIME_FORMAT))
}

/// One track per storm id, in order of first appearance.
pub fn load_tracks(path: &Path) -> Result<Vec<Track>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tracks(&text, path)
}

pub fn parse_tracks(text: &str, origin: &Path) -> Result<Vec<Track>> {
    let perr = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| perr(1, e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(perr(1, format!("header must be `{}`", CSV_HEADER.join(","))));
    }

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<(usize, TrackPoint)>> = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            perr(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != CSV_HEADER.len() {
            return Err(perr(line, format!("expected 6 fields, got {}", record.len())));
        }
        let num = |i: usize| -> Result<f64> {
            record[i]
                .parse::<f64>()
                .map_err(|e| perr(line, format!("{}: {e}", CSV_HEADER[i])))
        };
        let point = TrackPoint {
            time: parse_time(&record[1]).map_err(|m| perr(line, m))?,
            lat: num(2)?,
            lon: num(3)?,
            wind: num(4)?,
            pressure: num(5)?,
        };
        point.validate().map_err(|m| perr(line, m))?;
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(perr(line, "empty storm_id".into()));
        }
        if !rows.contains_key(&id) {
            order.push(id.clone());
        }
        rows.entry(id).or_default().push((line, point));
    }

    order
        .into_iter()
        .map(|id| {
            let pts = rows.remove(&id).unwrap();
            if let Some(w) = pts.windows(2).find(|w| w[1].1.time <= w[0].1.time) {
                return Err(perr(w[1].0, format!("storm {id}: timestamp not after previous row")));
            }
            Track::new(id, pts.into_iter().map(|(_, p)| p).collect())
        })
        .collect()
}

pub fn write_tracks(path: &Path, tracks: &[Track]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let io = |e: csv::Error| Error::io(path, e.into());
    w.write_record(CSV_HEADER).map_err(io)?;
    for t in tracks {
        for p in &t.points {
            w.write_record([
                t.storm_id.clone(),
                format_time(&p.time),
                p.lat.to_string(),
                p.lon.to_string(),
                p.wind.to_string(),
                p.pressure.to_string(),
            ])
            .map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

const SYNTH_LAT: (f64, f64) = (5.0, 45.0);
const SYNTH_LON: (f64, f64) = (105.0, 160.0);
/// Per-step cap on each coordinate change, degrees.
const SYNTH_MAX_STEP_DEG: f64 = 2.0;
pub const SYNTH_FIRST_YEAR: i32 = 2000;
pub const SYNTH_LAST_YEAR: i32 = 2018;

/// Recurving western-Pacific tracks at 6-hour spacing.
///
/// Each storm drifts west-northwest and turns north-east as its eastward
/// acceleration takes over, with a seeded random walk on the velocity.
/// Start years are spread evenly over 2000..=2018 in storm order.
pub fn synth_tracks(seed: u64, count: usize, steps: usize) -> Vec<Track> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let years = (SYNTH_LAST_YEAR - SYNTH_FIRST_YEAR + 1) as usize;
    (0..count)
        .map(|i| {
            let year = SYNTH_FIRST_YEAR + (i * years / count.max(1)) as i32;
            let day = rng.gen_range(150..300);
            let start = NaiveDate::from_yo_opt(year, day)
                .unwrap()
                .and_hms_opt(6 * rng.gen_range(0..4), 0, 0)
                .unwrap();
            let mut lat = rng.gen_range(8.0..18.0);
            let mut lon = rng.gen_range(130.0..155.0);
            let mut vlat: f64 = rng.gen_range(0.15..0.45);
            let mut vlon: f64 = rng.gen_range(-1.1..-0.5);
            let alat = rng.gen_range(0.0..0.03);
            let alon = rng.gen_range(0.04..0.1);
            let peak = rng.gen_range(30.0..60.0);
            let points = (0..steps)
                .map(|t| {
                    let phase = std::f64::consts::PI * t as f64 / steps.max(2) as f64;
                    let wind = (15.0 + (peak - 15.0) * phase.sin() + rng.gen_range(-2.0..2.0)).max(0.0);
                    let point = TrackPoint {
                        time: start + Duration::hours(6 * t as i64),
                        lat,
                        lon,
                        wind,
                        pressure: 1010.0 - 1.5 * (wind - 15.0).max(0.0) + rng.gen_range(-1.0..1.0),
                    };
                    vlat += alat + rng.gen_range(-0.2..0.2);
                    vlon += alon + rng.gen_range(-0.2..0.2);
                    vlat = vlat.clamp(-SYNTH_MAX_STEP_DEG, SYNTH_MAX_STEP_DEG);
                    vlon = vlon.clamp(-SYNTH_MAX_STEP_DEG, SYNTH_MAX_STEP_DEG);
                    lat = (lat + vlat).clamp(SYNTH_LAT.0, SYNTH_LAT.1);
                    lon = (lon + vlon).clamp(SYNTH_LON.0, SYNTH_LON.1);
                    point
                })
                .collect();
            Track {
                storm_id: format!("SYN{year}-{i:04}"),
                points,
            }
        })
        .collect()
}

fn step_features(track: &Track, t: usize, out: &mut Vec<f64>) {
    let p = &track.points[t];
    let (dlat, dlon) = if t == 0 {
        (0.0, 0.0)
    } else {
        let q = &track.points[t - 1];
        (p.lat - q.lat, wrap_lon(p.lon - q.lon))
    };
    out.extend_from_slice(&[
        p.lat / LAT_SCALE,
        p.lon / LON_SCALE,
        dlat / DELTA_SCALE,
        dlon / DELTA_SCALE,
        p.wind / WIND_SCALE,
        (p.pressure - PRESSURE_CENTER) / PRESSURE_SCALE,
    ]);
}

/// Stride-1 windows. Features are the normalised per-step vectors of
/// `window` consecutive points (the first track point has zero deltas);
/// labels are the `horizon` future offsets from the last window point.
/// Tracks shorter than `window + horizon` give no samples.
pub fn make_windows(track: &Track, window: usize, horizon: usize) -> Vec<ForecastSample> {
    if window == 0 || horizon == 0 || track.len() < window + horizon {
        return Vec::new();
    }
    (0..=track.len() - window - horizon)
        .map(|start| {
            let last = start + window - 1;
            let mut features = Vec::with_capacity(window * FEATURES_PER_STEP);
            for t in start..=last {
                step_features(track, t, &mut features);
            }
            let o = &track.points[last];
            let label = (1..=horizon)
                .flat_map(|j| {
                    let f = &track.points[last + j];
                    [f.lat - o.lat, wrap_lon(f.lon - o.lon)]
                })
                .collect();
            ForecastSample {
                features,
                label,
                origin: (o.lat, o.lon),
            }
        })
        .collect()
}

/// Undo the position normalisation for step `step` of a window.
pub fn denormalize_position(features: &[f64], step: usize) -> GeoPoint {
    let base = step * FEATURES_PER_STEP;
    GeoPoint::new(features[base] * LAT_SCALE, features[base + 1] * LON_SCALE)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearRange {
    pub start: i32,
    pub end: i32,
}

impl YearRange {
    pub const fn new(start: i32, end: i32) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, year: i32) -> bool {
        (self.start..=self.end).contains(&year)
    }

    fn overlaps(&self, other: &YearRange) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

/// The conventional split: 2000-2014 train, 2015-2018 test.
pub const TRAIN_YEARS: YearRange = YearRange::new(2000, 2014);
pub const TEST_YEARS: YearRange = YearRange::new(2015, 2018);

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<Track>,
    pub test: Vec<Track>,
    /// Storms starting outside both ranges.
    pub dropped: usize,
}

/// Assign storms by start year.
pub fn split_by_year(tracks: &[Track], train: YearRange, test: YearRange) -> Result<Split> {
    if train.start > train.end || test.start > test.end {
        return Err(Error::invalid("year range start after end"));
    }
    if train.overlaps(&test) {
        return Err(Error::invalid(format!(
            "train years {}-{} overlap test years {}-{}",
            train.start, train.end, test.start, test.end
        )));
    }
    let mut split = Split {
        train: Vec::new(),
        test: Vec::new(),
        dropped: 0,
    };
    for t in tracks {
        let y = t.start_year();
        if train.contains(y) {
            split.train.push(t.clone());
        } else if test.contains(y) {
            split.test.push(t.clone());
        } else {
            split.dropped += 1;
        }
    }
    if split.dropped > 0 {
        log::warn!("{} storms outside both year ranges were dropped", split.dropped);
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> NaiveDateTime {
        parse_time(s).unwrap()
    }

    fn point(time: &str, lat: f64, lon: f64) -> TrackPoint {
        TrackPoint {
            time: t(time),
            lat,
            lon,
            wind: 30.0,
            pressure: 980.0,
        }
    }

    #[test]
    fn great_circle_identities() {
        let p = GeoPoint::new(23.5, 121.0);
        assert_eq!(great_circle(p, p, EARTH_RADIUS_KM), 0.0);
        let anti = great_circle(GeoPoint::new(0.0, 0.0), GeoPoint::new(0.0, 180.0), 6371.0);
        assert!((anti - std::f64::consts::PI * 6371.0).abs() < 1e-9);
        assert!((anti - 20015.086796).abs() < 1e-5);
        let quarter = great_circle(GeoPoint::new(0.0, 0.0), GeoPoint::new(0.0, 90.0), 6371.0);
        assert!((quarter - 10007.543398).abs() < 1e-5);
    }

    #[test]
    fn wrap_longitude() {
        assert_eq!(wrap_lon(190.0), -170.0);
        assert_eq!(wrap_lon(-180.0), 180.0);
        assert_eq!(wrap_lon(180.0), 180.0);
        assert_eq!(wrap_lon(-350.0), 10.0);
    }

    #[test]
    fn empty_file_is_empty_list() {
        assert!(parse_tracks("", Path::new("x.csv")).unwrap().is_empty());
    }

    #[test]
    fn rejects_bad_latitude_with_line() {
        let csv = "storm_id,timestamp,lat,lon,wind,pressure\n\
                   A,2014-07-01T00:00:00Z,20,130,30,990\n\
                   A,2014-07-01T06:00:00Z,95,130,30,990\n";
        match parse_tracks(csv, Path::new("x.csv")) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("latitude"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_wrong_header() {
        let csv = "id,timestamp,lat,lon,wind,pressure\n";
        assert!(matches!(
            parse_tracks(csv, Path::new("x.csv")),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn rejects_non_increasing_time() {
        let csv = "storm_id,timestamp,lat,lon,wind,pressure\n\
                   A,2014-07-01T06:00:00,20,130,30,990\n\
                   A,2014-07-01T06:00:00,21,130,30,990\n";
        assert!(matches!(
            parse_tracks(csv, Path::new("x.csv")),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn window_counts() {
        let pts: Vec<TrackPoint> = (0..7)
            .map(|i| point(&format!("2014-07-01T{:02}:00:00", i * 3), 10.0 + i as f64, 130.0))
            .collect();
        let track = Track::new("A", pts).unwrap();
        assert_eq!(make_windows(&track, 4, 3).len(), 1);
        assert_eq!(make_windows(&track, 4, 1).len(), 3);
        assert!(make_windows(&track, 5, 3).is_empty());
    }

    #[test]
    fn window_features_hand_computed() {
        let p = |time: &str, lat: f64, lon: f64, wind: f64, pressure: f64| TrackPoint {
            time: t(time),
            lat,
            lon,
            wind,
            pressure,
        };
        let track = Track::new(
            "F",
            vec![
                p("2015-08-01T00:00:00", 20.0, 130.0, 25.0, 990.0),
                p("2015-08-01T06:00:00", 21.0, 129.0, 30.0, 980.0),
                p("2015-08-01T12:00:00", 22.5, 128.5, 40.0, 960.0),
            ],
        )
        .unwrap();
        let w = make_windows(&track, 2, 1);
        assert_eq!(w.len(), 1);
        let expected = [
            0.2, 0.65, 0.0, 0.0, 0.25, -0.1, //
            0.21, 0.645, 1.0, -1.0, 0.3, -0.2,
        ];
        for (got, want) in w[0].features.iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        assert_eq!(w[0].label, vec![1.5, -0.5]);
        assert_eq!(w[0].origin, (21.0, 129.0));
    }

    #[test]
    fn split_conventions() {
        let mk = |id: &str, year: i32| {
            Track::new(id, vec![point(&format!("{year}-08-01T00:00:00"), 20.0, 130.0)]).unwrap()
        };
        let tracks = vec![mk("a", 2014), mk("b", 2015)];
        let s = split_by_year(&tracks, TRAIN_YEARS, TEST_YEARS).unwrap();
        assert_eq!((s.train.len(), s.test.len(), s.dropped), (1, 1, 0));

        let s = split_by_year(&[mk("c", 1999)], TRAIN_YEARS, TEST_YEARS).unwrap();
        assert_eq!(s.dropped, 1);

        let s = split_by_year(&[mk("a", 2001), mk("d", 2003)], TRAIN_YEARS, TEST_YEARS).unwrap();
        assert!(s.test.is_empty());

        assert!(split_by_year(&tracks, YearRange::new(2000, 2015), TEST_YEARS).is_err());
    }

    #[test]
    fn synth_deterministic_and_valid() {
        let a = synth_tracks(42, 30, 24);
        assert_eq!(a, synth_tracks(42, 30, 24));
        assert_ne!(a, synth_tracks(43, 30, 24));
        for track in &a {
            Track::new(track.storm_id.clone(), track.points.clone()).unwrap();
            for p in &track.points {
                assert!((5.0..=45.0).contains(&p.lat) && (105.0..=160.0).contains(&p.lon));
            }
            for w in track.points.windows(2) {
                assert_eq!(w[1].time - w[0].time, Duration::hours(6));
                assert!(great_circle(w[0].position(), w[1].position(), EARTH_RADIUS_KM) < 500.0);
            }
        }
    }

    #[test]
    fn synth_years_span_split() {
        let tracks = synth_tracks(1, 200, 10);
        let s = split_by_year(&tracks, TRAIN_YEARS, TEST_YEARS).unwrap();
        assert_eq!(s.dropped, 0);
        assert!(!s.train.is_empty() && !s.test.is_empty());
    }
}
