//! Court geometry and player filtering.
//!
//! A pose detector returns every person in the frame. The two players are
//! the instances whose ankles stand inside the singles-court quadrilateral;
//! they are returned as an ordered pair (bottom-of-screen player first) and
//! later normalized with dataset statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const KEYPOINTS_PER_PERSON: usize = 17;
/// Flattened `(x, y)` coordinates per person.
pub const COORDS_PER_PERSON: usize = 2 * KEYPOINTS_PER_PERSON;

pub const LEFT_ANKLE: usize = 15;
pub const RIGHT_ANKLE: usize = 16;
pub const LEFT_WRIST: usize = 9;
pub const RIGHT_WRIST: usize = 10;

/// COCO keypoint order used by the pose detector.
pub const KEYPOINT_NAMES: [&str; KEYPOINTS_PER_PERSON] = [
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

/// Pixel coordinate; `y` grows downward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }

    fn cross(self, o: Point2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }
}

impl From<[f64; 2]> for Point2 {
    fn from(v: [f64; 2]) -> Self {
        Point2::new(v[0], v[1])
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

// ---------------------------------------------------------------------------
// Court
// ---------------------------------------------------------------------------

/// The six singles-court reference points. Only the four corners bound the
/// playing region; the middle points are carried for downstream use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point2>", into = "Vec<Point2>")]
pub struct CourtKeypoints {
    pub upper_left: Point2,
    pub upper_right: Point2,
    pub middle_left: Point2,
    pub middle_right: Point2,
    pub bottom_left: Point2,
    pub bottom_right: Point2,
}

impl CourtKeypoints {
    /// Validates ordering and simplicity of the corner quadrilateral.
    pub fn new(points: [Point2; 6]) -> Result<Self> {
        let [upper_left, upper_right, middle_left, middle_right, bottom_left, bottom_right] = points;
        let court = Self { upper_left, upper_right, middle_left, middle_right, bottom_left, bottom_right };
        court.validate()?;
        Ok(court)
    }

    fn validate(&self) -> Result<()> {
        if !self.points().iter().all(Point2::is_finite) {
            return Err(Error::InvalidCourt("non-finite coordinate".into()));
        }
        if self.upper_left.y >= self.bottom_left.y || self.upper_right.y >= self.bottom_right.y {
            return Err(Error::InvalidCourt("upper corners must lie above bottom corners".into()));
        }
        let [a, b, c, d] = self.corners();
        if segments_cross(a, b, c, d) || segments_cross(b, c, d, a) {
            return Err(Error::InvalidCourt("corner quadrilateral self-intersects".into()));
        }
        Ok(())
    }

    pub fn points(&self) -> [Point2; 6] {
        [
            self.upper_left,
            self.upper_right,
            self.middle_left,
            self.middle_right,
            self.bottom_left,
            self.bottom_right,
        ]
    }

    /// Corners in boundary order: UL, UR, BR, BL.
    pub fn corners(&self) -> [Point2; 4] {
        [self.upper_left, self.upper_right, self.bottom_right, self.bottom_left]
    }

    /// Absolute shoelace area of the corner quadrilateral.
    pub fn area(&self) -> f64 {
        let c = self.corners();
        let twice: f64 = (0..4).map(|i| c[i].cross(c[(i + 1) % 4])).sum();
        twice.abs() / 2.0
    }

    pub fn scaled(&self, s: f64) -> Self {
        let f = |p: Point2| Point2::new(p.x * s, p.y * s);
        Self {
            upper_left: f(self.upper_left),
            upper_right: f(self.upper_right),
            middle_left: f(self.middle_left),
            middle_right: f(self.middle_right),
            bottom_left: f(self.bottom_left),
            bottom_right: f(self.bottom_right),
        }
    }
}

impl TryFrom<Vec<Point2>> for CourtKeypoints {
    type Error = Error;

    fn try_from(v: Vec<Point2>) -> Result<Self> {
        let pts: [Point2; 6] = v
            .try_into()
            .map_err(|v: Vec<Point2>| Error::InvalidCourt(format!("expected 6 points, got {}", v.len())))?;
        CourtKeypoints::new(pts)
    }
}

impl From<CourtKeypoints> for Vec<Point2> {
    fn from(c: CourtKeypoints) -> Self {
        c.points().to_vec()
    }
}

/// Proper intersection of segments `ab` and `cd` (shared endpoints excluded).
fn segments_cross(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    let d1 = b.sub(a).cross(c.sub(a));
    let d2 = b.sub(a).cross(d.sub(a));
    let d3 = d.sub(c).cross(a.sub(c));
    let d4 = d.sub(c).cross(b.sub(c));
    (d1 > 0.0 && d2 < 0.0 || d1 < 0.0 && d2 > 0.0) && (d3 > 0.0 && d4 < 0.0 || d3 < 0.0 && d4 > 0.0)
}

/// Relative tolerance for "on the boundary"; scale-free.
const BOUNDARY_REL_TOL: f64 = 1e-12;

fn on_segment(p: Point2, a: Point2, b: Point2) -> bool {
    let ab = b.sub(a);
    let ap = p.sub(a);
    let scale = ab.norm() * ap.norm();
    if ab.cross(ap).abs() > BOUNDARY_REL_TOL * scale {
        return false;
    }
    let dot = ab.x * ap.x + ab.y * ap.y;
    let len2 = ab.x * ab.x + ab.y * ab.y;
    dot >= -BOUNDARY_REL_TOL * len2 && dot <= len2 * (1.0 + BOUNDARY_REL_TOL)
}

/// Whether `p` lies inside or on the boundary of the court's corner
/// quadrilateral.
pub fn point_in_court(p: Point2, court: &CourtKeypoints) -> Result<bool> {
    let c = court.corners();
    let extent = c.iter().flat_map(|q| [q.x.abs(), q.y.abs()]).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    if court.area() <= 1e-12 * extent * extent {
        return Err(Error::InvalidCourt("zero-area quadrilateral".into()));
    }
    if (0..4).any(|i| on_segment(p, c[i], c[(i + 1) % 4])) {
        return Ok(true);
    }
    // Even-odd crossing test.
    let mut inside = false;
    let mut j = 3;
    for i in 0..4 {
        let (a, b) = (c[i], c[j]);
        if (a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x {
            inside = !inside;
        }
        j = i;
    }
    Ok(inside)
}

// ---------------------------------------------------------------------------
// Skeletons and player pairs
// ---------------------------------------------------------------------------

/// One detected person: 17 keypoints in COCO order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point2>", into = "Vec<Point2>")]
pub struct SkeletonKeypoints(pub [Point2; KEYPOINTS_PER_PERSON]);

impl TryFrom<Vec<Point2>> for SkeletonKeypoints {
    type Error = Error;

    fn try_from(v: Vec<Point2>) -> Result<Self> {
        let pts: [Point2; KEYPOINTS_PER_PERSON] = v.try_into().map_err(|v: Vec<Point2>| {
            Error::Input(format!("skeleton needs 17 keypoints, got {}", v.len()))
        })?;
        if !pts.iter().all(Point2::is_finite) {
            return Err(Error::Input("non-finite keypoint".into()));
        }
        Ok(SkeletonKeypoints(pts))
    }
}

impl From<SkeletonKeypoints> for Vec<Point2> {
    fn from(s: SkeletonKeypoints) -> Self {
        s.0.to_vec()
    }
}

impl SkeletonKeypoints {
    pub fn ankle_midpoint(&self) -> Point2 {
        let (l, r) = (self.0[LEFT_ANKLE], self.0[RIGHT_ANKLE]);
        Point2::new((l.x + r.x) / 2.0, (l.y + r.y) / 2.0)
    }

    /// Area of the axis-aligned box around all keypoints.
    pub fn bbox_area(&self) -> f64 {
        let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
        let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.0 {
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        (x1 - x0) * (y1 - y0)
    }

    pub fn flat(&self) -> [f64; COORDS_PER_PERSON] {
        let mut out = [0.0; COORDS_PER_PERSON];
        for (i, p) in self.0.iter().enumerate() {
            out[2 * i] = p.x;
            out[2 * i + 1] = p.y;
        }
        out
    }

    pub fn from_flat(v: &[f64]) -> Self {
        let mut pts = [Point2::new(0.0, 0.0); KEYPOINTS_PER_PERSON];
        for (i, p) in pts.iter_mut().enumerate() {
            *p = Point2::new(v[2 * i], v[2 * i + 1]);
        }
        SkeletonKeypoints(pts)
    }
}

/// The two on-court players, bottom-of-screen player first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[SkeletonKeypoints; 2]", into = "[SkeletonKeypoints; 2]")]
pub struct PlayerKeypointPair {
    pub bottom_player: SkeletonKeypoints,
    pub top_player: SkeletonKeypoints,
}

impl From<[SkeletonKeypoints; 2]> for PlayerKeypointPair {
    fn from(v: [SkeletonKeypoints; 2]) -> Self {
        PlayerKeypointPair { bottom_player: v[0], top_player: v[1] }
    }
}

impl From<PlayerKeypointPair> for [SkeletonKeypoints; 2] {
    fn from(p: PlayerKeypointPair) -> Self {
        [p.bottom_player, p.top_player]
    }
}

impl PlayerKeypointPair {
    /// `[bottom 34 | top 34]`.
    pub fn flat(&self) -> [f64; 2 * COORDS_PER_PERSON] {
        let mut out = [0.0; 2 * COORDS_PER_PERSON];
        out[..COORDS_PER_PERSON].copy_from_slice(&self.bottom_player.flat());
        out[COORDS_PER_PERSON..].copy_from_slice(&self.top_player.flat());
        out
    }

    pub fn swapped(&self) -> Self {
        Self { bottom_player: self.top_player, top_player: self.bottom_player }
    }
}

/// Orders two skeletons: larger ankle-midpoint `y` (lower on screen) goes to
/// the bottom slot; ties go to the smaller ankle-midpoint `x`, then to `a`.
pub fn order_players(a: SkeletonKeypoints, b: SkeletonKeypoints) -> PlayerKeypointPair {
    let (ma, mb) = (a.ankle_midpoint(), b.ankle_midpoint());
    let a_bottom = ma.y > mb.y || (ma.y == mb.y && ma.x <= mb.x);
    if a_bottom {
        PlayerKeypointPair { bottom_player: a, top_player: b }
    } else {
        PlayerKeypointPair { bottom_player: b, top_player: a }
    }
}

/// Keeps instances with at least one ankle inside the court. More than two
/// survivors are cut to the two with the largest keypoint bounding box.
pub fn filter_players(instances: &[SkeletonKeypoints], court: &CourtKeypoints) -> Result<PlayerKeypointPair> {
    if instances.is_empty() {
        return Err(Error::InsufficientPlayers { found: 0 });
    }
    let mut survivors = Vec::new();
    for (i, s) in instances.iter().enumerate() {
        if point_in_court(s.0[LEFT_ANKLE], court)? || point_in_court(s.0[RIGHT_ANKLE], court)? {
            survivors.push((i, s));
        }
    }
    if survivors.len() < 2 {
        return Err(Error::InsufficientPlayers { found: survivors.len() });
    }
    // Largest area first; the stable sort keeps detector order among equals.
    survivors.sort_by(|a, b| b.1.bbox_area().total_cmp(&a.1.bbox_area()));
    let (a, b) = (*survivors[0].1, *survivors[1].1);
    // Preserve detector order before ordering, so ties resolve identically
    // regardless of which survivor had the larger box.
    let (first, second) = if survivors[0].0 < survivors[1].0 { (a, b) } else { (b, a) };
    Ok(order_players(first, second))
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Per-coordinate mean and standard deviation over the 34 flattened
/// coordinates, shared by both player slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawStats", into = "RawStats")]
pub struct KeypointStats {
    mean: Vec<f64>,
    std: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawStats {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl TryFrom<RawStats> for KeypointStats {
    type Error = Error;
    fn try_from(r: RawStats) -> Result<Self> {
        KeypointStats::new(r.mean, r.std)
    }
}

impl From<KeypointStats> for RawStats {
    fn from(k: KeypointStats) -> Self {
        RawStats { mean: k.mean, std: k.std }
    }
}

impl KeypointStats {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != COORDS_PER_PERSON || std.len() != COORDS_PER_PERSON {
            return Err(Error::Input(format!("keypoint stats need {COORDS_PER_PERSON} entries")));
        }
        if std.iter().any(|&s| !(s > 0.0 && s.is_finite())) || mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Input("keypoint std must be positive and finite".into()));
        }
        Ok(Self { mean, std })
    }

    pub fn identity() -> Self {
        Self { mean: vec![0.0; COORDS_PER_PERSON], std: vec![1.0; COORDS_PER_PERSON] }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    /// Pools both player slots of every pair.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = &'a PlayerKeypointPair>) -> Result<Self> {
        let mut sum = [0.0; COORDS_PER_PERSON];
        let mut sq = [0.0; COORDS_PER_PERSON];
        let mut n = 0usize;
        for p in pairs {
            for s in [&p.bottom_player, &p.top_player] {
                for (i, v) in s.flat().iter().enumerate() {
                    sum[i] += v;
                    sq[i] += v * v;
                }
                n += 1;
            }
        }
        if n < 2 {
            return Err(Error::DegenerateData("too few skeletons for statistics".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std: Vec<f64> =
            sq.iter().zip(&mean).map(|(q, m)| (q / n as f64 - m * m).max(0.0).sqrt()).collect();
        if std.iter().any(|&s| s <= 0.0) {
            return Err(Error::DegenerateData("a keypoint coordinate never varies".into()));
        }
        Self::new(mean, std)
    }

    fn map(&self, s: &SkeletonKeypoints, f: impl Fn(f64, f64, f64) -> f64) -> SkeletonKeypoints {
        let flat = s.flat();
        let out: Vec<f64> = flat.iter().enumerate().map(|(i, &v)| f(v, self.mean[i], self.std[i])).collect();
        SkeletonKeypoints::from_flat(&out)
    }
}

/// `(c − mean_c) / std_c` for every coordinate of both players.
pub fn normalize_pair(pair: &PlayerKeypointPair, stats: &KeypointStats) -> PlayerKeypointPair {
    let f = |v: f64, m: f64, s: f64| (v - m) / s;
    PlayerKeypointPair {
        bottom_player: stats.map(&pair.bottom_player, f),
        top_player: stats.map(&pair.top_player, f),
    }
}

/// Inverse of [`normalize_pair`].
pub fn denormalize_pair(pair: &PlayerKeypointPair, stats: &KeypointStats) -> PlayerKeypointPair {
    let f = |v: f64, m: f64, s: f64| v * s + m;
    PlayerKeypointPair {
        bottom_player: stats.map(&pair.bottom_player, f),
        top_player: stats.map(&pair.top_player, f),
    }
}
