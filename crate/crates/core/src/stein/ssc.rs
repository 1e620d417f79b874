//! Collapse sets and the minimum departure rate over the first of them.

use serde::{Deserialize, Serialize};

use super::DerivedConstants;
use crate::model::{AggregateState, Phase};

/// Threshold comparisons are loosened by this much so that states sitting on
/// a boundary are classified as inside.
const BOUNDARY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SSCFlags {
    pub in_ssc1: bool,
    pub in_ssc2: bool,
    pub in_tilde1: bool,
    pub in_tilde2: bool,
}

impl SSCFlags {
    pub fn in_ssc(&self) -> bool {
        self.in_ssc1 || self.in_ssc2
    }

    /// The intersection of the two refined sets lies in the union of the others.
    pub fn containment_holds(&self) -> bool {
        !(self.in_tilde1 && self.in_tilde2) || self.in_ssc()
    }
}

/// The coordinates the sets depend on: `s_{1,1}`, `s_{1,2}`, `sum_{i>=2} s_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SscCoords {
    pub s11: f64,
    pub s12: f64,
    pub tail: f64,
}

impl SscCoords {
    pub fn of(state: &AggregateState) -> Self {
        let tail = (2..=state.b()).map(|i| state.s_level(i)).sum();
        Self { s11: state.s(1, Phase::First), s12: state.s(1, Phase::Second), tail }
    }

    pub fn s1(&self) -> f64 {
        self.s11 + self.s12
    }

    pub fn total(&self) -> f64 {
        self.s1() + self.tail
    }
}

/// Floor on `s_1` in the first collapse set.
pub fn ssc1_floor(c: &DerivedConstants) -> f64 {
    c.lambda + (c.busy_margin() - c.mu1) * c.log_scale
}

pub fn ssc_flags_at(x: SscCoords, c: &DerivedConstants) -> SSCFlags {
    let ge = |a: f64, b: f64| a >= b - BOUNDARY_TOL;
    let le = |a: f64, b: f64| a <= b + BOUNDARY_TOL;
    let in_tilde1 = ge(x.s11, c.l11) && ge(x.s12, c.l12);
    SSCFlags {
        in_ssc1: in_tilde1 && ge(x.s1(), ssc1_floor(c)),
        in_ssc2: le(x.total(), c.eta),
        in_tilde1,
        in_tilde2: le((c.eta - x.s1()).min(x.tail), (c.c1 + c.mu1) * c.log_scale),
    }
}

pub fn ssc_flags(state: &AggregateState, c: &DerivedConstants) -> SSCFlags {
    ssc_flags_at(SscCoords::of(state), c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corner {
    /// `s_{1,1}` at its floor.
    S11Floor,
    /// `s_{1,2}` at its floor.
    S12Floor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CornerValue {
    pub s11: f64,
    pub s12: f64,
    pub departure: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ssc1MinDeparture {
    pub corner_s11_floor: CornerValue,
    pub corner_s12_floor: CornerValue,
    pub min_departure: f64,
    pub argmin: Corner,
    /// `lambda + log N / sqrt N`.
    pub required: f64,
    pub corner_ok: bool,
    pub grid_points: usize,
    pub grid_min: f64,
    pub grid_argmin: (f64, f64),
    /// `grid_min - min_departure`; never below `-1e-9` when the corners are extreme.
    pub grid_gap: f64,
}

impl Ssc1MinDeparture {
    pub fn holds(&self) -> bool {
        self.corner_ok && self.grid_gap >= -1e-9 && self.grid_gap <= 1e-9
    }
}

fn departure(c: &DerivedConstants, s11: f64, s12: f64) -> f64 {
    (1.0 - c.p) * c.mu1 * s11 + c.mu2 * s12
}

/// Minimizes the departure rate `(1-p) mu1 s_{1,1} + mu2 s_{1,2}` over the
/// first collapse set, at its two extreme points and on a `grid x grid` mesh
/// of the box spanned by them.
pub fn ssc1_min_departure(c: &DerivedConstants, grid: usize) -> Ssc1MinDeparture {
    let t = ssc1_floor(c);
    let corner = |s11: f64, s12: f64| CornerValue { s11, s12, departure: departure(c, s11, s12) };
    let a = corner(c.l11, t - c.l11);
    let b = corner(t - c.l12, c.l12);
    let (min_departure, argmin) =
        if a.departure <= b.departure { (a.departure, Corner::S11Floor) } else { (b.departure, Corner::S12Floor) };
    let required = c.lambda + c.log_scale;

    let grid = grid.max(2);
    let (x0, x1) = (c.l11, t - c.l12);
    let (y0, y1) = (c.l12, t - c.l11);
    let mut grid_min = f64::INFINITY;
    let mut grid_argmin = (x0, y1);
    let mut grid_points = 0;
    for i in 0..grid {
        let s11 = x0 + (x1 - x0) * i as f64 / (grid - 1) as f64;
        for j in 0..grid {
            let s12 = y0 + (y1 - y0) * j as f64 / (grid - 1) as f64;
            if s11 + s12 < t - 1e-12 {
                continue;
            }
            grid_points += 1;
            let d = departure(c, s11, s12);
            if d < grid_min {
                grid_min = d;
                grid_argmin = (s11, s12);
            }
        }
    }
    Ssc1MinDeparture {
        corner_s11_floor: a,
        corner_s12_floor: b,
        min_departure,
        argmin,
        required,
        corner_ok: min_departure >= required - 1e-12,
        grid_points,
        grid_min,
        grid_argmin,
        grid_gap: grid_min - min_departure,
    }
}
