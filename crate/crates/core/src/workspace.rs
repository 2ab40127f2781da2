//! Tabletop bounds and the fixed corner obstacle.

use serde::{Deserialize, Serialize};

/// Axis-aligned rectangle in the table plane, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Rect {
    pub const fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Rect {
            min: [min_x, min_y],
            max: [max_x, max_y],
        }
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.min[0] >= self.min[0]
            && other.min[1] >= self.min[1]
            && other.max[0] <= self.max[0]
            && other.max[1] <= self.max[1]
    }

    pub fn contains_circle(&self, c: [f64; 2], r: f64) -> bool {
        c[0] - r >= self.min[0] && c[0] + r <= self.max[0] && c[1] - r >= self.min[1] && c[1] + r <= self.max[1]
    }

    fn closest_point(&self, c: [f64; 2]) -> [f64; 2] {
        [c[0].clamp(self.min[0], self.max[0]), c[1].clamp(self.min[1], self.max[1])]
    }

    /// Signed clearance between a circle and this rectangle (negative = penetration).
    pub fn circle_clearance(&self, c: [f64; 2], r: f64) -> f64 {
        let p = self.closest_point(c);
        let d = ((c[0] - p[0]).powi(2) + (c[1] - p[1]).powi(2)).sqrt();
        if d > 0.0 {
            d - r
        } else {
            // center inside: distance to nearest edge, negated
            let inside = (c[0] - self.min[0])
                .min(self.max[0] - c[0])
                .min(c[1] - self.min[1])
                .min(self.max[1] - c[1]);
            -inside - r
        }
    }

    /// Smallest planar translation that moves the circle out of the rectangle.
    pub fn circle_push_out(&self, c: [f64; 2], r: f64) -> Option<[f64; 2]> {
        if self.circle_clearance(c, r) >= 0.0 {
            return None;
        }
        let p = self.closest_point(c);
        let dx = c[0] - p[0];
        let dy = c[1] - p[1];
        let d = (dx * dx + dy * dy).sqrt();
        if d > 1e-12 {
            let k = (r - d) / d;
            return Some([dx * k, dy * k]);
        }
        // center inside the rectangle: exit through the nearest face
        let exits = [
            (c[0] - self.min[0] + r, [-(c[0] - self.min[0] + r), 0.0]),
            (self.max[0] - c[0] + r, [self.max[0] - c[0] + r, 0.0]),
            (c[1] - self.min[1] + r, [0.0, -(c[1] - self.min[1] + r)]),
            (self.max[1] - c[1] + r, [0.0, self.max[1] - c[1] + r]),
        ];
        exits
            .iter()
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|e| e.1)
    }
}

/// Table rectangle plus the L-shaped corner obstacle (two wall segments).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub table: Rect,
    pub walls: [Rect; 2],
    pub wall_height: f64,
}

impl Default for Workspace {
    fn default() -> Self {
        Workspace {
            table: Rect::new(-0.40, -0.30, 0.40, 0.30),
            walls: [
                // parallel to y, inner face at x = 0.26
                Rect::new(0.26, 0.04, 0.28, 0.28),
                // parallel to x, inner face at y = 0.26
                Rect::new(0.04, 0.26, 0.28, 0.28),
            ],
            wall_height: 0.06,
        }
    }
}

impl Workspace {
    /// Center of a circle of radius `r` nested into the inside corner of the walls.
    pub fn corner_slot(&self, r: f64) -> [f64; 2] {
        [self.walls[0].min[0] - r, self.walls[1].min[1] - r]
    }

    pub fn obstacle_clearance(&self, c: [f64; 2], r: f64) -> f64 {
        self.walls
            .iter()
            .map(|w| w.circle_clearance(c, r))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn validate(&self) -> Result<(), String> {
        for w in &self.walls {
            if !self.table.contains_rect(w) {
                return Err("obstacle wall lies outside the table".into());
            }
        }
        Ok(())
    }
}

pub fn circles_overlap(a: [f64; 2], ra: f64, b: [f64; 2], rb: f64) -> bool {
    let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    d < ra + rb
}
