use serde::{Deserialize, Serialize};

/// Sub-pixel image coordinate. Origin top-left, x rightward, y downward.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn midpoint(self, other: Point) -> Point {
        Point::new((self.x + other.x) / 2.0, (self.y + other.y) / 2.0)
    }

    pub fn translate(self, dx: f64, dy: f64) -> Point {
        Point::new(self.x + dx, self.y + dy)
    }

    /// Rotates around `center` by `degrees` (positive = clockwise on screen,
    /// since y points down).
    pub fn rotate_about(self, center: Point, degrees: f64) -> Point {
        let (s, c) = degrees.to_radians().sin_cos();
        let dx = self.x - center.x;
        let dy = self.y - center.y;
        Point::new(center.x + c * dx - s * dy, center.y + s * dx + c * dy)
    }
}

/// Integer pixel rectangle, `x..x+width` by `y..y+height`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub const fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }

    pub fn right(&self) -> usize {
        self.x + self.width
    }

    pub fn bottom(&self) -> usize {
        self.y + self.height
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    pub fn center(&self) -> Point {
        Point::new(
            self.x as f64 + self.width as f64 / 2.0,
            self.y as f64 + self.height as f64 / 2.0,
        )
    }

    /// True when `p` lies inside the closed pixel area covered by the rectangle.
    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x as f64
            && p.y >= self.y as f64
            && p.x <= (self.right() - 1) as f64
            && p.y <= (self.bottom() - 1) as f64
    }

    /// Builds the rectangle covering the float span `[x0, x1] x [y0, y1]`,
    /// clipped to a `width x height` image. Returns `None` if nothing remains.
    pub fn from_span_clipped(
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
        width: usize,
        height: usize,
    ) -> Option<Rect> {
        let left = x0.floor().max(0.0);
        let top = y0.floor().max(0.0);
        let right = x1.ceil().min(width as f64 - 1.0);
        let bottom = y1.ceil().min(height as f64 - 1.0);
        if right < left || bottom < top {
            return None;
        }
        Some(Rect::new(
            left as usize,
            top as usize,
            (right - left) as usize + 1,
            (bottom - top) as usize + 1,
        ))
    }
}
