//! Axis-aligned boxes in image pixels.

use crate::error::{Error, Result};

/// Corner-form rectangle with strictly positive width and height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = Self { x1, y1, x2, y2 };
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) || x2 <= x1 || y2 <= y1 {
            return Err(Error::DegenerateBox(format!("{b:?}")));
        }
        Ok(b)
    }

    /// Top-left corner plus size, the OTB ground-truth convention.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(x, y, x + w, y + h)
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    /// `(cx, cy, w, h)`.
    pub fn to_center_size(&self) -> (f64, f64, f64, f64) {
        let (cx, cy) = self.center();
        (cx, cy, self.width(), self.height())
    }

    pub fn to_xywh(&self) -> (f64, f64, f64, f64) {
        (self.x1, self.y1, self.width(), self.height())
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }

    /// Same center, both sides multiplied by `factor`.
    pub fn scale_about_center(&self, factor: f64) -> Self {
        let (cx, cy, w, h) = self.to_center_size();
        let (hw, hh) = (w * factor / 2.0, h * factor / 2.0);
        Self {
            x1: cx - hw,
            y1: cy - hh,
            x2: cx + hw,
            y2: cy + hh,
        }
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        w * h
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        iou(self, other)
    }

    /// Smallest box containing both.
    pub fn union(&self, other: &BBox) -> BBox {
        BBox {
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
            x2: self.x2.max(other.x2),
            y2: self.y2.max(other.y2),
        }
    }

    /// Shrinks to fit and then shifts the box so it lies inside `bounds`.
    pub fn clamp_inside(&self, bounds: &BBox) -> BBox {
        let w = self.width().min(bounds.width());
        let h = self.height().min(bounds.height());
        let (cx, cy) = self.center();
        let cx = cx.clamp(bounds.x1 + w / 2.0, bounds.x2 - w / 2.0);
        let cy = cy.clamp(bounds.y1 + h / 2.0, bounds.y2 - h / 2.0);
        BBox {
            x1: cx - w / 2.0,
            y1: cy - h / 2.0,
            x2: cx + w / 2.0,
            y2: cy + h / 2.0,
        }
    }

    pub fn center_distance(&self, other: &BBox) -> f64 {
        let (ax, ay) = self.center();
        let (bx, by) = other.center();
        ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
    }
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Bounding rectangle of a non-empty set of boxes.
pub fn bounding_rect(boxes: &[BBox]) -> Option<BBox> {
    let (first, rest) = boxes.split_first()?;
    Some(rest.iter().fold(*first, |acc, b| acc.union(b)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_examples() {
        let a = BBox::new(0., 0., 2., 2.).unwrap();
        let b = BBox::new(1., 1., 3., 3.).unwrap();
        assert_eq!(iou(&a, &a), 1.0);
        assert!((iou(&a, &b) - 1.0 / 7.0).abs() < 1e-12);
        let c = BBox::new(5., 5., 6., 6.).unwrap();
        assert_eq!(iou(&a, &c), 0.0);
    }

    #[test]
    fn rejects_degenerate() {
        assert!(BBox::new(1., 1., 1., 2.).is_err());
        assert!(BBox::new(0., 0., f64::NAN, 2.).is_err());
        assert!(BBox::from_xywh(0., 0., 0., 2.).is_err());
    }

    #[test]
    fn clamp_keeps_inside() {
        let frame = BBox::new(0., 0., 100., 50.).unwrap();
        let b = BBox::from_center(98., -3., 20., 10.)
            .unwrap()
            .clamp_inside(&frame);
        assert!(b.x1 >= 0.0 && b.x2 <= 100.0 && b.y1 >= 0.0 && b.y2 <= 50.0);
        assert!((b.width() - 20.0).abs() < 1e-12);
        let huge = BBox::from_center(50., 25., 300., 300.)
            .unwrap()
            .clamp_inside(&frame);
        assert_eq!(huge, frame);
    }
}
