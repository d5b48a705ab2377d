//! Convex polygon clipping (Sutherland-Hodgman) and shoelace area, used for
//! rotated BEV rectangle intersection.

/// 2D point in the horizontal plane.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

fn cross(o: Vec2, a: Vec2, b: Vec2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn edge_intersection(a: Vec2, b: Vec2, p: Vec2, q: Vec2) -> Vec2 {
    // Intersection of segment p-q with the infinite line through a-b.
    let a1 = b.y - a.y;
    let b1 = a.x - b.x;
    let c1 = a1 * a.x + b1 * a.y;
    let a2 = q.y - p.y;
    let b2 = p.x - q.x;
    let c2 = a2 * p.x + b2 * p.y;
    let det = a1 * b2 - a2 * b1;
    if det.abs() < f64::MIN_POSITIVE {
        // Nearly parallel; fall back to the segment midpoint.
        return Vec2 { x: 0.5 * (p.x + q.x), y: 0.5 * (p.y + q.y) };
    }
    Vec2 {
        x: (b2 * c1 - b1 * c2) / det,
        y: (a1 * c2 - a2 * c1) / det,
    }
}

/// Clip `subject` (convex, CCW) against `clip` (convex, CCW). Points on a
/// clip edge count as inside.
pub fn clip_convex(subject: &[Vec2; 4], clip: &[Vec2; 4]) -> Vec<Vec2> {
    let mut output: Vec<Vec2> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        for (j, &p) in input.iter().enumerate() {
            let q = input[(j + 1) % input.len()];
            let p_in = cross(a, b, p) >= 0.0;
            let q_in = cross(a, b, q) >= 0.0;
            match (p_in, q_in) {
                (true, true) => output.push(q),
                (true, false) => output.push(edge_intersection(a, b, p, q)),
                (false, true) => {
                    output.push(edge_intersection(a, b, p, q));
                    output.push(q);
                }
                (false, false) => {}
            }
        }
    }
    output
}

/// Shoelace area; positive for CCW polygons, 0 for fewer than 3 vertices.
pub fn area(poly: &[Vec2]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        twice += p.x * q.y - q.x * p.y;
    }
    0.5 * twice.abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(cx: f64, cy: f64, half: f64) -> [Vec2; 4] {
        [
            Vec2 { x: cx + half, y: cy + half },
            Vec2 { x: cx - half, y: cy + half },
            Vec2 { x: cx - half, y: cy - half },
            Vec2 { x: cx + half, y: cy - half },
        ]
    }

    #[test]
    fn self_clip_keeps_full_area() {
        let s = square(0.0, 0.0, 0.5);
        let c = clip_convex(&s, &s);
        assert!((area(&c) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn half_overlap() {
        let a = square(0.0, 0.0, 0.5);
        let b = square(0.5, 0.0, 0.5);
        assert!((area(&clip_convex(&a, &b)) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn disjoint_clip_is_empty() {
        let a = square(0.0, 0.0, 0.5);
        let b = square(10.0, 0.0, 0.5);
        assert_eq!(area(&clip_convex(&a, &b)), 0.0);
    }
}
