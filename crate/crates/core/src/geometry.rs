//! Small fixed-size linear algebra helpers.

/// World or camera-frame point in meters.
pub type Point3 = [f64; 3];

#[inline]
pub fn add(a: Point3, b: Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale(a: Point3, s: f64) -> Point3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Point3, b: Point3) -> Point3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[inline]
pub fn norm(a: Point3) -> f64 {
    libm::sqrt(dot(a, a))
}

#[inline]
pub fn distance(a: Point3, b: Point3) -> f64 {
    norm(sub(a, b))
}

#[inline]
pub fn distance_sq(a: Point3, b: Point3) -> f64 {
    let d = sub(a, b);
    dot(d, d)
}

/// Unit vector along `a`, or `None` for a (near-)zero vector.
pub fn normalize(a: Point3) -> Option<Point3> {
    let n = norm(a);
    (n > 1e-12).then(|| scale(a, 1.0 / n))
}

/// Row-major 3×3 matrix.
pub type Mat3 = [[f64; 3]; 3];

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

#[inline]
pub fn mat_vec(m: &Mat3, v: Point3) -> Point3 {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

/// `mᵀ·v`
#[inline]
pub fn mat_t_vec(m: &Mat3, v: Point3) -> Point3 {
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

pub fn determinant(m: &Mat3) -> f64 {
    dot(m[0], cross(m[1], m[2]))
}

/// Axis-aligned box in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb3 {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb3 {
    /// Box from explicit corners; `None` when `min > max` on any axis.
    pub fn new(min: Point3, max: Point3) -> Option<Self> {
        (0..3).all(|k| min[k] <= max[k]).then_some(Self { min, max })
    }

    pub fn from_center_extent(center: Point3, extent: Point3) -> Option<Self> {
        if extent.iter().any(|e| *e < 0.0 || !e.is_finite()) {
            return None;
        }
        let half = scale(extent, 0.5);
        Self::new(sub(center, half), add(center, half))
    }

    /// Tight bounds of `points`; `None` when empty.
    pub fn from_points(points: &[Point3]) -> Option<Self> {
        let (first, rest) = points.split_first()?;
        let mut b = Self { min: *first, max: *first };
        for p in rest {
            b.include(*p);
        }
        Some(b)
    }

    pub fn include(&mut self, p: Point3) {
        for (k, &x) in p.iter().enumerate() {
            self.min[k] = self.min[k].min(x);
            self.max[k] = self.max[k].max(x);
        }
    }

    pub fn union(&self, other: &Aabb3) -> Aabb3 {
        let mut out = *self;
        out.include(other.min);
        out.include(other.max);
        out
    }

    pub fn center(&self) -> Point3 {
        scale(add(self.min, self.max), 0.5)
    }

    pub fn extent(&self) -> Point3 {
        sub(self.max, self.min)
    }

    pub fn max_extent(&self) -> f64 {
        let e = self.extent();
        e[0].max(e[1]).max(e[2])
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e[0] * e[1] * e[2]
    }

    pub fn inflated(&self, margin: f64) -> Aabb3 {
        Aabb3 { min: sub(self.min, [margin; 3]), max: add(self.max, [margin; 3]) }
    }

    /// Closed-interval overlap on all three axes.
    pub fn intersects(&self, other: &Aabb3) -> bool {
        (0..3).all(|k| self.min[k] <= other.max[k] && other.min[k] <= self.max[k])
    }

    pub fn intersection_volume(&self, other: &Aabb3) -> f64 {
        let mut v = 1.0;
        for k in 0..3 {
            let lo = self.min[k].max(other.min[k]);
            let hi = self.max[k].min(other.max[k]);
            if hi <= lo {
                return 0.0;
            }
            v *= hi - lo;
        }
        v
    }

    pub fn translated(&self, t: Point3) -> Aabb3 {
        Aabb3 { min: add(self.min, t), max: add(self.max, t) }
    }
}
