//! Static k-d tree for Lipschitz envelope queries.
//!
//! Each node stores the bounding box of its points and the range of their
//! values. For a query `q`, a node whose box distance `d` satisfies
//! `y_min + L d >= upper` and `y_max - L d <= lower` cannot tighten either
//! envelope and is skipped. Skipped points would only have contributed terms
//! no better than the current ones, so the envelopes are bitwise identical to
//! an exhaustive scan.

const LEAF: usize = 16;

#[derive(Debug, Clone)]
struct Node {
    start: usize,
    end: usize,
    // children as node indices; `usize::MAX` marks a leaf
    left: usize,
    right: usize,
    y_min: f64,
    y_max: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct KdTree {
    dim: usize,
    weights: Vec<f64>,
    points: Vec<f64>,
    values: Vec<f64>,
    nodes: Vec<Node>,
    // per node, `dim` lower then `dim` upper bounds
    boxes: Vec<f64>,
}

pub(crate) fn weighted_max_norm(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(w)
        .fold(0.0f64, |acc, ((x, y), w)| acc.max(w * (x - y).abs()))
}

impl KdTree {
    /// Builds the tree over row-major `points` with one value per row.
    pub(crate) fn build(points: &[f64], values: &[f64], dim: usize, weights: &[f64]) -> Self {
        let n = values.len();
        assert_eq!(points.len(), n * dim);
        let mut order: Vec<usize> = (0..n).collect();
        let mut tree = Self {
            dim,
            weights: weights.to_vec(),
            points: Vec::with_capacity(points.len()),
            values: Vec::with_capacity(n),
            nodes: Vec::new(),
            boxes: Vec::new(),
        };
        if n > 0 {
            tree.split(points, values, &mut order, 0);
        }
        for &i in &order {
            tree.points.extend_from_slice(&points[i * dim..(i + 1) * dim]);
            tree.values.push(values[i]);
        }
        tree
    }

    fn split(&mut self, points: &[f64], values: &[f64], order: &mut [usize], offset: usize) -> usize {
        let dim = self.dim;
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
        for &i in order.iter() {
            for c in 0..dim {
                let v = points[i * dim + c];
                lo[c] = lo[c].min(v);
                hi[c] = hi[c].max(v);
            }
            y_min = y_min.min(values[i]);
            y_max = y_max.max(values[i]);
        }
        let id = self.nodes.len();
        self.nodes.push(Node { start: offset, end: offset + order.len(), left: usize::MAX, right: usize::MAX, y_min, y_max });
        self.boxes.extend_from_slice(&lo);
        self.boxes.extend_from_slice(&hi);
        if order.len() <= LEAF {
            return id;
        }
        let axis = (0..dim)
            .map(|c| (c, self.weights[c] * (hi[c] - lo[c])))
            .fold((0, f64::NEG_INFINITY), |b, x| if x.1 > b.1 { x } else { b })
            .0;
        if hi[axis] <= lo[axis] {
            // all points coincide
            return id;
        }
        let mid = order.len() / 2;
        order.select_nth_unstable_by(mid, |&a, &b| {
            points[a * dim + axis].total_cmp(&points[b * dim + axis]).then(a.cmp(&b))
        });
        let (l, r) = order.split_at_mut(mid);
        let left = self.split(points, values, l, offset);
        let right = self.split(points, values, r, offset + mid);
        self.nodes[id].left = left;
        self.nodes[id].right = right;
        id
    }

    pub(crate) fn len(&self) -> usize {
        self.values.len()
    }

    pub(crate) fn points(&self) -> &[f64] {
        &self.points
    }

    pub(crate) fn values(&self) -> &[f64] {
        &self.values
    }

    fn box_distance(&self, node: usize, q: &[f64]) -> f64 {
        let dim = self.dim;
        let b = &self.boxes[2 * dim * node..2 * dim * (node + 1)];
        (0..dim).fold(0.0f64, |acc, c| {
            let gap = (b[c] - q[c]).max(q[c] - b[dim + c]).max(0.0);
            acc.max(self.weights[c] * gap)
        })
    }

    /// `(lower, upper)` envelopes at `q` for constant `l`.
    pub(crate) fn envelope(&self, q: &[f64], l: f64) -> (f64, f64) {
        let mut up = f64::INFINITY;
        let mut low = f64::NEG_INFINITY;
        if self.nodes.is_empty() {
            return (low, up);
        }
        let mut stack = vec![(0usize, self.box_distance(0, q))];
        while let Some((id, d)) = stack.pop() {
            let node = &self.nodes[id];
            let bound = l * d;
            if node.y_min + bound >= up && node.y_max - bound <= low {
                continue;
            }
            if node.left == usize::MAX {
                for i in node.start..node.end {
                    let p = &self.points[i * self.dim..(i + 1) * self.dim];
                    let dist = weighted_max_norm(q, p, &self.weights);
                    let y = self.values[i];
                    up = up.min(y + l * dist);
                    low = low.max(y - l * dist);
                }
                continue;
            }
            let dl = self.box_distance(node.left, q);
            let dr = self.box_distance(node.right, q);
            // nearer child last so it is popped first
            if dl <= dr {
                stack.push((node.right, dr));
                stack.push((node.left, dl));
            } else {
                stack.push((node.left, dl));
                stack.push((node.right, dr));
            }
        }
        (low, up)
    }
}
