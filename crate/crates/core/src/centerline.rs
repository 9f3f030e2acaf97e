//! Cost raster from the line response and least-cost centerline tracing
//! between control points.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lines::ResponseMap;
use crate::raster::{Raster, RasterKind};

/// Cost floor that keeps every step strictly positive.
pub const COST_EPSILON: f64 = 1e-6;
pub const DEFAULT_N_POW: f64 = 10.0;

/// `(row, col)`.
pub type Pixel = (usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPoints {
    pub river_id: String,
    pub nodes: Vec<Pixel>,
}

impl ControlPoints {
    pub fn new(river_id: impl Into<String>, nodes: Vec<Pixel>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::invalid(format!("need at least 2 control points, got {}", nodes.len())));
        }
        Ok(ControlPoints {
            river_id: river_id.into(),
            nodes,
        })
    }

    pub fn check_inside(&self, width: usize, height: usize) -> Result<()> {
        if self.nodes.len() < 2 {
            return Err(Error::invalid("need at least 2 control points"));
        }
        for &(r, c) in &self.nodes {
            if r >= height || c >= width {
                return Err(Error::invalid(format!("control point ({r}, {c}) outside {width}x{height}")));
            }
        }
        Ok(())
    }
}

/// Traced centerline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    pub pixels: Vec<Pixel>,
    /// Sum of step costs along `pixels`.
    pub cost: f64,
    /// Control points the line passes through, in order.
    pub nodes: Vec<Pixel>,
}

impl Polyline {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// Checks 8-adjacency of consecutive pixels and that no pixel repeats.
    pub fn check_valid(&self) -> Result<()> {
        for w in self.pixels.windows(2) {
            let (a, b) = (w[0], w[1]);
            if a == b || a.0.abs_diff(b.0) > 1 || a.1.abs_diff(b.1) > 1 {
                return Err(Error::invalid(format!("{a:?} -> {b:?} is not an 8-neighbour step")));
            }
        }
        let mut seen = self.pixels.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("polyline visits a pixel twice"));
        }
        Ok(())
    }
}

/// `eps + (1 - D / D_max)^n_pow`.
pub fn cost_map(resp: &ResponseMap, n_pow: f64) -> Result<Raster> {
    if !(n_pow > 0.0) || !n_pow.is_finite() {
        return Err(Error::invalid(format!("n_pow must be positive, got {n_pow}")));
    }
    let d = &resp.response;
    if d.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("response map is not finite"));
    }
    let dmax = resp.d_max();
    if !(dmax > 0.0) {
        return Err(Error::Featureless);
    }
    d.map(RasterKind::Cost, |v| COST_EPSILON + (1.0 - v / dmax).max(0.0).powf(n_pow))
}

/// Cost of moving between 8-neighbours `p` and `q`.
#[inline]
pub fn step_cost(cost: &Raster, p: Pixel, q: Pixel) -> f64 {
    let len = if p.0 != q.0 && p.1 != q.1 {
        std::f64::consts::SQRT_2
    } else {
        1.0
    };
    0.5 * (cost.get(p.0, p.1) + cost.get(q.0, q.1)) * len
}

/// Sum of step costs, accumulated from the first pixel.
pub fn path_cost(cost: &Raster, pixels: &[Pixel]) -> f64 {
    pixels.windows(2).fold(0.0, |acc, w| acc + step_cost(cost, w[0], w[1]))
}

#[derive(PartialEq)]
struct Entry {
    dist: f64,
    row: usize,
    col: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    // reversed: BinaryHeap is a max-heap, we pop the smallest (dist, row, col)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then(other.row.cmp(&self.row))
            .then(other.col.cmp(&self.col))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const NEIGHBOURS: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];

/// Dijkstra under 8-connectivity. The frontier is popped in
/// `(distance, row, col)` order and a label only improves on a strictly
/// smaller distance, so equal inputs give equal paths.
pub fn least_cost_path(cost: &Raster, a: Pixel, b: Pixel) -> Result<Polyline> {
    let (w, h) = (cost.width(), cost.height());
    for &(r, c) in &[a, b] {
        if r >= h || c >= w {
            return Err(Error::invalid(format!("pixel ({r}, {c}) outside {w}x{h}")));
        }
    }
    if let Some((index, &value)) = cost.data().iter().enumerate().find(|(_, v)| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::invalid(format!("cost[{index}] = {value} is not positive")));
    }
    if a == b {
        return Ok(Polyline {
            pixels: vec![a],
            cost: 0.0,
            nodes: vec![a, b],
        });
    }
    let idx = |r: usize, c: usize| r * w + c;
    let mut dist = vec![f64::INFINITY; w * h];
    let mut prev = vec![usize::MAX; w * h];
    let mut done = vec![false; w * h];
    let mut heap = BinaryHeap::new();
    dist[idx(a.0, a.1)] = 0.0;
    heap.push(Entry {
        dist: 0.0,
        row: a.0,
        col: a.1,
    });
    while let Some(Entry { dist: d, row, col }) = heap.pop() {
        let k = idx(row, col);
        if done[k] {
            continue;
        }
        done[k] = true;
        if (row, col) == b {
            break;
        }
        for (dr, dc) in NEIGHBOURS {
            let (nr, nc) = (row as isize + dr, col as isize + dc);
            if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                continue;
            }
            let (nr, nc) = (nr as usize, nc as usize);
            let nk = idx(nr, nc);
            if done[nk] {
                continue;
            }
            let nd = d + step_cost(cost, (row, col), (nr, nc));
            if nd < dist[nk] {
                dist[nk] = nd;
                prev[nk] = k;
                heap.push(Entry {
                    dist: nd,
                    row: nr,
                    col: nc,
                });
            }
        }
    }
    let bk = idx(b.0, b.1);
    if !done[bk] {
        return Err(Error::Unreachable(a.0, a.1, b.0, b.1));
    }
    let mut pixels = vec![b];
    let mut k = bk;
    while prev[k] != usize::MAX {
        k = prev[k];
        pixels.push((k / w, k % w));
    }
    pixels.reverse();
    Ok(Polyline {
        cost: dist[bk],
        pixels,
        nodes: vec![a, b],
    })
}

/// Least-cost paths between consecutive control points, concatenated.
/// Junction pixels appear once; if a later segment revisits an earlier
/// pixel the loop in between is cut out.
pub fn trace_on_cost(cost: &Raster, pts: &ControlPoints) -> Result<Polyline> {
    pts.check_inside(cost.width(), cost.height())?;
    let mut pixels: Vec<Pixel> = vec![pts.nodes[0]];
    let mut position: HashMap<Pixel, usize> = HashMap::from([(pts.nodes[0], 0)]);
    for pair in pts.nodes.windows(2) {
        let seg = least_cost_path(cost, pair[0], pair[1])?;
        for &p in &seg.pixels[1..] {
            if let Some(&i) = position.get(&p) {
                for q in pixels.drain(i + 1..) {
                    position.remove(&q);
                }
            } else {
                position.insert(p, pixels.len());
                pixels.push(p);
            }
        }
    }
    Ok(Polyline {
        cost: path_cost(cost, &pixels),
        pixels,
        nodes: pts.nodes.clone(),
    })
}

pub fn trace_centerline(resp: &ResponseMap, pts: &ControlPoints, n_pow: f64) -> Result<Polyline> {
    pts.check_inside(resp.response.width(), resp.response.height())?;
    trace_on_cost(&cost_map(resp, n_pow)?, pts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn resp(w: usize, h: usize, f: impl FnMut(usize, usize) -> f64) -> ResponseMap {
        ResponseMap::from_raster(Raster::from_fn(w, h, RasterKind::Response, f).unwrap()).unwrap()
    }

    #[test]
    fn cost_map_values() {
        let r = resp(3, 1, |_, c| [4.0, 0.0, 2.0][c]);
        let c = cost_map(&r, 10.0).unwrap();
        assert_eq!(c.data()[0], COST_EPSILON);
        assert_eq!(c.data()[1], 1.0 + COST_EPSILON);
        assert_relative_eq!(c.data()[2], 9.7756e-4, max_relative = 1e-4);
        assert_eq!(c.data()[2], 2f64.powi(-10) + COST_EPSILON);
        assert!(matches!(cost_map(&resp(2, 2, |_, _| 0.0), 10.0), Err(Error::Featureless)));
        assert!(cost_map(&r, 0.0).is_err());
    }

    #[test]
    fn uniform_diagonal() {
        let cost = Raster::filled(3, 3, RasterKind::Cost, 1.0).unwrap();
        let p = least_cost_path(&cost, (0, 0), (2, 2)).unwrap();
        assert_eq!(p.pixels, vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(p.cost, 2.0 * std::f64::consts::SQRT_2);
        let same = least_cost_path(&cost, (1, 2), (1, 2)).unwrap();
        assert_eq!(same.pixels, vec![(1, 2)]);
        assert_eq!(same.cost, 0.0);
    }

    /// Exhaustive depth-first enumeration of simple 8-connected paths.
    fn brute_force(cost: &Raster, a: Pixel, b: Pixel) -> f64 {
        fn go(cost: &Raster, p: Pixel, b: Pixel, visited: u64, acc: f64, best: &mut f64) {
            if p == b {
                *best = best.min(acc);
                return;
            }
            let (w, h) = (cost.width() as isize, cost.height() as isize);
            for (dr, dc) in NEIGHBOURS {
                let (r, c) = (p.0 as isize + dr, p.1 as isize + dc);
                if r < 0 || c < 0 || r >= h || c >= w {
                    continue;
                }
                let bit = 1u64 << (r * w + c);
                if visited & bit != 0 {
                    continue;
                }
                let q = (r as usize, c as usize);
                go(cost, q, b, visited | bit, acc + step_cost(cost, p, q), best);
            }
        }
        let mut best = f64::INFINITY;
        go(cost, a, b, 1u64 << (a.0 * cost.width() + a.1), 0.0, &mut best);
        best
    }

    #[test]
    fn matches_exhaustive_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..20 {
            let cost = Raster::from_fn(4, 4, RasterKind::Cost, |_, _| rng.random_range(0.05..2.0)).unwrap();
            let a = (rng.random_range(0..4), rng.random_range(0..4));
            let b = (rng.random_range(0..4), rng.random_range(0..4));
            let p = least_cost_path(&cost, a, b).unwrap();
            p.check_valid().unwrap();
            assert_eq!((p.pixels[0], *p.pixels.last().unwrap()), (a, b));
            let oracle = if a == b { 0.0 } else { brute_force(&cost, a, b) };
            assert_relative_eq!(p.cost, oracle, max_relative = 1e-12);
            assert_relative_eq!(path_cost(&cost, &p.pixels), p.cost, max_relative = 1e-12);
        }
    }

    #[test]
    fn collinear_nodes_give_straight_line() {
        let cost = Raster::filled(12, 5, RasterKind::Cost, 1.0).unwrap();
        let pts = ControlPoints::new("r", vec![(2, 0), (2, 5), (2, 11)]).unwrap();
        let line = trace_on_cost(&cost, &pts).unwrap();
        assert_eq!(line.pixels, (0..12).map(|c| (2, c)).collect::<Vec<_>>());
        line.check_valid().unwrap();
        assert_eq!(line.cost, 11.0);
    }

    #[test]
    fn revisits_are_cut() {
        // second leg comes straight back along the first
        let cost = Raster::filled(8, 3, RasterKind::Cost, 1.0).unwrap();
        let pts = ControlPoints::new("r", vec![(1, 0), (1, 6), (1, 3)]).unwrap();
        let line = trace_on_cost(&cost, &pts).unwrap();
        line.check_valid().unwrap();
        assert_eq!(line.pixels, (0..4).map(|c| (1, c)).collect::<Vec<_>>());
    }

    #[test]
    fn follows_dark_strip() {
        // vertical band of strong response with a kink
        let on = |r: usize, c: usize| {
            let axis = if r < 20 { 10 } else { 14 };
            c.abs_diff(axis) <= 1 || (r == 20 && (10..=14).contains(&c))
        };
        let rm = resp(30, 40, |r, c| if on(r, c) { 5.0 } else { 0.1 });
        let pts = ControlPoints::new("r", vec![(0, 10), (39, 14)]).unwrap();
        let line = trace_centerline(&rm, &pts, 10.0).unwrap();
        line.check_valid().unwrap();
        assert_eq!(line.pixels[0], (0, 10));
        assert_eq!(*line.pixels.last().unwrap(), (39, 14));
        assert!(line.pixels.iter().all(|&(r, c)| on(r, c)));
    }

    #[test]
    fn invalid_inputs() {
        let cost = Raster::filled(4, 4, RasterKind::Cost, 1.0).unwrap();
        assert!(least_cost_path(&cost, (0, 0), (4, 0)).is_err());
        assert!(ControlPoints::new("r", vec![(0, 0)]).is_err());
        let pts = ControlPoints::new("r", vec![(0, 0), (9, 9)]).unwrap();
        assert!(trace_on_cost(&cost, &pts).is_err());
        let zero = Raster::filled(4, 4, RasterKind::Cost, 0.0).unwrap();
        assert!(least_cost_path(&zero, (0, 0), (1, 1)).is_err());
    }

    proptest! {
        #[test]
        fn power_law_pins_endpoints(d in 0.0f64..1.0, n1 in 0.5f64..20.0, extra in 0.0f64..20.0) {
            let r = resp(3, 1, |_, c| [1.0, 0.0, d][c]);
            let lo = cost_map(&r, n1).unwrap();
            let hi = cost_map(&r, n1 + extra).unwrap();
            prop_assert!(hi.data()[0] <= lo.data()[0]);
            prop_assert!(hi.data()[1] >= lo.data()[1]);
            prop_assert!(hi.data()[2] <= lo.data()[2]);
        }

        #[test]
        fn random_paths_are_valid_and_deterministic(seed in any::<u64>(), w in 2usize..14, h in 2usize..14) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // coarse costs make ties common
            let cost = Raster::from_fn(w, h, RasterKind::Cost, |_, _| rng.random_range(1..4) as f64).unwrap();
            let nodes: Vec<Pixel> = (0..3).map(|_| (rng.random_range(0..h), rng.random_range(0..w))).collect();
            let pts = ControlPoints::new("r", nodes.clone()).unwrap();
            let a = trace_on_cost(&cost, &pts).unwrap();
            let b = trace_on_cost(&cost, &pts).unwrap();
            a.check_valid().unwrap();
            prop_assert_eq!(a.pixels[0], nodes[0]);
            prop_assert_eq!(*a.pixels.last().unwrap(), nodes[2]);
            prop_assert_eq!(a, b);
        }
    }
}
