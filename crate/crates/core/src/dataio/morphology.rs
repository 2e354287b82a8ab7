//! Small binary-image helpers on row-major `bool` grids.

use std::collections::VecDeque;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Grid {
    pub h: usize,
    pub w: usize,
    pub on: Vec<bool>,
}

const N8: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];

impl Grid {
    pub fn new(h: usize, w: usize, on: Vec<bool>) -> Self {
        debug_assert_eq!(on.len(), h * w);
        Grid { h, w, on }
    }

    pub fn count(&self) -> usize {
        self.on.iter().filter(|&&b| b).count()
    }

    pub fn at(&self, y: isize, x: isize) -> Option<bool> {
        (y >= 0 && x >= 0 && (y as usize) < self.h && (x as usize) < self.w)
            .then(|| self.on[y as usize * self.w + x as usize])
    }

    fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let (y, x) = ((i / self.w) as isize, (i % self.w) as isize);
        N8.iter().filter_map(move |&(dy, dx)| {
            let (ny, nx) = (y + dy, x + dx);
            (ny >= 0 && nx >= 0 && (ny as usize) < self.h && (nx as usize) < self.w)
                .then(|| ny as usize * self.w + nx as usize)
        })
    }

    /// Erosion by a `(2r+1)²` square. Pixels beyond the image border count
    /// as set, so the border itself does not erode.
    pub fn erode(&self, r: usize) -> Grid {
        let r = r as isize;
        let mut out = vec![false; self.on.len()];
        for y in 0..self.h as isize {
            for x in 0..self.w as isize {
                let keep = (-r..=r).all(|dy| (-r..=r).all(|dx| self.at(y + dy, x + dx).unwrap_or(true)));
                out[y as usize * self.w + x as usize] = keep;
            }
        }
        Grid::new(self.h, self.w, out)
    }

    /// Largest 8-connected component; ties go to the component met first in
    /// raster order.
    pub fn largest_component(&self) -> Grid {
        let mut label = vec![usize::MAX; self.on.len()];
        let mut best: Option<(usize, usize)> = None; // (size, label)
        let mut next = 0;
        for s in 0..self.on.len() {
            if !self.on[s] || label[s] != usize::MAX {
                continue;
            }
            let mut size = 0;
            let mut queue = VecDeque::from([s]);
            label[s] = next;
            while let Some(i) = queue.pop_front() {
                size += 1;
                for j in self.neighbors(i) {
                    if self.on[j] && label[j] == usize::MAX {
                        label[j] = next;
                        queue.push_back(j);
                    }
                }
            }
            if best.is_none_or(|(bs, _)| size > bs) {
                best = Some((size, next));
            }
            next += 1;
        }
        let on = match best {
            Some((_, l)) => label.iter().map(|&v| v == l).collect(),
            None => vec![false; self.on.len()],
        };
        Grid::new(self.h, self.w, on)
    }

    /// Zhang–Suen thinning.
    pub fn thin(&self) -> Grid {
        let mut g = self.clone();
        loop {
            let mut changed = false;
            for pass in 0..2 {
                let mut remove = Vec::new();
                for y in 0..g.h as isize {
                    for x in 0..g.w as isize {
                        if !g.on[y as usize * g.w + x as usize] {
                            continue;
                        }
                        // P2..P9 clockwise from north
                        let p: [bool; 8] = [
                            g.at(y - 1, x).unwrap_or(false),
                            g.at(y - 1, x + 1).unwrap_or(false),
                            g.at(y, x + 1).unwrap_or(false),
                            g.at(y + 1, x + 1).unwrap_or(false),
                            g.at(y + 1, x).unwrap_or(false),
                            g.at(y + 1, x - 1).unwrap_or(false),
                            g.at(y, x - 1).unwrap_or(false),
                            g.at(y - 1, x - 1).unwrap_or(false),
                        ];
                        let b = p.iter().filter(|&&v| v).count();
                        let a = (0..8).filter(|&k| !p[k] && p[(k + 1) % 8]).count();
                        let (c1, c2) = if pass == 0 {
                            (!(p[0] && p[2] && p[4]), !(p[2] && p[4] && p[6]))
                        } else {
                            (!(p[0] && p[2] && p[6]), !(p[0] && p[4] && p[6]))
                        };
                        if (2..=6).contains(&b) && a == 1 && c1 && c2 {
                            remove.push(y as usize * g.w + x as usize);
                        }
                    }
                }
                changed |= !remove.is_empty();
                for i in remove {
                    g.on[i] = false;
                }
            }
            if !changed {
                return g;
            }
        }
    }

    /// BFS distances and parents from `start` through set pixels.
    fn bfs(&self, start: usize) -> (Vec<usize>, Vec<usize>) {
        let mut dist = vec![usize::MAX; self.on.len()];
        let mut parent = vec![usize::MAX; self.on.len()];
        dist[start] = 0;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            for j in self.neighbors(i) {
                if self.on[j] && dist[j] == usize::MAX {
                    dist[j] = dist[i] + 1;
                    parent[j] = i;
                    queue.push_back(j);
                }
            }
        }
        (dist, parent)
    }

    /// Approximately longest geodesic path inside the component containing
    /// `start` (double BFS sweep).
    pub fn long_path(&self, start: usize) -> Vec<usize> {
        let far = |dist: &[usize]| {
            dist.iter()
                .enumerate()
                .filter(|(_, &d)| d != usize::MAX)
                .max_by_key(|&(i, &d)| (d, std::cmp::Reverse(i)))
                .map(|(i, _)| i)
                .unwrap_or(start)
        };
        let (d0, _) = self.bfs(start);
        let a = far(&d0);
        let (d1, parent) = self.bfs(a);
        let mut i = far(&d1);
        let mut path = vec![i];
        while i != a {
            i = parent[i];
            path.push(i);
        }
        path
    }

    pub fn first_set(&self) -> Option<usize> {
        self.on.iter().position(|&b| b)
    }
}

/// 8-connected Bresenham line, endpoints inclusive.
pub(crate) fn line(y0: isize, x0: isize, y1: isize, x1: isize) -> Vec<(isize, isize)> {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = ((x1 - x0).signum(), (y1 - y0).signum());
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    let mut pts = Vec::new();
    loop {
        pts.push((y, x));
        if x == x1 && y == y1 {
            return pts;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

#[cfg(test)]
/// Whether the set pixels form a single 8-connected component.
pub(crate) fn is_connected(g: &Grid) -> bool {
    match g.first_set() {
        None => false,
        Some(s) => {
            let (dist, _) = g.bfs(s);
            g.on.iter().zip(&dist).all(|(&on, &d)| !on || d != usize::MAX)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(h: usize, w: usize, y0: usize, y1: usize, x0: usize, x1: usize) -> Grid {
        let on = (0..h * w)
            .map(|i| (y0..y1).contains(&(i / w)) && (x0..x1).contains(&(i % w)))
            .collect();
        Grid::new(h, w, on)
    }

    #[test]
    fn erosion_shrinks_rectangle() {
        let g = rect(12, 12, 2, 10, 3, 9);
        let e = g.erode(2);
        assert_eq!(e, rect(12, 12, 4, 8, 5, 7));
    }

    #[test]
    fn largest_component_picks_bigger_blob() {
        let mut g = rect(10, 10, 0, 2, 0, 2);
        let big = rect(10, 10, 5, 9, 5, 9);
        for (a, b) in g.on.iter_mut().zip(&big.on) {
            *a |= *b;
        }
        assert_eq!(g.largest_component(), big);
    }

    #[test]
    fn thinning_a_bar_leaves_a_connected_line() {
        let g = rect(9, 20, 2, 7, 2, 18);
        let t = g.thin();
        assert!(t.count() > 5);
        assert!(t.count() < 20);
        assert!(is_connected(&t));
        assert!(t.on.iter().zip(&g.on).all(|(&a, &b)| !a || b));
    }

    #[test]
    fn bresenham_endpoints() {
        let pts = line(0, 0, 3, 7);
        assert_eq!(pts.first(), Some(&(0, 0)));
        assert_eq!(pts.last(), Some(&(3, 7)));
        assert_eq!(pts.len(), 8);
    }
}
