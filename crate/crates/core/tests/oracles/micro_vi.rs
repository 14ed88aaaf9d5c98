//! Straight-line value iteration on a tiny grid, written without any of the
//! crate's solver code: plain nested loops, eight-corner trilinear weights,
//! and its own margin and kinematics. Used as the reference table.

use std::f64::consts::TAU;

use acofi_core::{GridSpec, WorldConfig};

pub struct Micro {
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
    pub gamma: f64,
    pub v: f64,
    pub omega: f64,
}

impl Micro {
    pub fn spec(&self) -> GridSpec {
        GridSpec { nx: self.nx, ny: self.ny, ntheta: self.nt }
    }

    fn idx(&self, i: usize, j: usize, k: usize, a: usize) -> usize {
        ((i * self.ny + j) * self.nt + k) * 3 + a
    }

    fn margin(&self, w: &WorldConfig, x: f64, y: f64) -> f64 {
        let mut m = w.margin_cap;
        for o in &w.obstacles {
            let d = ((x - o.x).powi(2) + (y - o.y).powi(2)).sqrt() - o.radius;
            if d < m {
                m = d;
            }
        }
        m
    }

    /// Q at an arbitrary point for action `a`, from table `q`.
    fn interp(&self, w: &WorldConfig, q: &[f64], x: f64, y: f64, th: f64, a: usize) -> f64 {
        let b = &w.bounds;
        let hx = (b.max_x - b.min_x) / (self.nx - 1) as f64;
        let hy = (b.max_y - b.min_y) / (self.ny - 1) as f64;
        let ht = TAU / self.nt as f64;
        let fx = ((x - b.min_x) / hx).max(0.0).min((self.nx - 1) as f64);
        let fy = ((y - b.min_y) / hy).max(0.0).min((self.ny - 1) as f64);
        let ft = th.rem_euclid(TAU) / ht;
        let ix = (fx.floor() as usize).min(self.nx - 2);
        let iy = (fy.floor() as usize).min(self.ny - 2);
        let it = ft.floor() as usize;
        let (wx, wy, wt) = (fx - ix as f64, fy - iy as f64, ft - it as f64);
        let mut acc = 0.0;
        for (di, cx) in [(0, 1.0 - wx), (1, wx)] {
            for (dj, cy) in [(0, 1.0 - wy), (1, wy)] {
                for (dk, ct) in [(0, 1.0 - wt), (1, wt)] {
                    acc += cx * cy * ct * q[self.idx(ix + di, iy + dj, (it + dk) % self.nt, a)];
                }
            }
        }
        acc
    }

    /// Iterates until successive tables differ by less than `tol` everywhere.
    pub fn solve(&self, w: &WorldConfig, tol: f64) -> Vec<f64> {
        let b = &w.bounds;
        let hx = (b.max_x - b.min_x) / (self.nx - 1) as f64;
        let hy = (b.max_y - b.min_y) / (self.ny - 1) as f64;
        let ht = TAU / self.nt as f64;
        let n = self.nx * self.ny * self.nt * 3;
        let mut q = vec![0.0; n];
        for i in 0..self.nx {
            for j in 0..self.ny {
                for k in 0..self.nt {
                    for a in 0..3 {
                        q[self.idx(i, j, k, a)] = self.margin(w, b.min_x + i as f64 * hx, b.min_y + j as f64 * hy);
                    }
                }
            }
        }
        loop {
            let mut next = vec![0.0; n];
            let mut diff: f64 = 0.0;
            for i in 0..self.nx {
                for j in 0..self.ny {
                    for k in 0..self.nt {
                        let (x, y, th) = (b.min_x + i as f64 * hx, b.min_y + j as f64 * hy, k as f64 * ht);
                        let l = self.margin(w, x, y);
                        for a in 0..3 {
                            let turn = (a as f64 - 1.0) * self.omega;
                            let (x2, y2, th2) = (x + self.v * th.cos(), y + self.v * th.sin(), th + turn);
                            let v2 = (0..3).map(|b2| self.interp(w, &q, x2, y2, th2, b2)).fold(f64::MIN, f64::max);
                            let t = (1.0 - self.gamma) * l + self.gamma * l.min(v2);
                            diff = diff.max((t - q[self.idx(i, j, k, a)]).abs());
                            next[self.idx(i, j, k, a)] = t;
                        }
                    }
                }
            }
            q = next;
            if diff < tol {
                return q;
            }
        }
    }
}

/// The 5x5x4, γ = 0.9 reference problem over the default world.
pub fn micro() -> Micro {
    Micro { nx: 5, ny: 5, nt: 4, gamma: 0.9, v: 0.02, omega: 0.05 }
}
