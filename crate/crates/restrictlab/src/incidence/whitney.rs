//! Dyadic cubes of the unit cube and the Whitney decomposition of the
//! off-diagonal set: same-level pairs whose parents touch while the cubes
//! themselves do not.

use serde::{Deserialize, Serialize};

/// Half-open dyadic cube `prod [c_i 2^{-j}, (c_i + 1) 2^{-j})` in `[0,1)^m`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DyadicCube {
    pub level: u32,
    pub corner: Vec<i64>,
}

impl DyadicCube {
    pub fn containing(point: &[f64], level: u32) -> Self {
        let scale = (1u64 << level) as f64;
        DyadicCube {
            level,
            corner: point
                .iter()
                .map(|&x| {
                    let i = (x * scale).floor() as i64;
                    i.clamp(0, (1i64 << level) - 1)
                })
                .collect(),
        }
    }

    pub fn side(&self) -> f64 {
        0.5f64.powi(self.level as i32)
    }

    pub fn parent(&self) -> DyadicCube {
        assert!(self.level > 0);
        DyadicCube { level: self.level - 1, corner: self.corner.iter().map(|c| c >> 1).collect() }
    }

    /// Closed-cube adjacency: closures intersect iff the integer corners
    /// differ by at most 1 on every axis (same level only).
    pub fn adjacent(&self, other: &DyadicCube) -> bool {
        assert_eq!(self.level, other.level);
        self.corner.iter().zip(&other.corner).all(|(a, b)| (a - b).abs() <= 1)
    }

    /// Euclidean distance between the closed cubes.
    pub fn distance(&self, other: &DyadicCube) -> f64 {
        assert_eq!(self.level, other.level);
        let s = self.side();
        self.corner
            .iter()
            .zip(&other.corner)
            .map(|(a, b)| {
                let gap = ((a - b).abs() - 1).max(0) as f64 * s;
                gap * gap
            })
            .sum::<f64>()
            .sqrt()
    }

    /// The selection relation: parents adjacent, cubes not adjacent.
    pub fn whitney_related(&self, other: &DyadicCube) -> bool {
        self.level >= 1
            && !self.adjacent(other)
            && self.parent().adjacent(&other.parent())
    }
}

/// All selected pairs per level up to `j_max`, for the unit cube in
/// dimension `m`. Each unordered pair appears once, lexicographically
/// ordered by corner.
pub fn whitney_pairs(j_max: u32, m: usize) -> Vec<(u32, Vec<(DyadicCube, DyadicCube)>)> {
    assert!(j_max >= 1);
    let mut out = Vec::new();
    for j in 1..=j_max {
        let n = 1i64 << j;
        let mut pairs = Vec::new();
        let mut corner = vec![0i64; m];
        loop {
            let a = DyadicCube { level: j, corner: corner.clone() };
            // candidate partners sit within 3 steps per axis (parents touch)
            let mut offs = vec![-3i64; m];
            loop {
                let b_corner: Vec<i64> =
                    corner.iter().zip(&offs).map(|(c, o)| c + o).collect();
                if b_corner.iter().all(|&c| c >= 0 && c < n) && b_corner > corner {
                    let b = DyadicCube { level: j, corner: b_corner };
                    if a.whitney_related(&b) {
                        pairs.push((a.clone(), b));
                    }
                }
                let mut axis = m;
                let mut done = false;
                loop {
                    if axis == 0 {
                        done = true;
                        break;
                    }
                    axis -= 1;
                    offs[axis] += 1;
                    if offs[axis] <= 3 {
                        break;
                    }
                    offs[axis] = -3;
                }
                if done {
                    break;
                }
            }
            let mut axis = m;
            let mut done = false;
            loop {
                if axis == 0 {
                    done = true;
                    break;
                }
                axis -= 1;
                corner[axis] += 1;
                if corner[axis] < n {
                    break;
                }
                corner[axis] = 0;
            }
            if done {
                break;
            }
        }
        out.push((j, pairs));
    }
    out
}

/// Levels at which the pair of cubes containing `(z, w)` is selected.
/// For every off-diagonal pair of interior points exactly one level
/// qualifies (the decomposition property).
pub fn selected_levels(z: &[f64], w: &[f64], j_max: u32) -> Vec<u32> {
    (1..=j_max)
        .filter(|&j| {
            let a = DyadicCube::containing(z, j);
            let b = DyadicCube::containing(w, j);
            a.whitney_related(&b) || b.whitney_related(&a)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Brute-force oracle: enumerate every same-level pair directly.
    fn brute_force_pairs(j: u32, m: usize) -> Vec<(Vec<i64>, Vec<i64>)> {
        let n = 1i64 << j;
        let total = (n as usize).pow(m as u32);
        let decode = |mut f: usize| -> Vec<i64> {
            let mut c = vec![0i64; m];
            for a in (0..m).rev() {
                c[a] = (f % n as usize) as i64;
                f /= n as usize;
            }
            c
        };
        let mut pairs = Vec::new();
        for i in 0..total {
            for l in (i + 1)..total {
                let a = DyadicCube { level: j, corner: decode(i) };
                let b = DyadicCube { level: j, corner: decode(l) };
                if a.whitney_related(&b) {
                    pairs.push((a.corner, b.corner));
                }
            }
        }
        pairs.sort();
        pairs
    }

    #[test]
    fn matches_brute_force_enumeration() {
        for m in [1usize, 2] {
            let max_j = if m == 1 { 6 } else { 5 };
            let all = whitney_pairs(max_j, m);
            for (j, pairs) in &all {
                let mut got: Vec<(Vec<i64>, Vec<i64>)> = pairs
                    .iter()
                    .map(|(a, b)| (a.corner.clone(), b.corner.clone()))
                    .collect();
                got.sort();
                assert_eq!(got, brute_force_pairs(*j, m), "level {j}, dim {m}");
            }
        }
    }

    #[test]
    fn no_pairs_at_level_one_in_dim_one() {
        let all = whitney_pairs(3, 1);
        assert!(all[0].1.is_empty(), "the two halves touch, so level 1 selects nothing");
        assert!(!all[1].1.is_empty());
    }

    #[test]
    fn separation_and_containment_bounds() {
        // selected pairs: dist/side in [1, 8] (measured min is 1, which
        // sits above the 1/2 floor) and both cubes fit in a ball of radius
        // 2^{2-j} around their joint center
        for m in [1usize, 2] {
            for (j, pairs) in whitney_pairs(6.min(if m == 1 { 6 } else { 5 }), m) {
                for (a, b) in pairs {
                    let s = a.side();
                    let dist = a.distance(&b);
                    assert!(dist / s >= 0.5, "ratio {} at level {j}", dist / s);
                    assert!(dist / s <= 8.0, "ratio {} at level {j}", dist / s);
                    // joint ball: all corner points within 2^{2-j} of the
                    // midpoint of the two cube centers
                    let centers: Vec<Vec<f64>> = [&a, &b]
                        .iter()
                        .map(|c| {
                            c.corner.iter().map(|&x| (x as f64 + 0.5) * s).collect()
                        })
                        .collect();
                    let mid: Vec<f64> = (0..m)
                        .map(|i| (centers[0][i] + centers[1][i]) / 2.0)
                        .collect();
                    let rad = 2f64.powi(2 - j as i32);
                    for c in &centers {
                        let dd: f64 = c
                            .iter()
                            .zip(&mid)
                            .map(|(x, y)| (x - y) * (x - y))
                            .sum::<f64>()
                            .sqrt();
                        // cube half-diagonal on top of the center offset
                        assert!(dd + s * (m as f64).sqrt() / 2.0 <= rad + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn off_diagonal_points_covered_exactly_once() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for m in [1usize, 2] {
            for _ in 0..300 {
                let z: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..1.0)).collect();
                let w: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..1.0)).collect();
                let sep: f64 = z
                    .iter()
                    .zip(&w)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                if sep < 1e-3 {
                    continue;
                }
                // enough levels to separate the pair
                let j_max = 14;
                let levels = selected_levels(&z, &w, j_max);
                assert_eq!(
                    levels.len(),
                    1,
                    "pair {z:?}, {w:?} selected at levels {levels:?}"
                );
            }
        }
    }

    #[test]
    fn classic_example_selected_at_level_two() {
        let levels = selected_levels(&[0.1], &[0.9], 8);
        assert_eq!(levels, vec![2]);
    }
}
