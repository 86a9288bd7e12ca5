//! Isosurface extraction via marching cubes, plus mesh export.
//!
//! The 256-entry case table is generated at first use rather than
//! transcribed: for every corner-sign configuration, each cube face is cut
//! by marching squares (ambiguous diagonal faces always connect the inside
//! corners), the resulting directed segments are linked into closed loops,
//! and loops are fan-triangulated. The per-face rule depends only on which
//! corners are inside, so adjacent cells always agree on shared faces and
//! interior surfaces come out watertight.

use crate::error::{Error, Result};
use crate::inr::{evaluate, grid_coords_3d, WeightVector};
use crate::tensor::Tensor;
use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

/// Corner i sits at (i&1, i>>1&1, i>>2&1).
fn corner_bits(c: usize) -> [usize; 3] {
    [c & 1, (c >> 1) & 1, (c >> 2) & 1]
}

/// The 12 cube edges as corner pairs (a < b), in a fixed enumeration order.
fn edges() -> [(usize, usize); 12] {
    let mut out = [(0, 0); 12];
    let mut n = 0;
    for a in 0..8 {
        for b in (a + 1)..8 {
            if (a ^ b as usize).count_ones() == 1 {
                out[n] = (a, b);
                n += 1;
            }
        }
    }
    debug_assert_eq!(n, 12);
    out
}

fn edge_id(table: &[(usize, usize); 12], a: usize, b: usize) -> usize {
    let key = (a.min(b), a.max(b));
    table.iter().position(|&e| e == key).expect("corner pair is a cube edge")
}

/// Corners of one face in cyclic order, counter-clockwise seen from outside.
fn face_corners(axis: usize, side: usize) -> [usize; 4] {
    let u = (axis + 1) % 3;
    let v = (axis + 2) % 3;
    let uv = [(0, 0), (1, 0), (1, 1), (0, 1)];
    let mut corners = [0usize; 4];
    for (idx, &(du, dv)) in uv.iter().enumerate() {
        let mut bits = [0usize; 3];
        bits[axis] = side;
        bits[u] = du;
        bits[v] = dv;
        corners[idx] = bits[0] | (bits[1] << 1) | (bits[2] << 2);
    }
    if side == 0 {
        corners.swap(1, 3);
    }
    corners
}

/// Triangles (as edge-id triples) for one corner configuration.
fn triangulate_config(config: usize, edge_table: &[(usize, usize); 12]) -> Vec<[usize; 3]> {
    let inside = |c: usize| (config >> c) & 1 == 1;
    // directed surface segments: crossed edge -> crossed edge, inside on
    // the left seen from outside the cube
    let mut next: BTreeMap<usize, usize> = BTreeMap::new();
    for axis in 0..3 {
        for side in 0..2 {
            let q = face_corners(axis, side);
            // crossings indexed by boundary position; true = in->out (start)
            let mut crossing = [None::<(usize, bool)>; 4];
            for i in 0..4 {
                let (a, b) = (q[i], q[(i + 1) % 4]);
                if inside(a) != inside(b) {
                    crossing[i] = Some((edge_id(edge_table, a, b), inside(a)));
                }
            }
            for i in 0..4 {
                if let Some((from, true)) = crossing[i] {
                    // pair with the next end walking the boundary forward;
                    // on diagonal-ambiguous faces this connects the two
                    // inside corners — fixed rule, shared by both cells
                    for step in 1..4 {
                        if let Some((to, false)) = crossing[(i + step) % 4] {
                            next.insert(from, to);
                            break;
                        }
                    }
                }
            }
        }
    }
    let mut triangles = Vec::new();
    let mut visited: Vec<usize> = Vec::new();
    let starts: Vec<usize> = next.keys().copied().collect();
    for start in starts {
        if visited.contains(&start) {
            continue;
        }
        let mut ring = vec![start];
        let mut at = next[&start];
        while at != start {
            ring.push(at);
            at = next[&at];
        }
        visited.extend_from_slice(&ring);
        for i in 1..ring.len() - 1 {
            triangles.push([ring[0], ring[i], ring[i + 1]]);
        }
    }
    triangles
}

fn build_table() -> Vec<Vec<[usize; 3]>> {
    let edge_table = edges();
    let mut table: Vec<Vec<[usize; 3]>> =
        (0..256).map(|cfg| triangulate_config(cfg, &edge_table)).collect();
    // calibrate orientation on the single-corner case: the surface around
    // an inside corner at the origin must face away from it
    let midpoints: Vec<[f64; 3]> = edge_table
        .iter()
        .map(|&(a, b)| {
            let (pa, pb) = (corner_bits(a), corner_bits(b));
            [
                (pa[0] + pb[0]) as f64 * 0.5,
                (pa[1] + pb[1]) as f64 * 0.5,
                (pa[2] + pb[2]) as f64 * 0.5,
            ]
        })
        .collect();
    let tri = table[1][0];
    let (p0, p1, p2) = (midpoints[tri[0]], midpoints[tri[1]], midpoints[tri[2]]);
    let u = [p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]];
    let v = [p2[0] - p0[0], p2[1] - p0[1], p2[2] - p0[2]];
    let normal_dot = (u[1] * v[2] - u[2] * v[1])
        + (u[2] * v[0] - u[0] * v[2])
        + (u[0] * v[1] - u[1] * v[0]); // n · (1,1,1)
    if normal_dot < 0.0 {
        for tris in table.iter_mut() {
            for t in tris.iter_mut() {
                t.swap(1, 2);
            }
        }
    }
    table
}

fn case_table() -> &'static Vec<Vec<[usize; 3]>> {
    static TABLE: OnceLock<Vec<Vec<[usize; 3]>>> = OnceLock::new();
    TABLE.get_or_init(build_table)
}

#[derive(Debug, Clone, Default)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (pa, pb, pc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        let u = [pb[0] - pa[0], pb[1] - pa[1], pb[2] - pa[2]];
        let v = [pc[0] - pa[0], pc[1] - pa[1], pc[2] - pa[2]];
        let n = [
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        ];
        0.5 * (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt()
    }

    /// ASCII Wavefront OBJ.
    pub fn to_obj(&self) -> String {
        let mut out = String::new();
        for v in &self.vertices {
            out.push_str(&format!("v {:.9} {:.9} {:.9}\n", v[0], v[1], v[2]));
        }
        for t in &self.triangles {
            out.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
        }
        out
    }
}

/// Extract the `iso` isosurface of a scalar field sampled on a vertex grid
/// over [−1,1]³ ("inside" = value > iso). Field shape [nx, ny, nz], z fastest.
pub fn marching_cubes(field: &Tensor, iso: f64) -> Result<Mesh> {
    let s = field.shape();
    if s.len() != 3 || s.iter().any(|&n| n < 2) {
        return Err(Error::dimension(format!("field shape {:?}, want [nx>=2, ny>=2, nz>=2]", s)));
    }
    let (nx, ny, nz) = (s[0], s[1], s[2]);
    let at = |i: usize, j: usize, k: usize| field.data()[(i * ny + j) * nz + k];
    let world = |g: usize, n: usize| -1.0 + 2.0 * g as f64 / (n - 1) as f64;
    let edge_table = edges();
    let table = case_table();

    let mut mesh = Mesh::default();
    // global edge key (lower grid point, axis) -> vertex index
    let mut vertex_of: HashMap<(usize, usize, usize, u8), usize> = HashMap::new();

    for i in 0..nx - 1 {
        for j in 0..ny - 1 {
            for k in 0..nz - 1 {
                let mut config = 0usize;
                for c in 0..8 {
                    let [bx, by, bz] = corner_bits(c);
                    if at(i + bx, j + by, k + bz) > iso {
                        config |= 1 << c;
                    }
                }
                for tri in &table[config] {
                    let mut ids = [0usize; 3];
                    for (slot, &e) in tri.iter().enumerate() {
                        let (a, b) = edge_table[e];
                        let (pa, pb) = (corner_bits(a), corner_bits(b));
                        let ga = (i + pa[0], j + pa[1], k + pa[2]);
                        let gb = (i + pb[0], j + pb[1], k + pb[2]);
                        let axis = if pa[0] != pb[0] {
                            0u8
                        } else if pa[1] != pb[1] {
                            1
                        } else {
                            2
                        };
                        let key = (ga.0, ga.1, ga.2, axis);
                        let idx = *vertex_of.entry(key).or_insert_with(|| {
                            let (va, vb) = (at(ga.0, ga.1, ga.2), at(gb.0, gb.1, gb.2));
                            let t = (iso - va) / (vb - va);
                            let lerp = |a: f64, b: f64| a + t * (b - a);
                            mesh.vertices.push([
                                lerp(world(ga.0, nx), world(gb.0, nx)),
                                lerp(world(ga.1, ny), world(gb.1, ny)),
                                lerp(world(ga.2, nz), world(gb.2, nz)),
                            ]);
                            mesh.vertices.len() - 1
                        });
                        ids[slot] = idx;
                    }
                    mesh.triangles.push(ids);
                }
            }
        }
    }
    Ok(mesh)
}

/// Evaluate a 3-D INR on a `res`³ grid and extract the iso-surface
/// (default iso 0.5 for occupancy fields).
pub fn render_mesh(w: &WeightVector, res: usize, iso: f64) -> Result<Mesh> {
    if w.arch.coord_dim != 3 {
        return Err(Error::dimension("render_mesh requires coord_dim 3"));
    }
    if res < 2 {
        return Err(Error::contract("render_mesh needs res >= 2"));
    }
    let out = evaluate(w, &grid_coords_3d(res))?;
    let field = out.reshaped(vec![res, res, res])?;
    marching_cubes(&field, iso)
}
