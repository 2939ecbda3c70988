//! Marching cubes. The case table is generated at startup: on each cube face
//! the sign-change edges are joined into segments (an ambiguous face cuts off
//! each inside corner separately, so neighboring cubes agree), segments are
//! chained into closed loops, and every loop is fan-triangulated.

use std::collections::HashMap;
use std::sync::OnceLock;

use crate::geometry::{TriangleMesh, Vec3};

use super::TsdfVolume;

/// Corner `c` sits at offset `(c & 1, (c >> 1) & 1, (c >> 2) & 1)`.
const fn corner_offset(c: usize) -> [usize; 3] {
    [c & 1, (c >> 1) & 1, (c >> 2) & 1]
}

/// Edges as corner pairs; the first corner is the lower one along the edge axis.
const EDGES: [(usize, usize); 12] = [
    (0, 1),
    (2, 3),
    (4, 5),
    (6, 7),
    (0, 2),
    (1, 3),
    (4, 6),
    (5, 7),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

/// Faces as corner cycles.
const FACES: [[usize; 4]; 6] = [
    [0, 2, 6, 4],
    [1, 3, 7, 5],
    [0, 1, 5, 4],
    [2, 3, 7, 6],
    [0, 1, 3, 2],
    [4, 5, 7, 6],
];

fn edge_between(a: usize, b: usize) -> usize {
    EDGES
        .iter()
        .position(|&(p, q)| (p == a && q == b) || (p == b && q == a))
        .expect("corners share an edge")
}

fn edge_axis(e: usize) -> usize {
    let (a, b) = EDGES[e];
    (a ^ b).trailing_zeros() as usize
}

type CaseTable = Vec<Vec<[u8; 3]>>;

fn triangulate_case(case: usize) -> Vec<[u8; 3]> {
    let inside = |c: usize| case & (1 << c) != 0;
    let mut links: Vec<Vec<usize>> = vec![Vec::new(); 12];
    for face in &FACES {
        let cut: Vec<usize> = (0..4)
            .filter(|&k| inside(face[k]) != inside(face[(k + 1) % 4]))
            .collect();
        let edge = |k: usize| edge_between(face[k], face[(k + 1) % 4]);
        let mut connect = |a: usize, b: usize| {
            links[a].push(b);
            links[b].push(a);
        };
        match cut.len() {
            0 => {}
            2 => connect(edge(cut[0]), edge(cut[1])),
            4 => {
                // separate each inside corner: corner k is bounded by face edges k-1 and k
                for k in 0..4 {
                    if inside(face[k]) {
                        connect(edge((k + 3) % 4), edge(k));
                    }
                }
            }
            _ => unreachable!("a 4-cycle has an even number of sign changes"),
        }
    }
    let mut seen = [false; 12];
    let mut tris = Vec::new();
    for start in 0..12 {
        if seen[start] || links[start].is_empty() {
            continue;
        }
        let mut lp = vec![start];
        seen[start] = true;
        let mut prev = start;
        let mut cur = links[start][0];
        while cur != start {
            lp.push(cur);
            seen[cur] = true;
            let next = if links[cur][0] != prev { links[cur][0] } else { links[cur][1] };
            prev = cur;
            cur = next;
        }
        for k in 1..lp.len() - 1 {
            tris.push([lp[0] as u8, lp[k] as u8, lp[k + 1] as u8]);
        }
    }
    tris
}

fn case_table() -> &'static CaseTable {
    static TABLE: OnceLock<CaseTable> = OnceLock::new();
    TABLE.get_or_init(|| (0..256).map(triangulate_case).collect())
}

pub(super) fn extract(vol: &TsdfVolume) -> TriangleMesh {
    let [nx, ny, nz] = vol.dims;
    let table = case_table();
    let mut mesh = TriangleMesh::default();
    if nx < 2 || ny < 2 || nz < 2 {
        return mesh;
    }
    let mut vertex_ids: HashMap<(usize, usize), u32> = HashMap::new();
    let mut values = [0.0f64; 8];
    for z in 0..nz - 1 {
        for y in 0..ny - 1 {
            for x in 0..nx - 1 {
                let mut case = 0;
                let mut observed = true;
                for (c, v) in values.iter_mut().enumerate() {
                    let [dx, dy, dz] = corner_offset(c);
                    let i = vol.index(x + dx, y + dy, z + dz);
                    if vol.weight[i] <= 0.0 {
                        observed = false;
                        break;
                    }
                    *v = vol.tsdf[i] as f64;
                    if *v < 0.0 {
                        case |= 1 << c;
                    }
                }
                if !observed || case == 0 || case == 255 {
                    continue;
                }
                // tsdf gradient across the cube; triangles face along it
                let mut grad = Vec3::zeros();
                for &(a, b) in &EDGES {
                    let axis = (a ^ b).trailing_zeros() as usize;
                    grad[axis] += values[b] - values[a];
                }
                for tri in &table[case] {
                    let mut ids = [0u32; 3];
                    let mut pos = [Vec3::zeros(); 3];
                    for k in 0..3 {
                        let e = tri[k] as usize;
                        let (a, b) = EDGES[e];
                        let [ax, ay, az] = corner_offset(a);
                        let base = vol.index(x + ax, y + ay, z + az);
                        let key = (base, edge_axis(e));
                        let (fa, fb) = (values[a], values[b]);
                        let t = fa / (fa - fb);
                        let pa = vol.voxel_center(x + ax, y + ay, z + az);
                        let mut p = pa;
                        p[edge_axis(e)] += t * vol.voxel_size;
                        let id = *vertex_ids.entry(key).or_insert_with(|| {
                            mesh.vertices.push(p);
                            (mesh.vertices.len() - 1) as u32
                        });
                        ids[k] = id;
                        pos[k] = mesh.vertices[id as usize];
                    }
                    let n = (pos[1] - pos[0]).cross(&(pos[2] - pos[0]));
                    if n.norm() <= 1e-12 * vol.voxel_size * vol.voxel_size {
                        continue;
                    }
                    if n.dot(&grad) < 0.0 {
                        ids.swap(1, 2);
                    }
                    mesh.triangles.push(ids);
                }
            }
        }
    }
    mesh
}
