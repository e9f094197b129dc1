//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::VecDeque;

use sinfuse::volume::BinaryMask;

fn neighbours(conn: u8) -> Vec<[i64; 3]> {
    let mut out = Vec::new();
    for dz in -1..=1i64 {
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                let nonzero = [dx, dy, dz].iter().filter(|&&d| d != 0).count();
                let keep = match conn {
                    6 => nonzero == 1,
                    18 => nonzero == 1 || nonzero == 2,
                    _ => nonzero >= 1,
                };
                if keep {
                    out.push([dx, dy, dz]);
                }
            }
        }
    }
    out
}

/// Breadth-first flood fill in raster order; labels start at 1.
pub fn flood_fill_labels(bits: &[bool], dims: [usize; 3], conn: u8) -> Vec<u32> {
    let idx = |x: usize, y: usize, z: usize| x + dims[0] * (y + dims[1] * z);
    let offs = neighbours(conn);
    let mut labels = vec![0u32; bits.len()];
    let mut next = 0;
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let start = idx(x, y, z);
                if !bits[start] || labels[start] != 0 {
                    continue;
                }
                next += 1;
                labels[start] = next;
                let mut queue = VecDeque::from([[x, y, z]]);
                while let Some(p) = queue.pop_front() {
                    for o in &offs {
                        let q = [0, 1, 2].map(|a| p[a] as i64 + o[a]);
                        if (0..3).any(|a| q[a] < 0 || q[a] >= dims[a] as i64) {
                            continue;
                        }
                        let q = q.map(|v| v as usize);
                        let j = idx(q[0], q[1], q[2]);
                        if bits[j] && labels[j] == 0 {
                            labels[j] = next;
                            queue.push_back(q);
                        }
                    }
                }
            }
        }
    }
    labels
}

fn coords(i: usize, dims: [usize; 3]) -> [usize; 3] {
    [
        i % dims[0],
        (i / dims[0]) % dims[1],
        i / (dims[0] * dims[1]),
    ]
}

/// Foreground voxels with a face neighbour outside the mask or the grid.
pub fn boundary(m: &BinaryMask) -> Vec<[usize; 3]> {
    let dims = m.dims();
    let bits = m.bits();
    let mut out = Vec::new();
    for (i, &b) in bits.iter().enumerate() {
        if !b {
            continue;
        }
        let c = coords(i, dims);
        let edge = (0..3).any(|a| {
            [-1i64, 1].iter().any(|&d| {
                let v = c[a] as i64 + d;
                if v < 0 || v >= dims[a] as i64 {
                    return true;
                }
                let mut n = c;
                n[a] = v as usize;
                !bits[n[0] + dims[0] * (n[1] + dims[1] * n[2])]
            })
        });
        if edge {
            out.push(c);
        }
    }
    out
}

fn directed(from: &[[usize; 3]], to: &[[usize; 3]], sp: [f64; 3]) -> f64 {
    let mut d: Vec<f64> = from
        .iter()
        .map(|p| {
            to.iter()
                .map(|q| {
                    (0..3)
                        .map(|a| ((p[a] as f64 - q[a] as f64) * sp[a]).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    d.sort_by(f64::total_cmp);
    let h = 0.95 * (d.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    d[lo] + (h - lo as f64) * (d[hi] - d[lo])
}

/// All-pairs HD95 using the spacing of `r`.
pub fn brute_hd95(s: &BinaryMask, r: &BinaryMask) -> f64 {
    let sp = r.spacing().mm();
    let (bs, br) = (boundary(s), boundary(r));
    directed(&bs, &br, sp).max(directed(&br, &bs, sp))
}
