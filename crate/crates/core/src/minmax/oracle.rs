use std::collections::HashMap;

use super::complex::{ClassKind, SublevelComplex};
use crate::error::{Error, Result};

/// Largest complex the exhaustive oracle accepts.
pub const ORACLE_CELL_LIMIT: usize = 10_000;

/// Min-max value of the class computed from first principles.
///
/// The class is represented by an explicit relative cycle: vertex 0 on every
/// interval axis, the sum of all edges on every negative axis, and on periodic
/// axes either vertex 0 (unit) or the sum of all edges (fundamental). A
/// threshold `λ` supports the class iff the cycle plus some boundary vanishes on
/// every cell of value above `λ`, decided by Gaussian elimination over Z/2. The
/// smallest supporting vertex value is found by bisection.
pub fn brute_cycle_oracle(cx: &SublevelComplex, cls: ClassKind) -> Result<f64> {
    if cx.cell_count() > ORACLE_CELL_LIMIT {
        return Err(Error::InvalidInput(format!(
            "brute-force oracle is limited to {ORACLE_CELL_LIMIT} cells, complex has {}",
            cx.cell_count()
        )));
    }
    let cells = Cells::enumerate(cx);
    let d = cx.degree(cls);
    let target: Vec<usize> = cells.by_dim[d]
        .iter()
        .copied()
        .filter(|&c| cells.in_representative(cx, c, cls))
        .collect();
    let cols: Vec<Vec<usize>> = if d + 1 < cells.by_dim.len() {
        cells.by_dim[d + 1].iter().map(|&c| cells.boundary(cx, c)).collect()
    } else {
        Vec::new()
    };
    let mut thresholds: Vec<f64> = cx.values().to_vec();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let supported = |lambda: f64| {
        let rows: Vec<usize> = cells.by_dim[d].iter().copied().filter(|&c| cells.value[c] > lambda).collect();
        if rows.is_empty() {
            return true;
        }
        let pos: HashMap<usize, usize> = rows.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let to_bits = |set: &[usize]| {
            let mut b = BitVec::zeros(rows.len());
            for c in set {
                if let Some(&i) = pos.get(c) {
                    b.flip(i);
                }
            }
            b
        };
        let mut basis: HashMap<usize, BitVec> = HashMap::new();
        for col in &cols {
            let mut v = to_bits(col);
            while let Some(lead) = v.lead() {
                match basis.get(&lead) {
                    Some(b) => v.xor(b),
                    None => {
                        basis.insert(lead, v);
                        break;
                    }
                }
            }
        }
        let mut t = to_bits(&target);
        while let Some(lead) = t.lead() {
            match basis.get(&lead) {
                Some(b) => t.xor(b),
                None => return false,
            }
        }
        true
    };
    // The representative itself lies in the full complex, so the top threshold supports the class.
    let (mut lo, mut hi) = (0usize, thresholds.len() - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if supported(thresholds[mid]) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(thresholds[lo])
}

/// Explicit cell list: doubled coordinates, values and dimensions.
struct Cells {
    coords: Vec<Vec<usize>>,
    value: Vec<f64>,
    by_dim: Vec<Vec<usize>>,
    index: HashMap<Vec<usize>, usize>,
}

impl Cells {
    fn enumerate(cx: &SublevelComplex) -> Self {
        let axes = cx.axes();
        let extent: Vec<usize> = axes.iter().map(|a| if a.periodic { 2 * a.len() } else { 2 * a.len() - 1 }).collect();
        let total: usize = extent.iter().product();
        let mut coords = Vec::new();
        for lin in 0..total {
            let mut cur = vec![0usize; axes.len()];
            let mut r = lin;
            for i in (0..axes.len()).rev() {
                cur[i] = r % extent[i];
                r /= extent[i];
            }
            let in_negative_end = axes
                .iter()
                .zip(&cur)
                .zip(&extent)
                .any(|((a, &x), &e)| a.negative && (x == 0 || x + 1 == e));
            if !in_negative_end {
                coords.push(cur);
            }
        }
        let mut by_dim = vec![Vec::new(); axes.len() + 1];
        let mut value = Vec::with_capacity(coords.len());
        let mut index = HashMap::new();
        for (id, c) in coords.iter().enumerate() {
            by_dim[c.iter().filter(|&&x| x % 2 == 1).count()].push(id);
            value.push(Self::cell_value(cx, c));
            index.insert(c.clone(), id);
        }
        Self { coords, value, by_dim, index }
    }

    /// Maximum over the cell's vertices.
    fn cell_value(cx: &SublevelComplex, c: &[usize]) -> f64 {
        let axes = cx.axes();
        let mut options: Vec<Vec<usize>> = Vec::with_capacity(c.len());
        for (a, &x) in axes.iter().zip(c) {
            if x % 2 == 0 {
                options.push(vec![x / 2]);
            } else {
                options.push(vec![x / 2, (x / 2 + 1) % a.len()]);
            }
        }
        let mut best = f64::NEG_INFINITY;
        let mut pick = vec![0usize; c.len()];
        loop {
            let mut v = 0;
            for (i, a) in axes.iter().enumerate() {
                v = v * a.len() + options[i][pick[i]];
            }
            best = best.max(cx.values()[v]);
            let mut i = c.len();
            let mut done = true;
            while i > 0 {
                i -= 1;
                pick[i] += 1;
                if pick[i] < options[i].len() {
                    done = false;
                    break;
                }
                pick[i] = 0;
            }
            if done {
                return best;
            }
        }
    }

    /// Faces off the negative end, with coincident faces cancelled.
    fn boundary(&self, cx: &SublevelComplex, id: usize) -> Vec<usize> {
        let axes = cx.axes();
        let c = &self.coords[id];
        let mut out: Vec<usize> = Vec::new();
        for (i, a) in axes.iter().enumerate() {
            if c[i] % 2 == 0 {
                continue;
            }
            let extent = if a.periodic { 2 * a.len() } else { 2 * a.len() - 1 };
            for x in [c[i] - 1, (c[i] + 1) % extent] {
                let mut f = c.clone();
                f[i] = x;
                if let Some(&fid) = self.index.get(&f) {
                    if let Some(k) = out.iter().position(|&o| o == fid) {
                        out.swap_remove(k);
                    } else {
                        out.push(fid);
                    }
                }
            }
        }
        out
    }

    fn in_representative(&self, cx: &SublevelComplex, id: usize, cls: ClassKind) -> bool {
        cx.axes().iter().zip(&self.coords[id]).all(|(a, &x)| {
            if a.negative || (a.periodic && cls == ClassKind::Fundamental) {
                x % 2 == 1
            } else {
                x == 0
            }
        })
    }
}

/// Dense bit vector over Z/2.
#[derive(Clone)]
struct BitVec {
    words: Vec<u64>,
}

impl BitVec {
    fn zeros(n: usize) -> Self {
        Self { words: vec![0; n.div_ceil(64)] }
    }

    fn flip(&mut self, i: usize) {
        self.words[i / 64] ^= 1 << (i % 64);
    }

    fn xor(&mut self, other: &BitVec) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a ^= b;
        }
    }

    /// Highest set bit.
    fn lead(&self) -> Option<usize> {
        for (w, &x) in self.words.iter().enumerate().rev() {
            if x != 0 {
                return Some(w * 64 + 63 - x.leading_zeros() as usize);
            }
        }
        None
    }
}
