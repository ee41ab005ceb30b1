use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on the number of cells of a complex handed to the reduction.
pub const DEFAULT_CELL_BUDGET: usize = 3_000_000;

/// One coordinate direction of a [`SublevelComplex`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub coords: Vec<f64>,
    pub periodic: bool,
    /// The function decreases without bound along this direction; its two end faces form the negative end.
    pub negative: bool,
}

impl Axis {
    /// `n` equispaced nodes `j/n` on the unit circle.
    pub fn periodic(n: usize) -> Self {
        Self { coords: (0..n).map(|j| j as f64 / n as f64).collect(), periodic: true, negative: false }
    }

    pub fn interval(coords: Vec<f64>) -> Self {
        Self { coords, periodic: false, negative: false }
    }

    pub fn negative(coords: Vec<f64>) -> Self {
        Self { coords, periodic: false, negative: true }
    }

    /// `n` equispaced nodes on `[-r, r]`.
    pub fn symmetric(r: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| -r + 2.0 * r * i as f64 / (n - 1) as f64).collect()
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Number of cell positions along the axis in doubled coordinates.
    fn doubled(&self) -> usize {
        if self.periodic {
            2 * self.len()
        } else {
            2 * self.len() - 1
        }
    }
}

/// The two distinguished relative classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassKind {
    /// `{pt} × D⁻`, degree = number of negative axes.
    Unit,
    /// `T^m × D⁻`, degree = number of negative plus periodic axes.
    Fundamental,
}

/// Cubical grid with vertex values and a negative end, filtered by lower stars.
///
/// Cells are addressed by doubled coordinates: even entries are vertices, odd
/// entries are edges along that axis. A cell lies in the negative end when its
/// doubled coordinate on some negative axis is an extreme vertex.
#[derive(Clone, Debug)]
pub struct SublevelComplex {
    axes: Vec<Axis>,
    values: Vec<f64>,
}

impl SublevelComplex {
    /// `values` is row-major over the axes, last axis fastest.
    pub fn new(axes: Vec<Axis>, values: Vec<f64>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidInput("a complex needs at least one axis".into()));
        }
        for (i, a) in axes.iter().enumerate() {
            let min = if a.negative { 2 } else { 1 };
            if a.len() < min {
                return Err(Error::InvalidInput(format!("axis {i} has {} nodes", a.len())));
            }
            if a.periodic && a.negative {
                return Err(Error::InvalidInput(format!("axis {i} cannot be both periodic and negative")));
            }
        }
        let n: usize = axes.iter().map(Axis::len).product();
        if values.len() != n {
            return Err(Error::InvalidInput(format!("expected {n} vertex values, got {}", values.len())));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite vertex value {v}")));
        }
        Ok(Self { axes, values })
    }

    /// Evaluates `f` at every vertex (in parallel).
    pub fn from_fn(axes: Vec<Axis>, f: impl Fn(&[f64]) -> f64 + Sync) -> Result<Self> {
        let shape: Vec<usize> = axes.iter().map(Axis::len).collect();
        let n: usize = shape.iter().product();
        let values = (0..n)
            .into_par_iter()
            .map_init(
                || vec![0.0; axes.len()],
                |buf, v| {
                    let mut r = v;
                    for i in (0..axes.len()).rev() {
                        buf[i] = axes[i].coords[r % shape[i]];
                        r /= shape[i];
                    }
                    f(buf)
                },
            )
            .collect();
        Self::new(axes, values)
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn negative_count(&self) -> usize {
        self.axes.iter().filter(|a| a.negative).count()
    }

    pub fn periodic_count(&self) -> usize {
        self.axes.iter().filter(|a| a.periodic).count()
    }

    pub fn degree(&self, cls: ClassKind) -> usize {
        match cls {
            ClassKind::Unit => self.negative_count(),
            ClassKind::Fundamental => self.negative_count() + self.periodic_count(),
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.values.len()
    }

    pub fn cell_count(&self) -> usize {
        self.axes.iter().map(Axis::doubled).product()
    }

    /// Vertex multi-index of a linear vertex index.
    pub fn vertex_index(&self, mut v: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for i in (0..self.dim()).rev() {
            let n = self.axes[i].len();
            out[i] = v % n;
            v /= n;
        }
        out
    }

    /// True when the vertex lies on the negative end.
    pub fn vertex_in_negative_end(&self, v: usize) -> bool {
        let idx = self.vertex_index(v);
        self.axes.iter().zip(&idx).any(|(a, &i)| a.negative && (i == 0 || i + 1 == a.len()))
    }

    /// True when the vertex lies on the boundary of a non-periodic axis.
    pub fn vertex_on_box_boundary(&self, v: usize) -> bool {
        let idx = self.vertex_index(v);
        self.axes.iter().zip(&idx).any(|(a, &i)| !a.periodic && (i == 0 || i + 1 == a.len()))
    }

    /// `min(values off the negative end) − max(values on it)`; positive when the negative end sits below everything else.
    pub fn negative_end_margin(&self) -> f64 {
        if self.negative_count() == 0 {
            return f64::INFINITY;
        }
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (v, &x) in self.values.iter().enumerate() {
            if self.vertex_in_negative_end(v) {
                hi = hi.max(x);
            } else {
                lo = lo.min(x);
            }
        }
        lo - hi
    }

    fn doubled_shape(&self) -> Vec<usize> {
        self.axes.iter().map(Axis::doubled).collect()
    }

    /// Rank of every vertex in the total order by `(value, index)`.
    fn vertex_ranks(&self) -> Vec<u32> {
        let mut order: Vec<u32> = (0..self.values.len() as u32).collect();
        order.sort_by(|&a, &b| self.values[a as usize].total_cmp(&self.values[b as usize]).then(a.cmp(&b)));
        let mut rank = vec![0u32; order.len()];
        for (r, &v) in order.iter().enumerate() {
            rank[v as usize] = r as u32;
        }
        rank
    }
}

/// Result of a class query: the value and the vertex at which it is attained.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Birth {
    pub value: f64,
    pub vertex: usize,
}

/// Birth value of the distinguished class in the lower-star filtration relative to the negative end.
pub fn c_value(cx: &SublevelComplex, cls: ClassKind) -> Result<f64> {
    birth(cx, cls, DEFAULT_CELL_BUDGET).map(|b| b.value)
}

/// As [`c_value`], returning the attaining vertex and honoring a cell budget.
pub fn birth(cx: &SublevelComplex, cls: ClassKind, budget: usize) -> Result<Birth> {
    if cx.negative_count() == 0 {
        match (cls, cx.periodic_count()) {
            (ClassKind::Unit, _) | (ClassKind::Fundamental, 0) => return Ok(global_min(cx)),
            (ClassKind::Fundamental, 1) => return Ok(odd_loop_birth(cx)),
            _ => {}
        }
    }
    if cx.cell_count() > budget {
        return Err(Error::ResolutionBudget(format!(
            "complex has {} cells, budget is {budget}",
            cx.cell_count()
        )));
    }
    Reduction::new(cx).birth(cls)
}

fn global_min(cx: &SublevelComplex) -> Birth {
    let (vertex, &value) = cx
        .values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
        .expect("complex has vertices");
    Birth { value, vertex }
}

/// Union-find over the 1-skeleton tracking the parity of crossings of the periodic seam.
struct ParityUnionFind {
    parent: Vec<u32>,
    parity: Vec<u8>,
}

impl ParityUnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n as u32).collect(), parity: vec![0; n] }
    }

    /// Root of `v` and the parity of the path from `v` to it.
    fn find(&mut self, v: usize) -> (usize, u8) {
        let mut path = Vec::new();
        let mut x = v;
        while self.parent[x] as usize != x {
            path.push(x);
            x = self.parent[x] as usize;
        }
        let root = x;
        // Compress from the top so each parity is relative to the root.
        for &y in path.iter().rev() {
            let p = self.parent[y] as usize;
            if p != root {
                self.parity[y] ^= self.parity[p];
            }
            self.parent[y] = root as u32;
        }
        (root, self.parity[v])
    }

    /// Joins `a` and `b` across an edge of parity `w`; returns true if this closes an odd loop.
    fn union(&mut self, a: usize, b: usize, w: u8) -> bool {
        let (ra, pa) = self.find(a);
        let (rb, pb) = self.find(b);
        if ra == rb {
            return pa ^ pb ^ w == 1;
        }
        self.parent[rb] = ra as u32;
        self.parity[rb] = pa ^ pb ^ w;
        false
    }
}

/// First sublevel set whose 1-skeleton contains a loop crossing the periodic seam an odd number of times.
fn odd_loop_birth(cx: &SublevelComplex) -> Birth {
    let shape: Vec<usize> = cx.axes.iter().map(Axis::len).collect();
    let strides = strides(&shape);
    let n = cx.values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| cx.values[a].total_cmp(&cx.values[b]).then(a.cmp(&b)));
    let mut added = vec![false; n];
    let mut uf = ParityUnionFind::new(n);
    for &v in &order {
        added[v] = true;
        for (i, axis) in cx.axes.iter().enumerate() {
            let c = (v / strides[i]) % shape[i];
            let len = shape[i];
            let mut neighbors = [(usize::MAX, 0u8); 2];
            if c + 1 < len {
                neighbors[0] = (v + strides[i], 0);
            } else if axis.periodic {
                neighbors[0] = (v - c * strides[i], 1);
            }
            if c > 0 {
                neighbors[1] = (v - strides[i], 0);
            } else if axis.periodic {
                neighbors[1] = (v + (len - 1) * strides[i], 1);
            }
            if axis.periodic && len == 1 {
                // A single-node circle is a loop by itself.
                return Birth { value: cx.values[v], vertex: v };
            }
            for &(u, w) in &neighbors {
                if u != usize::MAX && added[u] && uf.union(v, u, w) {
                    return Birth { value: cx.values[v], vertex: v };
                }
            }
        }
    }
    unreachable!("the whole 1-skeleton winds around the periodic axis")
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Cell bookkeeping shared by the reduction and the brute-force oracle.
pub(crate) struct CellTable {
    pub dshape: Vec<usize>,
    pub dstrides: Vec<usize>,
    pub negative: Vec<bool>,
    /// Per cell: maximal vertex rank (`u32::MAX` for negative-end cells).
    pub top_rank: Vec<u32>,
    /// Per cell: the vertex attaining the maximum.
    pub top_vertex: Vec<u32>,
    pub dim: Vec<u8>,
}

impl CellTable {
    pub fn new(cx: &SublevelComplex) -> Self {
        let dshape = cx.doubled_shape();
        let dstrides = strides(&dshape);
        let total: usize = dshape.iter().product();
        let vshape: Vec<usize> = cx.axes.iter().map(Axis::len).collect();
        let vstrides = strides(&vshape);
        let ranks = cx.vertex_ranks();
        let mut top_rank = vec![0u32; total];
        let mut top_vertex = vec![0u32; total];
        let mut dim = vec![0u8; total];
        let d = cx.dim();
        // Seed vertices, then fill odd positions axis by axis with the max of both neighbors.
        for (c, (tr, (tv, dm))) in top_rank.iter_mut().zip(top_vertex.iter_mut().zip(dim.iter_mut())).enumerate() {
            let mut all_even = true;
            let mut v = 0;
            let mut odd = 0u8;
            for i in 0..d {
                let x = (c / dstrides[i]) % dshape[i];
                if x % 2 == 1 {
                    all_even = false;
                    odd += 1;
                } else {
                    v += (x / 2) * vstrides[i];
                }
            }
            *dm = odd;
            if all_even {
                *tr = ranks[v];
                *tv = v as u32;
            }
        }
        // Fill cells in order of dimension: both faces along any odd axis are one dimension lower.
        for level in 1..=d as u8 {
            for c in 0..total {
                if dim[c] != level {
                    continue;
                }
                let i = (0..d).find(|&i| (c / dstrides[i]) % dshape[i] % 2 == 1).expect("cell has an odd axis");
                let (len, st) = (dshape[i], dstrides[i]);
                let x = (c / st) % len;
                let lo = c - st;
                let hi = if x + 1 == len { c - x * st } else { c + st };
                let (a, b) = (top_rank[lo], top_rank[hi]);
                if a >= b {
                    top_rank[c] = a;
                    top_vertex[c] = top_vertex[lo];
                } else {
                    top_rank[c] = b;
                    top_vertex[c] = top_vertex[hi];
                }
            }
        }
        let negative: Vec<bool> = cx.axes.iter().map(|a| a.negative).collect();
        let mut table = Self { dshape, dstrides, negative, top_rank, top_vertex, dim };
        for c in 0..total {
            if table.in_negative_end(c) {
                table.top_rank[c] = u32::MAX;
            }
        }
        table
    }

    pub fn coord(&self, c: usize, i: usize) -> usize {
        (c / self.dstrides[i]) % self.dshape[i]
    }

    pub fn in_negative_end(&self, c: usize) -> bool {
        (0..self.dshape.len()).any(|i| {
            if !self.negative[i] {
                return false;
            }
            let x = self.coord(c, i);
            x == 0 || x + 1 == self.dshape[i]
        })
    }

    /// Faces of `c` outside the negative end, with Z/2 cancellation of coincident faces.
    pub fn boundary(&self, c: usize, out: &mut Vec<usize>) {
        out.clear();
        for i in 0..self.dshape.len() {
            let x = self.coord(c, i);
            if x % 2 == 0 {
                continue;
            }
            let st = self.dstrides[i];
            let lo = c - st;
            let hi = if x + 1 == self.dshape[i] { c - x * st } else { c + st };
            for f in [lo, hi] {
                if self.top_rank[f] != u32::MAX {
                    out.push(f);
                }
            }
        }
        out.sort_unstable();
        let mut w = 0;
        let mut r = 0;
        while r < out.len() {
            if r + 1 < out.len() && out[r] == out[r + 1] {
                r += 2;
            } else {
                out[w] = out[r];
                w += 1;
                r += 1;
            }
        }
        out.truncate(w);
    }

    /// Cells of dimension `d` off the negative end.
    pub fn cells_of_dim(&self, d: usize) -> Vec<usize> {
        (0..self.dim.len()).filter(|&c| self.dim[c] as usize == d && self.top_rank[c] != u32::MAX).collect()
    }
}

/// Z/2 column reduction over the relative cubical complex.
pub(crate) struct Reduction<'a> {
    cx: &'a SublevelComplex,
    table: CellTable,
}

impl<'a> Reduction<'a> {
    pub(crate) fn new(cx: &'a SublevelComplex) -> Self {
        Self { cx, table: CellTable::new(cx) }
    }

    /// Cells of dimension `d` sorted by `(top rank, cell index)`; faces always precede cofaces.
    fn ordered(&self, d: usize) -> Vec<usize> {
        let mut cells = self.table.cells_of_dim(d);
        cells.sort_unstable_by_key(|&c| (self.table.top_rank[c], c));
        cells
    }

    /// Reduces the boundary matrix of `d`-cells, skipping columns flagged in `cleared`.
    /// Returns the pivot rows (as `(d−1)`-cell ids) and the `d`-cells whose columns reduce to zero.
    fn reduce(&self, d: usize, cleared: &[bool]) -> (Vec<usize>, Vec<usize>) {
        let cols = self.ordered(d);
        if d == 0 {
            return (Vec::new(), cols.into_iter().filter(|&c| !cleared[c]).collect());
        }
        let rows = self.ordered(d - 1);
        let mut row_pos = vec![u32::MAX; self.table.dim.len()];
        for (i, &c) in rows.iter().enumerate() {
            row_pos[c] = i as u32;
        }
        let mut pivot_col: Vec<u32> = vec![u32::MAX; rows.len()];
        let mut reduced: Vec<Vec<u32>> = Vec::with_capacity(cols.len());
        let mut zeros = Vec::new();
        let mut pivots = Vec::new();
        let mut faces = Vec::new();
        for &c in &cols {
            if cleared[c] {
                reduced.push(Vec::new());
                continue;
            }
            self.table.boundary(c, &mut faces);
            let mut col: Vec<u32> = faces.iter().map(|&f| row_pos[f]).collect();
            col.sort_unstable();
            while let Some(&low) = col.last() {
                let other = pivot_col[low as usize];
                if other == u32::MAX {
                    break;
                }
                col = xor_sorted(&col, &reduced[other as usize]);
            }
            match col.last() {
                Some(&low) => {
                    pivot_col[low as usize] = reduced.len() as u32;
                    pivots.push(rows[low as usize]);
                }
                None => zeros.push(c),
            }
            reduced.push(col);
        }
        (pivots, zeros)
    }

    pub(crate) fn birth(&self, cls: ClassKind) -> Result<Birth> {
        let d = self.cx.degree(cls);
        let top = self.cx.dim();
        let total = self.table.dim.len();
        let mut cleared = vec![false; total];
        if d + 2 <= top {
            for c in self.reduce(d + 2, &cleared).0 {
                cleared[c] = true;
            }
        }
        let mut killed = vec![false; total];
        if d < top {
            for c in self.reduce(d + 1, &cleared).0 {
                killed[c] = true;
            }
        }
        let essential = self.reduce(d, &killed).1;
        if essential.len() != 1 {
            return Err(Error::ClassNotFound { degree: d, essential: essential.len() });
        }
        let v = self.table.top_vertex[essential[0]] as usize;
        Ok(Birth { value: self.cx.values[v], vertex: v })
    }
}

fn xor_sorted(a: &[u32], b: &[u32]) -> Vec<u32> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}
