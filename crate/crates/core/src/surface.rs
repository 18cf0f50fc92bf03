//! Marked bordered surfaces, ideal and tagged triangulations, flips,
//! exchange matrices and quivers with potential.
//!
//! Triangulations are stored as gluing data: every triangle lists its three
//! corners and three sides in counterclockwise order, side `i` running from
//! corner `i` to corner `i + 1`. Explicit arc isotopy classes are only
//! computed for polygons and once-punctured disks.

use std::collections::{BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkedBorderedSurface {
    pub genus: u32,
    /// Marked points on each boundary component of the blown-up surface
    /// that is not a puncture blowup.
    pub boundary_marks: Vec<u32>,
    pub punctures: u32,
}

impl MarkedBorderedSurface {
    pub fn new(genus: u32, boundary_marks: Vec<u32>, punctures: u32) -> Result<Self> {
        if boundary_marks.contains(&0) {
            return Err(Error::Invalid("boundary component without marked points".into()));
        }
        if boundary_marks.iter().sum::<u32>() + punctures == 0 {
            return Err(Error::Invalid("marked set is empty".into()));
        }
        Ok(Self { genus, boundary_marks, punctures })
    }

    pub fn disk(marks: u32, punctures: u32) -> Self {
        Self::new(0, vec![marks], punctures).expect("disk needs at least one mark")
    }

    pub fn sphere(punctures: u32) -> Self {
        Self::new(0, vec![], punctures).expect("sphere needs a puncture")
    }

    /// n = 6g - 6 + sum over boundary components and punctures of (k + 3).
    pub fn dimension(&self) -> i64 {
        let b: i64 = self.boundary_marks.iter().map(|&k| k as i64 + 3).sum();
        6 * self.genus as i64 - 6 + b + 3 * self.punctures as i64
    }

    pub fn is_amenable(&self) -> bool {
        let g = self.genus;
        let p = self.punctures;
        let b = &self.boundary_marks;
        let closed = b.is_empty();
        if closed && p == 1 {
            return false;
        }
        if g == 0 && closed && p <= 5 {
            return false;
        }
        if g == 0 && b.len() == 1 {
            let k = b[0];
            if p == 0 && k <= 4 {
                return false;
            }
            if p == 1 && matches!(k, 1 | 2 | 4) {
                return false;
            }
            if p == 2 && k == 2 {
                return false;
            }
        }
        if g == 0 && p == 0 && b.len() == 2 && b[0] == 1 && b[1] == 1 {
            return false;
        }
        true
    }

    /// Number of marks on the single boundary of a supported disk.
    pub fn disk_marks(&self) -> Result<u32> {
        if self.genus != 0 || self.boundary_marks.len() != 1 || self.punctures > 2 {
            return Err(Error::UnsupportedSurface(format!(
                "genus {}, {} boundary components, {} punctures",
                self.genus,
                self.boundary_marks.len(),
                self.punctures
            )));
        }
        Ok(self.boundary_marks[0])
    }

    pub fn describe(&self) -> String {
        match (self.genus, self.boundary_marks.as_slice(), self.punctures) {
            (0, [], p) => format!("sphere, {p} punctures"),
            (0, [k], 0) => format!("disk, {k} marks"),
            (0, [k], p) => format!("disk, {k} marks, {p} punctures"),
            (0, [a, b], p) => format!("annulus, ({a},{b}) marks, {p} punctures"),
            (g, bs, p) => format!("genus {g}, boundary marks {bs:?}, {p} punctures"),
        }
    }
}

/// A marked point: boundary marks are numbered counterclockwise along the
/// boundary (surface on the left), punctures separately.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mark {
    Boundary(u32),
    Puncture(u32),
}

impl Mark {
    pub fn puncture(self) -> Option<u32> {
        match self {
            Mark::Puncture(p) => Some(p),
            Mark::Boundary(_) => None,
        }
    }
}

/// Side of a triangle: an arc of the triangulation or the boundary segment
/// running from mark `s` to mark `s + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Arc(usize),
    Segment(u32),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triangle {
    pub corners: [Mark; 3],
    pub sides: [Side; 3],
}

impl Triangle {
    fn rotated(&self, r: usize) -> Triangle {
        let c = &self.corners;
        let s = &self.sides;
        Triangle {
            corners: [c[r % 3], c[(r + 1) % 3], c[(r + 2) % 3]],
            sides: [s[r % 3], s[(r + 1) % 3], s[(r + 2) % 3]],
        }
    }

    fn position(&self, side: Side) -> Vec<usize> {
        (0..3).filter(|&i| self.sides[i] == side).collect()
    }
}

/// Arc with endpoints sorted. `winding` is 0 for polygon arcs and spokes.
/// For a chord of a once-punctured disk it is 0 when the counterclockwise
/// boundary run from the first to the second endpoint lies on the
/// puncture-free side, and 1 otherwise (loops always have winding 1).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Arc {
    pub endpoints: (Mark, Mark),
    pub winding: i32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IdealTriangulation {
    pub surface: MarkedBorderedSurface,
    pub arcs: Vec<Arc>,
    pub triangles: Vec<Triangle>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExchangeMatrix(pub Vec<Vec<i64>>);

impl ExchangeMatrix {
    pub fn zeros(n: usize) -> Self {
        ExchangeMatrix(vec![vec![0; n]; n])
    }
    pub fn n(&self) -> usize {
        self.0.len()
    }
    pub fn get(&self, i: usize, j: usize) -> i64 {
        self.0[i][j]
    }
    pub fn is_skew(&self) -> bool {
        let n = self.n();
        (0..n).all(|i| (0..n).all(|j| self.0[i][j] == -self.0[j][i]))
    }
    pub fn transpose(&self) -> Self {
        let n = self.n();
        ExchangeMatrix((0..n).map(|i| (0..n).map(|j| self.0[j][i]).collect()).collect())
    }
    pub fn neg(&self) -> Self {
        ExchangeMatrix(self.0.iter().map(|r| r.iter().map(|x| -x).collect()).collect())
    }
    pub fn permuted(&self, perm: &[usize]) -> Self {
        // entry (i, j) of the result is entry (perm[i], perm[j]) of self
        let n = self.n();
        ExchangeMatrix((0..n).map(|i| (0..n).map(|j| self.0[perm[i]][perm[j]]).collect()).collect())
    }
}

/// Fomin-Zelevinsky matrix mutation at `k`.
pub fn matrix_mutation(eps: &ExchangeMatrix, k: usize) -> ExchangeMatrix {
    let n = eps.n();
    let e = &eps.0;
    let mut out = vec![vec![0i64; n]; n];
    for i in 0..n {
        for j in 0..n {
            out[i][j] = if i == k || j == k {
                -e[i][j]
            } else {
                e[i][j] + e[i][k].signum() * (e[i][k] * e[k][j]).max(0)
            };
        }
    }
    ExchangeMatrix(out)
}

impl IdealTriangulation {
    /// Builds a triangulation from gluing data and checks it.
    pub fn from_triangles(
        surface: MarkedBorderedSurface,
        triangles: Vec<Triangle>,
        n_arcs: usize,
    ) -> Result<Self> {
        let n = surface.dimension();
        if n < 0 || n as usize != n_arcs {
            return Err(Error::Invalid(format!("{n_arcs} arcs but dimension is {n}")));
        }
        let mut t = IdealTriangulation {
            surface,
            arcs: vec![Arc { endpoints: (Mark::Boundary(0), Mark::Boundary(0)), winding: 0 }; n_arcs],
            triangles,
        };
        t.check()?;
        t.normalize();
        Ok(t)
    }

    fn check(&self) -> Result<()> {
        let n = self.arcs.len();
        let mut uses: Vec<Vec<(Mark, Mark)>> = vec![vec![]; n];
        let mut segs: HashMap<u32, usize> = HashMap::new();
        for tri in &self.triangles {
            for i in 0..3 {
                let (a, b) = (tri.corners[i], tri.corners[(i + 1) % 3]);
                match tri.sides[i] {
                    Side::Arc(j) => {
                        if j >= n {
                            return Err(Error::Invalid(format!("arc index {j} out of range")));
                        }
                        uses[j].push((a, b));
                    }
                    Side::Segment(s) => {
                        let k = self.surface.boundary_marks.first().copied().unwrap_or(0);
                        if a != Mark::Boundary(s) || b != Mark::Boundary((s + 1) % k.max(1)) {
                            return Err(Error::Invalid(format!("segment {s} has wrong corners")));
                        }
                        *segs.entry(s).or_default() += 1;
                    }
                }
            }
        }
        for (j, u) in uses.iter().enumerate() {
            if u.len() != 2 || u[0].0 != u[1].1 || u[0].1 != u[1].0 {
                return Err(Error::Invalid(format!("arc {j} is not glued to exactly two opposite sides")));
            }
        }
        let k: u32 = self.surface.boundary_marks.iter().sum();
        if segs.len() as u32 != k || segs.values().any(|&c| c != 1) {
            return Err(Error::Invalid("boundary segments not each used once".into()));
        }
        Ok(())
    }

    /// Recomputes arc endpoints and windings from the gluing data.
    fn normalize(&mut self) {
        let n = self.arcs.len();
        for j in 0..n {
            let (t, i) = self.occurrences(j)[0];
            let tri = &self.triangles[t];
            let (a, b) = (tri.corners[i], tri.corners[(i + 1) % 3]);
            let winding = if self.surface.punctures == 1 {
                match (a, b) {
                    (Mark::Boundary(_), Mark::Boundary(_)) => self.chord_winding(j, a, b),
                    _ => 0,
                }
            } else {
                0
            };
            let endpoints = if a <= b { (a, b) } else { (b, a) };
            self.arcs[j] = Arc { endpoints, winding };
        }
    }

    /// Winding index of the chord `j`, traversed from `a` to `b` with the
    /// triangle of its first occurrence on the left.
    fn chord_winding(&self, j: usize, a: Mark, b: Mark) -> i32 {
        let (Mark::Boundary(a), Mark::Boundary(b)) = (a, b) else { return 0 };
        if a == b {
            return 1;
        }
        let (segs, punct) = self.flood(j);
        let lo = a.min(b);
        // the run lo -> hi starts with segment lo
        let run_left = segs.contains(&lo);
        if run_left != punct {
            0
        } else {
            1
        }
    }

    /// Boundary segments and puncture presence on the left side of arc `j`
    /// (the side of its first occurrence).
    fn flood(&self, j: usize) -> (BTreeSet<u32>, bool) {
        let (t0, _) = self.occurrences(j)[0];
        let mut seen = vec![false; self.triangles.len()];
        let mut queue = VecDeque::from([t0]);
        seen[t0] = true;
        let mut segs = BTreeSet::new();
        let mut punct = false;
        while let Some(t) = queue.pop_front() {
            let tri = &self.triangles[t];
            if tri.corners.iter().any(|c| c.puncture().is_some()) {
                punct = true;
            }
            for s in tri.sides {
                match s {
                    Side::Segment(x) => {
                        segs.insert(x);
                    }
                    Side::Arc(k) if k != j => {
                        for (u, _) in self.occurrences(k) {
                            if !seen[u] {
                                seen[u] = true;
                                queue.push_back(u);
                            }
                        }
                    }
                    _ => {}
                }
            }
        }
        (segs, punct)
    }

    /// (triangle, side position) pairs where arc `j` appears.
    pub fn occurrences(&self, j: usize) -> Vec<(usize, usize)> {
        let mut out = vec![];
        for (t, tri) in self.triangles.iter().enumerate() {
            for i in tri.position(Side::Arc(j)) {
                out.push((t, i));
            }
        }
        out
    }

    pub fn n(&self) -> usize {
        self.arcs.len()
    }

    /// Fan triangulation of an m-gon from vertex 0.
    pub fn polygon_fan(m: u32) -> Result<Self> {
        let diags: Vec<(u32, u32)> = (2..m.saturating_sub(1)).map(|i| (0, i)).collect();
        Self::polygon(m, &diags)
    }

    /// Triangulation of an unpunctured m-gon from its diagonals, kept in the
    /// given order as arc indices.
    pub fn polygon(m: u32, diagonals: &[(u32, u32)]) -> Result<Self> {
        if m < 3 {
            return Err(Error::Invalid("polygon needs at least 3 vertices".into()));
        }
        let norm = |a: u32, b: u32| if a < b { (a, b) } else { (b, a) };
        let mut index: HashMap<(u32, u32), Side> = HashMap::new();
        for i in 0..m {
            index.insert(norm(i, (i + 1) % m), Side::Segment(i));
        }
        for (j, &(a, b)) in diagonals.iter().enumerate() {
            if a >= m || b >= m || index.contains_key(&norm(a, b)) || a == b {
                return Err(Error::Invalid(format!("bad diagonal ({a},{b})")));
            }
            index.insert(norm(a, b), Side::Arc(j));
        }
        let mut triangles = vec![];
        for a in 0..m {
            for b in a + 1..m {
                for c in b + 1..m {
                    if let (Some(&s0), Some(&s1), Some(&s2)) =
                        (index.get(&(a, b)), index.get(&(b, c)), index.get(&(a, c)))
                    {
                        triangles.push(Triangle {
                            corners: [Mark::Boundary(a), Mark::Boundary(b), Mark::Boundary(c)],
                            sides: [s0, s1, s2],
                        });
                    }
                }
            }
        }
        if triangles.len() != m as usize - 2 {
            return Err(Error::Invalid("diagonals do not form a triangulation".into()));
        }
        Self::from_triangles(MarkedBorderedSurface::disk(m, 0), triangles, diagonals.len())
    }

    /// Once-punctured disk with k marks, triangulated by the k spokes.
    /// For k = 1 this is the single self-folded triangle.
    pub fn punctured_spokes(k: u32) -> Result<Self> {
        let p = Mark::Puncture(0);
        let triangles = (0..k)
            .map(|i| Triangle {
                corners: [Mark::Boundary(i), Mark::Boundary((i + 1) % k), p],
                sides: [Side::Segment(i), Side::Arc(((i + 1) % k) as usize), Side::Arc(i as usize)],
            })
            .collect();
        Self::from_triangles(MarkedBorderedSurface::disk(k, 1), triangles, k as usize)
    }

    /// Twice-punctured disk with k >= 2 marks: spokes from the first puncture
    /// to every mark, and a triangle 0, P, k-1 subdivided by the second.
    pub fn twice_punctured(k: u32) -> Result<Self> {
        if k < 2 {
            return Err(Error::Invalid("need at least two marks".into()));
        }
        let p = Mark::Puncture(0);
        let q = Mark::Puncture(1);
        let b = Mark::Boundary;
        let spoke = |i: u32| Side::Arc(i as usize);
        let (qa, qp, qz) = (Side::Arc(k as usize), Side::Arc(k as usize + 1), Side::Arc(k as usize + 2));
        let mut triangles: Vec<Triangle> = (0..k - 1)
            .map(|i| Triangle { corners: [b(i), b(i + 1), p], sides: [Side::Segment(i), spoke(i + 1), spoke(i)] })
            .collect();
        triangles.push(Triangle { corners: [b(k - 1), b(0), q], sides: [Side::Segment(k - 1), qa, qz] });
        triangles.push(Triangle { corners: [b(0), p, q], sides: [spoke(0), qp, qa] });
        triangles.push(Triangle { corners: [p, b(k - 1), q], sides: [spoke(k - 1), qz, qp] });
        Self::from_triangles(MarkedBorderedSurface::disk(k, 2), triangles, k as usize + 3)
    }

    /// For a self-folded triangle: (interior arc, encircling side).
    pub fn self_folded(&self, t: usize) -> Option<(usize, Side)> {
        let s = &self.triangles[t].sides;
        for i in 0..3 {
            if s[i] == s[(i + 1) % 3] {
                if let Side::Arc(j) = s[i] {
                    return Some((j, s[(i + 2) % 3]));
                }
            }
        }
        None
    }

    pub fn self_folded_flags(&self) -> Vec<bool> {
        (0..self.triangles.len()).map(|t| self.self_folded(t).is_some()).collect()
    }

    /// The redirection map: interior edges of self-folded triangles go to
    /// their encircling edge.
    pub fn pi(&self, j: usize) -> usize {
        for t in 0..self.triangles.len() {
            if let Some((i, Side::Arc(k))) = self.self_folded(t) {
                if i == j {
                    return k;
                }
            }
        }
        j
    }

    /// If arc `j` is the interior edge of a self-folded triangle, the
    /// encircling arc and the puncture.
    pub fn self_folded_interior(&self, j: usize) -> Option<(Side, u32)> {
        for t in 0..self.triangles.len() {
            if let Some((i, enc)) = self.self_folded(t) {
                if i == j {
                    let p = self.triangles[t].corners.iter().find_map(|c| c.puncture())?;
                    return Some((enc, p));
                }
            }
        }
        None
    }

    pub fn exchange_matrix(&self) -> ExchangeMatrix {
        let n = self.n();
        let pi: Vec<usize> = (0..n).map(|j| self.pi(j)).collect();
        let mut e = ExchangeMatrix::zeros(n);
        for (t, tri) in self.triangles.iter().enumerate() {
            if self.self_folded(t).is_some() {
                continue;
            }
            let pos = |a: usize| tri.sides.iter().position(|&s| s == Side::Arc(a));
            for i in 0..n {
                for j in 0..n {
                    if let (Some(pa), Some(pb)) = (pos(pi[i]), pos(pi[j])) {
                        if pb == (pa + 1) % 3 {
                            e.0[i][j] += 1;
                        } else if pa == (pb + 1) % 3 {
                            e.0[i][j] -= 1;
                        }
                    }
                }
            }
        }
        e
    }

    pub fn flip(&self, k: usize) -> Result<Self> {
        if k >= self.n() {
            return Err(Error::Invalid(format!("arc {k} out of range")));
        }
        let occ = self.occurrences(k);
        let (t1, i1) = occ[0];
        let (t2, i2) = occ[1];
        if t1 == t2 {
            return Err(Error::FlipNotAllowed(k));
        }
        let a = self.triangles[t1].rotated(i1);
        let b = self.triangles[t2].rotated(i2);
        let (v0, v1, v2) = (a.corners[0], a.corners[1], a.corners[2]);
        let w2 = b.corners[2];
        let (x1, y1, x2, y2) = (a.sides[1], a.sides[2], b.sides[1], b.sides[2]);
        let new1 = Triangle { corners: [v2, v0, w2], sides: [y1, x2, Side::Arc(k)] };
        let new2 = Triangle { corners: [w2, v1, v2], sides: [y2, x1, Side::Arc(k)] };
        let mut triangles = self.triangles.clone();
        triangles[t1] = new1;
        triangles[t2] = new2;
        let mut out = IdealTriangulation { surface: self.surface.clone(), arcs: self.arcs.clone(), triangles };
        out.normalize();
        Ok(out)
    }

    /// Canonical form: the sorted arc set. Needs explicit arc classes.
    pub fn canonical_key(&self) -> Result<Vec<Arc>> {
        let _ = self.surface.disk_marks()?;
        if self.surface.punctures > 1 {
            return Err(Error::UnsupportedSurface(
                "arc classes on twice-punctured disks are not enumerated".into(),
            ));
        }
        let mut v = self.arcs.clone();
        v.sort();
        Ok(v)
    }

    pub fn same_as(&self, other: &Self) -> Result<bool> {
        Ok(self.canonical_key()? == other.canonical_key()?)
    }

    /// Number of arc ends at each puncture (a loop counts twice).
    pub fn valency(&self, p: u32) -> usize {
        self.arcs
            .iter()
            .map(|a| {
                (a.endpoints.0 == Mark::Puncture(p)) as usize + (a.endpoints.1 == Mark::Puncture(p)) as usize
            })
            .sum()
    }

    pub fn is_regular(&self) -> bool {
        (0..self.surface.punctures).all(|p| self.valency(p) >= 3)
    }

    pub fn quiver_with_potential(&self, signing: &[i8]) -> Result<QuiverWithPotential> {
        for p in 0..self.surface.punctures {
            let v = self.valency(p);
            if v < 3 {
                return Err(Error::NotRegular(p as usize, v));
            }
        }
        let eps = self.exchange_matrix();
        let n = self.n();
        let mut arrows = vec![];
        for i in 0..n {
            for j in 0..n {
                for _ in 0..eps.0[i][j].max(0) {
                    arrows.push((j, i));
                }
            }
        }
        let mut potential = vec![];
        for tri in &self.triangles {
            if let [Side::Arc(a), Side::Arc(b), Side::Arc(c)] = tri.sides {
                if a != b && b != c && a != c {
                    potential.push(PotentialTerm { coeff: 1, cycle: vec![a, c, b] });
                }
            }
        }
        for p in 0..self.surface.punctures {
            // each corner at p carries the arrow out-side -> in-side
            let mut next: HashMap<usize, usize> = HashMap::new();
            for tri in &self.triangles {
                for c in 0..3 {
                    if tri.corners[c] == Mark::Puncture(p) {
                        if let (Side::Arc(sin), Side::Arc(sout)) = (tri.sides[(c + 2) % 3], tri.sides[c]) {
                            next.insert(sout, sin);
                        }
                    }
                }
            }
            let start = *next.keys().min().ok_or(Error::NotRegular(p as usize, 0))?;
            let mut cycle = vec![start];
            let mut cur = next[&start];
            while cur != start && cycle.len() <= next.len() {
                cycle.push(cur);
                cur = next[&cur];
            }
            let sign = signing.get(p as usize).copied().unwrap_or(1) as i32;
            potential.push(PotentialTerm { coeff: -sign, cycle });
        }
        Ok(QuiverWithPotential { vertex_labels: self.arcs.clone(), arrows, potential })
    }
}

impl PartialEq for IdealTriangulation {
    fn eq(&self, other: &Self) -> bool {
        match (self.canonical_key(), other.canonical_key()) {
            (Ok(a), Ok(b)) => a == b,
            _ => self.triangles == other.triangles,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PotentialTerm {
    pub coeff: i32,
    /// Vertices visited, each consecutive pair (and last to first) an arrow.
    pub cycle: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuiverWithPotential {
    pub vertex_labels: Vec<Arc>,
    pub arrows: Vec<(usize, usize)>,
    pub potential: Vec<PotentialTerm>,
}

/// Arc of a tagged triangulation: plain, or with a tag at its puncture end.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaggedArc {
    pub arc: Arc,
    pub tag: i8,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TaggedTriangulation {
    pub base: IdealTriangulation,
    pub signing: Vec<i8>,
}

impl TaggedTriangulation {
    pub fn new(base: IdealTriangulation, signing: Vec<i8>) -> Result<Self> {
        if signing.len() != base.surface.punctures as usize || signing.iter().any(|s| s.abs() != 1) {
            return Err(Error::Invalid("signing must give +-1 per puncture".into()));
        }
        Ok(Self { base, signing })
    }

    pub fn plain(base: IdealTriangulation) -> Self {
        let p = base.surface.punctures as usize;
        Self { base, signing: vec![1; p] }
    }

    /// The tagged arc represented by base arc `j`.
    pub fn tagged_arc(&self, j: usize) -> Result<TaggedArc> {
        let t = &self.base;
        let a = t.arcs[j];
        let tag_at = |arc: &Arc| {
            arc.endpoints.1.puncture().map(|p| self.signing[p as usize]).unwrap_or(0)
        };
        // an encircling loop stands for the spoke inside it with the opposite tag
        for tri in 0..t.triangles.len() {
            if let Some((i, Side::Arc(k))) = t.self_folded(tri) {
                if k == j {
                    let spoke = t.arcs[i];
                    return Ok(TaggedArc { arc: spoke, tag: -tag_at(&spoke) });
                }
            }
        }
        if a.endpoints.0.puncture().is_some() && a.endpoints.1.puncture().is_some() {
            return Err(Error::UnsupportedSurface("arcs between punctures carry two tags".into()));
        }
        Ok(TaggedArc { arc: a, tag: tag_at(&a) })
    }

    pub fn tagged_arcs(&self) -> Result<Vec<TaggedArc>> {
        (0..self.base.n()).map(|j| self.tagged_arc(j)).collect()
    }

    pub fn canonical_key(&self) -> Result<Vec<TaggedArc>> {
        self.base.canonical_key()?;
        let mut v = self.tagged_arcs()?;
        v.sort();
        Ok(v)
    }

    /// Flip the tagged arc represented by base arc `j`. Interior edges of
    /// self-folded triangles are flipped through the other signed
    /// representative, where they become the encircling edge.
    pub fn tagged_flip(&self, j: usize) -> Result<Self> {
        self.base.surface.disk_marks()?;
        if let Some((enc, p)) = self.base.self_folded_interior(j) {
            let Side::Arc(k) = enc else {
                return Err(Error::FlipNotAllowed(j));
            };
            let mut signing = self.signing.clone();
            signing[p as usize] = -signing[p as usize];
            return Ok(Self { base: self.base.flip(k)?, signing });
        }
        Ok(Self { base: self.base.flip(j)?, signing: self.signing.clone() })
    }
}

impl PartialEq for TaggedTriangulation {
    fn eq(&self, other: &Self) -> bool {
        matches!((self.canonical_key(), other.canonical_key()), (Ok(a), Ok(b)) if a == b)
    }
}

/// Flip graph found by breadth-first search from a start triangulation.
#[derive(Clone, Debug)]
pub struct FlipGraph<T> {
    pub nodes: Vec<T>,
    /// (from, to, arc index in `from`)
    pub edges: Vec<(usize, usize, usize)>,
}

impl<T> FlipGraph<T> {
    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.nodes.len()];
        for &(a, _, _) in &self.edges {
            d[a] += 1;
        }
        d
    }
}

/// All ideal triangulations reachable by flips (self-folded interiors skipped).
pub fn flip_graph(start: &IdealTriangulation) -> Result<FlipGraph<IdealTriangulation>> {
    explore(start.clone(), |t| t.canonical_key(), |t, j| match t.flip(j) {
        Err(Error::FlipNotAllowed(_)) => Ok(None),
        r => r.map(Some),
    }, |t| t.n())
}

pub fn tagged_flip_graph(start: &TaggedTriangulation) -> Result<FlipGraph<TaggedTriangulation>> {
    explore(start.clone(), |t| t.canonical_key(), |t, j| t.tagged_flip(j).map(Some), |t| t.base.n())
}

fn explore<T: Clone, K: Ord + Clone>(
    start: T,
    key: impl Fn(&T) -> Result<K>,
    step: impl Fn(&T, usize) -> Result<Option<T>>,
    rank: impl Fn(&T) -> usize,
) -> Result<FlipGraph<T>> {
    let mut index = std::collections::BTreeMap::new();
    index.insert(key(&start)?, 0usize);
    let mut nodes = vec![start];
    let mut edges = vec![];
    let mut cur = 0;
    while cur < nodes.len() {
        let t = nodes[cur].clone();
        for j in 0..rank(&t) {
            if let Some(u) = step(&t, j)? {
                let k = key(&u)?;
                let id = match index.get(&k) {
                    Some(&id) => id,
                    None => {
                        index.insert(k, nodes.len());
                        nodes.push(u);
                        nodes.len() - 1
                    }
                };
                edges.push((cur, id, j));
            }
        }
        cur += 1;
    }
    Ok(FlipGraph { nodes, edges })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims() {
        assert_eq!(MarkedBorderedSurface::disk(5, 0).dimension(), 2);
        assert_eq!(MarkedBorderedSurface::disk(3, 0).dimension(), 0);
        assert_eq!(MarkedBorderedSurface::sphere(6).dimension(), 12);
    }

    #[test]
    fn amenability() {
        assert!(!MarkedBorderedSurface::sphere(5).is_amenable());
        assert!(MarkedBorderedSurface::sphere(6).is_amenable());
        assert!(MarkedBorderedSurface::disk(5, 0).is_amenable());
        assert!(!MarkedBorderedSurface::disk(4, 0).is_amenable());
        assert!(!MarkedBorderedSurface::new(0, vec![1, 1], 0).unwrap().is_amenable());
        assert!(!MarkedBorderedSurface::disk(4, 1).is_amenable());
        assert!(MarkedBorderedSurface::disk(3, 1).is_amenable());
        assert!(!MarkedBorderedSurface::disk(2, 2).is_amenable());
        assert!(!MarkedBorderedSurface::new(2, vec![], 1).unwrap().is_amenable());
    }

    #[test]
    fn pentagon_matrix() {
        let t = IdealTriangulation::polygon(5, &[(0, 2), (0, 3)]).unwrap();
        assert_eq!(t.exchange_matrix().0, vec![vec![0, -1], vec![1, 0]]);
        let sq = IdealTriangulation::polygon(4, &[(0, 2)]).unwrap();
        assert_eq!(sq.exchange_matrix().0, vec![vec![0]]);
        let f = sq.flip(0).unwrap();
        assert_eq!(f.arcs[0].endpoints, (Mark::Boundary(1), Mark::Boundary(3)));
    }

    #[test]
    fn self_folded_monogon() {
        let t = IdealTriangulation::punctured_spokes(1).unwrap();
        assert!(t.self_folded(0).is_some());
        assert!(matches!(t.flip(0), Err(Error::FlipNotAllowed(0))));
        assert_eq!(t.exchange_matrix().0, vec![vec![0]]);
    }

    #[test]
    fn twice_punctured_builds() {
        for k in 2..6 {
            let t = IdealTriangulation::twice_punctured(k).unwrap();
            assert_eq!(t.n() as i64, t.surface.dimension());
            assert!(t.exchange_matrix().is_skew());
            for j in 0..t.n() {
                let f = t.flip(j).unwrap();
                assert_eq!(
                    f.exchange_matrix(),
                    matrix_mutation(&t.exchange_matrix(), j),
                    "k={k} arc {j}"
                );
            }
        }
    }
}
