//! Regression trees grown on binned features with second-order gain.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::binning::{BinCodes, BinnedMatrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    /// Rows with `x[feature] < threshold` go left.
    Split {
        feature: usize,
        threshold: f32,
        left: usize,
        right: usize,
    },
    Leaf { leaf: f64 },
}

/// Flat node array; the root is node 0 and children always follow parents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(weight: f64) -> Self {
        Self {
            nodes: vec![Node::Leaf { leaf: weight }],
        }
    }

    pub fn eval(&self, x: &[f32]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { leaf } => return leaf,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] < threshold { left } else { right },
            }
        }
    }

    /// Number of edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    /// Structural check used after deserialization.
    pub(crate) fn check(&self, n_features: usize) -> Result<(), String> {
        if self.nodes.is_empty() {
            return Err("empty tree".into());
        }
        for (i, n) in self.nodes.iter().enumerate() {
            match *n {
                Node::Leaf { leaf } if !leaf.is_finite() => return Err(format!("node {i}: non-finite leaf")),
                Node::Leaf { .. } => {}
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if feature >= n_features {
                        return Err(format!("node {i}: feature {feature} out of range"));
                    }
                    if threshold.is_nan() {
                        return Err(format!("node {i}: NaN threshold"));
                    }
                    let n_nodes = self.nodes.len();
                    if left <= i || right <= i || left >= n_nodes || right >= n_nodes || left == right {
                        return Err(format!("node {i}: bad child indices"));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub reg_lambda: f64,
    pub gamma: f64,
    pub min_child_weight: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    /// Last bin on the left side.
    pub bin: usize,
    pub threshold: f32,
    pub gain: f64,
}

#[inline]
fn score(g: f64, h: f64, lambda: f64) -> f64 {
    let d = h + lambda;
    if d > 0.0 {
        g * g / d
    } else {
        0.0
    }
}

pub fn leaf_weight(g: f64, h: f64, lambda: f64) -> f64 {
    let d = h + lambda;
    if d > 0.0 {
        -g / d
    } else {
        0.0
    }
}

/// Gain of a split into `(gl, hl)` and `(gr, hr)`, with the two child
/// scores over a common denominator.
#[inline]
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, p: &TreeParams) -> f64 {
    children_gain(gl, hl, gr, hr, score(gl + gr, hl + hr, p.reg_lambda), p)
}

#[inline]
fn children_gain(gl: f64, hl: f64, gr: f64, hr: f64, parent: f64, p: &TreeParams) -> f64 {
    let dl = hl + p.reg_lambda;
    let dr = hr + p.reg_lambda;
    let children = if dl > 0.0 && dr > 0.0 {
        (gl * gl * dr + gr * gr * dl) / (dl * dr)
    } else {
        score(gl, hl, p.reg_lambda) + score(gr, hr, p.reg_lambda)
    };
    0.5 * (children - parent) - p.gamma
}

/// Rows of a node: either all rows in order, or an explicit subset whose
/// gradient pairs have been gathered into node order.
#[derive(Clone, Copy)]
enum NodeRows<'a> {
    All,
    Subset(&'a [u32]),
}

/// Per-thread histogram scratch. Both buffers are all zeros between calls.
#[derive(Default)]
struct HistBuf {
    hist: Vec<[f64; 2]>,
    /// Bit `b` set when bin `b` received at least one row.
    touched: Vec<u64>,
}

/// Best boundary of one feature. An empty bin repeats the previous partition
/// and its exact prefix sums, so under the strict comparison it never beats
/// the lower threshold. Sparse nodes skip empty bins through the `touched`
/// bitmap; dense nodes scan every bin.
#[allow(clippy::too_many_arguments)]
fn feature_best(
    bins: impl Iterator<Item = usize>,
    gh: &[[f64; 2]],
    n_bins: usize,
    totals: [f64; 2],
    p: &TreeParams,
    buf: &mut HistBuf,
    dense: bool,
) -> Option<(f64, usize)> {
    if n_bins < 2 {
        return None;
    }
    let n_words = n_bins.div_ceil(64);
    if buf.hist.len() < n_bins {
        buf.hist.resize(n_bins, [0.0; 2]);
        buf.touched.resize(n_words.max(buf.touched.len()), 0);
    }
    let HistBuf { hist, touched } = buf;
    let hist = &mut hist[..n_bins];
    // Occupied bin range, tracked in dense mode only.
    let (mut lo, mut hi) = (usize::MAX, 0);
    if dense {
        for (b, v) in bins.zip(gh) {
            let e = &mut hist[b];
            e[0] += v[0];
            e[1] += v[1];
            lo = lo.min(b);
            hi = hi.max(b);
        }
    } else {
        for (b, v) in bins.zip(gh) {
            let e = &mut hist[b];
            e[0] += v[0];
            e[1] += v[1];
            touched[b >> 6] |= 1 << (b & 63);
        }
    }

    let [g, h] = totals;
    let parent = score(g, h, p.reg_lambda);
    let mut best: Option<(f64, usize)> = None;
    let (mut gl, mut hl) = (0.0, 0.0);
    let mut visit = |b: usize, [eg, eh]: [f64; 2]| {
        gl += eg;
        hl += eh;
        let hr = h - hl;
        if hl < p.min_child_weight || hr < p.min_child_weight {
            return;
        }
        let gain = children_gain(gl, hl, g - gl, hr, parent, p);
        if best.is_none_or(|(bg, _)| gain > bg) {
            best = Some((gain, b));
        }
    };
    // Boundaries run from the lowest occupied bin up to, not including, the
    // highest, so both children get rows.
    if dense {
        if lo <= hi {
            for (b, e) in hist[lo..hi].iter_mut().enumerate() {
                visit(lo + b, std::mem::take(e));
            }
            hist[hi] = [0.0; 2];
        }
    } else {
        let hi = (0..n_words)
            .rev()
            .find(|&w| touched[w] != 0)
            .map_or(0, |w| (w << 6) | (63 - touched[w].leading_zeros() as usize));
        for (w, word) in touched.iter_mut().enumerate() {
            let mut bits = std::mem::take(word);
            while bits != 0 {
                let b = (w << 6) | bits.trailing_zeros() as usize;
                bits &= bits - 1;
                let e = std::mem::take(&mut hist[b]);
                if b < hi {
                    visit(b, e);
                }
            }
        }
    }
    best
}

fn column_best<T: Copy + Into<usize>>(
    col: &[T],
    rows: NodeRows,
    gh: &[[f64; 2]],
    n_bins: usize,
    totals: [f64; 2],
    p: &TreeParams,
    buf: &mut HistBuf,
) -> Option<(f64, usize)> {
    match rows {
        NodeRows::All => feature_best(col.iter().map(|&b| b.into()), gh, n_bins, totals, p, buf, col.len() >= n_bins),
        NodeRows::Subset(r) => feature_best(
            r.iter().map(|&i| col[i as usize].into()),
            gh,
            n_bins,
            totals,
            p,
            buf,
            r.len() >= n_bins,
        ),
    }
}

/// Picks the larger gain, then the lower feature, then the lower bin. A total
/// order, so any reduction tree gives the same answer.
fn better(a: Option<SplitCandidate>, b: Option<SplitCandidate>) -> Option<SplitCandidate> {
    match (a, b) {
        (None, x) | (x, None) => x,
        (Some(x), Some(y)) => {
            let x_wins = x.gain > y.gain || (x.gain == y.gain && (x.feature, x.bin) < (y.feature, y.bin));
            Some(if x_wins { x } else { y })
        }
    }
}

fn best_split_inner(m: &BinnedMatrix, rows: NodeRows, gh_node: &[[f64; 2]], totals: [f64; 2], p: &TreeParams) -> Option<SplitCandidate> {
    let n = m.n_rows();
    let best = (0..m.n_features())
        .into_par_iter()
        .with_min_len(32)
        .map_init(HistBuf::default, |buf, f| {
            let n_bins = m.n_bins(f);
            let r = match m.codes() {
                BinCodes::U8(c) => column_best(&c[f * n..(f + 1) * n], rows, gh_node, n_bins, totals, p, buf),
                BinCodes::U16(c) => column_best(&c[f * n..(f + 1) * n], rows, gh_node, n_bins, totals, p, buf),
            };
            r.map(|(gain, bin)| SplitCandidate {
                feature: f,
                bin,
                threshold: m.cuts(f)[bin],
                gain,
            })
        })
        .reduce(|| None, better);
    best.filter(|c| c.gain > 0.0)
}

fn sum_pairs(v: impl Iterator<Item = [f64; 2]>) -> [f64; 2] {
    v.fold([0.0; 2], |a, x| [a[0] + x[0], a[1] + x[1]])
}

/// Best split of the node holding `rows`; `gh` holds `[g, h]` per row id.
pub fn best_split(m: &BinnedMatrix, rows: &[u32], gh: &[[f64; 2]], p: &TreeParams) -> Option<SplitCandidate> {
    if rows.len() < 2 {
        return None;
    }
    let gh_node: Vec<[f64; 2]> = rows.iter().map(|&r| gh[r as usize]).collect();
    let totals = sum_pairs(gh_node.iter().copied());
    best_split_inner(m, NodeRows::Subset(rows), &gh_node, totals, p)
}

struct Grower<'a> {
    m: &'a BinnedMatrix,
    gh: &'a [[f64; 2]],
    p: &'a TreeParams,
    nodes: Vec<Node>,
    leaf_out: &'a mut [f64],
    scratch: Vec<u32>,
}

impl Grower<'_> {
    fn grow(&mut self, rows: &mut [u32], depth: usize, is_root: bool) -> usize {
        let idx = self.nodes.len();
        self.nodes.push(Node::Leaf { leaf: 0.0 });
        let totals = if is_root {
            sum_pairs(self.gh.iter().copied())
        } else {
            sum_pairs(rows.iter().map(|&r| self.gh[r as usize]))
        };
        let splittable =
            depth < self.p.max_depth && rows.len() >= 2 && totals[1] >= 2.0 * self.p.min_child_weight;
        let split = if !splittable {
            None
        } else if is_root {
            best_split_inner(self.m, NodeRows::All, self.gh, totals, self.p)
        } else {
            let gh_node: Vec<[f64; 2]> = rows.iter().map(|&r| self.gh[r as usize]).collect();
            best_split_inner(self.m, NodeRows::Subset(rows), &gh_node, totals, self.p)
        };
        match split {
            None => {
                let w = leaf_weight(totals[0], totals[1], self.p.reg_lambda);
                for &r in rows.iter() {
                    self.leaf_out[r as usize] = w;
                }
                self.nodes[idx] = Node::Leaf { leaf: w };
            }
            Some(c) => {
                let n_left = self.partition(rows, c.feature, c.bin);
                let (l, r) = rows.split_at_mut(n_left);
                let left = self.grow(l, depth + 1, false);
                let right = self.grow(r, depth + 1, false);
                self.nodes[idx] = Node::Split {
                    feature: c.feature,
                    threshold: c.threshold,
                    left,
                    right,
                };
            }
        }
        idx
    }

    /// Stable partition: rows with `bin <= split_bin` first.
    fn partition(&mut self, rows: &mut [u32], feature: usize, split_bin: usize) -> usize {
        self.scratch.clear();
        let mut w = 0;
        for i in 0..rows.len() {
            let r = rows[i];
            if self.m.bin(feature, r as usize) <= split_bin {
                rows[w] = r;
                w += 1;
            } else {
                self.scratch.push(r);
            }
        }
        rows[w..].copy_from_slice(&self.scratch);
        w
    }
}

/// Grows one tree depth-first. `gh` holds `[g, h]` per row; each row's leaf
/// weight (before the learning rate) is written to `leaf_out`.
pub fn build_tree(m: &BinnedMatrix, gh: &[[f64; 2]], p: &TreeParams, leaf_out: &mut [f64]) -> Tree {
    let n = m.n_rows();
    assert_eq!(gh.len(), n);
    assert_eq!(leaf_out.len(), n);
    let mut rows: Vec<u32> = (0..n as u32).collect();
    let mut g = Grower {
        m,
        gh,
        p,
        nodes: Vec::new(),
        leaf_out,
        scratch: Vec::with_capacity(n),
    };
    if n == 0 {
        return Tree::leaf(0.0);
    }
    g.grow(&mut rows, 0, true);
    Tree { nodes: g.nodes }
}
