//! METEOR with exact and Porter-stem matching stages.
//!
//! Stage one matches identical tokens, stage two matches leftover tokens that
//! share a stem. Both stages match as many tokens as possible. Among all
//! alignments that do so, the one with the fewest chunks is used; it is found
//! by branch-and-bound search over hypothesis positions.

use std::collections::HashMap;

use crate::text::{stem, tokenize};

pub const ALPHA: f64 = 0.9;
pub const BETA: f64 = 3.0;
pub const GAMMA: f64 = 0.5;

/// Search nodes expanded before the best alignment found so far is accepted.
const NODE_BUDGET: usize = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Alignment {
    pub matches: usize,
    pub chunks: usize,
}

struct Search<'a> {
    hyp: &'a [usize],
    hyp_stem: &'a [usize],
    reference: &'a [usize],
    ref_stem: &'a [usize],
    /// Exact matches still to place per surface id.
    exact_left: Vec<usize>,
    /// Stem-only matches still to place per stem id.
    stem_left: Vec<usize>,
    /// Hypothesis tokens left at or after the current position, per surface and per stem.
    hyp_surface_left: Vec<usize>,
    hyp_stem_left: Vec<usize>,
    surfaces_of_stem: Vec<Vec<usize>>,
    used: Vec<bool>,
    unmatched_left: usize,
    best: Option<usize>,
    nodes: usize,
}

impl Search<'_> {
    fn feasible(&self, w: usize, s: usize) -> bool {
        self.hyp_surface_left[w] >= self.exact_left[w]
            && self.hyp_stem_left[s] >= self.stem_left[s] + self.exact_left_for_stem(s)
    }

    fn exact_left_for_stem(&self, s: usize) -> usize {
        self.surfaces_of_stem[s].iter().map(|&w| self.exact_left[w]).sum()
    }

    fn run(&mut self, i: usize, prev: Option<usize>, chunks: usize) {
        self.nodes += 1;
        if self.best.is_some_and(|b| chunks >= b) || (self.nodes > NODE_BUDGET && self.best.is_some()) {
            return;
        }
        if i == self.hyp.len() {
            if self.exact_left.iter().all(|&c| c == 0) && self.stem_left.iter().all(|&c| c == 0) {
                self.best = Some(chunks);
            }
            return;
        }
        let (w, s) = (self.hyp[i], self.hyp_stem[i]);
        self.hyp_surface_left[w] -= 1;
        self.hyp_stem_left[s] -= 1;

        // candidate reference positions, continuation of the current chunk first
        let mut options: Vec<usize> = (0..self.reference.len())
            .filter(|&j| !self.used[j] && self.ref_stem[j] == s)
            .filter(|&j| {
                if self.reference[j] == w {
                    self.exact_left[w] > 0
                } else {
                    self.stem_left[s] > 0
                }
            })
            .collect();
        if let Some(p) = prev {
            if let Some(pos) = options.iter().position(|&j| j == p + 1) {
                options[..=pos].rotate_right(1);
            }
        }
        for j in options {
            let exact = self.reference[j] == w;
            if exact {
                self.exact_left[w] -= 1;
            } else {
                self.stem_left[s] -= 1;
            }
            self.used[j] = true;
            if self.feasible(w, s) {
                let extends = prev.is_some_and(|p| p + 1 == j);
                self.run(i + 1, Some(j), chunks + usize::from(!extends));
            }
            self.used[j] = false;
            if exact {
                self.exact_left[w] += 1;
            } else {
                self.stem_left[s] += 1;
            }
        }
        if self.unmatched_left > 0 && self.feasible(w, s) {
            self.unmatched_left -= 1;
            self.run(i + 1, None, chunks);
            self.unmatched_left += 1;
        }

        self.hyp_surface_left[w] += 1;
        self.hyp_stem_left[s] += 1;
    }
}

fn intern(ids: &mut HashMap<String, usize>, s: String) -> usize {
    let next = ids.len();
    *ids.entry(s).or_insert(next)
}

/// Maximal two-stage alignment with the fewest chunks.
pub fn align(hyp: &[String], reference: &[String]) -> Alignment {
    let mut surface = HashMap::new();
    let mut stems = HashMap::new();
    let mut encode = |toks: &[String]| -> (Vec<usize>, Vec<usize>) {
        toks.iter()
            .map(|t| (intern(&mut surface, t.clone()), intern(&mut stems, stem(t))))
            .unzip()
    };
    let (h, hs) = encode(hyp);
    let (r, rs) = encode(reference);
    let (n_surface, n_stem) = (surface.len(), stems.len());

    let count = |ids: &[usize], n: usize| {
        let mut c = vec![0usize; n];
        ids.iter().for_each(|&i| c[i] += 1);
        c
    };
    let (hc, rc) = (count(&h, n_surface), count(&r, n_surface));
    let exact: Vec<usize> = hc.iter().zip(&rc).map(|(a, b)| *a.min(b)).collect();
    // stem-stage leftovers per stem class
    let mut h_left = vec![0usize; n_stem];
    let mut r_left = vec![0usize; n_stem];
    for st in &hs {
        h_left[*st] += 1;
    }
    for st in &rs {
        r_left[*st] += 1;
    }
    let mut stem_of_surface = vec![0usize; n_surface];
    for (w, st) in h.iter().zip(&hs).chain(r.iter().zip(&rs)) {
        stem_of_surface[*w] = *st;
    }
    let mut surfaces_of_stem = vec![Vec::new(); n_stem];
    for (w, &st) in stem_of_surface.iter().enumerate() {
        surfaces_of_stem[st].push(w);
    }
    for (w, &e) in exact.iter().enumerate() {
        h_left[stem_of_surface[w]] -= e;
        r_left[stem_of_surface[w]] -= e;
    }
    let stem_matches: Vec<usize> = h_left.iter().zip(&r_left).map(|(a, b)| *a.min(b)).collect();
    let matches = exact.iter().sum::<usize>() + stem_matches.iter().sum::<usize>();
    if matches == 0 {
        return Alignment { matches: 0, chunks: 0 };
    }

    let mut search = Search {
        hyp: &h,
        hyp_stem: &hs,
        reference: &r,
        ref_stem: &rs,
        exact_left: exact,
        stem_left: stem_matches,
        hyp_surface_left: hc,
        hyp_stem_left: count(&hs, n_stem),
        surfaces_of_stem,
        used: vec![false; r.len()],
        unmatched_left: h.len() - matches,
        best: None,
        nodes: 0,
    };
    search.run(0, None, 0);
    Alignment {
        matches,
        chunks: search.best.expect("a maximal alignment always exists"),
    }
}

/// Score from alignment counts and sentence lengths.
pub fn meteor_from(a: Alignment, hyp_len: usize, ref_len: usize) -> f64 {
    if a.matches == 0 {
        return 0.0;
    }
    let m = a.matches as f64;
    let p = m / hyp_len as f64;
    let r = m / ref_len as f64;
    let f_mean = p * r / (ALPHA * p + (1.0 - ALPHA) * r);
    let penalty = GAMMA * (a.chunks as f64 / m).powf(BETA);
    f_mean * (1.0 - penalty)
}

pub fn meteor(hyp: &str, reference: &str) -> f64 {
    let (h, r) = (tokenize(hyp), tokenize(reference));
    meteor_from(align(h.tokens(), r.tokens()), h.len(), r.len())
}
