//! Vector arithmetic used by the variational right-hand sides: plain vectors,
//! and vectors split by order in ε for truncated expansions.

use crate::tensor::{apply_raw, eval_raw, MAX_ARITY};

pub trait Alg: Clone {
    fn zero(n: usize) -> Self;
    fn clear(&mut self);
    fn add_scaled(&mut self, s: f64, o: &Self);
    /// out += scale·Γ(args); `chi` marks a spike-indicator factor.
    fn apply(c: &[f64], n: usize, args: &[&Self], scale: f64, chi: bool, out: &mut Self);
}

#[derive(Clone, Debug, PartialEq)]
pub struct Plain(pub Vec<f64>);

impl Alg for Plain {
    fn zero(n: usize) -> Self {
        Plain(vec![0.0; n])
    }

    fn clear(&mut self) {
        self.0.iter_mut().for_each(|v| *v = 0.0);
    }

    fn add_scaled(&mut self, s: f64, o: &Self) {
        self.0.iter_mut().zip(&o.0).for_each(|(a, b)| *a += s * b);
    }

    fn apply(c: &[f64], n: usize, args: &[&Self], scale: f64, _chi: bool, out: &mut Self) {
        let mut sl: [&[f64]; MAX_ARITY] = [&[]; MAX_ARITY];
        for (k, a) in args.iter().enumerate() {
            sl[k] = &a.0;
        }
        apply_raw(c, n, &sl[..args.len()], scale, &mut out.0);
    }
}

/// Highest total grade kept. y_k has grade k (order ε^{k/2}); a factor χ_{E_ε}
/// adds 2, once per monomial since χ² = χ.
pub const MAX_GRADE: usize = 4;
const SLOTS: usize = 2 * (MAX_GRADE + 1);

fn slot(g: usize, chi: bool) -> usize {
    2 * g + chi as usize
}

fn admissible(g: usize, chi: bool) -> bool {
    g + 2 * chi as usize <= MAX_GRADE
}

/// A vector written as a sum of pieces of known grade; pieces above
/// `MAX_GRADE` are dropped as they are formed.
#[derive(Clone, Debug)]
pub struct Graded {
    n: usize,
    data: Vec<f64>,
    mask: u32,
}

impl Graded {
    /// `v` as a single piece of grade `g` without spike factor.
    pub fn single(v: &[f64], g: usize) -> Self {
        let mut out = Self::zero(v.len());
        if admissible(g, false) {
            out.piece_mut(g, false).copy_from_slice(v);
        }
        out
    }

    /// Overwrites self with `v` as a single piece of grade `g`.
    pub fn set_single(&mut self, v: &[f64], g: usize) {
        self.clear();
        if admissible(g, false) {
            self.piece_mut(g, false).copy_from_slice(v);
        }
    }

    /// Overwrites self with a copy of `o` without reallocating.
    pub fn assign(&mut self, o: &Self) {
        self.data.copy_from_slice(&o.data);
        self.mask = o.mask;
    }

    pub fn piece(&self, g: usize, chi: bool) -> Option<&[f64]> {
        let s = slot(g, chi);
        (self.mask & (1 << s) != 0).then(|| &self.data[s * self.n..(s + 1) * self.n])
    }

    fn piece_mut(&mut self, g: usize, chi: bool) -> &mut [f64] {
        let s = slot(g, chi);
        self.mask |= 1 << s;
        &mut self.data[s * self.n..(s + 1) * self.n]
    }

    fn pieces(&self) -> impl Iterator<Item = (usize, bool, &[f64])> + '_ {
        (0..SLOTS).filter(move |s| self.mask & (1 << s) != 0).map(move |s| (s / 2, s % 2 == 1, &self.data[s * self.n..(s + 1) * self.n]))
    }

    /// Sum of the kept pieces.
    pub fn total(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (_, _, v) in self.pieces() {
            out.iter_mut().zip(v).for_each(|(a, b)| *a += b);
        }
        out
    }
}

fn expand<'a>(args: &[&'a Graded], k: usize, g: usize, chi: bool, sl: &mut [&'a [f64]; MAX_ARITY], f: &mut dyn FnMut(&[&[f64]], usize, bool)) {
    if !admissible(g, chi) {
        return;
    }
    if k == args.len() {
        f(&sl[..k], g, chi);
        return;
    }
    for (pg, pc, v) in args[k].pieces() {
        sl[k] = v;
        expand(args, k + 1, g + pg, chi || pc, sl, f);
    }
}

impl Alg for Graded {
    fn zero(n: usize) -> Self {
        Self { n, data: vec![0.0; SLOTS * n], mask: 0 }
    }

    fn clear(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
        self.mask = 0;
    }

    fn add_scaled(&mut self, s: f64, o: &Self) {
        for (g, c, v) in o.pieces() {
            self.piece_mut(g, c).iter_mut().zip(v).for_each(|(a, b)| *a += s * b);
        }
    }

    fn apply(c: &[f64], n: usize, args: &[&Self], scale: f64, chi: bool, out: &mut Self) {
        let mut sl: [&[f64]; MAX_ARITY] = [&[]; MAX_ARITY];
        expand(args, 0, 0, chi, &mut sl, &mut |a, g, ch| apply_raw(c, n, a, scale, out.piece_mut(g, ch)));
    }
}

/// Σ of a real-valued form over all admissible piece combinations.
pub fn graded_eval(c: &[f64], n: usize, args: &[&Graded]) -> f64 {
    let mut sl: [&[f64]; MAX_ARITY] = [&[]; MAX_ARITY];
    let mut s = 0.0;
    expand(args, 0, 0, false, &mut sl, &mut |a, _, _| s += eval_raw(c, n, a));
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncation_drops_high_grades() {
        let y1 = Graded::single(&[2.0], 1);
        let y2 = Graded::single(&[3.0], 2);
        let mut g = y1.clone();
        g.add_scaled(1.0, &y2);
        // (y1 + y2)³ keeps only y1³ (grade 3); y1²y2 has grade 4 and is kept too.
        let v = graded_eval(&[1.0], 1, &[&g, &g, &g]);
        assert!((v - (8.0 + 3.0 * 4.0 * 3.0)).abs() < 1e-12);
    }

    #[test]
    fn spike_factor_counts_once() {
        let mut d = Graded::zero(1);
        Graded::apply(&[1.5], 1, &[], 1.0, true, &mut d);
        assert_eq!(d.piece(0, true), Some(&[1.5][..]));
        // (χδ)(χδ) has grade 2, (χδ)·y1·y1 has grade 4, (χδ)·y1³ is dropped
        let y1 = Graded::single(&[1.0], 1);
        assert!((graded_eval(&[1.0], 1, &[&d, &d]) - 2.25).abs() < 1e-12);
        assert!((graded_eval(&[1.0], 1, &[&d, &y1, &y1]) - 1.5).abs() < 1e-12);
        assert_eq!(graded_eval(&[1.0], 1, &[&d, &y1, &y1, &y1]), 0.0);
    }

    #[test]
    fn plain_matches_total_of_untruncated_pieces() {
        let mut p = Plain::zero(2);
        let c = vec![1.0, 2.0, 3.0, 4.0];
        Plain::apply(&c, 2, &[&Plain(vec![1.0, -1.0])], 2.0, false, &mut p);
        assert_eq!(p.0, vec![-2.0, -2.0]);
    }
}
