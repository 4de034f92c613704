//! Finite-support increment laws `Q_w` of the one-dimensional discounted walk.
//!
//! A family maps a state `w in [0, 1]` to an [`AtomList`]. Every built-in family
//! obeys the mirror law `Q_w(s) = Q_{1-w}(-s)`, has strictly positive drift on
//! `(0, 1/2)` and keeps mass on both sides of zero inside `(0, 1)`.
//!
//! Probabilities are evaluated from the parameters at each call. For `w > 1/2`
//! the list is produced by mirroring the list at `1 - w` (which is exact in
//! floating point on that half), so the symmetry holds bit for bit.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the total mass of an atom list.
pub const MASS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    /// Offset in increment units (the walk moves by `x * offset`).
    pub offset: f64,
    pub prob: f64,
}

/// A finite probability law on the real line, atoms sorted by offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomList {
    atoms: Vec<Atom>,
}

impl AtomList {
    /// Builds a list from `(offset, probability)` pairs.
    pub fn new(pairs: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let mut atoms: Vec<Atom> = pairs
            .into_iter()
            .map(|(offset, prob)| Atom { offset, prob })
            .collect();
        if atoms.is_empty() {
            return Err(Error::Config("atom list is empty".into()));
        }
        for a in &atoms {
            if !a.offset.is_finite() || !a.prob.is_finite() {
                return Err(Error::Config(format!("non-finite atom {a:?}")));
            }
            if a.prob < 0.0 {
                return Err(Error::Config(format!("negative probability {} at offset {}", a.prob, a.offset)));
            }
        }
        atoms.sort_by(|a, b| a.offset.total_cmp(&b.offset));
        if atoms.windows(2).any(|w| w[0].offset == w[1].offset) {
            return Err(Error::Config("atom offsets must be distinct".into()));
        }
        let total: f64 = atoms.iter().map(|a| a.prob).sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::Config(format!("atom probabilities sum to {total}, not 1")));
        }
        Ok(Self { atoms })
    }

    // Internal constructor for lists already known to be valid and sorted.
    fn from_sorted(atoms: Vec<Atom>) -> Self {
        debug_assert!(atoms.windows(2).all(|w| w[0].offset < w[1].offset));
        Self { atoms }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn iter(&self) -> impl Iterator<Item = &Atom> {
        self.atoms.iter()
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.prob).sum()
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|a| a.prob * a.offset).sum()
    }

    pub fn max_abs_offset(&self) -> f64 {
        self.atoms.iter().fold(0.0, |m, a| m.max(a.offset.abs()))
    }

    /// The law of `-Y`.
    pub fn negated(&self) -> Self {
        let atoms = self
            .atoms
            .iter()
            .rev()
            .map(|a| Atom { offset: -a.offset, prob: a.prob })
            .collect();
        Self::from_sorted(atoms)
    }

    /// Inverse-CDF draw using exactly one uniform from `rng`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.offset_at(u)
    }

    /// Offset selected by the uniform `u in [0, 1)`.
    pub fn offset_at(&self, u: f64) -> f64 {
        let mut acc = 0.0;
        for a in &self.atoms {
            acc += a.prob;
            if u < acc {
                return a.offset;
            }
        }
        // Rounding left `u` above the accumulated mass: take the last charged atom.
        self.atoms
            .iter()
            .rev()
            .find(|a| a.prob > 0.0)
            .map(|a| a.offset)
            .unwrap_or(self.atoms[self.atoms.len() - 1].offset)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum FamilyKind {
    /// Atoms `{+1, -1}` with `P(+1) = 1/2 + kappa (1/2 - w)`.
    Binary { kappa: f64 },
    /// Atoms `{+1, 0, -1}` with probabilities `(p (1-q), q, (1-p)(1-q))`,
    /// `p` as in the binary family.
    ThreeAtom { kappa: f64, q: f64 },
}

/// A smoothly `w`-parametrized increment law. Immutable once built.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IncrementFamily {
    kind: FamilyKind,
}

pub const DEFAULT_KAPPA: f64 = 0.5;
pub const DEFAULT_Q: f64 = 0.2;

fn check_kappa(kappa: f64) -> Result<()> {
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(Error::Config(format!("kappa must satisfy 0 < kappa <= 1, got {kappa}")));
    }
    Ok(())
}

fn check_w(w: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::Domain(format!("state w = {w} outside [0, 1]")));
    }
    Ok(())
}

impl IncrementFamily {
    pub fn binary(kappa: f64) -> Result<Self> {
        check_kappa(kappa)?;
        Ok(Self { kind: FamilyKind::Binary { kappa } })
    }

    pub fn three_atom(kappa: f64, q: f64) -> Result<Self> {
        check_kappa(kappa)?;
        if !(0.0..1.0).contains(&q) {
            return Err(Error::Config(format!("q must satisfy 0 <= q < 1, got {q}")));
        }
        Ok(Self { kind: FamilyKind::ThreeAtom { kappa, q } })
    }

    /// Resolves a family from its id and a parameter mapping. Missing
    /// parameters take their defaults; unknown ones are rejected.
    pub fn from_id(id: &str, params: &BTreeMap<String, f64>) -> Result<Self> {
        let allowed: &[&str] = match id {
            "binary" => &["kappa"],
            "three-atom" => &["kappa", "q"],
            other => return Err(Error::Config(format!("unknown family id '{other}' (known: binary, three-atom)"))),
        };
        if let Some(k) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::Config(format!("family '{id}' has no parameter '{k}'")));
        }
        let kappa = params.get("kappa").copied().unwrap_or(DEFAULT_KAPPA);
        match id {
            "binary" => Self::binary(kappa),
            _ => Self::three_atom(kappa, params.get("q").copied().unwrap_or(DEFAULT_Q)),
        }
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn id(&self) -> &'static str {
        match self.kind {
            FamilyKind::Binary { .. } => "binary",
            FamilyKind::ThreeAtom { .. } => "three-atom",
        }
    }

    pub fn parameters(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        match self.kind {
            FamilyKind::Binary { kappa } => {
                m.insert("kappa".to_string(), kappa);
            }
            FamilyKind::ThreeAtom { kappa, q } => {
                m.insert("kappa".to_string(), kappa);
                m.insert("q".to_string(), q);
            }
        }
        m
    }

    /// Bound on `|offset|` over all states.
    pub fn y_max(&self) -> f64 {
        1.0
    }

    pub fn atom_count(&self) -> usize {
        match self.kind {
            FamilyKind::Binary { .. } => 2,
            FamilyKind::ThreeAtom { .. } => 3,
        }
    }

    /// True when every offset is an integer, so the walk lives on a lattice.
    pub fn has_integer_offsets(&self) -> bool {
        true
    }

    fn kappa(&self) -> f64 {
        match self.kind {
            FamilyKind::Binary { kappa } | FamilyKind::ThreeAtom { kappa, .. } => kappa,
        }
    }

    // Law on the lower half, w in [0, 1/2].
    fn lower_half(&self, w: f64) -> AtomList {
        let p = 0.5 + self.kappa() * (0.5 - w);
        match self.kind {
            FamilyKind::Binary { .. } => AtomList::from_sorted(vec![
                Atom { offset: -1.0, prob: 1.0 - p },
                Atom { offset: 1.0, prob: p },
            ]),
            FamilyKind::ThreeAtom { q, .. } => AtomList::from_sorted(vec![
                Atom { offset: -1.0, prob: (1.0 - p) * (1.0 - q) },
                Atom { offset: 0.0, prob: q },
                Atom { offset: 1.0, prob: p * (1.0 - q) },
            ]),
        }
    }

    /// The law `Q_w`.
    pub fn atoms(&self, w: f64) -> Result<AtomList> {
        check_w(w)?;
        Ok(if w > 0.5 {
            self.lower_half(1.0 - w).negated()
        } else {
            self.lower_half(w)
        })
    }

    pub fn mean(&self, w: f64) -> Result<f64> {
        Ok(self.atoms(w)?.mean())
    }

    pub fn sample<R: Rng + ?Sized>(&self, w: f64, rng: &mut R) -> Result<f64> {
        Ok(self.atoms(w)?.sample(rng))
    }

    /// Lipschitz bound on `w -> mean(Q_w)`.
    pub fn mean_lipschitz(&self) -> f64 {
        match self.kind {
            FamilyKind::Binary { kappa } => 2.0 * kappa,
            FamilyKind::ThreeAtom { kappa, q } => 2.0 * kappa * (1.0 - q),
        }
    }

    /// Lower bound on the mass of the most negative and most positive atoms
    /// for `w` in the closed window `[margin, 1 - margin]`.
    pub fn side_mass_floor(&self, margin: f64) -> f64 {
        let margin = margin.clamp(0.0, 0.5);
        let low_side = 0.5 - self.kappa() * (0.5 - margin);
        match self.kind {
            FamilyKind::Binary { .. } => low_side,
            FamilyKind::ThreeAtom { q, .. } => low_side * (1.0 - q),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::replica_rng;

    fn grid() -> impl Iterator<Item = f64> {
        (0..=200).map(|k| k as f64 / 200.0)
    }

    fn families() -> Vec<IncrementFamily> {
        vec![
            IncrementFamily::binary(0.5).unwrap(),
            IncrementFamily::binary(1.0).unwrap(),
            IncrementFamily::three_atom(0.5, 0.2).unwrap(),
            IncrementFamily::three_atom(0.8, 0.6).unwrap(),
        ]
    }

    #[test]
    fn binary_quarter() {
        let f = IncrementFamily::binary(0.5).unwrap();
        let a = f.atoms(0.25).unwrap();
        assert_eq!(a.atoms(), &[Atom { offset: -1.0, prob: 0.375 }, Atom { offset: 1.0, prob: 0.625 }]);
        let h = f.atoms(0.5).unwrap();
        assert_eq!(h.atoms()[0].prob, 0.5);
        assert_eq!(h.atoms()[1].prob, 0.5);
        assert_eq!(f.mean(0.25).unwrap(), 0.25);
        assert_eq!(f.mean(0.75).unwrap(), -0.25);
        assert_eq!(f.mean(0.5).unwrap(), 0.0);
    }

    #[test]
    fn normalization_and_support_on_grid() {
        for f in families() {
            for w in grid() {
                let a = f.atoms(w).unwrap();
                assert!((a.total_mass() - 1.0).abs() <= 1e-12);
                assert!(a.max_abs_offset() <= f.y_max());
                assert_eq!(a.len(), f.atom_count());
            }
        }
    }

    #[test]
    fn mirror_symmetry_is_exact_on_grid() {
        for f in families() {
            // every pair {w, 1-w} of the grid, taking the upper member as base
            for w in grid().filter(|&w| w >= 0.5) {
                assert_eq!(f.atoms(w).unwrap(), f.atoms(1.0 - w).unwrap().negated(), "w = {w}");
            }
        }
    }

    #[test]
    fn drift_sign_and_lipschitz() {
        let h = 1e-4;
        for f in families() {
            for w in grid() {
                let m = f.mean(w).unwrap();
                if w > 0.0 && w < 0.5 {
                    assert!(m > 0.0);
                } else if w > 0.5 && w < 1.0 {
                    assert!(m < 0.0);
                }
                if w + h <= 1.0 {
                    let d = (f.mean(w + h).unwrap() - m).abs();
                    assert!(d <= f.mean_lipschitz() * h * (1.0 + 1e-9));
                }
            }
            assert!(f.mean(0.5).unwrap().abs() <= 1e-14);
        }
    }

    #[test]
    fn two_sided_support_inside() {
        for f in families() {
            let floor = f.side_mass_floor(1.0 / 200.0);
            assert!(floor > 0.0);
            for w in grid().filter(|&w| w > 0.0 && w < 1.0) {
                let a = f.atoms(w).unwrap();
                let lo = a.atoms().first().unwrap();
                let hi = a.atoms().last().unwrap();
                assert!(lo.offset < 0.0 && hi.offset > 0.0);
                assert!(lo.prob >= floor - 1e-15 && hi.prob >= floor - 1e-15, "w = {w}");
            }
        }
    }

    #[test]
    fn parameter_validation() {
        assert!(matches!(IncrementFamily::binary(0.0), Err(Error::Config(_))));
        assert!(matches!(IncrementFamily::binary(1.5), Err(Error::Config(_))));
        assert!(matches!(IncrementFamily::three_atom(0.5, 1.0), Err(Error::Config(_))));
        let f = IncrementFamily::binary(0.5).unwrap();
        assert!(matches!(f.atoms(1.2), Err(Error::Domain(_))));
        let mut p = BTreeMap::new();
        assert!(IncrementFamily::from_id("nope", &p).unwrap_err().to_string().contains("nope"));
        p.insert("q".into(), 0.1);
        assert!(IncrementFamily::from_id("binary", &p).is_err());
        assert_eq!(IncrementFamily::from_id("three-atom", &p).unwrap(), IncrementFamily::three_atom(0.5, 0.1).unwrap());
    }

    #[test]
    fn atom_list_validation() {
        assert!(AtomList::new([(1.0, 0.5), (1.0, 0.5)]).is_err());
        assert!(AtomList::new([(1.0, 0.5), (-1.0, 0.4)]).is_err());
        assert!(AtomList::new([(1.0, 1.2), (-1.0, -0.2)]).is_err());
        assert!(AtomList::new([(-2.0, 0.25), (3.0, 0.75)]).is_ok());
    }

    #[test]
    fn sampling_is_deterministic() {
        let f = IncrementFamily::binary(0.5).unwrap();
        let draw = |seed| {
            let mut rng = replica_rng(seed, 0);
            (0..64).map(|_| f.sample(0.3, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(11), draw(11));
        assert_ne!(draw(11), draw(12));
    }

    #[test]
    fn sure_atom_always_drawn() {
        let a = AtomList::new([(1.0, 1.0)]).unwrap();
        let mut rng = replica_rng(3, 0);
        assert!((0..1000).all(|_| a.sample(&mut rng) == 1.0));
    }

    #[test]
    fn empirical_frequency_binary() {
        let f = IncrementFamily::binary(0.5).unwrap();
        let mut rng = replica_rng(2024, 0);
        let n = 1_000_000;
        let ups = (0..n).filter(|_| f.sample(0.25, &mut rng).unwrap() > 0.0).count();
        let freq = ups as f64 / n as f64;
        assert!((freq - 0.625).abs() <= 0.002, "freq = {freq}");
    }
}
