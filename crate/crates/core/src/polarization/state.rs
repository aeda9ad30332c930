use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;

use super::{
    Analyzer, JonesMatrix, Mode, Polarization, Port, SpatialPath, WaveplateSetting, NUM_MODES,
};
use crate::{Error, Result};

/// Amplitudes below this magnitude are dropped after every transform.
const PRUNE: f64 = 1e-15;
const NORM_TOL: f64 = 1e-9;
const UNITARY_TOL: f64 = 1e-9;

/// Photon count in every mode.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Occupation([u8; NUM_MODES]);

impl Occupation {
    pub const fn vacuum() -> Self {
        Occupation([0; NUM_MODES])
    }

    pub fn from_modes(modes: &[(Mode, u8)]) -> Self {
        let mut occ = Self::vacuum();
        for &(m, n) in modes {
            occ.0[m.index()] += n;
        }
        occ
    }

    /// Copy with one more photon in `mode`.
    pub fn plus(mut self, mode: Mode) -> Self {
        self.0[mode.index()] += 1;
        self
    }

    pub fn get(&self, mode: Mode) -> u8 {
        self.0[mode.index()]
    }

    pub fn total(&self) -> usize {
        self.0.iter().map(|&n| n as usize).sum()
    }

    pub fn in_path(&self, path: SpatialPath) -> usize {
        Polarization::ALL
            .iter()
            .map(|&p| self.get(path.mode(p)) as usize)
            .sum()
    }

    pub fn counts(&self) -> &[u8; NUM_MODES] {
        &self.0
    }

    /// Copy with every mode of `paths` emptied.
    pub fn without_paths(&self, paths: &[SpatialPath]) -> Self {
        let mut out = *self;
        for &path in paths {
            for pol in Polarization::ALL {
                out.0[path.mode(pol).index()] = 0;
            }
        }
        out
    }

    fn factorial_product(&self) -> f64 {
        self.0.iter().map(|&n| factorial(n as usize)).product()
    }
}

impl fmt::Debug for Occupation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("|")?;
        let mut first = true;
        for (i, &n) in self.0.iter().enumerate() {
            if n == 0 {
                continue;
            }
            let m = Mode::from_index(i).expect("index within NUM_MODES");
            if !first {
                f.write_str(",")?;
            }
            first = false;
            let pol = match m.pol {
                Polarization::H => "H",
                Polarization::V => "V",
            };
            if n == 1 {
                write!(f, "{pol}{}", m.path)?;
            } else {
                write!(f, "{n}{pol}{}", m.path)?;
            }
        }
        f.write_str("⟩")
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Sparse superposition over mode occupations, plus a phenomenological
/// coherence factor.
///
/// `coherence` is the weight `v` of the pure state in
/// `ρ = v·|ψ⟩⟨ψ| + (1 − v)·Σ |aₜ|²·|t⟩⟨t|`, where `t` runs over the H/V Fock
/// terms. It is carried along unchanged by every optical element (all of them
/// map Fock terms to Fock terms up to polarization rotations) and consumed by
/// the measurement functions.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonState {
    terms: BTreeMap<Occupation, Complex64>,
    coherence: f64,
    n_max: usize,
}

impl PhotonState {
    pub const DEFAULT_N_MAX: usize = 4;

    pub fn vacuum(n_max: usize) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(Occupation::vacuum(), Complex64::new(1.0, 0.0));
        PhotonState {
            terms,
            coherence: 1.0,
            n_max,
        }
    }

    /// Builds a state from explicit terms. Duplicate occupations add.
    /// The result is not normalized.
    pub fn from_terms(
        terms: impl IntoIterator<Item = (Occupation, Complex64)>,
        n_max: usize,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (occ, amp) in terms {
            check_truncation(&occ, n_max)?;
            *map.entry(occ).or_insert(Complex64::new(0.0, 0.0)) += amp;
        }
        map.retain(|_, a: &mut Complex64| a.norm() > PRUNE);
        Ok(PhotonState {
            terms: map,
            coherence: 1.0,
            n_max,
        })
    }

    /// One photon in `path` with polarization `pol`.
    pub fn single(path: SpatialPath, pol: Polarization) -> Self {
        Self::from_terms(
            [(Occupation::from_modes(&[(path.mode(pol), 1)]), Complex64::new(1.0, 0.0))],
            Self::DEFAULT_N_MAX,
        )
        .expect("one photon never exceeds the default truncation")
    }

    pub fn with_coherence(mut self, coherence: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&coherence) {
            return Err(Error::param("coherence", format!("{coherence} not in [0, 1]")));
        }
        self.coherence = coherence;
        Ok(self)
    }

    pub fn coherence(&self) -> f64 {
        self.coherence
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Occupation, &Complex64)> {
        self.terms.iter()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn amplitude(&self, occ: &Occupation) -> Complex64 {
        self.terms.get(occ).copied().unwrap_or_default()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.terms.values().map(|a| a.norm_sqr()).sum()
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm_sqr() - 1.0).abs() <= NORM_TOL
    }

    pub fn normalized(mut self) -> Result<Self> {
        let n = self.norm_sqr();
        if n <= 0.0 {
            return Err(Error::ZeroProbability);
        }
        let s = n.sqrt();
        for a in self.terms.values_mut() {
            *a /= s;
        }
        Ok(self)
    }

    /// `|aₜ|²` of every term, i.e. the state fully dephased in the Fock basis.
    pub fn populations(&self) -> impl Iterator<Item = (&Occupation, f64)> {
        self.terms.iter().map(|(o, a)| (o, a.norm_sqr()))
    }

    /// Second-quantized linear transform of the creation operators.
    ///
    /// `image(m)` returns `Some([(m', c), ...])` meaning `a†ₘ → Σ c·a†ₘ'`;
    /// `None` leaves the mode untouched.
    pub fn linear_transform<F>(&self, image: F) -> Result<Self>
    where
        F: Fn(Mode) -> Option<Vec<(Mode, Complex64)>>,
    {
        let mut images: Vec<Vec<(usize, Complex64)>> = Vec::with_capacity(NUM_MODES);
        for i in 0..NUM_MODES {
            let mode = Mode::from_index(i).expect("index within NUM_MODES");
            let img = match image(mode) {
                Some(list) => list
                    .into_iter()
                    .filter(|(_, c)| c.norm() > PRUNE)
                    .map(|(m, c)| (m.index(), c))
                    .collect(),
                None => vec![(i, Complex64::new(1.0, 0.0))],
            };
            images.push(img);
        }

        let mut out: BTreeMap<Occupation, Complex64> = BTreeMap::new();
        for (occ, &amp) in &self.terms {
            // monomial coefficients in the creation operators, before √n! factors
            let mut poly: BTreeMap<Occupation, Complex64> = BTreeMap::new();
            poly.insert(Occupation::vacuum(), amp / occ.factorial_product().sqrt());
            for (i, &n) in occ.0.iter().enumerate() {
                for _ in 0..n {
                    poly = multiply_linear(&poly, &images[i], self.n_max)?;
                }
            }
            for (mono, c) in poly {
                *out.entry(mono).or_insert(Complex64::new(0.0, 0.0)) +=
                    c * mono.factorial_product().sqrt();
            }
        }
        out.retain(|_, a| a.norm() > PRUNE);
        Ok(PhotonState {
            terms: out,
            coherence: self.coherence,
            n_max: self.n_max,
        })
    }

    /// Applies a polarization element to every photon on `path`.
    pub fn apply_element(&self, path: SpatialPath, j: &JonesMatrix) -> Result<Self> {
        let err = j.unitarity_error();
        if err > UNITARY_TOL {
            return Err(Error::NonUnitary(err));
        }
        self.linear_transform(|m| {
            (m.path == path).then(|| {
                let col = m.pol.index();
                vec![
                    (path.mode(Polarization::H), j.get(0, col)),
                    (path.mode(Polarization::V), j.get(1, col)),
                ]
            })
        })
    }

    /// Polarizing beam splitter: H transmits, V reflects.
    ///
    /// `in_a`'s H exits `out_a`, its V exits `out_b`; `in_b`'s H exits
    /// `out_b`, its V exits `out_a`.
    pub fn pbs_route(
        &self,
        in_a: SpatialPath,
        in_b: SpatialPath,
        out_a: SpatialPath,
        out_b: SpatialPath,
    ) -> Result<Self> {
        let labels = [in_a, in_b, out_a, out_b];
        for i in 0..4 {
            for k in (i + 1)..4 {
                if labels[i] == labels[k] {
                    return Err(Error::param("pbs_route", "path labels must be distinct"));
                }
            }
        }
        let one = Complex64::new(1.0, 0.0);
        self.linear_transform(|m| {
            let target = match (m.path, m.pol) {
                (p, Polarization::H) if p == in_a => out_a,
                (p, Polarization::V) if p == in_a => out_b,
                (p, Polarization::H) if p == in_b => out_b,
                (p, Polarization::V) if p == in_b => out_a,
                _ => return None,
            };
            Some(vec![(target.mode(m.pol), one)])
        })
    }

    /// Runs one analyzer: QWP (if set), HWP, then a PBS whose transmitted
    /// port carries H (the `+` outcome) and reflected port V (`−`).
    pub fn analyze(&self, analyzer: Analyzer, setting: &WaveplateSetting) -> Result<Self> {
        let path = analyzer.input();
        let rotated = self.apply_element(path, &setting.matrix())?;
        let one = Complex64::new(1.0, 0.0);
        rotated.linear_transform(|m| {
            (m.path == path).then(|| {
                let port = match m.pol {
                    Polarization::H => Port::Transmit,
                    Polarization::V => Port::Reflect,
                };
                vec![(SpatialPath::Out(analyzer, port).mode(m.pol), one)]
            })
        })
    }

    /// Projects onto exactly one photon in each of `paths` and renormalizes.
    ///
    /// Returns the conditional state and the projection probability, or
    /// [`Error::ZeroProbability`] when no term survives.
    pub fn postselect_one_per_path(&self, paths: &[SpatialPath]) -> Result<(Self, f64)> {
        for i in 0..paths.len() {
            if paths[i + 1..].contains(&paths[i]) {
                return Err(Error::param("postselect", "paths must be distinct"));
            }
        }
        let total = self.norm_sqr();
        if total <= 0.0 {
            return Err(Error::ZeroProbability);
        }
        let kept: BTreeMap<_, _> = self
            .terms
            .iter()
            .filter(|(occ, _)| paths.iter().all(|&p| occ.in_path(p) == 1))
            .map(|(o, a)| (*o, *a))
            .collect();
        let p: f64 = kept.values().map(|a| a.norm_sqr()).sum::<f64>() / total;
        if p <= PRUNE * PRUNE {
            return Err(Error::ZeroProbability);
        }
        let state = PhotonState {
            terms: kept,
            coherence: self.coherence,
            n_max: self.n_max,
        }
        .normalized()?;
        Ok((state, p))
    }

    /// Tensor product with a state on disjoint modes.
    pub fn tensor(&self, other: &PhotonState) -> Result<Self> {
        let n_max = self.n_max.max(other.n_max);
        let mut out = Vec::with_capacity(self.len() * other.len());
        for (oa, aa) in &self.terms {
            for (ob, ab) in &other.terms {
                let mut occ = *oa;
                for i in 0..NUM_MODES {
                    occ.0[i] += ob.0[i];
                }
                out.push((occ, aa * ab));
            }
        }
        let mut s = PhotonState::from_terms(out, n_max)?;
        s.coherence = self.coherence * other.coherence;
        Ok(s)
    }
}

fn check_truncation(occ: &Occupation, n_max: usize) -> Result<()> {
    let total = occ.total();
    if total > n_max {
        return Err(Error::Truncation {
            count: total,
            n_max,
        });
    }
    Ok(())
}

fn multiply_linear(
    poly: &BTreeMap<Occupation, Complex64>,
    image: &[(usize, Complex64)],
    n_max: usize,
) -> Result<BTreeMap<Occupation, Complex64>> {
    let mut out = BTreeMap::new();
    for (mono, &c) in poly {
        for &(idx, k) in image {
            let mut m = *mono;
            m.0[idx] += 1;
            check_truncation(&m, n_max)?;
            *out.entry(m).or_insert(Complex64::new(0.0, 0.0)) += c * k;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polarization::{hwp_matrix, qwp_matrix};
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_8};

    use Polarization::{H, V};
    use SpatialPath::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn occ(modes: &[(SpatialPath, Polarization, u8)]) -> Occupation {
        let list: Vec<_> = modes.iter().map(|&(p, pol, n)| (p.mode(pol), n)).collect();
        Occupation::from_modes(&list)
    }

    #[test]
    fn identity_element_leaves_state_unchanged() {
        let s = PhotonState::single(P1, H);
        let out = s.apply_element(P1, &JonesMatrix::identity()).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn hwp_on_h_gives_diagonal() {
        let s = PhotonState::single(P1, H);
        let out = s.apply_element(P1, &hwp_matrix(FRAC_PI_8)).unwrap();
        assert_eq!(out.len(), 2);
        assert!((out.amplitude(&occ(&[(P1, H, 1)])) - c(FRAC_1_SQRT_2)).norm() < 1e-12);
        assert!((out.amplitude(&occ(&[(P1, V, 1)])) - c(FRAC_1_SQRT_2)).norm() < 1e-12);
    }

    #[test]
    fn non_unitary_element_is_rejected() {
        let s = PhotonState::single(P1, H);
        let lossy = JonesMatrix::from_real([[0.5, 0.0], [0.0, 1.0]]);
        assert!(matches!(s.apply_element(P1, &lossy), Err(Error::NonUnitary(_))));
    }

    #[test]
    fn pbs_transmits_h_and_reflects_v() {
        let h = PhotonState::single(P2, H).pbs_route(P2, P3, P2Prime, P3Prime).unwrap();
        assert!((h.amplitude(&occ(&[(P2Prime, H, 1)])).norm() - 1.0).abs() < 1e-12);
        let v = PhotonState::single(P2, V).pbs_route(P2, P3, P2Prime, P3Prime).unwrap();
        assert!((v.amplitude(&occ(&[(P3Prime, V, 1)])).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pbs_separates_two_horizontal_photons() {
        let s = PhotonState::from_terms([(occ(&[(P2, H, 1), (P3, H, 1)]), c(1.0))], 4).unwrap();
        let out = s.pbs_route(P2, P3, P2Prime, P3Prime).unwrap();
        assert_eq!(out.len(), 1);
        let (o, _) = out.terms().next().unwrap();
        assert_eq!(o.in_path(P2Prime), 1);
        assert_eq!(o.in_path(P3Prime), 1);
    }

    #[test]
    fn pbs_rejects_repeated_labels() {
        let s = PhotonState::single(P2, H);
        assert!(s.pbs_route(P2, P2, P2Prime, P3Prime).is_err());
    }

    #[test]
    fn h_and_v_on_same_output_fail_one_per_path() {
        // H from 2 and V from 3 both exit 2'
        let s = PhotonState::from_terms([(occ(&[(P2, H, 1), (P3, V, 1)]), c(1.0))], 4).unwrap();
        let out = s.pbs_route(P2, P3, P2Prime, P3Prime).unwrap();
        assert!(matches!(
            out.postselect_one_per_path(&[P2Prime, P3Prime]),
            Err(Error::ZeroProbability)
        ));
    }

    #[test]
    fn truncation_is_explicit() {
        let big = occ(&[(P1, H, 3), (P2, H, 2)]);
        assert!(matches!(
            PhotonState::from_terms([(big, c(1.0))], 4),
            Err(Error::Truncation { count: 5, n_max: 4 })
        ));
    }

    #[test]
    fn two_photon_bunching_through_half_wave_plate() {
        // |1H,1V⟩ under a 45° HWP swaps to |1V,1H⟩ = same occupation, with sign −1
        let s = PhotonState::from_terms([(occ(&[(P1, H, 1), (P1, V, 1)]), c(1.0))], 4).unwrap();
        let out = s.apply_element(P1, &hwp_matrix(std::f64::consts::FRAC_PI_4)).unwrap();
        assert!((out.amplitude(&occ(&[(P1, H, 1), (P1, V, 1)])) - c(1.0)).norm() < 1e-12);

        // |1H,1V⟩ at 22.5° gives the Hong-Ou-Mandel-like (|2H⟩ − |2V⟩)/√2
        let out = s.apply_element(P1, &hwp_matrix(FRAC_PI_8)).unwrap();
        assert!(out.amplitude(&occ(&[(P1, H, 1), (P1, V, 1)])).norm() < 1e-12);
        assert!((out.amplitude(&occ(&[(P1, H, 2)])) - c(FRAC_1_SQRT_2)).norm() < 1e-12);
        assert!((out.amplitude(&occ(&[(P1, V, 2)])) - c(-FRAC_1_SQRT_2)).norm() < 1e-12);
    }

    fn random_state(amps: Vec<(f64, f64)>) -> PhotonState {
        // 4-photon terms spread over paths 1..4
        let shapes = [
            occ(&[(P1, H, 1), (P2, H, 1), (P3, H, 1), (P4, H, 1)]),
            occ(&[(P1, V, 1), (P2, V, 1), (P3, V, 1), (P4, V, 1)]),
            occ(&[(P1, H, 2), (P2, V, 1), (P4, H, 1)]),
            occ(&[(P1, H, 1), (P1, V, 1), (P3, H, 1), (P3, V, 1)]),
            occ(&[(P2, H, 2), (P2, V, 2)]),
            occ(&[(P3, V, 1), (P4, H, 3)]),
        ];
        let terms = shapes
            .iter()
            .zip(amps)
            .map(|(o, (re, im))| (*o, Complex64::new(re, im)));
        PhotonState::from_terms(terms, 4).unwrap().normalized().unwrap()
    }

    proptest! {
        #[test]
        fn optics_preserve_norm(
            amps in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 6)
                .prop_filter("nonzero", |v| v.iter().any(|(a, b)| a.abs() + b.abs() > 1e-3)),
            theta in -3.2f64..3.2,
            phi in -3.2f64..3.2,
        ) {
            let s = random_state(amps);
            let s = s.apply_element(P2, &hwp_matrix(theta)).unwrap();
            prop_assert!((s.norm_sqr() - 1.0).abs() < 1e-9);
            let s = s.apply_element(P1, &qwp_matrix(phi)).unwrap();
            prop_assert!((s.norm_sqr() - 1.0).abs() < 1e-9);
            let s = s.pbs_route(P2, P3, P2Prime, P3Prime).unwrap();
            prop_assert!((s.norm_sqr() - 1.0).abs() < 1e-9);
            let s = s.analyze(Analyzer::A2, &WaveplateSetting::pm_basis()).unwrap();
            prop_assert!((s.norm_sqr() - 1.0).abs() < 1e-9);
        }
    }
}
