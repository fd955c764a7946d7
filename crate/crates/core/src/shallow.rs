//! TransE and DistMult scoring with analytic gradients.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::sign;

fn check_dims(a: &[f64], b: &[f64], c: &[f64]) -> Result<()> {
    if a.len() != b.len() || b.len() != c.len() {
        return Err(Error::Shape(format!(
            "embedding dimensions differ: {}, {}, {}",
            a.len(),
            b.len(),
            c.len()
        )));
    }
    Ok(())
}

/// `‖e_s + r_p − e_o‖₁`
pub fn transe_distance(es: &[f64], rp: &[f64], eo: &[f64]) -> Result<f64> {
    check_dims(es, rp, eo)?;
    Ok(transe_distance_unchecked(es, rp, eo))
}

#[inline]
pub(crate) fn transe_distance_unchecked(es: &[f64], rp: &[f64], eo: &[f64]) -> f64 {
    es.iter()
        .zip(rp)
        .zip(eo)
        .map(|((s, r), o)| (s + r - o).abs())
        .sum()
}

/// Partial derivatives of [`transe_distance`] with respect to `(e_s, r_p, e_o)`.
pub fn transe_grad(es: &[f64], rp: &[f64], eo: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    check_dims(es, rp, eo)?;
    let g: Vec<f64> = es
        .iter()
        .zip(rp)
        .zip(eo)
        .map(|((s, r), o)| sign(s + r - o))
        .collect();
    let neg = g.iter().map(|x| -x).collect();
    Ok((g.clone(), g, neg))
}

/// `Σ_k e_s[k] r_p[k] e_o[k]`
pub fn distmult_score(es: &[f64], rp: &[f64], eo: &[f64]) -> Result<f64> {
    check_dims(es, rp, eo)?;
    Ok(distmult_score_unchecked(es, rp, eo))
}

#[inline]
pub(crate) fn distmult_score_unchecked(es: &[f64], rp: &[f64], eo: &[f64]) -> f64 {
    es.iter().zip(rp).zip(eo).map(|((s, r), o)| s * r * o).sum()
}

pub fn distmult_grad(es: &[f64], rp: &[f64], eo: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    check_dims(es, rp, eo)?;
    let n = es.len();
    let (mut gs, mut gr, mut go) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for k in 0..n {
        gs[k] = rp[k] * eo[k];
        gr[k] = es[k] * eo[k];
        go[k] = es[k] * rp[k];
    }
    Ok((gs, gr, go))
}

/// Triple scoring function applied on top of entity encodings.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Decoder {
    /// `‖h_s + r_p − h_o‖₁`, lower is better.
    TransE,
    /// `Σ h_s r_p h_o`, higher is better.
    DistMult,
    /// `‖t_s − t_o − Δ_p‖₁` over spike times, lower is better.
    SpikeL1,
}

impl Decoder {
    /// Training distance. Scores are negated so that lower is always better.
    #[inline]
    pub fn distance(self, hs: &[f64], r: &[f64], ho: &[f64]) -> f64 {
        match self {
            Decoder::TransE => transe_distance_unchecked(hs, r, ho),
            Decoder::DistMult => -distmult_score_unchecked(hs, r, ho),
            Decoder::SpikeL1 => hs
                .iter()
                .zip(ho)
                .zip(r)
                .map(|((s, o), d)| (s - o - d).abs())
                .sum(),
        }
    }

    /// Adds `coef * ∂distance` into the three gradient rows.
    #[inline]
    #[allow(clippy::too_many_arguments)]
    pub fn accumulate_grad(
        self,
        hs: &[f64],
        r: &[f64],
        ho: &[f64],
        coef: f64,
        ghs: &mut [f64],
        gr: &mut [f64],
        gho: &mut [f64],
    ) {
        let n = hs.len();
        match self {
            Decoder::TransE => {
                for k in 0..n {
                    let g = coef * sign(hs[k] + r[k] - ho[k]);
                    ghs[k] += g;
                    gr[k] += g;
                    gho[k] -= g;
                }
            }
            Decoder::DistMult => {
                for k in 0..n {
                    ghs[k] -= coef * r[k] * ho[k];
                    gr[k] -= coef * hs[k] * ho[k];
                    gho[k] -= coef * hs[k] * r[k];
                }
            }
            Decoder::SpikeL1 => {
                for k in 0..n {
                    let g = coef * sign(hs[k] - ho[k] - r[k]);
                    ghs[k] += g;
                    gho[k] -= g;
                    gr[k] -= g;
                }
            }
        }
    }

    /// Query vector such that the distance of candidate `e` is
    /// [`Decoder::candidate_distance`]`(query, h_e)`.
    pub fn query(self, known: &[f64], r: &[f64], candidate_is_object: bool) -> Vec<f64> {
        match (self, candidate_is_object) {
            (Decoder::TransE, true) => known.iter().zip(r).map(|(a, b)| a + b).collect(),
            (Decoder::TransE, false) => known.iter().zip(r).map(|(a, b)| a - b).collect(),
            (Decoder::DistMult, _) => known.iter().zip(r).map(|(a, b)| a * b).collect(),
            (Decoder::SpikeL1, true) => known.iter().zip(r).map(|(a, b)| a - b).collect(),
            (Decoder::SpikeL1, false) => known.iter().zip(r).map(|(a, b)| a + b).collect(),
        }
    }

    #[inline]
    pub fn candidate_distance(self, query: &[f64], candidate: &[f64]) -> f64 {
        match self {
            Decoder::TransE | Decoder::SpikeL1 => crate::linalg::l1_distance(query, candidate),
            Decoder::DistMult => -crate::linalg::dot(query, candidate),
        }
    }
}

impl fmt::Display for Decoder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decoder::TransE => "transe",
            Decoder::DistMult => "distmult",
            Decoder::SpikeL1 => "spike-l1",
        })
    }
}

impl FromStr for Decoder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transe" => Ok(Decoder::TransE),
            "distmult" => Ok(Decoder::DistMult),
            "spike-l1" => Ok(Decoder::SpikeL1),
            _ => Err(Error::Config(format!("unknown decoder `{s}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn transe_examples() {
        assert_eq!(
            transe_distance(&[0.5, 1.0], &[0.0, 0.0], &[0.5, 1.0]).unwrap(),
            0.0
        );
        assert_eq!(
            transe_distance(&[1.0, 0.0], &[0.0, 1.0], &[0.0, 0.0]).unwrap(),
            2.0
        );
        let (a, b) = ([0.3, -0.7, 2.0], [1.1, 0.4, -0.2]);
        let z = [0.0; 3];
        assert_eq!(
            transe_distance(&a, &z, &b).unwrap(),
            transe_distance(&b, &z, &a).unwrap()
        );
        assert!(transe_distance(&[1.0], &[0.0, 1.0], &[0.0]).is_err());
    }

    #[test]
    fn transe_grad_sign_pattern() {
        // residual (2, -3)
        let (gs, gr, go) = transe_grad(&[2.0, 0.0], &[0.0, 0.0], &[0.0, 3.0]).unwrap();
        assert_eq!(gs, vec![1.0, -1.0]);
        assert_eq!(gr, vec![1.0, -1.0]);
        assert_eq!(go, vec![-1.0, 1.0]);
        let (gs, gr, go) = transe_grad(&[1.0, 2.0], &[0.0, 0.0], &[1.0, 2.0]).unwrap();
        assert!(gs.iter().chain(&gr).chain(&go).all(|&x| x == 0.0));
    }

    #[test]
    fn distmult_examples() {
        assert_eq!(
            distmult_score(&[1.0, 2.0], &[0.0, 0.0], &[4.0, 5.0]).unwrap(),
            0.0
        );
        assert_eq!(
            distmult_score(&[1.0, 2.0], &[3.0, 1.0], &[1.0, 1.0]).unwrap(),
            5.0
        );
        let (a, r, b) = ([0.3, -0.7], [1.5, 0.2], [1.1, 0.4]);
        assert_eq!(
            distmult_score(&a, &r, &b).unwrap(),
            distmult_score(&b, &r, &a).unwrap()
        );
    }

    fn fd<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], k: usize, eps: f64) -> f64 {
        let mut p = x.to_vec();
        let mut m = x.to_vec();
        p[k] += eps;
        m[k] -= eps;
        (f(&p) - f(&m)) / (2.0 * eps)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let v = |rng: &mut ChaCha8Rng| {
                (0..8)
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect::<Vec<f64>>()
            };
            let (s, r, o) = (v(&mut rng), v(&mut rng), v(&mut rng));
            let (gs, gr, go) = transe_grad(&s, &r, &o).unwrap();
            let (ds, dr, dd) = distmult_grad(&s, &r, &o).unwrap();
            for k in 0..8 {
                let res = (s[k] + r[k] - o[k]).abs();
                if res > 1e-3 {
                    let n = fd(|x| transe_distance(x, &r, &o).unwrap(), &s, k, 1e-6);
                    assert!((n - gs[k]).abs() < 1e-6);
                    let n = fd(|x| transe_distance(&s, x, &o).unwrap(), &r, k, 1e-6);
                    assert!((n - gr[k]).abs() < 1e-6);
                    let n = fd(|x| transe_distance(&s, &r, x).unwrap(), &o, k, 1e-6);
                    assert!((n - go[k]).abs() < 1e-6);
                }
                let n = fd(|x| distmult_score(x, &r, &o).unwrap(), &s, k, 1e-6);
                assert!((n - ds[k]).abs() < 1e-8);
                let n = fd(|x| distmult_score(&s, x, &o).unwrap(), &r, k, 1e-6);
                assert!((n - dr[k]).abs() < 1e-8);
                let n = fd(|x| distmult_score(&s, &r, x).unwrap(), &o, k, 1e-6);
                assert!((n - dd[k]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn query_vectors_reproduce_distances() {
        let (s, r, o) = ([0.3, -0.7, 0.1], [1.1, 0.4, -0.5], [0.2, 0.9, -1.3]);
        for dec in [Decoder::TransE, Decoder::DistMult, Decoder::SpikeL1] {
            let d = dec.distance(&s, &r, &o);
            let q = dec.query(&s, &r, true);
            assert!((dec.candidate_distance(&q, &o) - d).abs() < 1e-12, "{dec}");
            let q = dec.query(&o, &r, false);
            assert!((dec.candidate_distance(&q, &s) - d).abs() < 1e-12, "{dec}");
        }
    }

    #[test]
    fn spike_decoder_examples() {
        let d = Decoder::SpikeL1;
        assert_eq!(d.distance(&[0.3, 0.5], &[0.0, 0.0], &[0.3, 0.5]), 0.0);
        assert!(d.distance(&[0.3, 0.5], &[0.2, 0.4], &[0.1, 0.1]).abs() < 1e-15);
        assert!((d.distance(&[0.3], &[0.0], &[0.1]) - 0.2).abs() < 1e-15);
    }
}
