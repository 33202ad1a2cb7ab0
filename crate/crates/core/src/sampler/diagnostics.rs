//! Chain diagnostics: batch-means Monte Carlo standard error and effective
//! sample size.

#[allow(unused_imports)] // needed when std is not linked
use num_traits::Float;

use crate::error::{Error, Result};

fn mean(chain: &[f64]) -> f64 {
    chain.iter().sum::<f64>() / chain.len() as f64
}

/// Monte Carlo standard error of the chain mean by nonoverlapping batch
/// means with batch size `⌊√U⌋`. Needs `U ≥ 100`.
pub fn mcse(chain: &[f64]) -> Result<f64> {
    let u = chain.len();
    if u < 100 {
        return Err(Error::ChainTooShort { len: u, min: 100 });
    }
    let b = (u as f64).sqrt().floor() as usize;
    let a = u / b;
    let batches: alloc::vec::Vec<f64> = (0..a).map(|i| mean(&chain[i * b..(i + 1) * b])).collect();
    let m = mean(&batches);
    let var = batches.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (a - 1) as f64;
    Ok((var / a as f64).sqrt())
}

/// Effective sample size from the initial positive sequence of paired
/// autocovariances. A constant chain has `ess = U`.
pub fn ess(chain: &[f64]) -> Result<f64> {
    let u = chain.len();
    if u < 4 {
        return Err(Error::ChainTooShort { len: u, min: 4 });
    }
    let m = mean(chain);
    let centered: alloc::vec::Vec<f64> = chain.iter().map(|v| v - m).collect();
    let autocov = |lag: usize| -> f64 {
        centered[..u - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / u as f64
    };
    let gamma0 = autocov(0);
    if gamma0 <= f64::MIN_POSITIVE * u as f64 {
        return Ok(u as f64);
    }
    let mut sum = 0.0;
    let mut lag = 0;
    while lag + 1 < u {
        let pair = autocov(lag) + autocov(lag + 1);
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        lag += 2;
    }
    let tau = (2.0 * sum - gamma0) / gamma0;
    Ok(u as f64 / tau.max(1e-12))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn iid_chain() {
        let c = normals(10_000, 1);
        let se = mcse(&c).unwrap();
        assert!((se / 0.01 - 1.0).abs() < 0.3, "{se}");
        let e = ess(&c).unwrap();
        assert!(e > 7_000.0 && e < 13_000.0, "{e}");
    }

    #[test]
    fn constant_chain() {
        let c = alloc::vec![2.5; 400];
        assert_eq!(mcse(&c).unwrap(), 0.0);
        assert_eq!(ess(&c).unwrap(), 400.0);
    }

    #[test]
    fn short_chain_errors() {
        assert!(matches!(mcse(&[1.0; 50]), Err(Error::ChainTooShort { .. })));
    }

    #[test]
    fn ar1_ratio() {
        let z = normals(100_000, 7);
        let phi = 0.9;
        let mut c = Vec::with_capacity(z.len());
        let mut x = 0.0;
        for e in z {
            x = phi * x + e;
            c.push(x);
        }
        let ratio = ess(&c).unwrap() / c.len() as f64;
        let theory = (1.0 - phi) / (1.0 + phi);
        assert!((ratio / theory - 1.0).abs() < 0.25, "{ratio}");
    }
}
