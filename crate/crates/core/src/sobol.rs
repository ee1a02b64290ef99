//! Unscrambled Sobol points in up to 21 dimensions, with a Halton sequence
//! for higher dimensions.
//!
//! Direction numbers are the Joe–Kuo `new-joe-kuo-6.21201` set. Points are
//! produced in Gray-code order, so point 0 is the origin.

use crate::error::{PrxError, Result};

pub const MAX_DIM: usize = 21;
const BITS: usize = 32;

/// `(s, a, m_1..m_s)` for dimensions 2..=21.
const JOE_KUO: [(u32, u32, &[u32]); MAX_DIM - 1] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
    (5, 4, &[1, 1, 5, 5, 5]),
    (5, 7, &[1, 1, 7, 11, 19]),
    (5, 11, &[1, 1, 5, 1, 1]),
    (5, 13, &[1, 1, 1, 3, 11]),
    (5, 14, &[1, 3, 5, 5, 31]),
    (6, 1, &[1, 3, 3, 9, 7, 49]),
    (6, 13, &[1, 1, 1, 15, 21, 21]),
    (6, 16, &[1, 3, 1, 13, 27, 49]),
    (6, 19, &[1, 1, 1, 15, 7, 5]),
    (6, 22, &[1, 3, 1, 15, 13, 25]),
    (6, 25, &[1, 1, 5, 5, 19, 61]),
    (7, 1, &[1, 3, 7, 11, 23, 15, 103]),
    (7, 4, &[1, 3, 7, 13, 13, 15, 69]),
];

fn direction_numbers(dim: usize) -> Vec<[u32; BITS]> {
    let mut out = Vec::with_capacity(dim);
    let mut first = [0u32; BITS];
    for (k, v) in first.iter_mut().enumerate() {
        *v = 1 << (BITS - 1 - k);
    }
    out.push(first);
    for &(s, a, m) in JOE_KUO.iter().take(dim.saturating_sub(1)) {
        let s = s as usize;
        let mut v = [0u32; BITS];
        for k in 0..BITS {
            v[k] = if k < s {
                m[k] << (BITS - 1 - k)
            } else {
                let mut x = v[k - s] ^ (v[k - s] >> s);
                for r in 1..s {
                    if (a >> (s - 1 - r)) & 1 == 1 {
                        x ^= v[k - r];
                    }
                }
                x
            };
        }
        out.push(v);
    }
    out
}

/// The first `count` Sobol points in `[0, 1)^dim`, starting at the origin.
pub fn sobol_points(count: usize, dim: usize) -> Result<Vec<Vec<f64>>> {
    if dim == 0 || dim > MAX_DIM {
        return Err(PrxError::usage(format!("Sobol points need 1 <= dim <= {MAX_DIM}, got {dim}")));
    }
    let v = direction_numbers(dim);
    let mut x = vec![0u32; dim];
    let scale = 1.0 / (1u64 << BITS) as f64;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        if i > 0 {
            let c = (i - 1).trailing_ones() as usize;
            for (xj, vj) in x.iter_mut().zip(&v) {
                *xj ^= vj[c];
            }
        }
        out.push(x.iter().map(|&b| b as f64 * scale).collect());
    }
    Ok(out)
}

fn first_primes(count: usize) -> Vec<u64> {
    let mut primes: Vec<u64> = Vec::with_capacity(count);
    let mut c = 2u64;
    while primes.len() < count {
        if primes.iter().take_while(|p| *p * *p <= c).all(|p| c % p != 0) {
            primes.push(c);
        }
        c += 1;
    }
    primes
}

/// The first `count` Halton points in `[0, 1)^dim`: radical inverses of the
/// index in the first `dim` primes, starting at the origin.
pub fn halton_points(count: usize, dim: usize) -> Vec<Vec<f64>> {
    let primes = first_primes(dim);
    (0..count as u64)
        .map(|i| {
            primes
                .iter()
                .map(|&b| {
                    let (mut k, mut f, mut x) = (i, 1.0, 0.0);
                    while k > 0 {
                        f /= b as f64;
                        x += f * (k % b) as f64;
                        k /= b;
                    }
                    x
                })
                .collect()
        })
        .collect()
}

/// Sobol points up to [`MAX_DIM`], Halton points beyond.
pub fn low_discrepancy_points(count: usize, dim: usize) -> Result<Vec<Vec<f64>>> {
    if dim > MAX_DIM {
        log::info!("{dim} dimensions exceed the Sobol table; using a Halton sequence");
        return Ok(halton_points(count, dim));
    }
    sobol_points(count, dim)
}
