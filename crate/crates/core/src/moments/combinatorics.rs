//! Enumerations behind the moment recursion.

/// All ordered tuples `(i_1, ..., i_r)` of positive integers summing to `n`.
pub fn compositions(n: usize, r: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if r == 0 || n < r {
        return out;
    }
    let mut current = Vec::with_capacity(r);
    compose(n, r, &mut current, &mut out);
    out
}

fn compose(remaining: usize, parts: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if parts == 1 {
        current.push(remaining);
        out.push(current.clone());
        current.pop();
        return;
    }
    for first in 1..=remaining - (parts - 1) {
        current.push(first);
        compose(remaining - first, parts - 1, current, out);
        current.pop();
    }
}

/// Multiplicity vectors `(m_1, ..., m_{n-1})` with `sum m_k = r` and
/// `sum k m_k = n`, i.e. partitions of `n` into exactly `r` parts with
/// `m_k` parts equal to `k`. Requires `r >= 2` so that no part equals `n`.
pub fn multiplicity_vectors(n: usize, r: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    if r < 2 || n < r {
        return out;
    }
    let mut m = vec![0u32; n - 1];
    partitions(n, r, n - 1, &mut m, &mut out);
    out
}

/// Fills parts of size at most `largest`, largest first.
fn partitions(n: usize, r: usize, largest: usize, m: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if r == 0 {
        if n == 0 {
            out.push(m.clone());
        }
        return;
    }
    if largest == 0 || n < r || n > r * largest {
        return;
    }
    // Use `c` copies of `largest`, then recurse on smaller parts.
    let max_copies = (n / largest).min(r);
    for c in (0..=max_copies).rev() {
        m[largest - 1] = c as u32;
        partitions(n - c * largest, r - c, largest - 1, m, out);
    }
    m[largest - 1] = 0;
}

fn factorial_i128(n: usize) -> i128 {
    (1..=n as i128).product()
}

/// `sum over compositions (i_1..i_r) of n of n!/(i_1! ... i_r!) x_{i_1} ... x_{i_r}`
/// in exact integer arithmetic; `x[k - 1]` holds `x_k`.
pub fn composition_form(n: usize, r: usize, x: &[i128]) -> i128 {
    let n_fact = factorial_i128(n);
    compositions(n, r)
        .iter()
        .map(|c| {
            let denom: i128 = c.iter().map(|&i| factorial_i128(i)).product();
            let prod: i128 = c.iter().map(|&i| x[i - 1]).product();
            n_fact / denom * prod
        })
        .sum()
}

/// The same sum grouped by multiplicities:
/// `n! * sum_m r!/(prod m_k!) prod (x_k / k!)^{m_k}`, kept integral by
/// dividing only after all multiplications.
pub fn partition_form(n: usize, r: usize, x: &[i128]) -> i128 {
    let n_fact = factorial_i128(n);
    let r_fact = factorial_i128(r);
    multiplicity_vectors(n, r)
        .iter()
        .map(|m| {
            let mut numer = n_fact * r_fact;
            let mut denom: i128 = 1;
            for (k_minus_1, &mk) in m.iter().enumerate() {
                let k = k_minus_1 + 1;
                numer *= x[k - 1].pow(mk);
                denom *= factorial_i128(mk as usize) * factorial_i128(k).pow(mk);
            }
            assert_eq!(numer % denom, 0, "partition term is not integral");
            numer / denom
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binomial(n: usize, k: usize) -> usize {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    #[test]
    fn composition_counts() {
        for n in 1..=9 {
            for r in 1..=n {
                let c = compositions(n, r);
                assert_eq!(c.len(), binomial(n - 1, r - 1));
                assert!(c.iter().all(|v| v.len() == r && v.iter().sum::<usize>() == n));
            }
        }
    }

    #[test]
    fn multiplicities_are_partitions() {
        // p(6, r) for r = 2..6: 3, 3, 2, 1, 1
        let counts: Vec<usize> = (2..=6).map(|r| multiplicity_vectors(6, r).len()).collect();
        assert_eq!(counts, vec![3, 3, 2, 1, 1]);
        for m in multiplicity_vectors(7, 3) {
            let parts: u32 = m.iter().sum();
            let weight: usize = m.iter().enumerate().map(|(k, &c)| (k + 1) * c as usize).sum();
            assert_eq!((parts, weight), (3, 7));
        }
    }

    #[test]
    fn small_cases_by_hand() {
        let x = [2i128, 3, 5];
        // n = 2, r = 2: composition (1,1) gives 2!/(1!1!) x_1^2
        assert_eq!(composition_form(2, 2, &x), 8);
        // n = 3, r = 2: (1,2) and (2,1) each give 3 x_1 x_2
        assert_eq!(composition_form(3, 2, &x), 36);
        assert_eq!(partition_form(3, 2, &x), 36);
    }
}
