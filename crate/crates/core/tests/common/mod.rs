//! Independent reference implementations shared by the integration tests.
//! Nothing here calls into the library's fusion or eigen code.
#![allow(dead_code)]

use std::path::PathBuf;

use num_complex_lite::C;

pub fn preset(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("presets").join(name)
}

/// Brute-force fusion over bitmasks: plain sums, no shifting, subsets ordered
/// by sorting their index lists.
pub fn naive_fuse(d: &[f64], q: usize) -> (Vec<usize>, f64) {
    let n = d.len();
    let k = n - q;
    let mut candidates: Vec<Vec<usize>> = (0u32..(1u32 << n))
        .filter(|m| m.count_ones() as usize == k)
        .map(|m| (0..n).filter(|i| m & (1 << i) != 0).map(|i| i + 1).collect())
        .collect();
    candidates.sort();
    let mut best: Option<(Vec<usize>, f64, f64)> = None;
    for c in candidates {
        let mut sum = 0.0;
        for &i in &c {
            sum += d[i - 1];
        }
        let avg = sum / k as f64;
        let mut spread = 0.0f64;
        for &i in &c {
            let dev = (avg - d[i - 1]).abs();
            if dev > spread {
                spread = dev;
            }
        }
        let better = match &best {
            None => true,
            Some((_, _, s)) => spread < *s,
        };
        if better {
            best = Some((c, avg, spread));
        }
    }
    let (c, avg, _) = best.unwrap();
    (c, avg)
}

/// Exact variant for integer readings: spreads compared as integers
/// `max |S - k x_i|` (all candidates share the same `k`), so ties are exact.
pub fn naive_fuse_integer(d: &[i64], q: usize) -> (Vec<usize>, f64) {
    let n = d.len();
    let k = (n - q) as i64;
    let mut candidates: Vec<Vec<usize>> = (0u32..(1u32 << n))
        .filter(|m| m.count_ones() as i64 == k)
        .map(|m| (0..n).filter(|i| m & (1 << i) != 0).map(|i| i + 1).collect())
        .collect();
    candidates.sort();
    let mut best: Option<(Vec<usize>, i64, i64)> = None;
    for c in candidates {
        let sum: i64 = c.iter().map(|&i| d[i - 1]).sum();
        let spread = c.iter().map(|&i| (sum - k * d[i - 1]).abs()).max().unwrap();
        if best.as_ref().is_none_or(|(_, _, s)| spread < *s) {
            best = Some((c, sum, spread));
        }
    }
    let (c, sum, _) = best.unwrap();
    (c, sum as f64 / k as f64)
}

/// Minimal complex arithmetic for the root finder.
pub mod num_complex_lite {
    #[derive(Clone, Copy, Debug, PartialEq)]
    pub struct C {
        pub re: f64,
        pub im: f64,
    }

    impl C {
        pub fn new(re: f64, im: f64) -> Self {
            Self { re, im }
        }
        pub fn add(self, o: C) -> C {
            C::new(self.re + o.re, self.im + o.im)
        }
        pub fn sub(self, o: C) -> C {
            C::new(self.re - o.re, self.im - o.im)
        }
        pub fn mul(self, o: C) -> C {
            C::new(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)
        }
        pub fn div(self, o: C) -> C {
            let den = o.re * o.re + o.im * o.im;
            C::new((self.re * o.re + self.im * o.im) / den, (self.im * o.re - self.re * o.im) / den)
        }
        pub fn abs(self) -> f64 {
            self.re.hypot(self.im)
        }
    }
}

type M4 = [[f64; 4]; 4];

fn matmul(a: &M4, b: &M4) -> M4 {
    let mut c = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..4 {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

/// Characteristic polynomial coefficients `[1, c1, c2, c3, c4]` of
/// `det(sI - A)` by the Faddeev-LeVerrier recursion.
pub fn char_poly(a: &M4) -> [f64; 5] {
    let mut coeffs = [0.0; 5];
    coeffs[0] = 1.0;
    let mut m = [[0.0; 4]; 4];
    for k in 1..=4 {
        // M_k = A M_{k-1} + c_{k-1} I
        let mut next = matmul(a, &m);
        for (i, row) in next.iter_mut().enumerate() {
            row[i] += coeffs[k - 1];
        }
        m = next;
        let am = matmul(a, &m);
        let trace: f64 = (0..4).map(|i| am[i][i]).sum();
        coeffs[k] = -trace / k as f64;
    }
    coeffs
}

/// Roots of a monic polynomial by Durand-Kerner iteration.
pub fn durand_kerner(coeffs: &[f64; 5]) -> Vec<C> {
    let eval = |z: C| coeffs.iter().fold(C::new(0.0, 0.0), |acc, &c| acc.mul(z).add(C::new(c, 0.0)));
    let seed = C::new(0.4, 0.9);
    let mut roots: Vec<C> = (0..4).map(|k| {
        let mut z = C::new(1.0, 0.0);
        for _ in 0..k {
            z = z.mul(seed);
        }
        z
    }).collect();
    for _ in 0..2000 {
        let mut delta = 0.0f64;
        for i in 0..4 {
            let mut den = C::new(1.0, 0.0);
            for j in 0..4 {
                if i != j {
                    den = den.mul(roots[i].sub(roots[j]));
                }
            }
            let step = eval(roots[i]).div(den);
            roots[i] = roots[i].sub(step);
            delta = delta.max(step.abs());
        }
        if delta < 1e-15 {
            break;
        }
    }
    roots
}

/// The follower matrix written out independently of the library.
pub fn follower_matrix(h: f64, tau: f64, kp: f64, kd: f64, kdd: f64) -> M4 {
    [
        [0.0, -1.0, -h, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, -1.0 / tau, 1.0 / tau],
        [kp / h, -kd / h, -kd - kdd * (h - tau) / (h * tau), -(kdd * h + tau) / (h * tau)],
    ]
}
