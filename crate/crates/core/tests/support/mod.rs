//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use gagnar::model::{log_marginal_stats, NodeDesign, SufficientStats};
use gagnar::{NigHyper, WeightMatrix};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Design with an intercept column followed by standard normal columns.
pub fn random_design<R: Rng>(rng: &mut R, n_obs: usize, dim: usize) -> NodeDesign {
    let x = DMatrix::from_fn(n_obs, dim, |_, j| if j == 0 { 1.0 } else { normal(rng) });
    let y = DVector::from_fn(n_obs, |_, _| 2.0 * normal(rng) + 0.5);
    NodeDesign { y, x }
}

/// A random but well-conditioned NIG prior of dimension `dim`.
pub fn random_hyper<R: Rng>(rng: &mut R, dim: usize) -> NigHyper {
    let tau0 = DVector::from_fn(dim, |_, _| normal(rng));
    let a = DMatrix::from_fn(dim, dim, |_, _| 0.5 * normal(rng));
    let sigma0 = &a * a.transpose() + DMatrix::identity(dim, dim) * rng.random_range(0.5..5.0);
    NigHyper::new(
        tau0,
        sigma0,
        rng.random_range(0.5..3.0),
        rng.random_range(0.2..2.0),
        1.0,
    )
    .unwrap()
}

/// log g(y) as a product of one-step Student-t predictives, updating
/// (τ, Σ, a, b) one observation at a time with Sherman–Morrison.
pub fn chain_rule_log_marginal(design: &NodeDesign, hyper: &NigHyper) -> f64 {
    let mut tau = hyper.tau0().clone();
    let mut sigma = hyper.sigma0().clone();
    let mut a = hyper.a0();
    let mut b = hyper.b0();
    let mut total = 0.0;
    for t in 0..design.n_obs() {
        let x = design.x.row(t).transpose();
        let y = design.y[t];
        let sx = &sigma * &x;
        let q = 1.0 + x.dot(&sx);
        let loc = x.dot(&tau);
        let nu = 2.0 * a;
        let scale2 = b / a * q;
        let r = y - loc;
        total += ln_gamma((nu + 1.0) / 2.0) - ln_gamma(nu / 2.0) - 0.5 * (nu * std::f64::consts::PI * scale2).ln()
            - (nu + 1.0) / 2.0 * (1.0 + r * r / (nu * scale2)).ln();
        tau += &sx * (r / q);
        sigma -= &sx * sx.transpose() / q;
        a += 0.5;
        b += 0.5 * r * r / q;
    }
    total
}

/// Adaptive Gauss–Kronrod (7, 15) integration of `f` over [lo, hi].
pub fn integrate<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64, tol: f64) -> f64 {
    const XGK: [f64; 8] = [
        0.991455371120812639206854697526329,
        0.949107912342758524526189684047851,
        0.864864423359769072789712788640926,
        0.741531185599394439863864773280788,
        0.586087235467691130294144845693013,
        0.405845151377397166906606412076961,
        0.207784955007898467600689403773245,
        0.000000000000000000000000000000000,
    ];
    const WGK: [f64; 8] = [
        0.022935322010529224963732008058970,
        0.063092092629978553290700663189204,
        0.104790010322250183839876322541518,
        0.140653259715525918745189590510238,
        0.169004726639267902826583426598550,
        0.190350578064785409913256402421014,
        0.204432940075298892414161999234649,
        0.209482141084727828012999174891714,
    ];
    const WG: [f64; 4] = [
        0.129484966168869693270611432679082,
        0.279705391489276667901467771423780,
        0.381830050505118944950369775488975,
        0.417959183673469387755102040816327,
    ];
    fn rule<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64) -> (f64, f64) {
        let c = 0.5 * (lo + hi);
        let h = 0.5 * (hi - lo);
        let fc = f(c);
        let mut k = WGK[7] * fc;
        let mut g = WG[3] * fc;
        for j in 0..7 {
            let s = f(c - h * XGK[j]) + f(c + h * XGK[j]);
            k += WGK[j] * s;
            if j % 2 == 1 {
                g += WG[j / 2] * s;
            }
        }
        (k * h, ((k - g) * h).abs())
    }
    fn recurse<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64, tol: f64, depth: u32) -> f64 {
        let (val, err) = rule(f, lo, hi);
        if err <= tol || err <= 1e-13 * val.abs() || depth == 0 {
            return val;
        }
        let mid = 0.5 * (lo + hi);
        recurse(f, lo, mid, tol / 2.0, depth - 1) + recurse(f, mid, hi, tol / 2.0, depth - 1)
    }
    recurse(f, lo, hi, tol, 20)
}

/// log g for a one-regressor design by 2-D quadrature over (θ, log σ²).
///
/// The integrand is the Gaussian likelihood times the NIG prior density,
/// scaled by exp(-shift) to keep it near 1.
pub fn quadrature_log_marginal(design: &NodeDesign, tau0: f64, s0: f64, a0: f64, b0: f64) -> f64 {
    assert_eq!(design.dim(), 1);
    let n = design.n_obs() as f64;
    let xs: Vec<f64> = design.x.column(0).iter().copied().collect();
    let ys: Vec<f64> = design.y.iter().copied().collect();
    let log_joint = |theta: f64, s2: f64| -> f64 {
        let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - x * theta).powi(2)).sum();
        let loglik = -0.5 * n * (2.0 * std::f64::consts::PI * s2).ln() - sse / (2.0 * s2);
        let log_theta = -0.5 * (2.0 * std::f64::consts::PI * s2 * s0).ln() - (theta - tau0).powi(2) / (2.0 * s2 * s0);
        let log_ig = a0 * b0.ln() - ln_gamma(a0) - (a0 + 1.0) * s2.ln() - b0 / s2;
        loglik + log_theta + log_ig
    };
    // Integration windows centered on the conditional mode of θ and on the
    // bulk of log σ², split into pieces so the adaptive rule cannot miss the peak.
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
    let v_star = 1.0 / (1.0 / s0 + sxx);
    let t_star = v_star * (tau0 / s0 + sxy);
    let center_u = {
        let mut best = (f64::NEG_INFINITY, 0.0);
        for j in 0..=4000 {
            let u = -20.0 + 0.01 * j as f64;
            let v = log_joint(t_star, u.exp()) + u;
            if v > best.0 {
                best = (v, u);
            }
        }
        best
    };
    let shift = center_u.0;
    let pieces = |lo: f64, hi: f64, k: usize, f: &dyn Fn(f64) -> f64, tol: f64| -> f64 {
        let w = (hi - lo) / k as f64;
        (0..k)
            .map(|p| integrate(&f, lo + w * p as f64, lo + w * (p + 1) as f64, tol))
            .sum()
    };
    let inner = |u: f64| -> f64 {
        let s2 = u.exp();
        let sd = (s2 * v_star).sqrt();
        let f = |theta: f64| (log_joint(theta, s2) + u - shift).exp();
        pieces(t_star - 40.0 * sd, t_star + 40.0 * sd, 16, &f, 1e-14)
    };
    pieces(center_u.1 - 40.0, center_u.1 + 40.0, 32, &inner, 1e-12).ln() + shift
}

/// All set partitions of n items as first-appearance label vectors.
pub fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    fn extend(prefix: &mut Vec<usize>, n: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        let next = prefix.iter().max().map_or(0, |m| m + 1);
        for k in 0..=next {
            prefix.push(k);
            extend(prefix, n, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    extend(&mut Vec::new(), n, &mut out);
    out
}

/// Sequential gaCRP mass of `z` in node order, evaluated term by term.
pub fn sequential_prior(z: &[usize], w: &WeightMatrix, alpha: f64) -> f64 {
    let mut logp = 0.0;
    for i in 1..z.len() {
        let total: f64 = (0..i).map(|j| w.get(i, j)).sum::<f64>() + alpha;
        let seen = z[..i].contains(&z[i]);
        let num = if seen {
            (0..i).filter(|&j| z[j] == z[i]).map(|j| w.get(i, j)).sum::<f64>()
        } else {
            alpha
        };
        logp += (num / total).ln();
    }
    logp
}

/// Exact posterior over all partitions of the nodes.
pub fn exact_partition_posterior(
    stats: &[SufficientStats],
    w: &WeightMatrix,
    hyper: &NigHyper,
) -> (Vec<Vec<usize>>, Vec<f64>) {
    let parts = set_partitions(stats.len());
    let logp: Vec<f64> = parts
        .iter()
        .map(|z| {
            let k = z.iter().max().unwrap() + 1;
            let mut lm = 0.0;
            for g in 0..k {
                let mut s = SufficientStats::zeros(hyper.dim());
                for (i, &zi) in z.iter().enumerate() {
                    if zi == g {
                        s.add(&stats[i]);
                    }
                }
                lm += log_marginal_stats(&s, hyper).unwrap();
            }
            sequential_prior(z, w, hyper.alpha()) + lm
        })
        .collect();
    let m = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = logp.iter().map(|l| (l - m).exp()).collect();
    let total: f64 = unnorm.iter().sum();
    (parts, unnorm.iter().map(|u| u / total).collect())
}

/// ARI from the four pair counts.
pub fn ari_pairs(a: &[usize], b: &[usize]) -> f64 {
    let (mut n11, mut n10, mut n01, mut n00) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => n11 += 1.0,
                (true, false) => n10 += 1.0,
                (false, true) => n01 += 1.0,
                (false, false) => n00 += 1.0,
            }
        }
    }
    let den = (n00 + n01) * (n01 + n11) + (n00 + n10) * (n10 + n11);
    if den == 0.0 {
        1.0
    } else {
        2.0 * (n00 * n11 - n01 * n10) / den
    }
}

/// ‖B^(m) − B̄‖²_F for every draw, by explicit loops.
pub fn dahl_losses(partitions: &[Vec<usize>]) -> Vec<f64> {
    let n = partitions[0].len();
    let m = partitions.len() as f64;
    let mut bbar = vec![vec![0.0; n]; n];
    for z in partitions {
        for i in 0..n {
            for j in 0..n {
                if z[i] == z[j] {
                    bbar[i][j] += 1.0 / m;
                }
            }
        }
    }
    partitions
        .iter()
        .map(|z| {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let b = if z[i] == z[j] { 1.0 } else { 0.0 };
                    s += (b - bbar[i][j]).powi(2);
                }
            }
            s
        })
        .collect()
}

/// Σ_i −log(M⁻¹ Σ_m exp(−ℓ_im)) evaluated directly.
pub fn lpml_direct(loglik: &[Vec<f64>]) -> f64 {
    let m = loglik.len() as f64;
    let n = loglik[0].len();
    (0..n)
        .map(|i| -(loglik.iter().map(|l| (-l[i]).exp()).sum::<f64>() / m).ln())
        .sum()
}

/// Shortest interval among all windows of ⌈mass·n⌉ sorted points.
pub fn hpd_enumerate(samples: &[f64], mass: f64) -> (f64, f64) {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let k = (mass * s.len() as f64).ceil() as usize;
    let mut best = (s[0], s[k - 1]);
    for start in 0..=s.len() - k {
        let (lo, hi) = (s[start], s[start + k - 1]);
        if hi - lo < best.1 - best.0 {
            best = (lo, hi);
        }
    }
    best
}
