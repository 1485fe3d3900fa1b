#![allow(dead_code)]

use rand::Rng;
use statrs::function::gamma::ln_gamma;
use ziacd::distributions::{
    nb_truncation_point, zinb_moments, Family, FamilyTag, NbParams, ZinbParams,
};
use ziacd::simulation::rng_for;

pub const GRID_POINTS: usize = 120;

/// Brute-force sums stop where the count-component survival is below this.
pub const TAIL: f64 = 1e-14;
pub const TAIL_CAP: u64 = 1_000_000;

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

/// Random `(family, theta)` points for one family tag.
pub fn grid(tag: FamilyTag, seed: u64) -> Vec<(Family, f64)> {
    let mut rng = rng_for(seed, tag as usize);
    (0..GRID_POINTS)
        .map(|_| {
            let alpha = log_uniform(&mut rng, 1e-4, 5.0);
            let pi = 0.9 * rng.random::<f64>();
            let psi = log_uniform(&mut rng, 0.3, 5.0);
            let phi = log_uniform(&mut rng, 0.3, 4.0);
            let family = match tag {
                FamilyTag::Poisson => Family::Poisson,
                FamilyTag::Geometric => Family::Geometric,
                FamilyTag::NegBinomial => Family::NegBinomial { alpha },
                FamilyTag::ZiPoisson => Family::ZiPoisson { pi },
                FamilyTag::ZiGeometric => Family::ZiGeometric { pi },
                FamilyTag::ZiNegBinomial => Family::ZiNegBinomial { alpha, pi },
                FamilyTag::Exponential => Family::Exponential,
                FamilyTag::Weibull => Family::Weibull { phi },
                FamilyTag::Gamma => Family::Gamma { psi },
                FamilyTag::GenGamma => Family::GenGamma { psi, phi },
            };
            let theta = if tag.is_discrete() {
                log_uniform(&mut rng, 0.05, 50.0)
            } else {
                log_uniform(&mut rng, 0.1, 20.0)
            };
            (family, theta)
        })
        .collect()
}

fn count_params(family: &Family, mu: f64) -> ZinbParams {
    ZinbParams::new(mu, family.dispersion().unwrap(), family.excess_zero_prob()).unwrap()
}

/// Upper summation bound for a discrete family.
pub fn x_max(family: &Family, mu: f64) -> u64 {
    let nb: NbParams = count_params(family, mu).nb();
    nb_truncation_point(nb, TAIL, TAIL_CAP).unwrap()
}

/// `Σ g(x) p(x)` over `0..=x_max`.
pub fn discrete_expectation(family: &Family, mu: f64, g: impl Fn(f64) -> f64) -> f64 {
    (0..=x_max(family, mu))
        .map(|x| {
            let x = x as f64;
            g(x) * family.log_density(x, mu).unwrap().exp()
        })
        .sum()
}

fn gg_shapes(family: &Family) -> (f64, f64) {
    match *family {
        Family::Exponential => (1.0, 1.0),
        Family::Weibull { phi } => (1.0, phi),
        Family::Gamma { psi } => (psi, 1.0),
        Family::GenGamma { psi, phi } => (psi, phi),
        _ => unreachable!("continuous family expected"),
    }
}

/// `∫ g(x) p(x) dx` by the trapezoid rule in `w = φ ln(x/β)`, where the
/// integrand is smooth and decays at both ends.
pub fn continuous_expectation(family: &Family, beta: f64, g: impl Fn(f64) -> f64) -> f64 {
    let (psi, phi) = gg_shapes(family);
    let w_lo = ((1e-17f64).ln() + ln_gamma(psi + 1.0)) / psi;
    let w_hi = (psi + 80.0 + 20.0 * psi.sqrt()).ln();
    let h = 0.005;
    let n = ((w_hi - w_lo) / h).ceil() as usize;
    let mut total = 0.0;
    for k in 0..=n {
        let w = w_lo + k as f64 * h;
        let x = beta * (w / phi).exp();
        let weight = if k == 0 || k == n { 0.5 } else { 1.0 };
        total += weight * g(x) * family.log_density(x, beta).unwrap().exp() * x / phi;
    }
    total * h
}

pub fn expectation(family: &Family, theta: f64, g: impl Fn(f64) -> f64) -> f64 {
    if family.is_discrete() {
        discrete_expectation(family, theta, g)
    } else {
        continuous_expectation(family, theta, g)
    }
}

/// Observation points at which scores are checked.
pub fn probe_points(family: &Family, theta: f64) -> Vec<f64> {
    if family.is_discrete() {
        let m = theta.round();
        vec![0.0, 1.0, 2.0, m + 1.0, (3.0 * theta).round() + 2.0]
    } else {
        let mean = family.mean(theta).unwrap();
        vec![0.1 * mean, 0.5 * mean, 1.7 * mean, 4.0 * mean]
    }
}

pub fn rel_err(got: f64, want: f64, floor: f64) -> f64 {
    (got - want).abs() / want.abs().max(floor)
}

/// Fourth-order central difference. A plain central difference at a tiny
/// step loses more than 1e-6 of the score to cancellation when the
/// log-density is large in magnitude.
pub fn five_point_derivative(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (8.0 * (f(x + h) - f(x - h)) - (f(x + 2.0 * h) - f(x - 2.0 * h))) / (12.0 * h)
}

#[derive(Debug, Default, Clone, Copy)]
pub struct DistChecks {
    pub points: usize,
    pub score_fd: f64,
    pub fisher: f64,
    pub normalization: f64,
}

/// Worst-case errors over the grid of one family.
///
/// Score errors are relative to `max(|score|, 1e-3 sqrt(I))`, so that the
/// comparison stays meaningful where the score crosses zero.
pub fn check_family(tag: FamilyTag, seed: u64) -> DistChecks {
    let mut out = DistChecks::default();
    for (family, theta) in grid(tag, seed) {
        out.points += 1;
        let fisher = family.fisher(theta).unwrap();
        for x in probe_points(&family, theta) {
            let s = family.score(x, theta).unwrap();
            let fd =
                five_point_derivative(|t| family.log_density(x, t).unwrap(), theta, 1e-3 * theta);
            out.score_fd = out.score_fd.max(rel_err(fd, s, 1e-3 * fisher.sqrt()));
        }
        let brute = expectation(&family, theta, |x| family.score(x, theta).unwrap().powi(2));
        out.fisher = out.fisher.max(rel_err(brute, fisher, 0.0));
        let mass = expectation(&family, theta, |_| 1.0);
        out.normalization = out.normalization.max((mass - 1.0).abs());
    }
    out
}

/// Worst relative error of closed-form mean and variance against sums.
pub fn check_moments(tag: FamilyTag, seed: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for (family, mu) in grid(tag, seed) {
        let (mean, var) = zinb_moments(count_params(&family, mu)).unwrap();
        let m1 = discrete_expectation(&family, mu, |x| x);
        let v = discrete_expectation(&family, mu, |x| (x - m1).powi(2));
        worst = worst.max(rel_err(m1, mean, 0.0)).max(rel_err(v, var, 0.0));
    }
    worst
}

fn log_agree(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(1.0)
}

/// Worst disagreement of the special-case collapses, on log-density scale.
pub fn check_collapses(seed: u64) -> f64 {
    let mut rng = rng_for(seed, 99);
    let mut worst: f64 = 0.0;
    for _ in 0..GRID_POINTS {
        let mu = log_uniform(&mut rng, 0.05, 50.0);
        let alpha = log_uniform(&mut rng, 1e-3, 5.0);
        let beta = log_uniform(&mut rng, 0.1, 20.0);
        let psi = log_uniform(&mut rng, 0.3, 5.0);
        let phi = log_uniform(&mut rng, 0.3, 4.0);
        for k in 0..40u32 {
            let x = k as f64 * (1.0 + mu / 10.0).floor();
            let lp = |f: Family| f.log_density(x, mu).unwrap();
            // independent closed forms
            let poisson = x * mu.ln() - mu - ln_gamma(x + 1.0);
            let geometric = x * mu.ln() - (x + 1.0) * mu.ln_1p();
            worst = worst
                .max(log_agree(lp(Family::NegBinomial { alpha: 0.0 }), poisson))
                .max(log_agree(lp(Family::Poisson), poisson))
                .max(log_agree(lp(Family::NegBinomial { alpha: 1.0 }), geometric))
                .max(log_agree(lp(Family::Geometric), geometric))
                .max(log_agree(
                    lp(Family::ZiNegBinomial { alpha, pi: 0.0 }),
                    lp(Family::NegBinomial { alpha }),
                ));
            let y = beta * (0.05 + 0.1 * k as f64);
            let ld = |f: Family| f.log_density(y, beta).unwrap();
            let gamma = -ln_gamma(psi) - beta.ln() + (psi - 1.0) * (y / beta).ln() - y / beta;
            let weibull =
                phi.ln() - beta.ln() + (phi - 1.0) * (y / beta).ln() - (y / beta).powf(phi);
            let expo = -beta.ln() - y / beta;
            worst = worst
                .max(log_agree(ld(Family::GenGamma { psi, phi: 1.0 }), gamma))
                .max(log_agree(ld(Family::Gamma { psi }), gamma))
                .max(log_agree(ld(Family::GenGamma { psi: 1.0, phi }), weibull))
                .max(log_agree(ld(Family::Weibull { phi }), weibull))
                .max(log_agree(ld(Family::GenGamma { psi: 1.0, phi: 1.0 }), expo))
                .max(log_agree(ld(Family::Exponential), expo));
        }
    }
    worst
}

/// Pearson chi-square p-value of `counts` against `probs`, pooling cells
/// with expected count below 5 into their neighbours. The last prob is the
/// tail mass.
pub fn chi_square_p(counts: &[u64], probs: &[f64]) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let n: u64 = counts.iter().sum();
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for (&c, &p) in counts.iter().zip(probs) {
        o += c as f64;
        e += p * n as f64;
        if e >= 5.0 {
            cells.push((o, e));
            o = 0.0;
            e = 0.0;
        }
    }
    if let Some(last) = cells.last_mut() {
        last.0 += o;
        last.1 += e;
    }
    let stat: f64 = cells.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let df = (cells.len() - 1) as f64;
    1.0 - ChiSquared::new(df).unwrap().cdf(stat)
}
