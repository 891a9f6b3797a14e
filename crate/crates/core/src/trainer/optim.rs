use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Gradients, Tensor};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    #[default]
    Adam,
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Optimizer::Sgd => "SGD",
            Optimizer::Adam => "Adam",
        })
    }
}

impl std::str::FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            _ => Err(Error::param("optimizer", format!("unknown optimizer `{s}` (sgd, adam)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparameters {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Adam,
            learning_rate: 5e-6,
            batch_size: 50,
            epochs: 50,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::param("learning_rate", format!("{} is not > 0", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size", "must be > 0"));
        }
        if self.epochs == 0 {
            return Err(Error::param("epochs", "must be > 0"));
        }
        for (field, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::param(field, format!("{b} not in (0, 1)")));
            }
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return Err(Error::param("adam_eps", "must be > 0"));
        }
        Ok(())
    }

    /// One-line summary, e.g. `optimizer=Adam lr=5e-06 batch=50 epochs=50`.
    pub fn summary(&self) -> String {
        format!(
            "optimizer={} lr={} batch={} epochs={}",
            self.optimizer,
            format_float(self.learning_rate),
            self.batch_size,
            self.epochs
        )
    }
}

/// Shortest round-trip float text with exponent form for very small or large
/// magnitudes (`5e-06`, `0.001`, `1e+16`, `2.0`).
pub fn format_float(x: f64) -> String {
    if x != 0.0 && x.is_finite() && !(1e-4..1e16).contains(&x.abs()) {
        let s = format!("{x:e}");
        let (mant, exp) = s.split_once('e').expect("exponent form");
        let exp: i32 = exp.parse().expect("integer exponent");
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mant}e{sign}{:02}", exp.abs())
    } else {
        let s = format!("{x}");
        if x.is_finite() && !s.contains('.') {
            format!("{s}.0")
        } else {
            s
        }
    }
}

/// Step counter and Adam moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<S> {
    pub t: u64,
    pub m: Vec<Vec<S>>,
    pub v: Vec<Vec<S>>,
}

impl<S: Real> OptimizerState<S> {
    pub fn new(params: &[Tensor<S>]) -> Self {
        let zeros = || params.iter().map(|t| vec![S::zero(); t.data.len()]).collect();
        Self { t: 0, m: zeros(), v: zeros() }
    }
}

fn check_shapes<S: Real>(params: &[Tensor<S>], grads: &Gradients<S>) -> Result<()> {
    if params.len() != grads.tensors.len() {
        return Err(Error::param(
            "grads",
            format!("{} gradient tensors for {} parameters", grads.tensors.len(), params.len()),
        ));
    }
    for (p, g) in params.iter().zip(&grads.tensors) {
        if p.data.len() != g.len() {
            return Err(Error::param("grads", format!("length mismatch for {}", p.name)));
        }
    }
    Ok(())
}

/// First non-finite gradient entry, as a diagnostic message.
pub fn find_non_finite<S: Real>(params: &[Tensor<S>], grads: &Gradients<S>) -> Option<String> {
    params.iter().zip(&grads.tensors).find_map(|(p, g)| {
        g.iter()
            .position(|v| !v.is_finite())
            .map(|i| format!("non-finite gradient {:?} in {}[{i}]", g[i], p.name))
    })
}

/// `θ ← θ − lr·g`.
pub fn sgd_step<S: Real>(params: &mut [Tensor<S>], grads: &Gradients<S>, lr: f64) -> Result<()> {
    check_shapes(params, grads)?;
    if lr.is_nan() || lr <= 0.0 {
        return Err(Error::param("learning_rate", "must be > 0"));
    }
    let lr = S::of(lr);
    for (p, g) in params.iter_mut().zip(&grads.tensors) {
        for (w, &d) in p.data.iter_mut().zip(g) {
            *w -= lr * d;
        }
    }
    Ok(())
}

/// Bias-corrected Adam update. A non-finite gradient leaves parameters and
/// state untouched and returns a training error; the caller fills in the
/// epoch and batch position.
pub fn adam_step<S: Real>(
    params: &mut [Tensor<S>],
    grads: &Gradients<S>,
    state: &mut OptimizerState<S>,
    hp: &Hyperparameters,
) -> Result<()> {
    check_shapes(params, grads)?;
    if state.m.len() != params.len()
        || state.v.len() != params.len()
        || params.iter().zip(&state.m).zip(&state.v).any(|((p, m), v)| m.len() != p.data.len() || v.len() != p.data.len())
    {
        return Err(Error::param("state", "moment buffers do not mirror the parameters"));
    }
    if let Some(message) = find_non_finite(params, grads) {
        return Err(Error::Training { epoch: 0, batch: 0, message });
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (S::of(hp.adam_beta1), S::of(hp.adam_beta2));
    let (one, lr, eps) = (S::one(), S::of(hp.learning_rate), S::of(hp.adam_eps));
    let c1 = one - b1.powi(t);
    let c2 = one - b2.powi(t);
    for (((p, g), m), v) in params.iter_mut().zip(&grads.tensors).zip(&mut state.m).zip(&mut state.v) {
        for i in 0..g.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + (one - b1) * gi;
            v[i] = b2 * v[i] + (one - b2) * gi * gi;
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            p.data[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Mean cross-entropy of `batch × k` logits against class indices, with its
/// gradient `(softmax − onehot) / batch`.
pub fn cross_entropy_loss<S: Real>(logits: &[S], k: usize, targets: &[usize]) -> Result<(f64, Vec<S>)> {
    let b = targets.len();
    if k == 0 || logits.len() != b * k || b == 0 {
        return Err(Error::param(
            "logits",
            format!("{} logits for {b} targets of {k} classes", logits.len()),
        ));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= k) {
        return Err(Error::param("targets", format!("class index {t} out of range 0..{k}")));
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (row, &t) in logits.chunks(k).zip(targets) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
        let sum: f64 = row.iter().map(|v| (v.as_f64() - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - row[t].as_f64();
        for (j, v) in row.iter().enumerate() {
            let p = (v.as_f64() - lse).exp();
            let y = if j == t { 1.0 } else { 0.0 };
            grad.push(S::of((p - y) / b as f64));
        }
    }
    Ok((loss / b as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    fn tensor(data: Vec<f64>) -> Tensor<f64> {
        Tensor { name: "w".into(), shape: vec![data.len()], data }
    }

    #[test]
    fn defaults_and_summary() {
        let hp = Hyperparameters::default();
        assert_eq!(hp.summary(), "optimizer=Adam lr=5e-06 batch=50 epochs=50");
        hp.validate().unwrap();
        for bad in [
            Hyperparameters { epochs: 0, ..hp.clone() },
            Hyperparameters { batch_size: 0, ..hp.clone() },
            Hyperparameters { learning_rate: 0.0, ..hp.clone() },
            Hyperparameters { adam_beta1: 1.0, ..hp.clone() },
            Hyperparameters { adam_eps: 0.0, ..hp.clone() },
        ] {
            assert!(bad.validate().is_err());
        }
        assert_eq!(format_float(0.001), "0.001");
        assert_eq!(format_float(1e-3 / 10.0), "0.0001");
        assert_eq!(format_float(1.5e-5), "1.5e-05");
        assert_eq!(format_float(2.0), "2.0");
        assert_eq!(format_float(1e20), "1e+20");
    }

    #[test]
    fn cross_entropy_examples() {
        let (l, g) = cross_entropy_loss(&[0.0f64, 0.0, 0.0], 3, &[2]).unwrap();
        assert!((l - 3f64.ln()).abs() < 1e-15);
        assert!((g[0] - 1.0 / 3.0).abs() < 1e-15 && (g[2] + 2.0 / 3.0).abs() < 1e-15);
        let (l, _) = cross_entropy_loss(&[50.0f64, 0.0, 0.0], 3, &[0]).unwrap();
        assert!(l < 1e-20);
        assert!(cross_entropy_loss(&[0.0f64; 3], 3, &[3]).is_err());
        assert!(cross_entropy_loss(&[0.0f64; 4], 3, &[0]).is_err());
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = seed::rng(3, "ce", &[]);
        let logits: Vec<f64> = (0..12).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let targets = [0, 3, 1];
        let (_, grad) = cross_entropy_loss(&logits, 4, &targets).unwrap();
        let h = 1e-6;
        for i in 0..logits.len() {
            let mut up = logits.clone();
            up[i] += h;
            let mut dn = logits.clone();
            dn[i] -= h;
            let fd = (cross_entropy_loss(&up, 4, &targets).unwrap().0 - cross_entropy_loss(&dn, 4, &targets).unwrap().0)
                / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-12);
            assert!(rel < 1e-4, "{i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn sgd_matches_update_rule() {
        let mut p = vec![tensor(vec![1.0])];
        sgd_step(&mut p, &Gradients { tensors: vec![vec![0.5]] }, 0.1).unwrap();
        assert_eq!(p[0].data[0], 0.95);
        sgd_step(&mut p, &Gradients { tensors: vec![vec![0.0]] }, 0.1).unwrap();
        assert_eq!(p[0].data[0], 0.95);

        let mut rng = seed::rng(1, "sgd", &[]);
        let theta: Vec<f64> = (0..100).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..100).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut p = vec![tensor(theta.clone())];
        sgd_step(&mut p, &Gradients { tensors: vec![g.clone()] }, 0.01).unwrap();
        for i in 0..100 {
            assert_eq!(p[0].data[i], theta[i] - 0.01 * g[i]);
        }

        let mut twice = vec![tensor(vec![0.3])];
        sgd_step(&mut twice, &Gradients { tensors: vec![vec![0.25]] }, 0.5).unwrap();
        sgd_step(&mut twice, &Gradients { tensors: vec![vec![0.25]] }, 0.5).unwrap();
        let mut once = vec![tensor(vec![0.3])];
        sgd_step(&mut once, &Gradients { tensors: vec![vec![0.5]] }, 0.5).unwrap();
        assert_eq!(twice[0].data, once[0].data);

        assert!(sgd_step(&mut once, &Gradients { tensors: vec![vec![0.5, 1.0]] }, 0.5).is_err());
    }

    /// Scalar reference of the Adam recurrences.
    fn adam_reference(theta0: f64, grads: &[f64], hp: &Hyperparameters) -> Vec<f64> {
        let (mut theta, mut m, mut v) = (theta0, 0.0, 0.0);
        let mut out = Vec::new();
        for (i, g) in grads.iter().enumerate() {
            let t = (i + 1) as i32;
            m = hp.adam_beta1 * m + (1.0 - hp.adam_beta1) * g;
            v = hp.adam_beta2 * v + (1.0 - hp.adam_beta2) * g * g;
            let mhat = m / (1.0 - hp.adam_beta1.powi(t));
            let vhat = v / (1.0 - hp.adam_beta2.powi(t));
            theta -= hp.learning_rate * mhat / (vhat.sqrt() + hp.adam_eps);
            out.push(theta);
        }
        out
    }

    #[test]
    fn adam_matches_scalar_simulation() {
        let hp = Hyperparameters { learning_rate: 1e-3, ..Default::default() };
        for s in 0..5 {
            let mut rng = seed::rng(s, "adam", &[]);
            let theta0: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let streams: Vec<Vec<f64>> = (0..8).map(|_| (0..50).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
            let mut p = vec![tensor(theta0.clone())];
            let mut state = OptimizerState::new(&p);
            let mut trajectory = vec![Vec::new(); 8];
            for step in 0..50 {
                let g = Gradients { tensors: vec![streams.iter().map(|st| st[step]).collect()] };
                adam_step(&mut p, &g, &mut state, &hp).unwrap();
                for (j, tr) in trajectory.iter_mut().enumerate() {
                    tr.push(p[0].data[j]);
                }
            }
            assert_eq!(state.t, 50);
            for j in 0..8 {
                let reference = adam_reference(theta0[j], &streams[j], &hp);
                for (a, b) in trajectory[j].iter().zip(&reference) {
                    assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn adam_first_step_and_bounds() {
        let hp = Hyperparameters { learning_rate: 0.01, adam_eps: 1e-12, ..Default::default() };
        for g in [3.0, -0.2, 1e-3] {
            let mut p = vec![tensor(vec![0.0])];
            let mut st = OptimizerState::new(&p);
            adam_step(&mut p, &Gradients { tensors: vec![vec![g]] }, &mut st, &hp).unwrap();
            assert!((p[0].data[0].abs() - 0.01).abs() < 1e-9);
            assert_eq!(p[0].data[0].signum(), -g.signum());
        }

        let mut p = vec![tensor(vec![0.7; 3])];
        let mut st = OptimizerState::new(&p);
        for _ in 0..20 {
            adam_step(&mut p, &Gradients { tensors: vec![vec![0.0; 3]] }, &mut st, &hp).unwrap();
        }
        assert_eq!(p[0].data, vec![0.7; 3]);

        let bound = hp.learning_rate / (1.0 - hp.adam_beta1);
        for s in 0..10 {
            let mut rng = seed::rng(s, "adam-bound", &[]);
            let mut p = vec![tensor(vec![0.0; 16])];
            let mut st = OptimizerState::new(&p);
            for _ in 0..200 {
                let scale = 10f64.powf(rng.gen_range(-4.0..2.0));
                let g: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0) * scale).collect();
                let before = p[0].data.clone();
                adam_step(&mut p, &Gradients { tensors: vec![g] }, &mut st, &hp).unwrap();
                for (a, b) in p[0].data.iter().zip(&before) {
                    assert!((a - b).abs() <= bound);
                }
            }
        }
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let hp = Hyperparameters::default();
        let mut p = vec![tensor(vec![1.0, 2.0])];
        let mut st = OptimizerState::new(&p);
        let err = adam_step(&mut p, &Gradients { tensors: vec![vec![0.1, f64::NAN]] }, &mut st, &hp).unwrap_err();
        assert!(matches!(err, Error::Training { ref message, .. } if message.contains("w[1]")));
        assert_eq!(st.t, 0);
        assert_eq!(p[0].data, vec![1.0, 2.0]);
    }
}
