//! Single-step building blocks and their exact local derivatives.

use super::NetError;

/// Hidden and cell vectors of one LSTM layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LayerState {
    pub fn zeros(size: usize) -> Self {
        LayerState {
            h: vec![0.0; size],
            c: vec![0.0; size],
        }
    }
}

/// Per-layer states of the whole stack.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    pub layers: Vec<LayerState>,
}

impl HiddenState {
    pub fn zeros(sizes: &[usize]) -> Self {
        HiddenState {
            layers: sizes.iter().map(|&s| LayerState::zeros(s)).collect(),
        }
    }
}

/// What one LSTM step must remember for its backward pass.
#[derive(Debug, Clone)]
pub struct StepCache {
    /// `[x; h_prev]`
    pub input: Vec<f64>,
    /// Gate activations in the order i, f, o, g.
    pub gates: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out = W v + b` for a row-major `W` with `out.len()` rows.
pub(crate) fn affine(w: &[f64], b: &[f64], v: &[f64], out: &mut [f64]) {
    let cols = v.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *o = b[r] + row.iter().zip(v).map(|(a, x)| a * x).sum::<f64>();
    }
}

/// Accumulates `dW += dz vᵀ`, `db += dz` and returns `Wᵀ dz`.
pub(crate) fn affine_backward(
    w: &[f64],
    v: &[f64],
    dz: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let cols = v.len();
    let mut dv = vec![0.0; cols];
    for (r, &d) in dz.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        db[r] += d;
        let row = &w[r * cols..(r + 1) * cols];
        let drow = &mut dw[r * cols..(r + 1) * cols];
        for j in 0..cols {
            drow[j] += d * v[j];
            dv[j] += d * row[j];
        }
    }
    dv
}

/// One LSTM update with gates stacked i, f, o, g in `W` (4H x (in + H)).
pub fn lstm_step(
    w: &[f64],
    b: &[f64],
    x: &[f64],
    prev: &LayerState,
) -> Result<(LayerState, StepCache), NetError> {
    let hn = prev.h.len();
    let cols = x.len() + hn;
    if prev.c.len() != hn || b.len() != 4 * hn || w.len() != 4 * hn * cols {
        return Err(NetError::ShapeMismatch(format!(
            "lstm step: W has {} entries, expected {} for input {} and state {hn}",
            w.len(),
            4 * hn * cols,
            x.len()
        )));
    }
    let mut input = Vec::with_capacity(cols);
    input.extend_from_slice(x);
    input.extend_from_slice(&prev.h);
    let mut gates = vec![0.0; 4 * hn];
    affine(w, b, &input, &mut gates);
    for (k, z) in gates.iter_mut().enumerate() {
        *z = if k < 3 * hn { sigmoid(*z) } else { z.tanh() };
    }
    let mut c = vec![0.0; hn];
    let mut h = vec![0.0; hn];
    let mut tanh_c = vec![0.0; hn];
    for k in 0..hn {
        let (i, f, o, g) = (
            gates[k],
            gates[hn + k],
            gates[2 * hn + k],
            gates[3 * hn + k],
        );
        c[k] = f * prev.c[k] + i * g;
        tanh_c[k] = c[k].tanh();
        h[k] = o * tanh_c[k];
    }
    let cache = StepCache {
        input,
        gates,
        c_prev: prev.c.clone(),
        tanh_c,
    };
    Ok((LayerState { h, c }, cache))
}

/// Gradients of one LSTM step. Given `dh` and `dc` flowing into the new
/// state, accumulates into `dw`/`db` and returns `(dx, dh_prev, dc_prev)`.
pub fn lstm_step_backward(
    w: &[f64],
    cache: &StepCache,
    dh: &[f64],
    dc: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let hn = dh.len();
    let g = &cache.gates;
    let mut dz = vec![0.0; 4 * hn];
    let mut dc_prev = vec![0.0; hn];
    for k in 0..hn {
        let (i, f, o, gg) = (g[k], g[hn + k], g[2 * hn + k], g[3 * hn + k]);
        let tc = cache.tanh_c[k];
        let dck = dc[k] + dh[k] * o * (1.0 - tc * tc);
        dz[k] = dck * gg * i * (1.0 - i);
        dz[hn + k] = dck * cache.c_prev[k] * f * (1.0 - f);
        dz[2 * hn + k] = dh[k] * tc * o * (1.0 - o);
        dz[3 * hn + k] = dck * i * (1.0 - gg * gg);
        dc_prev[k] = dck * f;
    }
    let mut dx = affine_backward(w, &cache.input, &dz, dw, db);
    let dh_prev = dx.split_off(dx.len() - hn);
    (dx, dh_prev, dc_prev)
}

/// `tanh(U[category] + b)` for a row-major table with `b.len()` columns.
pub fn embed_row(u: &[f64], b: &[f64], category: usize) -> Vec<f64> {
    let dim = b.len();
    u[category * dim..(category + 1) * dim]
        .iter()
        .zip(b)
        .map(|(w, b)| (w + b).tanh())
        .collect()
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_closed_forms() {
        let p = softmax(&[3f64.ln(), 0.0]);
        assert!((p[0] - 0.75).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);
        let q = softmax(&[3f64.ln() + 40.0, 40.0]);
        assert!((p[0] - q[0]).abs() < 1e-12);
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        let big = softmax(&[1000.0, -1000.0]);
        assert!(big.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_parameters_give_zero_state() {
        let prev = LayerState::zeros(3);
        let w = vec![0.0; 4 * 3 * 5];
        let b = vec![0.0; 12];
        let (s, _) = lstm_step(&w, &b, &[0.4, -2.0], &prev).unwrap();
        assert_eq!(s, LayerState::zeros(3));
    }

    #[test]
    fn zero_input_depends_only_on_biases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w1: Vec<f64> = (0..8 * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w2: Vec<f64> = (0..8 * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let prev = LayerState::zeros(2);
        let (a, _) = lstm_step(&w1, &b, &[0.0; 3], &prev).unwrap();
        let (c, _) = lstm_step(&w2, &b, &[0.0; 3], &prev).unwrap();
        assert_eq!(a, c);
        let (i, g, o) = (sigmoid(b[0]), b[6].tanh(), sigmoid(b[4]));
        assert!((a.c[0] - i * g).abs() < 1e-15);
        assert!((a.h[0] - o * (i * g).tanh()).abs() < 1e-15);
    }

    #[test]
    fn shape_errors() {
        let prev = LayerState::zeros(2);
        assert!(lstm_step(&[0.0; 10], &[0.0; 8], &[1.0], &prev).is_err());
    }

    #[test]
    fn step_gradients_match_finite_differences() {
        let (nin, hn) = (3, 4);
        let cols = nin + hn;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut r = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-0.8..0.8)).collect() };
        let w = r(4 * hn * cols);
        let b = r(4 * hn);
        let x = r(nin);
        let prev = LayerState { h: r(hn), c: r(hn) };
        let (a, bc) = (r(hn), r(hn));
        // scalar objective: a.h + bc.c
        let objective = |w: &[f64], b: &[f64], x: &[f64], prev: &LayerState| {
            let (s, _) = lstm_step(w, b, x, prev).unwrap();
            s.h.iter().zip(&a).map(|(h, a)| h * a).sum::<f64>()
                + s.c.iter().zip(&bc).map(|(c, k)| c * k).sum::<f64>()
        };
        let (_, cache) = lstm_step(&w, &b, &x, &prev).unwrap();
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; b.len()];
        let (dx, dh_prev, dc_prev) = lstm_step_backward(&w, &cache, &a, &bc, &mut dw, &mut db);

        let step = 1e-5;
        let rel = |an: f64, num: f64| (an - num).abs() / an.abs().max(num.abs()).max(1e-6);
        let mut worst: f64 = 0.0;
        for k in 0..w.len() {
            let (mut p, mut m) = (w.clone(), w.clone());
            p[k] += step;
            m[k] -= step;
            let num = (objective(&p, &b, &x, &prev) - objective(&m, &b, &x, &prev)) / (2.0 * step);
            worst = worst.max(rel(dw[k], num));
        }
        for k in 0..b.len() {
            let (mut p, mut m) = (b.clone(), b.clone());
            p[k] += step;
            m[k] -= step;
            let num = (objective(&w, &p, &x, &prev) - objective(&w, &m, &x, &prev)) / (2.0 * step);
            worst = worst.max(rel(db[k], num));
        }
        for k in 0..nin {
            let (mut p, mut m) = (x.clone(), x.clone());
            p[k] += step;
            m[k] -= step;
            let num = (objective(&w, &b, &p, &prev) - objective(&w, &b, &m, &prev)) / (2.0 * step);
            worst = worst.max(rel(dx[k], num));
        }
        for k in 0..hn {
            for (which, analytic) in [(0, dh_prev[k]), (1, dc_prev[k])] {
                let (mut p, mut m) = (prev.clone(), prev.clone());
                let (pv, mv) = if which == 0 {
                    (&mut p.h, &mut m.h)
                } else {
                    (&mut p.c, &mut m.c)
                };
                pv[k] += step;
                mv[k] -= step;
                let num = (objective(&w, &b, &x, &p) - objective(&w, &b, &x, &m)) / (2.0 * step);
                worst = worst.max(rel(analytic, num));
            }
        }
        assert!(worst < 1e-6, "max relative error {worst}");
    }

    #[test]
    fn embedding_selects_one_row() {
        let u = vec![0.1, 0.2, -0.3, 0.4, 0.5, 0.6];
        let b = vec![0.0, 0.1];
        assert_eq!(
            embed_row(&u, &b, 1),
            vec![(-0.3f64).tanh(), (0.5f64).tanh()]
        );
        assert_eq!(embed_row(&[0.0; 6], &[0.0; 2], 2), vec![0.0, 0.0]);
    }
}
