//! Nelder–Mead simplex search with the standard coefficients
//! (reflection 1, expansion 2, contraction 1/2, shrink 1/2).

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadOutcome {
    pub x: Vec<f64>,
    pub fx: f64,
    pub evals: usize,
    pub iterations: usize,
    /// Simplex diameter fell below the tolerance before `max_iter`.
    pub converged: bool,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

/// Minimise `f` from `x0` using an axis-aligned initial simplex with edge
/// lengths `steps`. Non-finite function values are treated as `+∞`.
///
/// Convergence is declared when every vertex lies within `tol` (max-norm) of
/// the best vertex.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], steps: &[f64], max_iter: usize, tol: f64) -> NelderMeadOutcome
where
    F: FnMut(&[f64]) -> f64,
{
    let p = x0.len();
    assert_eq!(steps.len(), p, "one initial step per coordinate");
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(p + 1);
    simplex.push(x0.to_vec());
    for k in 0..p {
        let mut v = x0.to_vec();
        v[k] += steps[k];
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v, &mut evals)).collect();

    let mut order: Vec<usize> = (0..=p).collect();
    let mut iterations = 0usize;
    let mut converged = false;
    let mut centroid = vec![0.0; p];
    let mut trial = vec![0.0; p];
    let mut trial2 = vec![0.0; p];

    loop {
        // stable sort keeps earlier vertices first among ties
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let best = order[0];
        let worst = order[p];
        let diameter = order[1..]
            .iter()
            .flat_map(|&k| simplex[k].iter().zip(&simplex[best]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if diameter <= tol {
            converged = true;
            break;
        }
        if iterations >= max_iter {
            break;
        }
        iterations += 1;

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for &k in &order[..p] {
            for (c, v) in centroid.iter_mut().zip(&simplex[k]) {
                *c += v;
            }
        }
        centroid.iter_mut().for_each(|c| *c /= p as f64);

        let along = |out: &mut Vec<f64>, coef: f64, from: &[f64]| {
            for j in 0..p {
                out[j] = centroid[j] + coef * (centroid[j] - from[j]);
            }
        };

        along(&mut trial, REFLECT, &simplex[worst]);
        let f_reflect = eval(&trial, &mut evals);
        let f_best = values[best];
        let f_second_worst = values[order[p - 1]];

        if f_reflect < f_best {
            along(&mut trial2, EXPAND, &simplex[worst]);
            let f_expand = eval(&trial2, &mut evals);
            if f_expand < f_reflect {
                simplex[worst].copy_from_slice(&trial2);
                values[worst] = f_expand;
            } else {
                simplex[worst].copy_from_slice(&trial);
                values[worst] = f_reflect;
            }
            continue;
        }
        if f_reflect < f_second_worst {
            simplex[worst].copy_from_slice(&trial);
            values[worst] = f_reflect;
            continue;
        }
        if f_reflect < values[worst] {
            along(&mut trial2, CONTRACT * REFLECT, &simplex[worst]);
            let f_out = eval(&trial2, &mut evals);
            if f_out <= f_reflect {
                simplex[worst].copy_from_slice(&trial2);
                values[worst] = f_out;
                continue;
            }
        } else {
            along(&mut trial2, -CONTRACT, &simplex[worst]);
            let f_in = eval(&trial2, &mut evals);
            if f_in < values[worst] {
                simplex[worst].copy_from_slice(&trial2);
                values[worst] = f_in;
                continue;
            }
        }
        let anchor = simplex[best].clone();
        for &k in &order[1..] {
            for j in 0..p {
                simplex[k][j] = anchor[j] + SHRINK * (simplex[k][j] - anchor[j]);
            }
            values[k] = eval(&simplex[k], &mut evals);
        }
    }

    let best = order[0];
    NelderMeadOutcome {
        x: simplex[best].clone(),
        fx: values[best],
        evals,
        iterations,
        converged,
    }
}
