//! Extended-precision loss evaluation for the finite-difference oracle.
//!
//! A separate forward pass in double-double arithmetic. Perturbed inputs are
//! represented exactly (`v + h` as a two-term sum), so a central difference of
//! this loss is limited only by truncation error, not by the ~1e-11 absolute
//! floor that f64 rounding of `L(±h)` imposes at `h = 1e-5`.

use super::dd::Dd;
use super::{time_embedding, DenoiserModel, Wrt};
use crate::diffusion::NoiseSchedule;
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub(super) struct Perturbation {
    pub wrt: Wrt,
    pub index: usize,
    pub delta: f64,
}

/// Locates a flat parameter index: `(layer, Some((row, col)))` for a weight,
/// `(layer, None)` plus the bias row otherwise.
fn locate_param(model: &DenoiserModel, mut index: usize) -> (usize, Option<(usize, usize)>, usize) {
    for (li, l) in model.layers().iter().enumerate() {
        let (o, i) = l.weight.dim();
        if index < o * i {
            return (li, Some((index / i, index % i)), 0);
        }
        index -= o * i;
        if index < o {
            return (li, None, index);
        }
        index -= o;
    }
    panic!("parameter index out of range")
}

fn silu(x: Dd) -> Dd {
    x / (Dd::ONE + (-x).exp())
}

pub(super) fn loss_dd(
    model: &DenoiserModel,
    x: &[f64],
    cond: Option<&[f64]>,
    t: usize,
    eps: &[f64],
    sched: &NoiseSchedule,
    p: Perturbation,
) -> Result<Dd> {
    let arch = model.arch();
    let ab = sched.alpha_bar(t)?;
    let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
    let bump = |v: f64, hit: bool| {
        if hit {
            Dd::sum_exact(v, p.delta)
        } else {
            Dd::from_f64(v)
        }
    };

    let mut u: Vec<Dd> = Vec::with_capacity(arch.input_dim());
    for (j, (&xj, &ej)) in x.iter().zip(eps).enumerate() {
        let xd = bump(xj, p.wrt == Wrt::Image && p.index == j);
        u.push(xd.mul_f64(a) + Dd::from_f64(ej).mul_f64(s));
    }
    u.extend(time_embedding(t, arch.time_dim).into_iter().map(Dd::from_f64));
    let null = model.null_embedding();
    let c = cond.unwrap_or(null);
    for (j, &cj) in c.iter().enumerate() {
        u.push(bump(cj, p.wrt == Wrt::Condition && p.index == j));
    }

    let param_hit = if p.wrt == Wrt::Parameters {
        Some(locate_param(model, p.index))
    } else {
        None
    };
    let last = model.layers().len() - 1;
    for (li, l) in model.layers().iter().enumerate() {
        let (o, _) = l.weight.dim();
        let mut next = Vec::with_capacity(o);
        for k in 0..o {
            let bias_hit = matches!(param_hit, Some((pl, None, row)) if pl == li && row == k);
            let mut acc = bump(l.bias[k], bias_hit);
            for (j, uj) in u.iter().enumerate() {
                acc = acc + uj.mul_f64(l.weight[[k, j]]);
            }
            if let Some((pl, Some((row, col)), _)) = param_hit {
                if pl == li && row == k {
                    acc = acc + u[col].mul_f64(p.delta);
                }
            }
            next.push(if li == last { acc } else { silu(acc) });
        }
        u = next;
    }
    let mut total = Dd::ZERO;
    for (pk, &ek) in u.iter().zip(eps) {
        let d = *pk - Dd::from_f64(ek);
        total = total + d * d;
    }
    Ok(total / Dd::from_f64(eps.len() as f64))
}
