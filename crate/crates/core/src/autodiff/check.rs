//! Central finite-difference checks of graph gradients.

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use crate::{Error, Result};

/// Worst probe of a gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub probes: usize,
    pub max_rel: f64,
    pub worst: String,
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn eval(store: &ParamStore, f: &impl Fn(&mut Graph) -> Result<Var>) -> Result<f64> {
    let mut g = Graph::new(store);
    let l = f(&mut g)?;
    let v = g.value(l);
    if v.shape() != (1, 1) {
        return Err(Error::Contract(format!("loss of shape {:?} is not scalar", v.shape())));
    }
    Ok(v.item())
}

/// Compares backward against `(f(p + h) - f(p - h)) / 2h` on `probes`
/// randomly chosen scalars of the parameters in `only` (all when empty).
pub fn check_gradients<R: Rng>(
    store: &mut ParamStore,
    f: impl Fn(&mut Graph) -> Result<Var>,
    only: &[ParamId],
    probes: usize,
    h: f64,
    floor: f64,
    rng: &mut R,
) -> Result<GradCheck> {
    let grads = {
        let mut g = Graph::new(store);
        let l = f(&mut g)?;
        g.backward(l)?
    };
    let ids: Vec<ParamId> = if only.is_empty() { (0..store.len()).collect() } else { only.to_vec() };
    let total: usize = ids.iter().map(|&i| store.get(i).len()).sum();
    if total == 0 {
        return Err(Error::Contract("no parameters to probe".into()));
    }
    let mut out = GradCheck {
        probes: 0,
        max_rel: 0.0,
        worst: String::new(),
    };
    for _ in 0..probes {
        let mut k = rng.gen_range(0..total);
        let mut id = ids[0];
        for &i in &ids {
            let n = store.get(i).len();
            if k < n {
                id = i;
                break;
            }
            k -= n;
        }
        let orig = store.get(id).as_slice()[k];
        store.get_mut(id).as_mut_slice()[k] = orig + h;
        let up = eval(store, &f)?;
        store.get_mut(id).as_mut_slice()[k] = orig - h;
        let down = eval(store, &f)?;
        store.get_mut(id).as_mut_slice()[k] = orig;
        let fd = (up - down) / (2.0 * h);
        let an = grads.get(id).as_slice()[k];
        let e = rel_err(an, fd, floor);
        out.probes += 1;
        if e >= out.max_rel {
            out.max_rel = e;
            out.worst = format!("{}[{k}]: analytic {an:e}, numeric {fd:e}", store.name(id));
        }
    }
    Ok(out)
}
