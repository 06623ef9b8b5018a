use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Coordinates to probe; all of them when this is at least the total.
    pub probes: usize,
    /// Step is `step_scale * max(1, |p|)`.
    pub step_scale: f64,
    /// Denominator floor for the relative error.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            probes: 64,
            step_scale: 1e-4,
            floor: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub probes: usize,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

type Probe = (usize, ParamId, usize);

/// Compares reverse-mode gradients of `f` against central differences.
///
/// A probe whose difference quotient disagrees is retried with steps 10x and
/// 100x smaller before it counts, since a step can straddle a ReLU kink.
pub fn grad_check<F>(stores: &mut [&mut ParamStore], f: F, config: GradCheckConfig, rng: &mut Rng) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[&ParamStore]) -> Result<Var>,
{
    let eval = |stores: &[&mut ParamStore]| -> Result<f64> {
        let views: Vec<&ParamStore> = stores.iter().map(|s| &**s).collect();
        let mut tape = Tape::new();
        let out = f(&mut tape, &views)?;
        let v = tape.value(out);
        if v.shape() != [1, 1] || !v.is_finite() {
            return Err(Error::NonFinite(format!("grad_check objective {:?}", v.data())));
        }
        Ok(v.item())
    };

    let analytic: Vec<Vec<Vec<f64>>> = {
        let views: Vec<&ParamStore> = stores.iter().map(|s| &**s).collect();
        let mut tape = Tape::new();
        let out = f(&mut tape, &views)?;
        let grads = tape.backward(out)?;
        let mut per_store = Vec::with_capacity(stores.len());
        for s in stores.iter_mut() {
            s.zero_grad();
            s.accumulate(&tape, &grads);
            per_store.push(s.ids().map(|id| s.grad(id).data().to_vec()).collect());
            s.zero_grad();
        }
        per_store
    };

    let all: Vec<Probe> = stores
        .iter()
        .enumerate()
        .flat_map(|(si, s)| s.ids().flat_map(move |id| (0..s.get(id).len()).map(move |j| (si, id, j))))
        .collect();
    let chosen: Vec<Probe> = if config.probes >= all.len() {
        all
    } else {
        rand::seq::index::sample(rng, all.len(), config.probes)
            .into_iter()
            .map(|i| all[i])
            .collect()
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        probes: chosen.len(),
        worst: None,
    };
    for (si, id, j) in chosen {
        let original = stores[si].get(id).data()[j];
        let a = analytic[si][id.index()][j];
        let mut best = f64::INFINITY;
        for shrink in [1.0, 0.1, 0.01] {
            let h = config.step_scale * shrink * original.abs().max(1.0);
            stores[si].get_mut(id).data_mut()[j] = original + h;
            let plus = eval(stores)?;
            stores[si].get_mut(id).data_mut()[j] = original - h;
            let minus = eval(stores)?;
            stores[si].get_mut(id).data_mut()[j] = original;
            let numeric = (plus - minus) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(config.floor);
            best = best.min(rel);
            if best < 1e-6 {
                break;
            }
        }
        if report.worst.is_none() || best > report.max_rel_error {
            report.max_rel_error = best;
            report.worst = Some((stores[si].name(id).to_string(), j));
        }
    }
    Ok(report)
}
