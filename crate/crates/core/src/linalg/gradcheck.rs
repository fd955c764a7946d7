use super::{ParamId, ParamStore};

#[derive(Copy, Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Coordinates whose one-sided slopes disagree by more than
    /// `kink_tol * max(1, |forward| + |backward|)` are treated as sitting on a
    /// non-differentiable point and skipped.
    pub kink_tol: f64,
    /// Coordinates with `|analytic| + |numeric|` at or below this are ignored.
    pub min_magnitude: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-6,
            kink_tol: 1e-4,
            min_magnitude: 1e-8,
        }
    }
}

impl GradCheckOptions {
    pub fn with_eps(eps: f64) -> Self {
        GradCheckOptions {
            eps,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Coordinates that entered the maximum.
    pub checked: usize,
    pub skipped_kinks: usize,
    /// `(param name, flat index)` of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

/// Compares the gradients currently stored in `store` for `ids` against
/// central finite differences of `loss`.
///
/// `loss` must be deterministic and must not read the gradient buffers.
/// Values are restored exactly after each probe.
pub fn grad_check(
    store: &mut ParamStore,
    ids: &[ParamId],
    opts: &GradCheckOptions,
    mut loss: impl FnMut(&ParamStore) -> f64,
) -> GradCheck {
    assert!(opts.eps > 0.0, "eps must be positive");
    let mut report = GradCheck::default();
    let f0 = loss(store);
    for &id in ids {
        let analytic = store
            .get(id)
            .grad()
            .unwrap_or_else(|| panic!("grad_check on frozen parameter `{}`", store.get(id).name()))
            .clone();
        for k in 0..analytic.len() {
            let x = store.get(id).value().as_slice()[k];
            store.get_mut(id).value_mut().as_mut_slice()[k] = x + opts.eps;
            let fp = loss(store);
            store.get_mut(id).value_mut().as_mut_slice()[k] = x - opts.eps;
            let fm = loss(store);
            store.get_mut(id).value_mut().as_mut_slice()[k] = x;

            let fwd = (fp - f0) / opts.eps;
            let bwd = (f0 - fm) / opts.eps;
            if (fwd - bwd).abs() > opts.kink_tol * (fwd.abs() + bwd.abs()).max(1.0) {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * opts.eps);
            let a = analytic.as_slice()[k];
            if a.abs() + numeric.abs() <= opts.min_magnitude {
                continue;
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs());
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((store.get(id).name().to_string(), k));
            }
        }
    }
    report
}
