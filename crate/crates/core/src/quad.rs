//! Quadrature helpers shared by the transport and diagnostic code.

use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;

/// Composite Gauss–Legendre rule with `panels` equal panels of `degree` nodes.
pub struct CompositeRule {
    rule: GaussLegendre,
    panels: usize,
}

impl CompositeRule {
    pub fn new(degree: usize, panels: usize) -> Self {
        let degree = NonZeroUsize::new(degree.max(2)).expect("degree >= 2");
        CompositeRule {
            rule: GaussLegendre::new(degree),
            panels: panels.max(1),
        }
    }

    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let h = (b - a) / self.panels as f64;
        (0..self.panels)
            .map(|i| {
                let lo = a + h * i as f64;
                self.rule.integrate(lo, lo + h, &mut f)
            })
            .sum()
    }

    /// Nodes and weights on `[a, b]`, for callers that need to reuse the
    /// integrand evaluations.
    pub fn nodes(&self, a: f64, b: f64) -> Vec<(f64, f64)> {
        let h = (b - a) / self.panels as f64;
        let pairs = self.rule.as_node_weight_pairs();
        let mut out = Vec::with_capacity(self.panels * pairs.len());
        for i in 0..self.panels {
            let lo = a + h * i as f64;
            let mid = lo + 0.5 * h;
            for &(x, w) in pairs {
                out.push((mid + 0.5 * h * x, 0.5 * h * w));
            }
        }
        out
    }
}
