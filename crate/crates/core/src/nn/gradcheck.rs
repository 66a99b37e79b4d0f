use crate::error::Result;
use crate::nn::{Network, Objective, PhiPrefix};
use crate::tensor::Tensor;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `max |g_analytic − g_fd| / max(|g_fd|, 1e-8)` over every probed scalar.
    pub max_rel_err: f64,
    /// Name and index of the scalar attaining the maximum.
    pub worst: String,
    pub checked: usize,
}

/// Compares backward-pass gradients with central finite differences for every
/// unfrozen parameter and every trainable row of `Φ`.
pub fn grad_check(
    net: &Network<f64>,
    phi: Option<&PhiPrefix<'_, f64>>,
    input: &Tensor<f64>,
    objective: Objective<'_, f64>,
) -> Result<GradCheckReport> {
    let (out, tape) = net.forward(phi, input)?;
    let (_, dout) = objective.evaluate(&out)?;
    let grads = net.backward(&tape, &dout)?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let mut record = |name: String, analytic: f64, fd: f64| {
        let err = (analytic - fd).abs() / fd.abs().max(1e-8);
        report.checked += 1;
        if err >= report.max_rel_err {
            report.max_rel_err = err;
            report.worst = name;
        }
    };
    let h = FD_STEP;

    let mut probe = net.clone();
    for (pi, g) in grads.params.iter().enumerate() {
        let Some(g) = g else { continue };
        let name = net.params().get(pi).name.clone();
        for k in 0..g.len() {
            let orig = probe.params().get(pi).value.data()[k];
            probe.params_mut().get_mut(pi).value.data_mut()[k] = orig + h;
            let plus = probe.forward(phi, input)?.0;
            probe.params_mut().get_mut(pi).value.data_mut()[k] = orig - h;
            let minus = probe.forward(phi, input)?.0;
            probe.params_mut().get_mut(pi).value.data_mut()[k] = orig;
            let fd = objective.difference(&plus, &minus)? / (2.0 * h);
            record(format!("{name}[{k}]"), g.data()[k], fd);
        }
    }

    if let (Some(phi), Some(gphi)) = (phi, grads.phi.as_ref()) {
        let (r, n) = (phi.r(), phi.n());
        let mut buf = phi.data().to_vec();
        for row in phi.trainable() {
            for col in 0..n {
                let k = row * n + col;
                let orig = buf[k];
                buf[k] = orig + h;
                let plus = net.forward(Some(&PhiPrefix::new(&buf, r, n)?), input)?.0;
                buf[k] = orig - h;
                let minus = net.forward(Some(&PhiPrefix::new(&buf, r, n)?), input)?.0;
                buf[k] = orig;
                let fd = objective.difference(&plus, &minus)? / (2.0 * h);
                record(format!("phi[{row},{col}]"), gphi.data()[k], fd);
            }
        }
    }
    Ok(report)
}
