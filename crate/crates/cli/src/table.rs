//! Plain-text tables for the terminal.

use std::fmt::Write;

use esf::montecarlo::{SimulationSummary, TimingRow};
use esf::EstimationReport;

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or("-".into(), |v| format!("{v:.digits$}"))
}

pub fn report(r: &EstimationReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "method       {}", r.method);
    let _ = writeln!(s, "n            {}", r.n);
    let _ = writeln!(s, "theta        {}", opt(r.theta, 6));
    let _ = writeln!(s, "Z before     {:.4}", r.z_before);
    let _ = writeln!(s, "Z after      {}", opt(r.z_after, 4));
    let _ = writeln!(s, "selected     {} {:?}", r.selected_eigs.len(), r.selected_eigs);
    let _ = writeln!(s, "adj. R2      {:.4}", r.adj_r2);
    let _ = writeln!(s, "runtime (s)  {:.4}", r.runtime_seconds);
    if !r.flags.is_empty() {
        let _ = writeln!(s, "flags        {}", r.flags.join(", "));
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<16} {:>12} {:>12} {:>12}", "term", "estimate", "se", "robust se");
    for c in &r.coefficients {
        let _ = writeln!(s, "{:<16} {:>12.6} {:>12.6} {:>12.6}", c.name, c.estimate, c.se_plain, c.se_robust);
    }
    s
}

pub fn summary(sum: &SimulationSummary) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<6} {:>5} {:>5} {:<16} {:<10} {:>10} {:>10} {:>8} {:>6}",
        "setup", "n", "mu", "rho", "estimator", "bias", "mse", "sel", "fail"
    );
    for r in &sum.rows {
        let rho = r.rho.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(":");
        let _ = writeln!(
            s,
            "{:<6} {:>5} {:>5} {:<16} {:<10} {:>10.5} {:>10.5} {:>8.2} {:>6}",
            r.setup, r.n, r.mu, rho, r.estimator.as_str(), r.bias, r.mse, r.mean_selected, r.failures
        );
    }
    s
}

pub fn timing(rows: &[TimingRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:>6} {:<10} {:>12} {:>10} {:>5}", "n", "method", "seconds", "relative", "sel");
    for r in rows {
        let _ = writeln!(
            s,
            "{:>6} {:<10} {:>12} {:>10} {:>5}",
            r.n,
            r.method.as_str(),
            r.seconds.map_or("infeasible".into(), |v| format!("{v:.4}")),
            opt(r.relative, 2),
            r.selected.map_or("-".into(), |v| v.to_string())
        );
    }
    s
}
