//! Human-readable result rendering: the mean ± std markdown table.

use ctxgen::eval::EvalResult;

fn pct(x: f64) -> String {
    format!("{:.1}", x * 100.0)
}

/// Renders one result as a markdown document: a summary row of
/// `mean ± std` (as percentages) plus the per-restart breakdown.
pub fn render_markdown(eval: &EvalResult) -> String {
    let mut out = String::new();
    out.push_str("# Experiment results\n\n");
    out.push_str(&format!("- task: {}\n", eval.task));
    out.push_str(&format!("- mode: {}\n", eval.mode));
    out.push_str(&format!("- config digest: `{}`\n\n", eval.config_digest));
    out.push_str("| Mode | Task | Mi-F1 | Ma-F1 | Restarts |\n");
    out.push_str("|------|------|-------|-------|----------|\n");
    out.push_str(&format!(
        "| {} | {} | {} ± {} | {} ± {} | {} |\n\n",
        eval.mode,
        eval.task,
        pct(eval.mean.micro_f1),
        pct(eval.std.micro_f1),
        pct(eval.mean.macro_f1),
        pct(eval.std.macro_f1),
        eval.per_seed.len(),
    ));
    out.push_str("Per restart:\n\n");
    out.push_str("| Seed | Mi-F1 | Ma-F1 |\n");
    out.push_str("|------|-------|-------|\n");
    for r in &eval.per_seed {
        out.push_str(&format!(
            "| {} | {} | {} |\n",
            r.seed,
            pct(r.micro_f1),
            pct(r.macro_f1)
        ));
    }
    if !eval.failures.is_empty() {
        out.push_str("\nFailed restarts:\n\n");
        for f in &eval.failures {
            out.push_str(&format!("- seed {}: {}\n", f.seed, f.error));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ctxgen::eval::SeedResult;

    #[test]
    fn table_shows_percent_mean_and_std() {
        let eval = EvalResult::aggregate(
            "conda_few_shot",
            "toy",
            "deadbeef",
            vec![
                SeedResult {
                    seed: 13,
                    micro_f1: 0.90,
                    macro_f1: 0.89,
                },
                SeedResult {
                    seed: 42,
                    micro_f1: 0.92,
                    macro_f1: 0.91,
                },
                SeedResult {
                    seed: 77,
                    micro_f1: 0.94,
                    macro_f1: 0.93,
                },
            ],
            vec![],
        )
        .unwrap();
        let md = render_markdown(&eval);
        assert!(md.contains("| conda_few_shot | toy | 92.0 ± 2.0 | 91.0 ± 2.0 | 3 |"));
        assert!(md.contains("`deadbeef`"));
        assert!(md.contains("| 13 | 90.0 | 89.0 |"));
    }
}
