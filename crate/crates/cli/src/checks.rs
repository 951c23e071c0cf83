use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use orderflow::feed::{generate_synthetic, write_events, GeneratorConfig};
use orderflow::net::gradcheck::gradcheck_suite;
use orderflow::reference::{book_equivalence, mcc_by_correlation, t_cdf_quadrature};
use orderflow::stats::{t_cdf, ConfusionMatrix};

use crate::{csv_writer, write_csv};

/// Worst relative gradient error a check may show.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const GRADCHECK_CASES: usize = 20;

/// Writes a synthetic event stream described by the generator config at
/// `config` (defaults when `None`). Returns the event count.
pub fn cmd_generate(config: Option<&Path>, seed: u64, out: &Path) -> Result<usize> {
    let gen: GeneratorConfig = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing generator config {}", path.display()))?
        }
        None => GeneratorConfig::default(),
    };
    let events = generate_synthetic(&gen, seed)?;
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let file = std::fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
    write_events(BufWriter::new(file), &events)
        .with_context(|| format!("writing {}", out.display()))?;
    Ok(events.len())
}

/// Runs the finite-difference suite and writes `gradcheck.csv` into `out`.
/// Fails when any case exceeds [`GRADCHECK_TOLERANCE`].
pub fn cmd_gradcheck(seed: u64, out: &Path) -> Result<PathBuf> {
    let results = gradcheck_suite(GRADCHECK_CASES, seed)?;
    let mut w = csv_writer();
    w.write_record([
        "case",
        "config",
        "parameters",
        "loss",
        "max_rel_error",
        "pass",
    ])?;
    let mut failed = 0;
    for (i, (case, report)) in results.iter().enumerate() {
        let err = report.max_rel_error();
        let pass = err < GRADCHECK_TOLERANCE;
        failed += usize::from(!pass);
        let params: usize = report.groups.iter().map(|g| g.params).sum();
        w.write_record([
            i.to_string(),
            case.describe(),
            params.to_string(),
            report.loss.to_string(),
            err.to_string(),
            pass.to_string(),
        ])?;
    }
    let path = out.join("gradcheck.csv");
    write_csv(&path, w)?;
    if failed > 0 {
        bail!(
            "{failed} of {GRADCHECK_CASES} gradient checks exceed {GRADCHECK_TOLERANCE} (see {})",
            path.display()
        );
    }
    Ok(path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelftestLine {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

/// Oracle equivalence checks: the book against the naive reference book,
/// MCC against the correlation definition, and the t CDF against quadrature.
pub fn cmd_selftest(seed: u64) -> Result<Vec<SelftestLine>> {
    let mut lines = Vec::new();

    let gen = GeneratorConfig {
        events: 20_000,
        aggressive_probability: 0.1,
        ..GeneratorConfig::default()
    };
    let events = generate_synthetic(&gen, seed)?;
    let book = book_equivalence(&events);
    lines.push(SelftestLine {
        name: "book-vs-reference",
        pass: book.is_ok(),
        detail: match book {
            Ok(n) => format!("{n} events identical"),
            Err(e) => e,
        },
    });

    let mut worst: f64 = 0.0;
    let mut count = 0;
    for tp in 0..6u64 {
        for tn in 0..6 {
            for fp in 0..6 {
                for fn_ in 0..6 {
                    let cm = ConfusionMatrix { tp, tn, fp, fn_ };
                    worst = worst.max((cm.mcc() - mcc_by_correlation(tp, tn, fp, fn_)).abs());
                    count += 1;
                }
            }
        }
    }
    lines.push(SelftestLine {
        name: "mcc-vs-correlation",
        pass: worst <= 1e-12,
        detail: format!("{count} matrices, max diff {worst:e}"),
    });

    let mut worst: f64 = 0.0;
    for df in [1u32, 2, 3, 5, 10, 30] {
        for k in -20..=20 {
            let t = k as f64 / 4.0;
            worst = worst.max((t_cdf(t, df)? - t_cdf_quadrature(t, df)).abs());
        }
    }
    lines.push(SelftestLine {
        name: "t-cdf-vs-quadrature",
        pass: worst <= 1e-8,
        detail: format!("max diff {worst:e}"),
    });
    Ok(lines)
}
