//! The three subcommands: `run`, `demo-drift`, and `protocols`.

use std::fs;
use std::path::{Path, PathBuf};

use odmr_core::acquisition::{
    measure_repolarization, run_sweep, serial_reference_sweep, AcquisitionError, SweepOutput,
    SweepResult, SweepSetup,
};
use odmr_core::analysis::{self, FitReport};
use odmr_core::pulse_seq::ReferenceStrategy;

use crate::config::{template, ProtocolName, RunConfig};
use crate::CliError;

/// Artifacts a command produced, for reporting and tests.
#[derive(Debug, Clone, Default)]
pub struct Artifacts {
    pub files: Vec<PathBuf>,
    /// True when a fit ran and failed to converge.
    pub fit_nonconverged: bool,
}

fn sim_err(e: AcquisitionError) -> CliError {
    CliError::Simulation(e.to_string())
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

/// Artifacts go under `<output_dir>/<config-hash>/`, so runs with different
/// configurations never collide.
fn artifact_dir(out_dir: &Path, setup: &SweepSetup) -> PathBuf {
    out_dir.join(format!("{:016x}", setup.config_hash()))
}

fn run_parallel_bounded<T: Send>(
    max_parallel: usize,
    f: impl FnOnce() -> T + Send,
) -> Result<T, CliError> {
    if max_parallel == 0 {
        Ok(f())
    } else {
        let pool = rayon_pool(max_parallel)?;
        Ok(pool.install(f))
    }
}

fn rayon_pool(threads: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Simulation(e.to_string()))
}

fn fit_for(name: ProtocolName, xs: &[f64], ys: &[f64]) -> Option<Result<FitReport, CliError>> {
    let run = |r: Result<FitReport, analysis::AnalysisError>| {
        Some(r.map_err(|e| CliError::Simulation(e.to_string())))
    };
    match name {
        ProtocolName::Rabi => run(analysis::fit_rabi(xs, ys)),
        ProtocolName::Ramsey => run(analysis::fit_ramsey(xs, ys)),
        ProtocolName::T1 => run(analysis::fit_t1(xs, ys)),
        ProtocolName::EchoT2 => run(analysis::fit_echo_decay(xs, ys)),
        ProtocolName::EchoRevivals => run(analysis::fit_revival_train(xs, ys)),
        // The rephasing sweep is characterized by its extremum, not a model.
        ProtocolName::EchoRephase => None,
        // Fitted on the readout transient, handled separately.
        ProtocolName::Repolarization => None,
    }
}

/// Contrast extremum summary for the rephasing sweep.
fn extremum_report(result: &SweepResult) -> String {
    let mut best = 0;
    for (k, p) in result.points.iter().enumerate() {
        if p.contrast_pct < result.points[best].contrast_pct {
            best = k;
        }
    }
    let p = result.points[best];
    format!(
        "model: rephasing_extremum\nconverged: true\nextremum_t_reph_s: {:.9e}\nextremum_contrast_pct: {:.6e}\n",
        p.swept_s, p.contrast_pct
    )
}

/// `odmr-rig run <config>`: run the configured sweep, fit it, and write
/// `sweep.csv`, `fit_report.txt`, and optionally `waveform_<i>.csv`.
pub fn cmd_run(config: &RunConfig, out_dir: &Path) -> Result<Artifacts, CliError> {
    let (setup, swept, name) = config.build()?;
    let dir = artifact_dir(out_dir, &setup);
    let mut artifacts = Artifacts::default();

    if name == ProtocolName::Repolarization {
        // The analyzed object is the intra-readout transient, not a
        // windowed contrast sweep; t_dark comes from the sweep stop.
        let t_dark = config.protocol.sweep_stop_s;
        let repol = run_parallel_bounded(config.protocol.max_parallel, || {
            measure_repolarization(&setup, t_dark)
        })?
        .map_err(sim_err)?;
        let trace_path = dir.join("repolarization_trace.csv");
        write_file(
            &trace_path,
            &format!(
                "# config_hash: {:016x}\n{}",
                setup.config_hash(),
                repol.trace.to_csv()
            ),
        )?;
        artifacts.files.push(trace_path);
        let report_path = dir.join("fit_report.txt");
        write_file(
            &report_path,
            &format!(
                "config_hash: {:016x}\n{}",
                setup.config_hash(),
                repol.fit.to_text_report()
            ),
        )?;
        artifacts.files.push(report_path);
        artifacts.fit_nonconverged = !repol.fit.converged;
        return Ok(artifacts);
    }

    let out: SweepOutput =
        run_parallel_bounded(config.protocol.max_parallel, || run_sweep(&setup, &swept))?
            .map_err(sim_err)?;

    let xs = out.result.swept_values();
    let ys = out.result.contrasts();
    let fit = fit_for(name, &xs, &ys).transpose()?;

    let mut sweep_csv = out.result.to_csv();
    let report_text = match &fit {
        Some(report) => {
            // Machine-readable fit block appended to the sweep metadata.
            let mut lines = report.to_metadata_lines();
            lines.push_str(&sweep_csv);
            sweep_csv = lines;
            artifacts.fit_nonconverged = !report.converged;
            format!(
                "config_hash: {:016x}\n{}",
                setup.config_hash(),
                report.to_text_report()
            )
        }
        None => format!(
            "config_hash: {:016x}\n{}",
            setup.config_hash(),
            extremum_report(&out.result)
        ),
    };

    let sweep_path = dir.join("sweep.csv");
    write_file(&sweep_path, &sweep_csv)?;
    artifacts.files.push(sweep_path);

    let report_path = dir.join("fit_report.txt");
    write_file(&report_path, &report_text)?;
    artifacts.files.push(report_path);

    if config.output.emit_waveforms {
        for (i, w) in out.waveforms.iter().enumerate() {
            let path = dir.join(format!("waveform_{i}.csv"));
            write_file(
                &path,
                &format!(
                    "# config_hash: {:016x}\n{}",
                    setup.config_hash(),
                    w.to_csv()
                ),
            )?;
            artifacts.files.push(path);
        }
    }
    Ok(artifacts)
}

/// Robust per-series noise estimate: standard deviation of first
/// differences over sqrt(2). First differencing removes the smooth protocol
/// signal and leaves the point-to-point noise.
pub fn first_difference_noise(ys: &[f64]) -> f64 {
    if ys.len() < 3 {
        return 0.0;
    }
    let d: Vec<f64> = ys.windows(2).map(|w| w[1] - w[0]).collect();
    let m = d.iter().sum::<f64>() / d.len() as f64;
    let var = d.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / d.len() as f64;
    (var / 2.0).sqrt()
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
    cov / (va * vb).sqrt().max(1e-300)
}

/// `odmr-rig demo-drift <config>`: run the configured Rabi sweep under the
/// maximally polarized, partially depolarized, and serial referencing modes
/// with the configured drift, and summarize how each one fares.
pub fn cmd_demo_drift(config: &RunConfig, out_dir: &Path) -> Result<Artifacts, CliError> {
    let (mut setup, swept, name) = config.build()?;
    if name != ProtocolName::Rabi {
        return Err(CliError::Config(
            "protocol.kind: demo-drift runs the rabi protocol".into(),
        ));
    }
    let dir = artifact_dir(out_dir, &setup);
    let mut artifacts = Artifacts::default();

    let max_parallel = config.protocol.max_parallel;
    setup.strategy = ReferenceStrategy::MaxPolarized;
    let maxpol =
        run_parallel_bounded(max_parallel, || run_sweep(&setup, &swept))?.map_err(sim_err)?;
    let mut partial_setup = setup.clone();
    partial_setup.strategy = ReferenceStrategy::PartialDepolarized;
    let partial = run_parallel_bounded(max_parallel, || run_sweep(&partial_setup, &swept))?
        .map_err(sim_err)?;
    let serial = run_parallel_bounded(max_parallel, || serial_reference_sweep(&setup, &swept))?
        .map_err(sim_err)?;

    let mut csv = String::new();
    csv.push_str(&format!("# config_hash: {:016x}\n", setup.config_hash()));
    csv.push_str(
        "swept_value_s,c_maxpol_pct,c_partial_pct,c_serial_pct,i_sig_maxpol_v,i_ref_maxpol_v\n",
    );
    for ((m, p), s) in maxpol
        .result
        .points
        .iter()
        .zip(&partial.result.points)
        .zip(&serial.result.points)
    {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            m.swept_s, m.contrast_pct, p.contrast_pct, s.contrast_pct, m.i_sig_v, m.i_ref_v
        ));
    }
    let csv_path = dir.join("drift_comparison.csv");
    write_file(&csv_path, &csv)?;
    artifacts.files.push(csv_path);

    let n_max = first_difference_noise(&maxpol.result.contrasts());
    let n_par = first_difference_noise(&partial.result.contrasts());
    let n_ser = first_difference_noise(&serial.result.contrasts());
    let sig: Vec<f64> = maxpol.result.points.iter().map(|p| p.i_sig_v).collect();
    let rf: Vec<f64> = maxpol.result.points.iter().map(|p| p.i_ref_v).collect();
    let corr = correlation(&sig, &rf);
    let summary = format!(
        "config_hash: {:016x}\n\
         contrast_noise_maxpol_pct: {n_max:.6e}\n\
         contrast_noise_partial_pct: {n_par:.6e}\n\
         contrast_noise_serial_pct: {n_ser:.6e}\n\
         serial_over_maxpol: {:.3}\n\
         serial_over_partial: {:.3}\n\
         raw_sig_ref_correlation: {corr:.4}\n",
        setup.config_hash(),
        n_ser / n_max.max(1e-300),
        n_ser / n_par.max(1e-300),
    );
    let summary_path = dir.join("drift_summary.txt");
    write_file(&summary_path, &summary)?;
    artifacts.files.push(summary_path);
    Ok(artifacts)
}

/// `odmr-rig protocols`: list the protocol registry and print a full config
/// template for each entry.
pub fn cmd_protocols() -> String {
    let mut out = String::new();
    out.push_str("available protocols:\n");
    for p in ProtocolName::ALL {
        out.push_str(&format!(
            "  {:<16} swept: {:<8} default strategy: {}\n",
            p.label(),
            p.swept_symbol(),
            p.default_strategy()
        ));
    }
    out.push_str("\nstrategies: max-polarized, partial-depolarized\n");
    for p in ProtocolName::ALL {
        out.push_str(&format!("\n--- template: {} ---\n", p.label()));
        out.push_str(&template(p));
    }
    out
}
