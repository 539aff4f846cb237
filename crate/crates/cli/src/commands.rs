use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use attn_edit::attention::LatentTokens;
use attn_edit::directions::{extract_directions, CombinedVariant, EditDirection};
use attn_edit::io::{write_container, DirectionsFile, LatentFile, LayerSpec, Provenance, WeightContainer};
use attn_edit::sampling::{gaussian_weights, stream_rng, whitened_tokens};
use attn_edit::schedule::{apply_edit, InjectionSchedule, SweepSpec};
use attn_edit::validation::{run_validation, ValidationConfig, ValidationReport};
use attn_edit::whitening::whitening_report;

use crate::error::{CliError, CliResult};
use crate::{EditArgs, ExtractArgs, ScheduleArgs, SweepSeriesArgs, SynthCommand, ValidateArgs, WhitenArgs};

const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| attn_edit::Error::Io {
        path: path.to_owned(),
        source: e,
    })?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    text
}

pub fn extract(a: &ExtractArgs) -> CliResult<()> {
    let container = WeightContainer::open(&a.weights)?;
    let w = container.load_layer(&a.layer)?;
    let dirs = extract_directions(&a.layer, &w, a.top_k, a.variant.into())?;
    let provenance = Provenance {
        container_checksum: container.checksum(),
        tool_version: TOOL_VERSION.to_owned(),
        seed: None,
    };
    DirectionsFile::from_directions(&dirs, provenance)?.write(&a.out)?;
    Ok(())
}

pub fn validate(a: &ValidateArgs) -> CliResult<()> {
    let container = WeightContainer::open(&a.weights)?;
    let w = container.load_layer(&a.layer)?;
    let config = ValidationConfig {
        alpha: a.alpha,
        n_tokens: a.tokens,
        m_samples: a.samples,
        n_directions: a.directions,
        seed: a.seed,
        ..ValidationConfig::default()
    };
    let report = run_validation(&w, &config)?;
    if a.json {
        print!("{}", to_json(&report));
    } else {
        print!("{}", human_report(&report));
    }
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::validation(format!("layer {:?} failed one or more checks", a.layer)))
    }
}

fn verdict(passed: bool) -> &'static str {
    if passed {
        "PASS"
    } else {
        "FAIL"
    }
}

fn human_report(r: &ValidationReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{} jacobian      max_abs_error={:.3e} rows={}",
        verdict(r.jacobian.passed),
        r.jacobian.max_abs_error,
        r.jacobian.rows
    );
    let _ = writeln!(
        s,
        "{} first_order   max_rel_gap={:.3e} min_shrink={:.3}",
        verdict(r.first_order.passed),
        r.first_order.max_rel_gap,
        r.first_order.min_shrink
    );
    let _ = writeln!(
        s,
        "{} sensitivity   spearman_final={:.4} spearman_eqc={:.4} better={}",
        verdict(r.sensitivity.passed),
        r.sensitivity.spearman_final,
        r.sensitivity.spearman_eqc,
        r.sensitivity.better
    );
    let _ = writeln!(
        s,
        "{} cross_term    principal={:.4} max_random={:.4}",
        verdict(r.cross_term.passed),
        r.cross_term.principal_ratio,
        r.cross_term.max_random_ratio
    );
    let _ = writeln!(
        s,
        "{} dominance     principal={:.6e} q95_random={:.6e} fraction_below={:.4}",
        verdict(r.dominance.passed),
        r.dominance.principal_sensitivity,
        r.dominance.random_quantile,
        r.dominance.fraction_below
    );
    s
}

#[derive(Serialize)]
struct WhitenOutput {
    layer_id: String,
    variant: CombinedVariant,
    rank: usize,
    alpha: f64,
    n_tokens: usize,
    #[serde(flatten)]
    report: attn_edit::whitening::WhiteningReport,
}

pub fn whiten_report(a: &WhitenArgs) -> CliResult<()> {
    let latents = LatentFile::read(&a.latents)?;
    let container = WeightContainer::open(&a.weights)?;
    let w = container.load_layer(&a.layer)?;
    check_latent_dim(&latents, w.d(), "layer")?;
    let dirs = extract_directions(&a.layer, &w, a.rank + 1, a.variant.into())?;
    let dir = dirs[a.rank].as_perturbation()?;
    let report = whitening_report(&latents.samples, &w, &dir, a.alpha)?;
    if a.json {
        let out = WhitenOutput {
            layer_id: a.layer.clone(),
            variant: a.variant.into(),
            rank: a.rank,
            alpha: a.alpha,
            n_tokens: latents.header.n_tokens as usize,
            report,
        };
        print!("{}", to_json(&out));
    } else {
        println!("n_samples        {}", report.n_samples);
        println!("dev_zz           {:.6}", report.dev_zz);
        println!("dev_vv           {:.6}", report.dev_vv);
        println!("dev_ss           {:.6}", report.dev_ss);
        println!("cross_term_ratio {:.6}", report.cross_term_ratio);
    }
    Ok(())
}

fn check_latent_dim(latents: &LatentFile, d: usize, what: &str) -> CliResult<()> {
    let ld = latents.header.d as usize;
    if ld != d {
        return Err(CliError::usage(format!("latent d = {ld} does not match {what} d = {d}")));
    }
    Ok(())
}

fn schedule(s: &ScheduleArgs, latents: &LatentFile, alpha: f64) -> CliResult<InjectionSchedule> {
    let total = s.total_steps.unwrap_or(latents.header.total_steps);
    Ok(InjectionSchedule::new(total, s.t_low, s.t_high, alpha)?)
}

fn load_direction(path: &Path, rank: usize, latents: &LatentFile) -> CliResult<(DirectionsFile, EditDirection)> {
    let file = DirectionsFile::read(path)?;
    let dir = file.direction(rank)?;
    check_latent_dim(latents, file.d, "directions")?;
    Ok((file, dir))
}

/// Sidecar written next to every edited latent file.
#[derive(Serialize)]
struct EditManifest<'a> {
    tool_version: &'a str,
    input: String,
    directions: String,
    layer_id: &'a str,
    variant: CombinedVariant,
    rank: usize,
    eigenvalue: f64,
    container_checksum: &'a str,
    alpha: f64,
    t_low_frac: f64,
    t_high_frac: f64,
    total_steps: u32,
    n_samples: usize,
    n_edited: usize,
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// `edited.aelt` becomes `edited.03.aelt` for grid point 3.
fn sweep_path(out: &Path, index: usize) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match out.extension() {
        Some(ext) => format!("{stem}.{index:02}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{index:02}"),
    };
    out.with_file_name(name)
}

fn write_edit(
    a: &EditArgs,
    latents: &LatentFile,
    file: &DirectionsFile,
    dir: &EditDirection,
    sched: &InjectionSchedule,
    out: &Path,
) -> CliResult<()> {
    let edited = latents
        .samples
        .iter()
        .map(|z| apply_edit(z, dir, sched))
        .collect::<attn_edit::Result<Vec<LatentTokens>>>()?;
    let n_edited = latents
        .samples
        .iter()
        .filter(|z| z.timestep.is_some_and(|t| sched.is_active(t)) && sched.alpha() != 0.0)
        .count();
    latents.with_samples(edited).write(out)?;
    let manifest = EditManifest {
        tool_version: TOOL_VERSION,
        input: a.latents.display().to_string(),
        directions: a.directions.display().to_string(),
        layer_id: &file.layer_id,
        variant: file.variant,
        rank: dir.rank,
        eigenvalue: dir.eigenvalue,
        container_checksum: &file.provenance.container_checksum,
        alpha: sched.alpha(),
        t_low_frac: sched.t_low_frac(),
        t_high_frac: sched.t_high_frac(),
        total_steps: sched.total_steps(),
        n_samples: latents.samples.len(),
        n_edited,
    };
    write_text(&sidecar_path(out), &to_json(&manifest))
}

pub fn edit(a: &EditArgs) -> CliResult<()> {
    let latents = LatentFile::read(&a.latents)?;
    let (file, dir) = load_direction(&a.directions, a.rank, &latents)?;
    match a.sweep_points {
        None => {
            let alpha = a.alpha.ok_or_else(|| CliError::usage("--alpha is required without --sweep-points"))?;
            let sched = schedule(&a.schedule, &latents, alpha)?;
            write_edit(a, &latents, &file, &dir, &sched, &a.out)
        }
        Some(points) => {
            let sweep = SweepSpec::new(a.alpha_min, a.alpha_max, points)?;
            let base = schedule(&a.schedule, &latents, 0.0)?;
            for (i, alpha) in sweep.alphas().into_iter().enumerate() {
                write_edit(a, &latents, &file, &dir, &base.at_alpha(alpha), &sweep_path(&a.out, i))?;
            }
            Ok(())
        }
    }
}

pub fn sweep_series(a: &SweepSeriesArgs) -> CliResult<()> {
    let latents = LatentFile::read(&a.latents)?;
    let (_, dir) = load_direction(&a.directions, a.rank, &latents)?;
    let z = latents.samples.get(a.sample).ok_or_else(|| {
        CliError::usage(format!(
            "sample {} out of range; file holds {} samples",
            a.sample,
            latents.samples.len()
        ))
    })?;
    let sweep = SweepSpec::new(a.alpha_min, a.alpha_max, a.points)?;
    let base = schedule(&a.schedule, &latents, 0.0)?;
    let mut csv = String::from("alpha,delta_norm,predicted_sensitivity\n");
    for alpha in sweep.alphas() {
        let edited = apply_edit(z, &dir, &base.at_alpha(alpha))?;
        let delta = edited.z.sub(&z.z)?.frobenius_norm();
        let _ = writeln!(csv, "{alpha},{delta},{}", alpha * alpha * dir.eigenvalue);
    }
    write_text(&a.out, &csv)
}

pub fn synth(cmd: &SynthCommand) -> CliResult<()> {
    match cmd {
        SynthCommand::Weights {
            d,
            layer,
            seed,
            dtype,
            out,
        } => {
            if *d == 0 {
                return Err(CliError::usage("--d must be positive"));
            }
            let w = gaussian_weights(&mut stream_rng(*seed, 0), *d);
            write_container(
                out,
                &[LayerSpec {
                    layer_id: layer,
                    weights: &w,
                    dtype: (*dtype).into(),
                }],
            )?;
        }
        SynthCommand::Latents {
            samples,
            tokens,
            d,
            total_steps,
            seed,
            dtype,
            out,
        } => {
            if *samples == 0 || *tokens == 0 || *d == 0 {
                return Err(CliError::usage("--samples, --tokens and --d must be positive"));
            }
            let mut rng = stream_rng(*seed, 0);
            let t = u64::from(*total_steps);
            let n = *samples as u64;
            let list = (0..n)
                .map(|i| {
                    // Midpoints of `samples` equal slices of [0, T).
                    let step = ((2 * i + 1) * t / (2 * n)) as u32;
                    LatentTokens::at_timestep(whitened_tokens(&mut rng, *tokens, *d).z, step)
                })
                .collect();
            LatentFile::new(list, *total_steps, (*dtype).into())?.write(out)?;
        }
    }
    Ok(())
}
