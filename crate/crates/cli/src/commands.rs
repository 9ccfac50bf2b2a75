use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rtfkit::camera::{fit_rtf_model, load_rtf_json, save_rtf_json, RayPassMethod, RtfModel};
use rtfkit::dataset::{dataset_to_string, generate_dataset, read_dataset, OutputSurface, PlaneConfig, SamplingConfig};
use rtfkit::eval::{
    csv_string, default_object_distances, default_sensor_row, edge_spread, focus_film_distance, noise_floor,
    object_distances_for_focal_length, relative_illumination, rmse_compare, rmse_vs_degree_report, svg_plot,
    CameraAdapter, EdgeScene, EvalConfig, EvalCurve, OracleCamera, RayPassSpec, SampleMode, SamplingDisc, SweepConfig,
};
use rtfkit::lens::LensPrescription;
use rtfkit::raypass::{misclassification_rate, propose_breakpoints};
use rtfkit::{Error, Result};

use crate::{
    Command, DatasetArgs, EsfArgs, EvalCommand, FitArgs, GlobalArgs, LensArgs, ModeArg, OracleArgs, PlaneArgs,
    RayPassArg, RunConfig, SampleArgs, SamplingArgs,
};

pub fn run(global: GlobalArgs, command: Command) -> Result<()> {
    if let Command::Rerun { config } = &command {
        let text = fs::read_to_string(config).map_err(|e| io_err(config, e))?;
        let rc: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", config.display())))?;
        return run(GlobalArgs { verbose: global.verbose, ..rc.global }, rc.command);
    }
    fs::create_dir_all(&global.out_dir).map_err(|e| io_err(&global.out_dir, e))?;
    let config = RunConfig {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        global: global.clone(),
        command: command.clone(),
    };
    let config_json = serde_json::to_string(&config).expect("config serialization");
    match command {
        Command::Dataset(a) => cmd_dataset(&global, &a, &config_json),
        Command::Fit(a) => cmd_fit(&global, &a, &config_json),
        Command::Eval(EvalCommand::Ri { model, oracle, heights, hmax, sampling }) => {
            cmd_ri(&global, &model, &oracle, heights, hmax, &sampling, &config_json)
        }
        Command::Eval(EvalCommand::Esf { model, oracle, esf, sampling }) => {
            cmd_esf(&global, &model, &oracle, &esf, &sampling, &config_json)
        }
        Command::Eval(EvalCommand::Sweep { lens, planes, dataset, degrees, raypass, breakpoints, esf, sampling }) => {
            let method = match raypass {
                RayPassArg::Ellipse => RayPassSpec::Ellipse,
                RayPassArg::Circles => RayPassSpec::Circles {
                    breakpoints: breakpoints
                        .ok_or_else(|| Error::Config("breakpoints: required for circles in a sweep".into()))?,
                },
            };
            cmd_sweep(&global, &lens, &planes, &dataset, &degrees, method, &esf, &sampling, &config_json)
        }
        Command::Rerun { .. } => unreachable!(),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source: e }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| io_err(&path, e))?;
    log::info!("wrote {}", path.display());
    Ok(path)
}

fn pretty_config(config_json: &str) -> String {
    let v: serde_json::Value = serde_json::from_str(config_json).expect("config json");
    serde_json::to_string_pretty(&v).expect("config json") + "\n"
}

fn config_name(output: &str) -> String {
    let stem = Path::new(output).file_stem().and_then(|s| s.to_str()).unwrap_or(output);
    format!("{stem}.config.json")
}

fn load_lens(path: &Path, no_reverse: bool) -> Result<LensPrescription> {
    let lens = LensPrescription::load_json(path).map_err(|e| match e {
        Error::Lens(m) => Error::Lens(format!("{}: {m}", path.display())),
        e => e,
    })?;
    Ok(if no_reverse { lens } else { lens.reversed() })
}

fn build_planes(lens: &LensPrescription, a: &PlaneArgs, pupil: Option<(f64, f64)>) -> Result<PlaneConfig> {
    if !(a.offset_input >= 0.0) {
        return Err(Error::Config("offset_input: must be >= 0".into()));
    }
    let mut p = PlaneConfig::for_lens(lens, a.offset_input, a.offset_output);
    match (a.raypass_offset, pupil) {
        (Some(o), _) => p.raypass_plane_offset = o,
        (None, Some((z, _))) => p.raypass_plane_offset = z - p.input_plane_z,
        _ => {}
    }
    if let Some((c, r)) = a.sphere_output {
        p = p.with_sphere_output(c, r);
    }
    p.validate()?;
    Ok(p)
}

fn build_sampling(a: &SamplingArgs, seed: u64) -> Result<SamplingConfig> {
    let s = SamplingConfig {
        n_field: a.nfield,
        y_max: a.ymax,
        n_pupil_radial: a.nradial,
        n_pupil_angular: a.nangular,
        pupil_margin: a.margin,
        seed,
        jitter: a.jitter,
        grid_offset: a.grid_offset,
        pupil_override: a.pupil,
    };
    s.validate()?;
    Ok(s)
}

fn cmd_dataset(global: &GlobalArgs, a: &DatasetArgs, config_json: &str) -> Result<()> {
    let lens = load_lens(&a.lens.lens, a.lens.no_reverse)?;
    let planes = build_planes(&lens, &a.planes, a.sampling.pupil)?;
    let sampling = build_sampling(&a.sampling, global.seed)?;
    let ds = generate_dataset(&lens, &planes, &sampling)?;
    let text = dataset_to_string(&ds);
    let (tag, rest) = text.split_once('\n').unwrap_or((&text, ""));
    let out = format!("{tag}\n# config: {config_json}\n{rest}");
    let path = write_file(&global.out_dir, &a.output, &out)?;
    write_file(&global.out_dir, &config_name(&a.output), &pretty_config(config_json))?;
    println!(
        "{}: {} records over {} field heights, {} blocked (input plane z = {} mm)",
        path.display(),
        ds.records.len(),
        sampling.n_field,
        ds.blocked_count(),
        planes.input_plane_z
    );
    Ok(())
}

fn cmd_fit(global: &GlobalArgs, a: &FitArgs, config_json: &str) -> Result<()> {
    let ds = read_dataset(&a.dataset)?;
    let method = match a.raypass {
        RayPassArg::Ellipse => RayPassMethod::Ellipse,
        RayPassArg::Circles => RayPassMethod::Circles {
            breakpoints: a.breakpoints.clone().unwrap_or_else(|| propose_breakpoints(&ds, a.max_circles)),
        },
    };
    let (model, report) = fit_rtf_model(&ds, &a.name, a.degree, &method, a.film_distance)?;
    let path = global.out_dir.join(&a.output);
    save_rtf_json(&model, &path)?;
    write_file(&global.out_dir, &config_name(&a.output), &pretty_config(config_json))?;
    let misclass = misclassification_rate(&model.raypass, &ds);

    let names = ["x", "y", "z", "dx", "dy", "dz"];
    let mut txt = String::new();
    let _ = writeln!(txt, "model: {}", path.display());
    let _ = writeln!(txt, "lens: {}", model.lens_name);
    let _ = writeln!(txt, "degree: {}", report.degree);
    let _ = writeln!(txt, "records used: {} (blocked: {})", report.used, report.blocked);
    let _ = writeln!(txt, "effective rank: {}", report.effective_rank);
    let _ = writeln!(txt, "condition estimate: {:e}", report.condition_estimate);
    let _ = writeln!(txt, "position rms: {:e} mm", report.position_rms);
    for (i, n) in names.iter().enumerate() {
        let _ = writeln!(txt, "  {n:>2}: rms {:e}  max {:e}", report.rms[i], report.max_abs[i]);
    }
    let _ = writeln!(txt, "direction violations: {}", report.direction_violations);
    let _ = writeln!(txt, "ray-pass: {} (training misclassification {:.4}%)", model.raypass.method(), 100.0 * misclass);
    if let RayPassMethod::Circles { breakpoints } = &method {
        let _ = writeln!(txt, "breakpoints: {breakpoints:?}");
    }
    let _ = writeln!(txt, "film distance: {} mm ({} m)", model.film_distance, model.film_distance * 1e-3);
    write_file(&global.out_dir, "fit_report.txt", &txt)?;
    let mut csv = format!("# config: {config_json}\n# position_rms: {}\ncomponent,rms,max_abs\n", report.position_rms);
    for (i, n) in names.iter().enumerate() {
        let _ = writeln!(csv, "{n},{},{}", report.rms[i], report.max_abs[i]);
    }
    write_file(&global.out_dir, "fit_report.csv", &csv)?;
    print!("{txt}");
    Ok(())
}

fn eval_config(a: &SampleArgs, seed: u64, disc: SamplingDisc) -> Result<EvalConfig> {
    if a.samples == 0 {
        return Err(Error::Config("samples: must be > 0".into()));
    }
    let mode = match a.mode {
        ModeArg::Random => SampleMode::Random,
        ModeArg::Grid => SampleMode::Grid,
    };
    Ok(EvalConfig { n_samples: a.samples, seed, mode, disc })
}

struct Cameras {
    rtf: CameraAdapter,
    oracle: Option<(LensPrescription, CameraAdapter)>,
    disc: SamplingDisc,
}

fn cameras(model_path: &Path, o: &OracleArgs, margin: f64) -> Result<Cameras> {
    let model = load_rtf_json(model_path)?;
    let oracle = match &o.oracle {
        Some(p) => {
            let lens = load_lens(p, o.no_reverse)?;
            let cam = CameraAdapter::Oracle(OracleCamera {
                name: format!("oracle:{}", lens.name),
                lens: lens.clone(),
                planes: model.planes,
                film_distance: model.film_distance,
            });
            Some((lens, cam))
        }
        None => None,
    };
    let disc = match &oracle {
        Some((lens, _)) => SamplingDisc::for_lens(lens, &model.planes, margin)?,
        None => SamplingDisc::for_model(&model, margin),
    };
    Ok(Cameras { rtf: CameraAdapter::Rtf(model), oracle, disc })
}

fn model_of(c: &CameraAdapter) -> &RtfModel {
    match c {
        CameraAdapter::Rtf(m) => m,
        CameraAdapter::Oracle(_) => unreachable!(),
    }
}

fn write_svg(
    global: &GlobalArgs,
    name: &str,
    title: &str,
    xl: &str,
    yl: &str,
    curves: &[&EvalCurve],
    config_json: &str,
) -> Result<()> {
    let svg = svg_plot(title, xl, yl, curves);
    let comment = format!("<!-- config: {} -->\n", config_json.replace("--", "- -"));
    let svg = svg.replacen('\n', &format!("\n{comment}"), 1);
    write_file(&global.out_dir, name, &svg).map(|_| ())
}

fn cmd_ri(
    global: &GlobalArgs,
    model: &Path,
    o: &OracleArgs,
    n_heights: usize,
    hmax: Option<f64>,
    s: &SampleArgs,
    config_json: &str,
) -> Result<()> {
    let cams = cameras(model, o, s.disc_margin)?;
    let cfg = eval_config(s, global.seed, cams.disc)?;
    let hmax = match hmax {
        Some(h) => h,
        None => model_of(&cams.rtf)
            .raypass
            .field_extent()
            .ok_or_else(|| Error::Config("hmax: the model does not bound the field; pass --hmax".into()))?,
    };
    if n_heights < 2 || !(hmax > 0.0) {
        return Err(Error::Config("heights: need at least 2 heights and hmax > 0".into()));
    }
    let heights: Vec<f64> = (0..n_heights).map(|i| hmax * i as f64 / (n_heights - 1) as f64).collect();
    let rtf = relative_illumination(&cams.rtf, &heights, &cfg)?;
    let mut headers = vec!["height_mm", "rtf", "rtf_sigma"];
    let mut cols = vec![heights.clone(), rtf.values.clone(), rtf.sigma.clone()];
    let mut comments = vec![format!("config: {config_json}")];
    let mut curves = vec![rtf.clone()];
    if let Some((_, oc)) = &cams.oracle {
        let orc = relative_illumination(oc, &heights, &cfg)?;
        let delta: Vec<f64> = rtf.values.iter().zip(&orc.values).map(|(a, b)| a - b).collect();
        let worst = delta.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        comments.push(format!("max_abs_delta: {worst}"));
        println!("max |RI_rtf - RI_oracle| = {worst:.5}");
        headers.extend(["oracle", "oracle_sigma", "delta"]);
        cols.extend([orc.values.clone(), orc.sigma.clone(), delta]);
        curves.push(orc);
    }
    let csv = csv_string(&comments, &headers, &cols);
    let path = write_file(&global.out_dir, "ri.csv", &csv)?;
    write_file(&global.out_dir, "ri.config.json", &pretty_config(config_json))?;
    if s.svg {
        let refs: Vec<&EvalCurve> = curves.iter().collect();
        write_svg(global, "ri.svg", "Relative illumination", "sensor height (mm)", "RI", &refs, config_json)?;
    }
    println!("{}", path.display());
    Ok(())
}

fn parse_distances(spec: &str) -> Result<Option<[f64; 2]>> {
    if spec.trim() == "auto" {
        return Ok(None);
    }
    let v: Vec<f64> = spec
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("distances: expected `auto` or two numbers, got {spec:?}")))?;
    match v.as_slice() {
        [a, b] if *a > 0.0 && *b > 0.0 => Ok(Some([*a, *b])),
        _ => Err(Error::Config(format!("distances: expected two positive numbers, got {spec:?}"))),
    }
}

/// Front reference of a model without a lens: the output plane, or the
/// apex of the output sphere.
fn model_front_z(m: &RtfModel) -> f64 {
    match m.planes.output_surface {
        OutputSurface::Plane { z } => z,
        OutputSurface::Sphere { center_z, radius } => center_z + radius,
    }
}

fn cmd_esf(
    global: &GlobalArgs,
    model: &Path,
    o: &OracleArgs,
    e: &EsfArgs,
    s: &SampleArgs,
    config_json: &str,
) -> Result<()> {
    let mut cams = cameras(model, o, s.disc_margin)?;
    let cfg = eval_config(s, global.seed, cams.disc)?;
    let m = model_of(&cams.rtf).clone();
    let (front, distances) = match &cams.oracle {
        Some((lens, _)) => {
            (lens.last_vertex_z(), parse_distances(&e.distances)?.unwrap_or_else(|| default_object_distances(lens)))
        }
        None => {
            let c = m.polymap.meridional_jacobian()[2];
            let d = match parse_distances(&e.distances)? {
                Some(d) => d,
                None if c.abs() > 1e-12 => object_distances_for_focal_length(1.0 / c.abs()),
                None => return Err(Error::Evaluation("model has no focal length; give --distances".into())),
            };
            (model_front_z(&m), d)
        }
    };
    if let Some((lens, oc)) = &mut cams.oracle {
        let film = focus_film_distance(lens, m.planes.input_plane_z, front + distances[0])?;
        cams.rtf = cams.rtf.with_film_distance(film)?;
        *oc = oc.with_film_distance(film)?;
        println!("film distance focused on {} mm: {film} mm ({} m)", distances[0], film * 1e-3);
    }
    if e.pixels < 3 || !(e.pitch > 0.0) {
        return Err(Error::Config("pixels: need at least 3 pixels and pitch > 0".into()));
    }
    let xs = default_sensor_row(e.pixels, e.pitch);
    let floor_cam = cams.oracle.as_ref().map_or(&cams.rtf, |(_, c)| c);
    let floor = noise_floor(floor_cam, &xs, &cfg)?;
    let mut comments = vec![format!("config: {config_json}"), format!("noise_floor: {floor}")];
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); 5];
    let mut curves = Vec::new();
    for d in distances {
        let scene = EdgeScene { object_plane_z: front + d, edge_x: e.edge_x };
        let r = edge_spread(&cams.rtf, &scene, &xs, &cfg)?;
        cols[0].extend(std::iter::repeat(d).take(xs.len()));
        cols[1].extend(&xs);
        cols[2].extend(&r.curve.values);
        let mut curve = r.curve.clone();
        curve.label = format!("{} @ {d} mm", curve.label);
        curves.push(curve);
        if let Some((_, oc)) = &cams.oracle {
            let q = edge_spread(oc, &scene, &xs, &cfg)?;
            let rmse = rmse_compare(&q.curve, &r.curve)?;
            comments.push(format!("rmse[{d}]: {rmse}"));
            println!("object distance {d} mm: ESF RMSE {rmse:.3e} (noise floor {floor:.3e})");
            cols[3].extend(&q.curve.values);
            cols[4].extend(r.curve.values.iter().zip(&q.curve.values).map(|(a, b)| a - b));
            let mut curve = q.curve.clone();
            curve.label = format!("{} @ {d} mm", curve.label);
            curves.push(curve);
        }
    }
    let mut headers = vec!["object_distance_mm", "x_um", "rtf"];
    if cams.oracle.is_some() {
        headers.extend(["oracle", "delta"]);
    } else {
        cols.truncate(3);
        println!("noise floor {floor:.3e}");
    }
    let path = write_file(&global.out_dir, "esf.csv", &csv_string(&comments, &headers, &cols))?;
    write_file(&global.out_dir, "esf.config.json", &pretty_config(config_json))?;
    if s.svg {
        let refs: Vec<&EvalCurve> = curves.iter().collect();
        write_svg(global, "esf.svg", "Edge-spread functions", "sensor x (µm)", "normalized value", &refs, config_json)?;
    }
    println!("{}", path.display());
    Ok(())
}

fn parse_degrees(spec: &str) -> Result<Vec<usize>> {
    let bad = || Error::Config(format!("degrees: expected `LO:HI` or a list, got {spec:?}"));
    let v: Vec<usize> = if let Some((a, b)) = spec.split_once(':') {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        (a..=b).collect()
    } else {
        spec.split(',').map(|t| t.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?
    };
    if v.is_empty() || v.contains(&0) {
        return Err(bad());
    }
    Ok(v)
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    global: &GlobalArgs,
    lens_args: &LensArgs,
    planes: &PlaneArgs,
    dataset: &SamplingArgs,
    degrees: &str,
    raypass: RayPassSpec,
    e: &EsfArgs,
    s: &SampleArgs,
    config_json: &str,
) -> Result<()> {
    let degrees = parse_degrees(degrees)?;
    let lens = load_lens(&lens_args.lens, lens_args.no_reverse)?;
    let planes = build_planes(&lens, planes, dataset.pupil)?;
    let sampling = build_sampling(dataset, global.seed)?;
    let disc = SamplingDisc::for_lens(&lens, &planes, s.disc_margin)?;
    let cfg = SweepConfig {
        planes,
        sampling,
        raypass,
        eval: eval_config(s, global.seed, disc)?,
        sensor_xs_um: default_sensor_row(e.pixels, e.pitch),
        object_distances: parse_distances(&e.distances)?.unwrap_or_else(|| default_object_distances(&lens)),
        edge_x: e.edge_x,
    };
    let rows = rmse_vs_degree_report(&lens, &cfg, &degrees)?;
    let mut comments = vec![format!("config: {config_json}")];
    for r in &rows {
        if let Some(err) = &r.error {
            comments.push(format!("degree {} at {} mm failed: {err}", r.degree, r.object_distance));
        }
        println!(
            "degree {:>2}  distance {:>10.1} mm  log10 rmse {:>8.4}  noise floor {:.3e}",
            r.degree, r.object_distance, r.log10_rmse, r.noise_floor
        );
    }
    let csv = csv_string(
        &comments,
        &["degree", "object_distance_mm", "log10_rmse", "rmse", "noise_floor"],
        &[
            rows.iter().map(|r| r.degree as f64).collect(),
            rows.iter().map(|r| r.object_distance).collect(),
            rows.iter().map(|r| r.log10_rmse).collect(),
            rows.iter().map(|r| r.rmse).collect(),
            rows.iter().map(|r| r.noise_floor).collect(),
        ],
    );
    let path = write_file(&global.out_dir, "sweep.csv", &csv)?;
    write_file(&global.out_dir, "sweep.config.json", &pretty_config(config_json))?;
    if s.svg {
        let mut curves = Vec::new();
        for d in cfg.object_distances {
            let sel: Vec<_> = rows.iter().filter(|r| r.object_distance == d).collect();
            curves.push(EvalCurve {
                label: format!("{d} mm"),
                abscissa: sel.iter().map(|r| r.degree as f64).collect(),
                values: sel.iter().map(|r| r.log10_rmse).collect(),
                sigma: vec![0.0; sel.len()],
                n_samples: s.samples,
                seed: global.seed,
            });
        }
        let floor = rows.first().map_or(f64::NAN, |r| r.noise_floor.log10());
        curves.push(EvalCurve {
            label: "noise floor".into(),
            abscissa: degrees.iter().map(|&d| d as f64).collect(),
            values: vec![floor; degrees.len()],
            sigma: vec![0.0; degrees.len()],
            n_samples: s.samples,
            seed: global.seed,
        });
        let refs: Vec<&EvalCurve> = curves.iter().collect();
        write_svg(global, "sweep.svg", "ESF RMSE vs degree", "degree", "log10 RMSE", &refs, config_json)?;
    }
    println!("{}", path.display());
    Ok(())
}
