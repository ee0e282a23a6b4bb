//! `oversmooth`: seeded experiments and property checks for graph neural
//! network over-smoothing, emitting CSV and JSON artifacts.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use oversmooth::dynamics::{vector_field, FieldCase, Grid};
use oversmooth::export::{
    fmt_f64, trajectory_svg, write_field_csv, write_histogram_csv, write_spectrum_csv,
    write_trajectory_csv,
};
use oversmooth::rng::derive_seed;
use oversmooth::spectral::{
    augmented_laplacian, eigenvalues, rate_from_sorted, spectral_histogram,
};
use oversmooth::theory::{
    chung_quantities, concentration_band, counterexample_rank_trace, er_concentration_check,
    er_threshold_s0, lazy_symmetric_chain, markov_converge, random_markov_chain,
    rank_control_trace, ThresholdInputs,
};
use oversmooth::verify::{run_checks, run_trajectory_on, Check, TrajectorySetup, VerifyConfig};
use oversmooth::{
    connected_components, counterexample_graph, erdos_renyi, Error, Graph, Tolerances,
};

#[derive(Parser, Debug)]
#[command(
    name = "oversmooth",
    version,
    about = "Over-smoothing experiments for graph neural networks"
)]
struct Cli {
    /// Master seed; every random draw derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Tolerance override, e.g. `--tol eigen_residual=1e-9`. Repeatable.
    #[arg(long = "tol", global = true, value_name = "NAME=VALUE")]
    tol: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Spectrum of the augmented normalized Laplacian and the contraction rate.
    Spectrum {
        #[command(flatten)]
        graph: GraphArgs,
        /// Histogram bins over [0, 2].
        #[arg(long, default_value_t = 40)]
        bins: usize,
    },
    /// Distance to the invariant subspace across the layers of a random GCN.
    Trajectory {
        #[command(flatten)]
        graph: GraphArgs,
        /// Maximum singular value of every weight matrix.
        #[arg(long)]
        s: Option<f64>,
        #[arg(long)]
        layers: Option<usize>,
        #[arg(long)]
        channels: Option<usize>,
        /// Number of distinct one-hot input rows.
        #[arg(long = "k-onehot")]
        k_onehot: Option<usize>,
        /// Project the input onto the invariant subspace first.
        #[arg(long = "x0-in-m")]
        x0_in_m: bool,
        /// Also write trajectory.svg.
        #[arg(long)]
        svg: bool,
    },
    /// Vector field of the two-node examples over a grid.
    Field {
        /// 1: non-negative case, 2: mixed-sign case.
        #[arg(long, default_value_t = 1)]
        case: u8,
        /// Scalar weight; repeatable.
        #[arg(long = "w")]
        w: Vec<f64>,
        /// Use the weight sweep 0.5, 1, 1.2, 1.5, 2, 4.
        #[arg(long)]
        sweep: bool,
        /// Grid points per axis.
        #[arg(long, default_value_t = 41)]
        resolution: usize,
        /// Half-width of the square grid.
        #[arg(long, default_value_t = 2.0)]
        extent: f64,
    },
    /// Weight-scale threshold for Erdős–Rényi graphs.
    Threshold {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        p: f64,
        #[arg(long, default_value_t = 0.05)]
        eps: f64,
    },
    /// Monte Carlo check of the Laplacian spectrum concentration band.
    Concentration {
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0.1)]
        p: f64,
        #[arg(long, default_value_t = 0.05)]
        eps: f64,
        #[arg(long, default_value_t = 50)]
        trials: usize,
    },
    /// Convergence of a symmetric Markov chain to the uniform distribution.
    Markov {
        /// Graph whose lazy max-degree walk is used; a random chain otherwise.
        #[command(flatten)]
        graph: GraphArgs,
        #[arg(long, default_value_t = 8)]
        states: usize,
        #[arg(long, default_value_t = 50)]
        steps: usize,
    },
    /// Rank of repeated propagation on the 4-node counterexample.
    Counterexample {
        #[arg(long, default_value_t = 10)]
        steps: usize,
        /// Number of seeded non-negative inputs.
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
    /// Runs the property-check suite; exits nonzero on any violation.
    Verify {
        /// Restrict to these checks (repeatable).
        #[arg(long = "check")]
        checks: Vec<String>,
        /// Override every check's trial count.
        #[arg(long)]
        trials: Option<usize>,
        /// Run the layer-contraction check on the mixed-sign example.
        #[arg(long = "bypass-assumptions")]
        bypass_assumptions: bool,
    },
}

#[derive(Args, Debug, Default)]
struct GraphArgs {
    /// Edge-list file.
    #[arg(long, conflicts_with_all = ["er", "preset"])]
    edges: Option<PathBuf>,
    /// Erdős–Rényi graph, `n,p`.
    #[arg(long, conflicts_with = "preset")]
    er: Option<String>,
    /// counterexample, fig2a, fig2b or fig2c.
    #[arg(long)]
    preset: Option<String>,
    /// Add this many uniformly random absent edges (2500 or 5000 for the
    /// noisy-graph experiments).
    #[arg(long = "add-edges")]
    add_edges: Option<usize>,
}

impl GraphArgs {
    fn is_set(&self) -> bool {
        self.edges.is_some() || self.er.is_some() || self.preset.is_some()
    }

    fn setup(&self) -> Option<TrajectorySetup> {
        self.preset.as_deref().and_then(TrajectorySetup::preset)
    }

    /// Returns the graph and, for generated graphs, the edge probability.
    fn build(&self, seed: u64) -> Result<(Graph, Option<f64>), Error> {
        let graph_seed = derive_seed(seed, 0);
        let (g, p) = if let Some(path) = &self.edges {
            (Graph::from_edge_list(&fs::read_to_string(path)?)?, None)
        } else if let Some(spec) = &self.er {
            let (n, p) = parse_er(spec)?;
            (erdos_renyi(n, p, graph_seed)?, Some(p))
        } else if let Some(name) = &self.preset {
            if name == "counterexample" {
                (counterexample_graph(), None)
            } else if let Some(setup) = self.setup() {
                (erdos_renyi(setup.n, setup.p, graph_seed)?, Some(setup.p))
            } else {
                return Err(Error::InvalidParameter(format!(
                    "unknown preset {name:?}; expected counterexample, fig2a, fig2b or fig2c"
                )));
            }
        } else {
            return Err(Error::InvalidParameter(
                "a graph source is required: --edges, --er or --preset".into(),
            ));
        };
        match self.add_edges {
            Some(count) => Ok((g.add_random_edges(count, derive_seed(seed, 3))?.0, None)),
            None => Ok((g, p)),
        }
    }
}

fn parse_er(spec: &str) -> Result<(usize, f64), Error> {
    let bad = || Error::InvalidParameter(format!("--er expects n,p, got {spec:?}"));
    let (n, p) = spec.split_once(',').ok_or_else(bad)?;
    let n = n.trim().parse().map_err(|_| bad())?;
    let p = p.trim().parse().map_err(|_| bad())?;
    Ok((n, p))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    let mut tol = Tolerances::default();
    for o in &cli.tol {
        tol.apply_override(o)?;
    }
    fs::create_dir_all(&cli.out)?;
    let out = cli.out.as_path();
    let seed = cli.seed;

    match cli.command {
        Command::Spectrum { graph, bins } => spectrum(&graph, bins, seed, out),
        Command::Trajectory {
            graph,
            s,
            layers,
            channels,
            k_onehot,
            x0_in_m,
            svg,
        } => {
            let base = graph.setup().unwrap_or(TrajectorySetup {
                n: 0,
                p: f64::NAN,
                s: 1.0,
                layers: 10,
                channels: 32,
                k_onehot: 10,
            });
            let setup = TrajectorySetup {
                s: s.unwrap_or(base.s),
                layers: layers.unwrap_or(base.layers),
                channels: channels.unwrap_or(base.channels),
                k_onehot: k_onehot.unwrap_or(base.k_onehot),
                ..base
            };
            trajectory(&graph, setup, x0_in_m, svg, seed, &tol, out)
        }
        Command::Field {
            case,
            w,
            sweep,
            resolution,
            extent,
        } => {
            let weights = if sweep {
                FieldCase::WEIGHT_SWEEP.to_vec()
            } else if w.is_empty() {
                vec![FieldCase::DEFAULT_WEIGHT]
            } else {
                w
            };
            let grid = Grid {
                x_min: -extent,
                x_max: extent,
                y_min: -extent,
                y_max: extent,
                resolution,
            };
            field(case, &weights, &grid, out)
        }
        Command::Threshold { n, p, eps } => threshold(n, p, eps, out),
        Command::Concentration { n, p, eps, trials } => {
            let t = ThresholdInputs::new(n, p, eps)?;
            let report = er_concentration_check(&t, trials, seed)?;
            let allowed = (eps * trials as f64).floor() as usize;
            let passed = report.violations <= allowed;
            let mut value = serde_json::to_value(&report).expect("report serializes");
            value["allowed_violations"] = json!(allowed);
            value["passed"] = json!(passed);
            write_json(&out.join("concentration.json"), &value)?;
            println!("{}", report.summary_line());
            println!("allowed violations: {allowed}");
            Ok(exit_for(passed))
        }
        Command::Markov {
            graph,
            states,
            steps,
        } => markov(&graph, states, steps, seed, &tol, out),
        Command::Counterexample { steps, trials } => counterexample(steps, trials, seed, &tol, out),
        Command::Verify {
            checks,
            trials,
            bypass_assumptions,
        } => {
            let selected = if checks.is_empty() {
                Check::ALL.to_vec()
            } else {
                checks
                    .iter()
                    .map(|c| c.parse())
                    .collect::<Result<Vec<Check>, _>>()?
            };
            let config = VerifyConfig {
                seed,
                trials,
                bypass_assumptions,
                tolerances: tol,
            };
            verify(&selected, &config, out)
        }
    }
}

fn exit_for(passed: bool) -> ExitCode {
    if passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json(path: &Path, value: &Value) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value).expect("json serializes");
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn spectrum(graph: &GraphArgs, bins: usize, seed: u64, out: &Path) -> Result<ExitCode, Error> {
    let (g, _) = graph.build(seed)?;
    let laplacian = eigenvalues(&augmented_laplacian(&g))?;
    let components = connected_components(&g).m_count();
    // P = I − Δ̃, so P's ascending spectrum is 1 − Δ̃'s descending one.
    let prop: Vec<f64> = laplacian.iter().rev().map(|v| 1.0 - v).collect();
    let lambda = rate_from_sorted(&prop, components);

    write_spectrum_csv(create(&out.join("spectrum.csv"))?, &laplacian)?;
    write_histogram_csv(
        create(&out.join("histogram.csv"))?,
        &spectral_histogram(&laplacian, bins)?,
    )?;
    let summary = json!({
        "n": g.n(),
        "m_edges": g.edge_count(),
        "components": components,
        "lambda": lambda,
        "lambda_inv": if lambda > 0.0 { json!(1.0 / lambda) } else { Value::Null },
    });
    write_json(&out.join("summary.json"), &summary)?;
    println!(
        "n={} edges={} components={} lambda={}",
        g.n(),
        g.edge_count(),
        components,
        fmt_f64(lambda)
    );
    Ok(ExitCode::SUCCESS)
}

fn trajectory(
    graph: &GraphArgs,
    mut setup: TrajectorySetup,
    x0_in_m: bool,
    svg: bool,
    seed: u64,
    tol: &Tolerances,
    out: &Path,
) -> Result<ExitCode, Error> {
    let (g, p) = graph.build(seed)?;
    setup.n = g.n();
    setup.p = p.unwrap_or(f64::NAN);
    let run = run_trajectory_on(g, &setup, seed, x0_in_m, tol)?;
    let t = &run.trajectory;
    write_trajectory_csv(create(&out.join("trajectory.csv"))?, t)?;
    if svg {
        match trajectory_svg(t) {
            Some(text) => fs::write(out.join("trajectory.svg"), text)?,
            None => eprintln!("initial distance is zero; no chart written"),
        }
    }
    let s_lambda = run.weights.sup() * t.lambda;
    let violations = t.bound_violations(tol.lemma_slack);
    let summary = json!({
        "n": setup.n,
        "p": p,
        "edges": run.graph.edge_count(),
        "s": setup.s,
        "layers": setup.layers,
        "channels": setup.channels,
        "k_onehot": setup.k_onehot,
        "x0_in_m": x0_in_m,
        "lambda": t.lambda,
        "s_lambda": s_lambda,
        "s_lambda_below_one": s_lambda < 1.0,
        "layer_products": run.weights.layer_products(),
        "bound_violations": violations,
    });
    write_json(&out.join("trajectory_summary.json"), &summary)?;
    println!(
        "lambda={} s*lambda={} below one: {}",
        fmt_f64(t.lambda),
        fmt_f64(s_lambda),
        if s_lambda < 1.0 { "yes" } else { "no" }
    );
    println!("bound violations: {}", violations.len());
    Ok(ExitCode::SUCCESS)
}

fn field(case: u8, weights: &[f64], grid: &Grid, out: &Path) -> Result<ExitCode, Error> {
    let case = FieldCase::from_index(case)?;
    let (p, basis) = (case.matrix(), case.basis());
    let mut verdicts = Vec::new();
    for &w in weights {
        let samples = vector_field(&p, w, &basis, grid)?;
        write_field_csv(create(&out.join(format!("field_w{w}.csv")))?, &samples)?;
        let increases = samples
            .iter()
            .filter(|s| s.d_after > s.d_before + 1e-12)
            .count();
        let uniform = increases == 0;
        println!(
            "W={w}: uniform decrease: {}",
            if uniform { "yes" } else { "no" }
        );
        verdicts
            .push(json!({ "w": w, "uniform_decrease": uniform, "increasing_points": increases }));
    }
    let summary = json!({
        "case": case as u8 + 1,
        "matrix": p.as_matrix().as_slice(),
        "basis": basis.vectors().as_slice(),
        "grid": { "min": grid.x_min, "max": grid.x_max, "resolution": grid.resolution },
        "verdicts": verdicts,
    });
    write_json(&out.join("field_summary.json"), &summary)?;
    Ok(ExitCode::SUCCESS)
}

fn threshold(n: usize, p: f64, eps: f64, out: &Path) -> Result<ExitCode, Error> {
    let t = ThresholdInputs::new(n, p, eps)?;
    let s0 = er_threshold_s0(&t);
    let chung = chung_quantities(&t)?;
    let (center, half_width) = concentration_band(&t);
    let summary = json!({
        "n": n, "p": p, "eps": eps,
        "expected_degree": t.expected_degree(),
        "s0": s0,
        "k_eps": chung.k_eps,
        "l": chung.l_npe,
        "inverse_l": chung.inverse_l,
        "applicable": chung.applicable,
        "band_center": center,
        "band_half_width": half_width,
    });
    write_json(&out.join("threshold.json"), &summary)?;
    println!("s0={}", fmt_f64(s0));
    Ok(ExitCode::SUCCESS)
}

fn markov(
    graph: &GraphArgs,
    states: usize,
    steps: usize,
    seed: u64,
    tol: &Tolerances,
    out: &Path,
) -> Result<ExitCode, Error> {
    let chain = if graph.is_set() {
        lazy_symmetric_chain(&graph.build(seed)?.0)?
    } else {
        random_markov_chain(states, derive_seed(seed, 0))?
    };
    let n = chain.dim();
    // Start concentrated on state 0.
    let mut x0 = vec![0.0; n];
    x0[0] = 1.0;
    let trace = markov_converge(&chain, &x0, steps, tol.stochastic)?;

    let mut csv = String::from("step,d_M,bound,total_variation\n");
    for l in 0..trace.distances.len() {
        csv.push_str(&format!(
            "{l},{},{},{}\n",
            fmt_f64(trace.distances[l]),
            fmt_f64(trace.bounds[l]),
            fmt_f64(trace.total_variation[l])
        ));
    }
    fs::write(out.join("markov.csv"), csv)?;
    let violations = trace
        .distances
        .iter()
        .zip(&trace.bounds)
        .filter(|(d, b)| **d > **b + 1e-10)
        .count();
    let summary = json!({
        "states": n,
        "steps": steps,
        "lambda": trace.lambda,
        "bound_violations": violations,
        "final_state": trace.final_state,
    });
    write_json(&out.join("markov_summary.json"), &summary)?;
    println!(
        "lambda={} bound violations: {violations}",
        fmt_f64(trace.lambda)
    );
    Ok(exit_for(violations == 0))
}

fn counterexample(
    steps: usize,
    trials: usize,
    seed: u64,
    tol: &Tolerances,
    out: &Path,
) -> Result<ExitCode, Error> {
    let mut csv = String::from("trial,step,rank\n");
    let mut full_rank = 0;
    for i in 0..trials {
        let ranks =
            counterexample_rank_trace(steps, derive_seed(seed, i as u64), tol.rank_relative)?;
        if ranks.iter().all(|&k| k == 3) {
            full_rank += 1;
        }
        for (step, k) in ranks.iter().enumerate() {
            csv.push_str(&format!("{i},{step},{k}\n"));
        }
    }
    fs::write(out.join("rank_trace.csv"), csv)?;
    let control = rank_control_trace(steps, tol.rank_relative)?;
    let summary = json!({
        "steps": steps,
        "trials": trials,
        "rank3_every_step": full_rank,
        "control_ranks": control,
        "rank_relative": tol.rank_relative,
    });
    write_json(&out.join("counterexample_summary.json"), &summary)?;
    println!("rank 3 at every step in {full_rank}/{trials} inputs");
    println!("control ranks: {control:?}");
    Ok(ExitCode::SUCCESS)
}

fn verify(checks: &[Check], config: &VerifyConfig, out: &Path) -> Result<ExitCode, Error> {
    let dir = out.join("reports");
    fs::create_dir_all(&dir)?;
    let results = run_checks(checks, config)?;
    let mut all_passed = true;
    let mut index = Vec::new();
    for r in &results {
        println!("{}", r.summary_line());
        write_json(&dir.join(format!("{}.json", r.check.name())), &r.to_json())?;
        all_passed &= r.passed();
        index.push(json!({
            "check": r.check.name(),
            "violations": r.report.violations,
            "allowed_violations": r.allowed_violations,
            "passed": r.passed(),
        }));
    }
    let summary = json!({
        "seed": config.seed,
        "bypass_assumptions": config.bypass_assumptions,
        "tolerances": config.tolerances,
        "checks": index,
        "passed": all_passed,
    });
    write_json(&dir.join("summary.json"), &summary)?;
    println!(
        "{}",
        if all_passed {
            "all checks passed"
        } else {
            "violations found"
        }
    );
    Ok(exit_for(all_passed))
}
