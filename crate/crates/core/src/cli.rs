//! Command-line surface. Every command builds its artifacts in memory and
//! writes them through [`write_results`], so failures leave `--out` untouched.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use num_complex::Complex;
use sha2::{Digest, Sha256};

use crate::case_io::{build_scenario, build_system, load_case, serialize_case, CaseFile};
use crate::devices::DeviceModel;
use crate::jacobian::{jacobian_at, reference_input_matrix, JacobianReport, SensitivityMethod};
use crate::monotone::{
    check_theorem1, classify_regime, gershgorin_certificate, match_voltage_template, ordering_check,
    ordering_check_series, upsilon_scan, voltage_subsystem, OrderingReport, TemplateMatch,
};
use crate::results::{write_results, Artifacts, CsvTable, PlotKind};
use crate::simulator::{run, run_linear_demo, RunOptions, Scenario, TimeSeries};
use crate::system::{init_equilibrium, Equilibrium, PowerSystem};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "VOLTMONO_OUT";

#[derive(Parser, Debug)]
#[command(name = "voltmono", version, about = "Voltage-dynamics simulation and monotonicity analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Bundled case name (smib, case39_sg, case39_gfm) or path to a case file.
    #[arg(long)]
    case: String,
    /// Output directory [default: $VOLTMONO_OUT/<command> or ./voltmono-out/<command>].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario and write the recorded signals.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenario: String,
        /// Replace exciter dynamics by their quasi-steady value.
        #[arg(long)]
        reduced: bool,
        /// Use the approximate voltage-sensitivity route.
        #[arg(long)]
        approx: bool,
        /// Write every available signal instead of the scenario's record list.
        #[arg(long)]
        all_signals: bool,
    },
    /// Jacobians and sign structure at the equilibrium or at a time along a scenario.
    Jacobian {
        #[command(flatten)]
        common: Common,
        #[arg(long, conflicts_with = "equilibrium", requires = "scenario")]
        at: Option<f64>,
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        equilibrium: bool,
        #[arg(long)]
        approx: bool,
        #[arg(long, default_value_t = 1e-6)]
        eps: f64,
    },
    /// Voltage-subsystem sign template along a scenario.
    Signpattern {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 1e-6)]
        eps: f64,
        /// Time window `a,b` for the match fraction [default: whole run].
        #[arg(long, value_delimiter = ',')]
        window: Option<Vec<f64>>,
    },
    /// Structural monotonicity verdict plus trajectory ordering of two scenarios.
    MonotoneCheck {
        #[command(flatten)]
        common: Common,
        /// Scenario expected to dominate, then the one expected to be dominated.
        #[arg(long, num_args = 2, value_names = ["HI", "LO"])]
        scenario_pair: Vec<String>,
        #[arg(long, value_delimiter = ',', required = true)]
        signals: Vec<String>,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, value_delimiter = ',')]
        window: Option<Vec<f64>>,
        #[arg(long, default_value_t = 1e-9)]
        eps: f64,
    },
    /// Homotopy scan between two reactive load sheds.
    LoadshedScan {
        #[command(flatten)]
        common: Common,
        /// External bus number of the shed load.
        #[arg(long)]
        bus: u32,
        /// Smaller shed, reactive power in p.u.
        #[arg(long)]
        shed_lo: f64,
        /// Larger shed, reactive power in p.u.
        #[arg(long)]
        shed_hi: f64,
        #[arg(long, default_value_t = 20)]
        sigma_steps: usize,
        #[arg(long, default_value_t = 2.0)]
        t_end: f64,
        #[arg(long, default_value_t = 0.001)]
        dt: f64,
        /// Spacing of the time samples where the scan is evaluated.
        #[arg(long, default_value_t = 0.1)]
        sample_step: f64,
        /// Output buses [default: the shed bus].
        #[arg(long, value_delimiter = ',')]
        output_bus: Vec<u32>,
    },
    /// Step responses of the three-state linear example.
    LinearDemo {
        #[arg(long, value_delimiter = ',', default_value = "1,2")]
        scales: Vec<f64>,
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
        #[arg(long, default_value_t = 60.0)]
        t_end: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full versus exciter-reduced trajectories of a scenario.
    Reduce {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenario: String,
    },
    /// Regime, template and stability certificate at equilibrium for scaled exciter gains.
    RegimeSweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,1,2,4")]
        gain_scales: Vec<f64>,
        #[arg(long, default_value_t = 1e-6)]
        eps: f64,
    },
}

/// Failure of a command, reported as one `error kind=<kind> message="<text>"` line.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    fn new(kind: &'static str, message: impl ToString) -> Self {
        CliError { kind, message: message.to_string() }
    }

    pub fn line(&self) -> String {
        format!("error kind={} message={:?}", self.kind, self.message.replace('\n', " "))
    }
}

type CliResult<T> = Result<T, CliError>;

/// Runs the command line `argv` (including the program name) and returns the exit code.
pub fn cli_main<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let args: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli.command, &args) {
        Ok(summary) => {
            print!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("{}", e.line());
            1
        }
    }
}

fn window_arg(w: Option<Vec<f64>>) -> CliResult<Option<(f64, f64)>> {
    match w.as_deref() {
        None => Ok(None),
        Some([a, b]) if a <= b => Ok(Some((*a, *b))),
        Some(_) => Err(CliError::new("argument", "--window expects `a,b` with a <= b")),
    }
}

fn out_dir(out: Option<PathBuf>, command: &str) -> PathBuf {
    out.unwrap_or_else(|| {
        std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("voltmono-out")).join(command)
    })
}

struct Loaded {
    case: CaseFile,
    eq: Equilibrium<f64>,
    hash: String,
}

fn load(name: &str) -> CliResult<Loaded> {
    let case = load_case(name).map_err(|e| CliError::new("case", e))?;
    let sys = build_system::<f64>(&case).map_err(|e| CliError::new("case", e))?;
    let eq = init_equilibrium(&sys).map_err(|e| CliError::new("equilibrium", e))?;
    let hash = hex::encode(Sha256::digest(serialize_case(&case).as_bytes()));
    Ok(Loaded { case, eq, hash })
}

fn scenario(l: &Loaded, name: &str) -> CliResult<Scenario<f64>> {
    build_scenario(&l.case, name).map_err(|e| CliError::new("scenario", e))
}

fn simulate_ok(eq: &Equilibrium<f64>, sc: &Scenario<f64>, opts: RunOptions) -> CliResult<TimeSeries<f64>> {
    let ts = run(eq, sc, opts).map_err(|e| CliError::new("simulation", e))?;
    match &ts.error {
        Some(e) => Err(CliError::new("simulation", format!("scenario `{}`: {e}", sc.name))),
        None => Ok(ts),
    }
}

fn base_meta(a: &mut Artifacts, command: &str, args: &[String], hash: Option<&str>) {
    a.meta("tool", concat!("voltmono ", env!("CARGO_PKG_VERSION")));
    a.meta("command", command);
    a.meta("arguments", args.join(" "));
    if let Some(h) = hash {
        a.meta("case_sha256", h);
    }
}

fn signal_table(ts: &TimeSeries<f64>, names: &[String]) -> CliResult<CsvTable> {
    let cols = names
        .iter()
        .map(|n| ts.signal(n).map(|v| (n.clone(), v)).map_err(|e| CliError::new("signal", e)))
        .collect::<CliResult<Vec<_>>>()?;
    Ok(CsvTable::from_columns("t", &ts.times, &cols))
}

fn matrix_table(m: &DMatrix<f64>, row_labels: &[String], col_labels: &[String]) -> String {
    let mut s = String::from("row");
    for c in col_labels {
        let _ = write!(s, ",{c}");
    }
    s.push('\n');
    for (r, label) in row_labels.iter().enumerate() {
        s.push_str(label);
        for c in 0..m.ncols() {
            let _ = write!(s, ",{}", m[(r, c)]);
        }
        s.push('\n');
    }
    s
}

fn device_labels(sys: &PowerSystem<f64>) -> Vec<String> {
    let labels = sys.state_labels();
    (0..sys.devices.len()).map(|k| labels[PowerSystem::<f64>::emf_index(k)].clone()).collect()
}

fn subsystem_labels(sys: &PowerSystem<f64>) -> Vec<String> {
    let labels = sys.state_labels();
    let p = sys.devices.len();
    (0..p)
        .map(|k| labels[PowerSystem::<f64>::exc_index(k)].clone())
        .chain((0..p).map(|k| labels[PowerSystem::<f64>::emf_index(k)].clone()))
        .collect()
}

fn template_text(m: &TemplateMatch, labels: &[String]) -> String {
    let mut s =
        format!("template {}\nmismatches {}\n", if m.matches { "match" } else { "mismatch" }, m.mismatches.len());
    for mm in &m.mismatches {
        let _ = writeln!(
            s,
            "  d({})/d({}) expected {} got {} value {:e}",
            labels[mm.row],
            labels[mm.col],
            mm.expected.symbol(),
            mm.actual.symbol(),
            mm.value
        );
    }
    s.push_str("sign pattern (rows/cols: exciter states then internal voltages)\n");
    s.push_str(&m.signs.render());
    s
}

fn ordering_text(r: &OrderingReport) -> String {
    let mut s = format!(
        "ordering {}\nworst_violation {:e}\ntol {:e}\nwindow {},{}\n",
        if r.holds { "holds" } else { "violated" },
        r.worst_violation,
        r.tol,
        r.window.0,
        r.window.1
    );
    if let Some(t) = r.first_violation_time {
        let _ = writeln!(s, "first_violation_time {t}");
    }
    for (k, v) in &r.metadata {
        let _ = writeln!(s, "{k} {v}");
    }
    for sig in &r.signals {
        let _ = writeln!(s, "signal {} worst {:e}", sig.name, sig.worst_violation);
    }
    s
}

fn jacobian_report(sys: &PowerSystem<f64>, rep: &JacobianReport<f64>, eps: f64) -> (String, bool) {
    let p = sys.devices.len();
    let tm = match_voltage_template(&rep.j_full, p, eps, rep.t);
    let regime = classify_regime(&rep.j_reduced, 0.0);
    let g = gershgorin_certificate(&rep.j_reduced);
    let mut s = format!("t {}\nmethod {}\n", rep.t, rep.method.as_str());
    s.push_str(&template_text(&tm, &subsystem_labels(sys)));
    let _ = writeln!(
        s,
        "reduced_regime {}\noff_diagonals_small {}\nmax_off_ratio {}\ngershgorin_certified {}\nspectral_abscissa {}",
        regime.regime.as_str(),
        regime.off_diagonals_small,
        regime.max_off_ratio,
        g.certified_stable,
        g.spectral_abscissa
    );
    (s, tm.matches)
}

fn execute(cmd: Command, args: &[String]) -> CliResult<String> {
    let io = |e: std::io::Error| CliError::new("io", e);
    let mut a = Artifacts::default();
    let (name, out, summary) = match cmd {
        Command::Simulate { common, scenario: sname, reduced, approx, all_signals } => {
            let l = load(&common.case)?;
            let sc = scenario(&l, &sname)?;
            let method = if approx { SensitivityMethod::Approx } else { SensitivityMethod::Exact };
            let ts = simulate_ok(&l.eq, &sc, RunOptions { reduced, method })?;
            let names = if all_signals || sc.record.is_empty() { ts.available_signals() } else { sc.record.clone() };
            a.table("timeseries", signal_table(&ts, &names)?, Some(PlotKind::TimeSeries));
            let mut ev = String::from("time,kind\n");
            for e in &ts.events {
                let _ = writeln!(ev, "{},{:?}", e.time, e.kind);
            }
            a.report("events.csv", ev);
            let p = ts.system.devices.len();
            let matched =
                ts.jacobians.iter().filter(|j| match_voltage_template(&j.j_full, p, 1e-6, j.t).matches).count();
            let summary = format!(
                "samples {}\nsignals {}\njacobian_snapshots {}\ntemplate_matches {}\n",
                ts.len(),
                names.len(),
                ts.jacobians.len(),
                matched
            );
            a.report("summary", summary.clone());
            base_meta(&mut a, "simulate", args, Some(&l.hash));
            ("simulate", common.out, summary)
        }
        Command::Jacobian { common, at, scenario: sname, equilibrium: _, approx, eps } => {
            let l = load(&common.case)?;
            let method = if approx { SensitivityMethod::Approx } else { SensitivityMethod::Exact };
            let (sys, x, v, t) = match (at, sname) {
                (Some(t), Some(sn)) => {
                    let mut sc = scenario(&l, &sn)?;
                    if t > sc.t_end || t < 0.0 {
                        return Err(CliError::new("argument", format!("--at {t} is outside [0, {}]", sc.t_end)));
                    }
                    sc.t_end = t;
                    sc.jacobian_stride = 0;
                    let ts = simulate_ok(&l.eq, &sc, RunOptions::default())?;
                    // replay the events to obtain the system as configured at `t`
                    let mut sys = l.eq.system.clone();
                    for e in sc.events.iter().filter(|e| e.time <= t) {
                        crate::simulator::apply_event(&mut sys, &e.kind).map_err(|e| CliError::new("scenario", e))?;
                    }
                    let last = ts.len() - 1;
                    (sys, ts.states[last].clone(), ts.voltages[last].clone(), ts.times[last])
                }
                _ => (l.eq.system.clone(), l.eq.x.clone(), l.eq.v.clone(), 0.0),
            };
            let rep = jacobian_at(&sys, x.as_slice(), &v, method, t).map_err(|e| CliError::new("jacobian", e))?;
            let labels = sys.state_labels();
            let dev = device_labels(&sys);
            let buses: Vec<String> = sys.net.buses().iter().map(|b| format!("vm@{}", b.number)).collect();
            a.report("j_full.csv", matrix_table(&rep.j_full, &labels, &labels));
            a.report("j_reduced.csv", matrix_table(&rep.j_reduced, &dev, &dev));
            a.report("dvmag_de.csv", matrix_table(&rep.dvmag_de, &buses, &dev));
            let (text, matched) = jacobian_report(&sys, &rep, eps);
            a.report("report", text);
            base_meta(&mut a, "jacobian", args, Some(&l.hash));
            ("jacobian", common.out, format!("template {}\n", if matched { "match" } else { "mismatch" }))
        }
        Command::Signpattern { common, scenario: sname, eps, window } => {
            let l = load(&common.case)?;
            let mut sc = scenario(&l, &sname)?;
            if sc.jacobian_stride == 0 {
                sc.jacobian_stride = 10;
            }
            let ts = simulate_ok(&l.eq, &sc, RunOptions::default())?;
            let sys = &ts.system;
            let p = sys.devices.len();
            let labels = subsystem_labels(sys);
            let shown: Vec<(usize, usize)> = (0..2.min(p))
                .flat_map(|i| (0..2.min(p)).flat_map(move |k| [(i, k), (i, p + k), (p + i, k), (p + i, p + k)]))
                .collect();
            let mut header = vec!["t".to_string(), "match".to_string(), "mismatches".to_string()];
            header.extend(shown.iter().map(|&(r, c)| format!("d({})/d({})", labels[r], labels[c])));
            let mut table = CsvTable::new(header);
            let (w0, w1) = window_arg(window)?.unwrap_or((0.0, sc.t_end));
            let (mut inside, mut ok) = (0usize, 0usize);
            for j in &ts.jacobians {
                let m = match_voltage_template(&j.j_full, p, eps, j.t);
                let sub = voltage_subsystem(&j.j_full, p);
                let mut row = vec![j.t, f64::from(u8::from(m.matches)), m.mismatches.len() as f64];
                row.extend(shown.iter().map(|&(r, c)| sub[(r, c)]));
                table.push(row);
                if j.t >= w0 - 1e-12 && j.t <= w1 + 1e-12 {
                    inside += 1;
                    ok += usize::from(m.matches);
                }
            }
            let frac = if inside > 0 { ok as f64 / inside as f64 } else { f64::NAN };
            a.table("signs", table, Some(PlotKind::SignVsTime));
            let summary = format!("snapshots {inside}\nmatching {ok}\nmatch_fraction {frac}\nwindow {w0},{w1}\n");
            a.report("summary", summary.clone());
            base_meta(&mut a, "signpattern", args, Some(&l.hash));
            ("signpattern", common.out, summary)
        }
        Command::MonotoneCheck { common, scenario_pair, signals, tol, window, eps } => {
            let l = load(&common.case)?;
            let (s_hi, s_lo) = (scenario(&l, &scenario_pair[0])?, scenario(&l, &scenario_pair[1])?);
            let rep = jacobian_at(&l.eq.system, l.eq.x.as_slice(), &l.eq.v, SensitivityMethod::Exact, 0.0)
                .map_err(|e| CliError::new("jacobian", e))?;
            let verdict = check_theorem1(&rep.j_reduced, &reference_input_matrix(&l.eq.system), &rep.dvmag_de, eps);
            let hi = simulate_ok(&l.eq, &s_hi, RunOptions::default())?;
            let lo = simulate_ok(&l.eq, &s_lo, RunOptions::default())?;
            let w = window_arg(window)?.unwrap_or((0.0, s_hi.t_end.min(s_lo.t_end)));
            let mut ord = ordering_check(&hi, &lo, &signals, tol, w).map_err(|e| CliError::new("ordering", e))?;
            ord.metadata.push(("scenario_hi".into(), s_hi.name.clone()));
            ord.metadata.push(("scenario_lo".into(), s_lo.name.clone()));
            let verdict = verdict.with_ordering_evidence(&ord);
            let mut s = format!(
                "verdict {}\nmetzler_state {}\ninput_nonneg {}\noutput_nonneg {}\nviolations {}\n",
                verdict.verdict.as_str(),
                verdict.is_metzler_state,
                verdict.input_nonneg,
                verdict.output_nonneg,
                verdict.violating_entries.len()
            );
            s.push_str(&ordering_text(&ord));
            let mut vio = String::from("matrix,row,col,value\n");
            for v in &verdict.violating_entries {
                let _ = writeln!(vio, "{},{},{},{}", v.matrix, v.row, v.col, v.value);
            }
            a.report("violations.csv", vio);
            a.report("report", s);
            let mut cols = Vec::new();
            for n in &signals {
                let h = hi.signal(n).map_err(|e| CliError::new("signal", e))?;
                let lw = lo.signal(n).map_err(|e| CliError::new("signal", e))?;
                cols.push((format!("{n}:{}", s_hi.name), h));
                cols.push((format!("{n}:{}", s_lo.name), lw));
            }
            a.table("pair", CsvTable::from_columns("t", &hi.times, &cols), Some(PlotKind::TimeSeries));
            base_meta(&mut a, "monotone-check", args, Some(&l.hash));
            let summary = format!(
                "verdict {}\nordering {}\n",
                verdict.verdict.as_str(),
                if ord.holds { "holds" } else { "violated" }
            );
            ("monotone-check", common.out, summary)
        }
        Command::LoadshedScan { common, bus, shed_lo, shed_hi, sigma_steps, t_end, dt, sample_step, output_bus } => {
            let l = load(&common.case)?;
            let sys = &l.eq.system;
            let idx = |n: u32| sys.bus_index(n).ok_or_else(|| CliError::new("argument", format!("unknown bus {n}")));
            let b = idx(bus)?;
            let outs = if output_bus.is_empty() {
                vec![b]
            } else {
                output_bus.iter().map(|&n| idx(n)).collect::<CliResult<_>>()?
            };
            if !(sample_step > 0.0) || sigma_steps == 0 {
                return Err(CliError::new("argument", "sample step and sigma steps must be positive"));
            }
            let n_samples = (t_end / sample_step + 1e-9).floor() as usize;
            let samples: Vec<f64> = (0..=n_samples).map(|k| ((k as f64 * sample_step) / dt).round() * dt).collect();
            let tmpl = Scenario::new("loadshed", t_end, dt);
            let scan = upsilon_scan(
                &l.eq,
                &tmpl,
                b,
                Complex::new(0.0, shed_hi),
                Complex::new(0.0, shed_lo),
                &samples,
                sigma_steps,
                &outs,
            )
            .map_err(|e| CliError::new("simulation", e))?;
            let cols: Vec<(String, Vec<f64>)> = scan
                .output_buses
                .iter()
                .zip(&scan.upsilon_prime)
                .map(|(n, u)| (format!("upsilon@{n}"), u.clone()))
                .collect();
            a.table(
                "upsilon",
                CsvTable::from_columns("sigma", &scan.sigma_grid, &cols),
                Some(PlotKind::UpsilonVsSigma),
            );
            let summary = format!(
                "min_upsilon {}\nintegral_lower_bound {}\npositive {}\nsigma_steps {}\nsamples {}\n",
                scan.min_value,
                scan.integral_lower_bound,
                scan.min_value > 0.0,
                sigma_steps,
                samples.len()
            );
            a.report("report", summary.clone());
            base_meta(&mut a, "loadshed-scan", args, Some(&l.hash));
            ("loadshed-scan", common.out, summary)
        }
        Command::LinearDemo { scales, dt, t_end, out } => {
            if scales.is_empty() || !(dt > 0.0) || !(t_end > 0.0) {
                return Err(CliError::new("argument", "need at least one scale and positive dt and t_end"));
            }
            let runs: Vec<_> = scales.iter().map(|&s| run_linear_demo::<f64>(s, dt, t_end)).collect();
            let cols_of = |r: &crate::simulator::LinearSeries<f64>| {
                let mut c: Vec<(String, Vec<f64>)> =
                    (0..3).map(|i| (format!("x{}", i + 1), r.states.iter().map(|x| x[i]).collect())).collect();
                c.push(("y".into(), r.output.clone()));
                c
            };
            let mut s = String::new();
            for r in &runs {
                a.table(
                    &format!("linear_scale_{}", r.input_scale),
                    CsvTable::from_columns("t", &r.times, &cols_of(r)),
                    Some(PlotKind::TimeSeries),
                );
            }
            let mut order: Vec<usize> = (0..runs.len()).collect();
            order.sort_by(|&i, &k| scales[i].total_cmp(&scales[k]));
            let mut all_hold = true;
            for w in order.windows(2) {
                let (lo, hi) = (&runs[w[0]], &runs[w[1]]);
                let mut rep =
                    ordering_check_series(&hi.times, &cols_of(hi), &lo.times, &cols_of(lo), 1e-9, (0.0, t_end))
                        .map_err(|e| CliError::new("ordering", e))?;
                rep.metadata.push(("scales".into(), format!("{} >= {}", hi.input_scale, lo.input_scale)));
                all_hold &= rep.holds;
                s.push_str(&ordering_text(&rep));
            }
            for r in &runs {
                let x = r.states.last().unwrap();
                let _ = writeln!(s, "final_state scale {} {} {} {}", r.input_scale, x[0], x[1], x[2]);
            }
            a.report("report", s);
            base_meta(&mut a, "linear-demo", args, None);
            ("linear-demo", out, format!("ordering {}\n", if all_hold { "holds" } else { "violated" }))
        }
        Command::Reduce { common, scenario: sname } => {
            let l = load(&common.case)?;
            let mut sc = scenario(&l, &sname)?;
            sc.jacobian_stride = 0;
            let full = simulate_ok(&l.eq, &sc, RunOptions::default())?;
            let red = simulate_ok(&l.eq, &sc, RunOptions { reduced: true, ..RunOptions::default() })?;
            let names = device_labels(&l.eq.system);
            a.table("full", signal_table(&full, &names)?, Some(PlotKind::TimeSeries));
            a.table("reduced", signal_table(&red, &names)?, Some(PlotKind::TimeSeries));
            let mut s = String::new();
            let mut sup = 0.0f64;
            for n in &names {
                let (f, r) = (full.signal(n).unwrap(), red.signal(n).unwrap());
                let g = f.iter().zip(&r).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                sup = sup.max(g);
                let _ = writeln!(s, "gap {n} {g:e}");
            }
            let summary = format!("sup_gap {sup:e}\n");
            a.report("report", summary.clone() + &s);
            base_meta(&mut a, "reduce", args, Some(&l.hash));
            ("reduce", common.out, summary)
        }
        Command::RegimeSweep { common, gain_scales, eps } => {
            let case = load_case(&common.case).map_err(|e| CliError::new("case", e))?;
            let base = build_system::<f64>(&case).map_err(|e| CliError::new("case", e))?;
            let hash = hex::encode(Sha256::digest(serialize_case(&case).as_bytes()));
            let mut table = CsvTable::new(
                [
                    "gain_scale",
                    "template_match",
                    "cooperative",
                    "competitive",
                    "max_off_ratio",
                    "gershgorin_certified",
                    "spectral_abscissa",
                ]
                .map(String::from)
                .to_vec(),
            );
            let mut s = String::new();
            for &k in &gain_scales {
                let mut sys = base.clone();
                for d in &mut sys.devices {
                    match &mut d.model {
                        DeviceModel::Sg(p) => p.ka *= k,
                        DeviceModel::Gfm(p) => p.ku *= k,
                    }
                }
                let eq = init_equilibrium(&sys).map_err(|e| CliError::new("equilibrium", e))?;
                let rep = jacobian_at(&eq.system, eq.x.as_slice(), &eq.v, SensitivityMethod::Exact, 0.0)
                    .map_err(|e| CliError::new("jacobian", e))?;
                let tm = match_voltage_template(&rep.j_full, sys.devices.len(), eps, 0.0);
                let r = classify_regime(&rep.j_reduced, 0.0);
                let g = gershgorin_certificate(&rep.j_reduced);
                let flag = |b: bool| f64::from(u8::from(b));
                table.push(vec![
                    k,
                    flag(tm.matches),
                    flag(r.regime == crate::monotone::Regime::Cooperative),
                    flag(r.regime == crate::monotone::Regime::Competitive),
                    r.max_off_ratio,
                    flag(g.certified_stable),
                    g.spectral_abscissa,
                ]);
                let _ = writeln!(
                    s,
                    "scale {k} template {} regime {} certified {} abscissa {}",
                    if tm.matches { "match" } else { "mismatch" },
                    r.regime.as_str(),
                    g.certified_stable,
                    g.spectral_abscissa
                );
            }
            a.table("regime", table, None);
            a.report("report", s.clone());
            base_meta(&mut a, "regime-sweep", args, Some(&hash));
            ("regime-sweep", common.out, s)
        }
    };
    let dir = out_dir(out, name);
    let bundle = write_results(&dir, &a).map_err(io)?;
    Ok(format!("{summary}out {}\n", bundle.dir.display()))
}
