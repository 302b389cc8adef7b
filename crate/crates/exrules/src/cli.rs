//! Command-line driver.
//!
//! Exit codes: 0 success, 64 usage, 65 unparsable or unsuitable input, 70
//! internal error. `entails` answers with 0 (entailed), 1 (not entailed) or 2
//! (bound reached); `analyze` with 0 when every check passed and 1 otherwise.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use exrules_core::{
    chain_decomposition, chase_to_depth, clique_witness, compare_critical, compile, decide_bcq, decide_bcq_bounded,
    end_instance, flood_report, verify_arithmetic, Answer, Binding, Chase, ChaseConfig, CompiledRuleSet, Instance,
    KnowledgeBase, Rule, RunOutcome, StructureReport, Term, TraceMode, TriggerOrder, Variant, Vocabulary,
};
use serde_json::json;

use crate::machine::parse_machine;
use crate::syntax::{parse_instance, parse_query, parse_rules, render_instance, render_rules, ParseError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_PARSE: i32 = 65;
pub const EXIT_INTERNAL: i32 = 70;

#[derive(Debug, Parser)]
#[command(name = "exrules", version, about = "Chase engine and entailment tools for existential rules")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a chase variant and print the resulting instance.
    Chase(ChaseArgs),
    /// Decide whether a Boolean conjunctive query is entailed.
    Entails(EntailsArgs),
    /// Compile a three-counter machine into a rule file.
    #[command(name = "compile-3cm")]
    Compile3cm(CompileArgs),
    /// Run a three-counter machine and iterate its encoding function.
    #[command(name = "simulate-3cm")]
    Simulate3cm(SimulateArgs),
    /// Check chase output of a compiled rule set against its expected structure.
    Analyze(AnalyzeArgs),
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: exrules_core::UnknownVariant| e.to_string())
}

#[derive(Debug, Args)]
struct ChaseArgs {
    #[arg(long)]
    rules: PathBuf,
    #[arg(long)]
    instance: PathBuf,
    /// o, so, r or e.
    #[arg(long, default_value = "so", value_parser = parse_variant)]
    variant: Variant,
    #[arg(long, default_value_t = 100)]
    max_rounds: usize,
    /// Write one line per trigger firing to this file.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Include Datalog firings in the trace.
    #[arg(long, requires = "trace")]
    trace_all: bool,
    /// Print a statistics line to stderr.
    #[arg(long)]
    stats: bool,
    /// Shuffle triggers within each round with this seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Stop once the instance holds more atoms than this.
    #[arg(long)]
    atom_budget: Option<usize>,
    /// Write the result here instead of stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EntailsArgs {
    #[arg(long)]
    rules: PathBuf,
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    query: PathBuf,
    /// Use the terminating procedure for compiled machine rule sets. Other
    /// rule sets fall back to the bounded chase with a warning.
    #[arg(long)]
    class_c: bool,
    #[arg(long, default_value = "so", value_parser = parse_variant)]
    variant: Variant,
    #[arg(long, default_value_t = 100)]
    max_rounds: usize,
}

#[derive(Debug, Args)]
struct CompileArgs {
    /// Machine file (JSON).
    machine: PathBuf,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Machine file (JSON).
    machine: PathBuf,
    #[arg(long, default_value_t = 1000)]
    max_steps: u64,
    /// Print every configuration.
    #[arg(long)]
    trace: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CheckKind {
    Chain,
    Flood,
    Arith,
    Clique,
    Critical,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// A compiled machine rule set.
    #[arg(long, visible_alias = "kb")]
    rules: PathBuf,
    /// Defaults to `End(w).`
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',', required = true)]
    check: Vec<CheckKind>,
    /// Semi-oblivious rounds to chase before checking; oblivious rounds for `critical`.
    #[arg(long, default_value_t = 3)]
    rounds: usize,
    /// Clique size for `clique`.
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Predicate for `clique`.
    #[arg(long, default_value = "R_0")]
    pred: String,
    /// One JSON object per check instead of text lines.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Input(_) => EXIT_PARSE,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

/// Parses `args` (program name first) and runs one command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    match catch_unwind(AssertUnwindSafe(|| dispatch(cli, out, err))) {
        Ok(Ok(code)) => code,
        Ok(Err(e)) => {
            let _ = writeln!(err, "error: {e}");
            e.code()
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .map(String::as_str)
                .or_else(|| panic.downcast_ref::<&str>().copied())
                .unwrap_or("unknown panic");
            let _ = writeln!(err, "internal error: {msg}");
            EXIT_INTERNAL
        }
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<i32> {
    match cli.command {
        Command::Chase(a) => chase(a, out, err),
        Command::Entails(a) => entails(a, out, err),
        Command::Compile3cm(a) => compile_3cm(a, out, err),
        Command::Simulate3cm(a) => simulate_3cm(a, out),
        Command::Analyze(a) => analyze(a, out),
    }
}

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

fn emit(out: &mut dyn Write, text: &str) -> CliResult<()> {
    out.write_all(text.as_bytes()).map_err(|e| CliError::Internal(format!("cannot write output: {e}")))
}

fn parsed<T>(path: &Path, r: Result<T, ParseError>) -> CliResult<T> {
    r.map_err(|e| {
        let mut msg = e.render(&path.display().to_string());
        msg.pop();
        CliError::Input(format!("parse errors\n{msg}"))
    })
}

fn load_rules(path: &Path, vocab: &mut Vocabulary) -> CliResult<Vec<Rule>> {
    parsed(path, parse_rules(&read(path)?, vocab))
}

fn load_instance(path: &Path, vocab: &mut Vocabulary) -> CliResult<Instance> {
    parsed(path, parse_instance(&read(path)?, vocab))
}

fn chase(a: ChaseArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<i32> {
    let mut vocab = Vocabulary::new();
    let rules = load_rules(&a.rules, &mut vocab)?;
    let instance = load_instance(&a.instance, &mut vocab)?;
    let mut config = ChaseConfig::new(a.variant, a.max_rounds);
    config.trace = match (&a.trace, a.trace_all) {
        (None, _) => TraceMode::Off,
        (Some(_), false) => TraceMode::ExistentialOnly,
        (Some(_), true) => TraceMode::Full,
    };
    config.order = a.seed.map_or(TriggerOrder::Canonical, TriggerOrder::Shuffled);
    config.atom_budget = a.atom_budget;

    let started = Instant::now();
    let outcome = Chase::new(&rules, instance, config).run();
    let elapsed = started.elapsed();

    if let Some(path) = &a.trace {
        write_file(path, &outcome.derivation.render_trace(&vocab, &rules))?;
    }
    let text = render_instance(&vocab, &outcome.result);
    match &a.output {
        Some(path) => write_file(path, &text)?,
        None => emit(out, &text)?,
    }
    let mut status = format!("status {}\n", outcome.status);
    if a.stats {
        writeln!(
            status,
            "stats rounds={} atoms={} nulls={} time_ms={:.3}",
            outcome.status.rounds(),
            outcome.result.len(),
            outcome.nulls.len(),
            elapsed.as_secs_f64() * 1e3
        )
        .unwrap();
    }
    emit(err, &status)?;
    Ok(EXIT_OK)
}

fn render_binding(vocab: &Vocabulary, b: &Binding) -> String {
    b.iter()
        .map(|(from, to)| format!("{}={}", vocab.display_term(from), vocab.display_term(to)))
        .collect::<Vec<_>>()
        .join(",")
}

fn entails(a: EntailsArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<i32> {
    let mut vocab = Vocabulary::new();
    let rules = load_rules(&a.rules, &mut vocab)?;
    let instance = load_instance(&a.instance, &mut vocab)?;
    let query = parsed(&a.query, parse_query(&read(&a.query)?, &mut vocab))?;
    let verdict = if a.class_c {
        let v = decide_bcq(&vocab, &rules, &instance, &query, a.variant, a.max_rounds);
        if v.downgraded {
            let msg = format!(
                "warning: rules are not a compiled machine rule set; using the bounded {} chase with at most {} rounds\n",
                a.variant, a.max_rounds
            );
            emit(err, &msg)?;
        }
        v
    } else {
        let kb = KnowledgeBase::new(vocab.clone(), rules, instance).map_err(|e| CliError::Input(e.to_string()))?;
        decide_bcq_bounded(&kb, &query, a.variant, a.max_rounds)
    };
    let mut text = format!("{}\ndepth {}\n", verdict.answer, verdict.depth_used);
    if let Some(w) = verdict.witness.as_ref().filter(|w| !w.is_empty()) {
        writeln!(text, "witness {}", render_binding(&vocab, w)).unwrap();
    }
    emit(out, &text)?;
    Ok(match verdict.answer {
        Answer::Entailed => 0,
        Answer::NotEntailed => 1,
        Answer::BoundReached => 2,
    })
}

fn load_machine(path: &Path) -> CliResult<exrules_core::ThreeCM> {
    parse_machine(&read(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn compile_3cm(a: CompileArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<i32> {
    let machine = load_machine(&a.machine)?;
    let rs = compile(&machine);
    let text = render_rules(&rs.vocab, &rs.rules);
    match &a.output {
        Some(path) => write_file(path, &text)?,
        None => emit(out, &text)?,
    }
    emit(err, &format!("compiled {} rules (p = {})\n", rs.rules.len(), rs.p))?;
    Ok(EXIT_OK)
}

fn simulate_3cm(a: SimulateArgs, out: &mut dyn Write) -> CliResult<i32> {
    let m = load_machine(&a.machine)?;
    let mut text = String::new();
    if a.trace {
        let limit = usize::try_from(a.max_steps.saturating_add(1)).unwrap_or(usize::MAX);
        for (step, c) in m.trace(limit).iter().enumerate() {
            writeln!(
                text,
                "step {step} state {} c1 {} c2 {} t {} enc {}",
                m.states()[c.state],
                c.v1,
                c.v2,
                c.t,
                m.enc(c)
            )
            .unwrap();
        }
    }
    match m.run_machine(a.max_steps) {
        RunOutcome::Halted { after } => writeln!(text, "halted after {after} steps").unwrap(),
        RunOutcome::Running => writeln!(text, "running after {} steps", a.max_steps).unwrap(),
    }
    let limit = usize::try_from(a.max_steps.saturating_add(1)).unwrap_or(usize::MAX);
    let orbit = m.g_orbit(limit).map_err(|e| CliError::Internal(e.to_string()))?;
    match &orbit.bound {
        Some(bound) if orbit.bounded => {
            writeln!(text, "orbit bounded length {} bound {bound}", orbit.values.len()).unwrap()
        }
        _ => writeln!(text, "orbit unbounded within {} values", orbit.values.len()).unwrap(),
    }
    emit(out, &text)?;
    Ok(EXIT_OK)
}

struct CheckLine {
    check: &'static str,
    passed: bool,
    detail: String,
    counterexample: Vec<String>,
}

impl CheckLine {
    fn from_report(check: &'static str, r: StructureReport, vocab: &Vocabulary) -> Self {
        let counterexample = r.counterexample.iter().map(|a| vocab.display_atom(a).to_string()).collect();
        CheckLine { check, passed: r.passed, detail: r.detail, counterexample }
    }
}

/// The youngest term of the only chain. The arithmetic check is defined for
/// single-anchor chases and says nothing about atoms linking two chains.
fn youngest_term(instance: &Instance, chased: &Instance, rs: &CompiledRuleSet) -> Result<Term, StructureReport> {
    let dec = chain_decomposition(instance, chased, &rs.schema)?;
    match dec.chains.as_slice() {
        [chain] => Ok(chain.term(chain.len()).unwrap()),
        chains => Err(StructureReport {
            check: "arith".into(),
            passed: false,
            counterexample: Vec::new(),
            detail: format!("needs a single-anchor instance such as End(w), found {} chains", chains.len()),
        }),
    }
}

fn analyze(a: AnalyzeArgs, out: &mut dyn Write) -> CliResult<i32> {
    let mut vocab = Vocabulary::new();
    let rules = load_rules(&a.rules, &mut vocab)?;
    let given = a.instance.as_deref().map(|p| load_instance(p, &mut vocab)).transpose()?;
    let rs = CompiledRuleSet::recognize(&vocab, &rules).ok_or_else(|| {
        CliError::Input(format!("{}: not a compiled three-counter machine rule set", a.rules.display()))
    })?;
    let instance = given.unwrap_or_else(|| end_instance(&rs));
    if instance.is_empty() {
        return Err(CliError::Input("the instance is empty".into()));
    }
    let needs_chase = a.check.iter().any(|c| *c != CheckKind::Critical);
    let chased = if needs_chase {
        chase_to_depth(&instance, &rs.rules, Variant::SemiOblivious, a.rounds)
    } else {
        Instance::new()
    };

    let mut lines = Vec::new();
    for check in &a.check {
        let line = match check {
            CheckKind::Chain => match chain_decomposition(&instance, &chased, &rs.schema) {
                Ok(dec) => {
                    let lens: Vec<String> =
                        dec.chains.iter().map(|c| format!("{}:{}", rs.vocab.display_term(c.anchor), c.len())).collect();
                    CheckLine {
                        check: "chain",
                        passed: true,
                        detail: format!("chain lengths {}", lens.join(" ")),
                        counterexample: Vec::new(),
                    }
                }
                Err(r) => CheckLine::from_report("chain", r, &rs.vocab),
            },
            CheckKind::Flood => {
                CheckLine::from_report("flood", flood_report(&instance, &chased, &rs.schema), &rs.vocab)
            }
            CheckKind::Arith => {
                let report = match youngest_term(&instance, &chased, &rs) {
                    Ok(t0) => verify_arithmetic(&chased, &rs, t0),
                    Err(r) => r,
                };
                CheckLine::from_report("arith", report, &rs.vocab)
            }
            CheckKind::Clique => {
                let pred = rs
                    .vocab
                    .predicate(&a.pred)
                    .ok_or_else(|| CliError::Usage(format!("unknown predicate `{}`", a.pred)))?;
                let found = clique_witness(&chased, pred, a.k);
                CheckLine {
                    check: "clique",
                    passed: found,
                    detail: format!(
                        "{} clique of size {} in the {} graph",
                        if found { "found" } else { "no" },
                        a.k,
                        a.pred
                    ),
                    counterexample: Vec::new(),
                }
            }
            CheckKind::Critical => CheckLine::from_report("critical", compare_critical(&rs, a.rounds), &rs.vocab),
        };
        lines.push(line);
    }

    let mut text = String::new();
    for l in &lines {
        if a.json {
            let obj = json!({
                "check": l.check,
                "passed": l.passed,
                "detail": l.detail,
                "counterexample": l.counterexample,
            });
            writeln!(text, "{obj}").unwrap();
        } else {
            write!(text, "{} {}: {}", l.check, if l.passed { "pass" } else { "fail" }, l.detail).unwrap();
            for c in &l.counterexample {
                write!(text, " {c}").unwrap();
            }
            text.push('\n');
        }
    }
    emit(out, &text)?;
    Ok(if lines.iter().all(|l| l.passed) { EXIT_OK } else { 1 })
}
