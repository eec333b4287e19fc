use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use tpp_core::{
    bits_from_hex, bits_to_hex, brute_force, check_assumptions, decode, encode,
    enumerate_height_vectors, load_distribution, solve_with, synthetic, verify_record, Codec,
    DistributionFile, ProblemInstance, SolutionRecord, SolveOptions, TokenDistribution, TppError,
    DEFAULT_STATE_CAP,
};

const STATE_CAP_VAR: &str = "TPP_STATE_CAP";

/// Dyadic approximation of categorical distributions under a rate floor
#[derive(Parser, Debug)]
#[command(name = "tpp", version, about, long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve an instance and write the solution JSON
    Solve {
        #[command(flatten)]
        problem: Problem,
        #[command(flatten)]
        run: RunFlags,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Re-check a solution JSON against its instance
    Verify {
        #[command(flatten)]
        problem: Problem,
        /// Solution JSON produced by `solve`
        #[arg(long)]
        solution: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Exact optimum by exhaustive search (n <= 10)
    Oracle {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        rate: f64,
        /// Needed for the assumption warning and for --compare
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long, default_value_t = 4)]
        max_depth: u32,
        /// Also solve and report the gap to the optimum
        #[arg(long)]
        compare: bool,
        #[command(flatten)]
        run: RunFlags,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// List every Kraft-tight height vector up to a depth
    EnumTrees {
        #[arg(long)]
        max_depth: u32,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Hide a hex payload in a token sequence
    StegoEncode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        solution: PathBuf,
        /// Payload as a hex string
        #[arg(long)]
        payload: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Recover the hex payload from a token sequence
    StegoDecode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        solution: PathBuf,
        /// JSON array of token ids
        #[arg(long)]
        tokens: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Solve jittered Zipf instances and write one CSV row per trial
    Bench {
        #[arg(long, default_value_t = 1.1)]
        zipf_s: f64,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long, default_value_t = 0.25)]
        epsilon: f64,
        #[arg(long, default_value_t = 2.0)]
        rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        run: RunFlags,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct Problem {
    /// Distribution JSON: {"probs": [...], "normalize": false}
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    rate: f64,
    #[arg(long)]
    epsilon: f64,
}

#[derive(Args, Debug)]
struct RunFlags {
    /// Worker threads for candidate evaluation
    #[arg(long)]
    jobs: Option<usize>,
    /// Solve even if the instance assumptions fail
    #[arg(long)]
    allow_assumption_failure: bool,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] TppError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Config(String),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(TppError::AssumptionFailed { .. }) => 3,
            CliError::Core(TppError::NoCandidate { .. }) => 4,
            CliError::Core(TppError::ResourceLimit { .. }) => 5,
            CliError::Verification(_) => 1,
            _ => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Core(TppError::NoCandidate { discards }) = &e {
                for d in discards {
                    eprintln!("  discarded {:?}: {:?}", d.heights.depths(), d.reason);
                }
            }
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Solve {
            problem,
            run,
            output,
        } => {
            let inst = problem.instance()?;
            let sol = solve_with(&inst, &run.options()?)?;
            eprintln!(
                "divergence={} rate={} branch={} candidates={} discarded={} elapsed={:?}",
                sol.divergence,
                sol.rate,
                sol.branch,
                sol.candidate_count,
                sol.discards.len(),
                sol.elapsed
            );
            emit(output.as_deref(), &sol.to_json(&inst.dist))
        }
        Command::Verify {
            problem,
            solution,
            output,
        } => {
            let inst = problem.instance()?;
            let record: SolutionRecord = read_json(&solution)?;
            let report = verify_record(&record, &inst);
            emit(output.as_deref(), &to_json(&report)?)?;
            if report.all_passed() {
                Ok(())
            } else {
                let failed: Vec<&str> = report
                    .checks
                    .iter()
                    .filter(|c| !c.passed)
                    .map(|c| c.name)
                    .collect();
                Err(CliError::Verification(failed.join(", ")))
            }
        }
        Command::Oracle {
            input,
            rate,
            epsilon,
            max_depth,
            compare,
            run,
            output,
        } => oracle(
            &input,
            rate,
            epsilon,
            max_depth,
            compare,
            &run,
            output.as_deref(),
        ),
        Command::EnumTrees { max_depth, output } => {
            #[derive(Serialize)]
            struct Row {
                heights: Vec<u32>,
                rate: f64,
                leaf_at_max_depth: bool,
            }
            let rows: Vec<Row> = enumerate_height_vectors(max_depth)?
                .into_iter()
                .map(|(h, flag)| Row {
                    rate: h.rate(),
                    heights: h.into(),
                    leaf_at_max_depth: flag,
                })
                .collect();
            eprintln!("{} height vectors with depth <= {max_depth}", rows.len());
            emit(output.as_deref(), &to_json(&rows)?)
        }
        Command::StegoEncode {
            input,
            solution,
            payload,
            seed,
            output,
        } => {
            let codec = load_codec(&input, &solution)?;
            let bits = bits_from_hex(&payload)?;
            let tokens = encode(&codec, &bits, seed)?;
            eprintln!("{} payload bits in {} tokens", bits.len(), tokens.len());
            emit(output.as_deref(), &to_json(&tokens)?)
        }
        Command::StegoDecode {
            input,
            solution,
            tokens,
            output,
        } => {
            let codec = load_codec(&input, &solution)?;
            let tokens: Vec<usize> = read_json(&tokens)?;
            let bits = decode(&codec, &tokens)?;
            eprintln!("{} payload bits from {} tokens", bits.len(), tokens.len());
            emit(output.as_deref(), &bits_to_hex(&bits))
        }
        Command::Bench {
            zipf_s,
            n,
            trials,
            epsilon,
            rate,
            seed,
            run,
            output,
        } => bench(
            zipf_s,
            n,
            trials,
            epsilon,
            rate,
            seed,
            &run,
            output.as_deref(),
        ),
    }
}

impl Problem {
    fn instance(&self) -> Result<ProblemInstance> {
        let dist = read_distribution(&self.input)?;
        Ok(ProblemInstance::new(dist, self.rate, self.epsilon)?)
    }
}

impl RunFlags {
    fn options(&self) -> Result<SolveOptions> {
        Ok(SolveOptions {
            state_cap: state_cap()?,
            jobs: self.jobs,
            enforce_assumptions: !self.allow_assumption_failure,
        })
    }
}

fn state_cap() -> Result<usize> {
    match std::env::var(STATE_CAP_VAR) {
        Ok(raw) => raw.trim().parse().map_err(|_| {
            CliError::Config(format!("{STATE_CAP_VAR}={raw:?} is not a positive integer"))
        }),
        Err(std::env::VarError::NotPresent) => Ok(DEFAULT_STATE_CAP),
        Err(e) => Err(CliError::Config(format!("{STATE_CAP_VAR}: {e}"))),
    }
}

fn oracle(
    input: &Path,
    rate: f64,
    epsilon: Option<f64>,
    max_depth: u32,
    compare: bool,
    run: &RunFlags,
    output: Option<&Path>,
) -> Result<()> {
    #[derive(Serialize)]
    struct Report {
        opt_divergence: f64,
        opt_heights: Vec<u32>,
        opt_partition: Vec<Vec<usize>>,
        search_space_size: u128,
        #[serde(skip_serializing_if = "Option::is_none")]
        solve: Option<SolutionRecord>,
        #[serde(skip_serializing_if = "Option::is_none")]
        gap: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        gap_bound: Option<f64>,
    }

    let dist = read_distribution(input)?;
    let instance = match epsilon {
        Some(eps) => {
            let inst = ProblemInstance::new(dist.clone(), rate, eps)?;
            let report = check_assumptions(&inst);
            if let Some(failed) = report.first_failure() {
                eprintln!("warning: assumption {} fails: {}", failed.id, failed.detail);
            }
            Some(inst)
        }
        None if compare => return Err(CliError::Config("--compare needs --epsilon".into())),
        None => None,
    };

    let result = brute_force(&dist, rate, max_depth)?;
    let ids = dist.token_ids();
    let opt_partition = result
        .opt_partition
        .sets()
        .iter()
        .map(|set| {
            let mut out: Vec<usize> = set.iter().map(|&i| ids[i]).collect();
            out.sort_unstable();
            out
        })
        .collect();
    let mut report = Report {
        opt_divergence: result.opt_divergence,
        opt_heights: result.opt_heights.depths().to_vec(),
        opt_partition,
        search_space_size: result.search_space_size,
        solve: None,
        gap: None,
        gap_bound: None,
    };
    if let (true, Some(inst)) = (compare, &instance) {
        let sol = solve_with(inst, &run.options()?)?;
        let gap = sol.divergence - result.opt_divergence;
        eprintln!(
            "OPT={} solve={} gap={gap} bound={}",
            result.opt_divergence,
            sol.divergence,
            12.0 * inst.epsilon
        );
        report.solve = Some(sol.to_record(&dist));
        report.gap = Some(gap);
        report.gap_bound = Some(12.0 * inst.epsilon);
    } else {
        eprintln!("OPT={} at {:?}", result.opt_divergence, report.opt_heights);
    }
    emit(output, &to_json(&report)?)
}

#[allow(clippy::too_many_arguments)]
fn bench(
    zipf_s: f64,
    n: usize,
    trials: usize,
    epsilon: f64,
    rate: f64,
    seed: u64,
    run: &RunFlags,
    output: Option<&Path>,
) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        n: usize,
        zipf_s: f64,
        epsilon: f64,
        #[serde(rename = "R")]
        rate_floor: f64,
        divergence: f64,
        rate: f64,
        branch: String,
        candidates: usize,
        frontier_max: usize,
        millis: f64,
    }

    let opts = run.options()?;
    let mut writer = csv::Writer::from_writer(Vec::new());
    for trial in 0..trials {
        let dist = synthetic::jittered_zipf(n, zipf_s, 0.1, seed.wrapping_add(trial as u64))?;
        let inst = ProblemInstance::new(dist, rate, epsilon)?;
        let start = Instant::now();
        let sol = solve_with(&inst, &opts)?;
        let millis = start.elapsed().as_secs_f64() * 1e3;
        writer
            .serialize(Row {
                n,
                zipf_s,
                epsilon,
                rate_floor: rate,
                divergence: sol.divergence,
                rate: sol.rate,
                branch: sol.branch.to_string(),
                candidates: sol.candidate_count,
                frontier_max: sol.frontier_max,
                millis,
            })
            .map_err(|e| CliError::Config(format!("csv: {e}")))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| CliError::Config(format!("csv: {e}")))?;
    emit(output, String::from_utf8_lossy(&bytes).trim_end())
}

fn load_codec(input: &Path, solution: &Path) -> Result<Codec> {
    let dist = read_distribution(input)?;
    let record: SolutionRecord = read_json(solution)?;
    let (heights, partition) = record.to_parts(&dist)?;
    Ok(Codec::new(heights, &partition, &dist)?)
}

fn read_distribution(path: &Path) -> Result<TokenDistribution> {
    let file: DistributionFile = read_json(path)?;
    Ok(load_distribution(&file.probs, file.normalize)?)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let raw = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&raw).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string(value).map_err(TppError::from)?)
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, format!("{text}\n")).map_err(|source| CliError::Io {
            path: p.to_path_buf(),
            source,
        }),
        None => {
            let mut out = io::stdout().lock();
            writeln!(out, "{text}").map_err(|source| CliError::Io {
                path: PathBuf::from("<stdout>"),
                source,
            })
        }
    }
}
