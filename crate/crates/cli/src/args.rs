use std::net::IpAddr;
use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "tracer", version, about = "Trace-driven capture of web publications")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Inspect trace documents.
    #[command(subcommand)]
    Trace(TraceCmd),
    /// Work with a shared trace repository.
    #[command(subcommand)]
    Repo(RepoCmd),
    /// Capture resources into WARC files.
    #[command(subcommand)]
    Capture(CaptureCmd),
    /// Measure capture completeness.
    #[command(subcommand)]
    Quality(QualityCmd),
    /// Measure capture overhead.
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Local test portal.
    #[command(subcommand)]
    Fixture(FixtureCmd),
    /// Run a standalone capture proxy until interrupted.
    Proxy(ProxyArgs),
    /// Accept uploaded traces into a local repository layout.
    ServeIngest(IngestArgs),
}

#[derive(Debug, Args)]
pub struct Output {
    /// Write the report to this file instead of stdout.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Human-readable output instead of JSON.
    #[arg(long)]
    pub pretty: bool,
}

#[derive(Debug, Subcommand)]
pub enum TraceCmd {
    /// Validate a trace; exits 1 when it has errors.
    Validate {
        file: PathBuf,
        #[command(flatten)]
        output: Output,
    },
    /// Show the action plan a trace compiles to.
    Plan {
        file: PathBuf,
        /// Bind the plan to this target URL.
        #[arg(long)]
        url: Option<String>,
        #[command(flatten)]
        output: Output,
    },
    /// Test whether a URL matches a pattern; exits 1 when it does not.
    #[command(group(ArgGroup::new("pattern_source").required(true)))]
    Match {
        url: String,
        #[arg(long, group = "pattern_source")]
        pattern: Option<String>,
        /// Take the pattern from a trace file.
        #[arg(long, value_name = "TRACE", group = "pattern_source")]
        pattern_from: Option<PathBuf>,
        #[command(flatten)]
        output: Output,
    },
}

#[derive(Debug, Subcommand)]
pub enum RepoCmd {
    /// Mirror a remote repository into the local cache.
    Sync {
        #[arg(long, value_name = "URL")]
        trace_repo: String,
        #[command(flatten)]
        cache: CacheArg,
        #[command(flatten)]
        output: Output,
    },
    /// List cached traces applicable to a URL, most specific first.
    Lookup {
        url: String,
        #[command(flatten)]
        cache: CacheArg,
        #[command(flatten)]
        output: Output,
    },
}

#[derive(Debug, Args)]
pub struct CacheArg {
    #[arg(long, value_name = "DIR", default_value = ".tracer-cache")]
    pub cache: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Backend {
    Mock,
    Webdriver,
}

#[derive(Debug, Args)]
pub struct DriverArgs {
    #[arg(long, value_enum, default_value = "mock")]
    pub backend: Backend,
    #[arg(long, env = "TRACER_WEBDRIVER_ENDPOINT", value_name = "URL")]
    pub webdriver_endpoint: Option<String>,
    /// Page script for the mock backend (JSON).
    #[arg(long, value_name = "FILE")]
    pub page_script: Option<PathBuf>,
    /// Extra PEM trust anchor for origin servers; repeatable.
    #[arg(long = "ca", value_name = "PEM")]
    pub ca: Vec<PathBuf>,
    /// Trust only the anchors given with --ca.
    #[arg(long, requires = "ca")]
    pub only_ca: bool,
    /// Accept any origin certificate.
    #[arg(long)]
    pub insecure: bool,
    #[arg(long)]
    pub user_agent: Option<String>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).multiple(true)))]
pub struct SourceArgs {
    /// Trace file; repeatable. The most specific match is used.
    #[arg(long, value_name = "FILE", group = "source", conflicts_with = "trace_repo")]
    pub trace: Vec<PathBuf>,
    /// Sync this repository into --cache first.
    #[arg(long, value_name = "URL", group = "source")]
    pub trace_repo: Option<String>,
    /// Use an already synced cache.
    #[arg(long, value_name = "DIR", group = "source")]
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CaptureOpts {
    /// Output directory; one sub-directory per capture.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub driver: DriverArgs,
    /// Extra attempts for steps failing with network errors.
    #[arg(long, default_value_t = 1)]
    pub retries: u32,
    /// Write plain rather than gzipped WARC records.
    #[arg(long)]
    pub uncompressed: bool,
    #[arg(long)]
    pub pretty: bool,
}

#[derive(Debug, Subcommand)]
pub enum CaptureCmd {
    /// Capture one resource.
    One {
        #[arg(long)]
        url: String,
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        opts: CaptureOpts,
    },
    /// Capture many resources concurrently.
    Batch {
        /// File with one URL per line.
        #[arg(long, value_name = "FILE")]
        urls: PathBuf,
        #[arg(long, default_value_t = 4)]
        workers: usize,
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        opts: CaptureOpts,
    },
}

#[derive(Debug, Subcommand)]
pub enum QualityCmd {
    /// Collect the URIs of interest by replaying a trace against the live resource.
    LiveInventory {
        #[arg(long)]
        url: String,
        #[arg(long, value_name = "FILE")]
        trace: PathBuf,
        #[command(flatten)]
        driver: DriverArgs,
        #[command(flatten)]
        output: Output,
    },
    /// List the URIs a WARC file holds a response for.
    WarcInventory {
        warc: PathBuf,
        /// Accepted status codes.
        #[arg(long = "status", value_delimiter = ',', default_value = "200")]
        statuses: Vec<u16>,
        #[command(flatten)]
        output: Output,
    },
    /// Availability of a live inventory in a WARC file.
    Compare {
        /// Live inventory JSON.
        #[arg(long, value_name = "FILE")]
        expected: PathBuf,
        #[arg(long, value_name = "FILE")]
        warc: PathBuf,
        #[arg(long = "status", value_delimiter = ',', default_value = "200")]
        statuses: Vec<u16>,
        #[command(flatten)]
        output: Output,
    },
    /// Threshold table over compare reports.
    Aggregate {
        /// Compare reports, each a single object or an array.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Title of the rendered table.
        #[arg(long, default_value = "Availability")]
        title: String,
        #[command(flatten)]
        output: Output,
    },
}

#[derive(Debug, Subcommand)]
pub enum BenchCmd {
    /// Fetch a URI set with plain GETs.
    #[command(group(ArgGroup::new("input").required(true)))]
    Crawl {
        /// File with one URI per line.
        #[arg(long, value_name = "FILE", group = "input")]
        uris: Option<PathBuf>,
        /// Take the URIs from a WARC file's response records.
        #[arg(long, value_name = "FILE", group = "input")]
        warc: Option<PathBuf>,
        #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(1..))]
        workers: u64,
        #[arg(long, default_value_t = 60_000)]
        timeout_ms: u64,
        #[arg(long = "ca", value_name = "PEM")]
        ca: Vec<PathBuf>,
        #[command(flatten)]
        output: Output,
    },
    /// Per-resource overhead of captures over baseline crawls.
    Overhead {
        /// Capture result files.
        #[arg(long = "tracer", value_name = "FILE", required = true, num_args = 1..)]
        tracer: Vec<PathBuf>,
        /// Crawl reports, paired with --tracer by position.
        #[arg(long = "baseline", value_name = "FILE", required = true, num_args = 1..)]
        baseline: Vec<PathBuf>,
        /// Emit CSV instead of JSON.
        #[arg(long)]
        csv: bool,
        #[command(flatten)]
        output: Output,
    },
}

#[derive(Debug, Subcommand)]
pub enum FixtureCmd {
    /// Serve a test portal until interrupted.
    Serve {
        #[arg(long, value_name = "FILE")]
        spec: PathBuf,
        #[arg(long, default_value_t = 0)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: IpAddr,
        /// Write the portal's page script here.
        #[arg(long, value_name = "FILE")]
        script_out: Option<PathBuf>,
        /// Write the portal's CA certificate here.
        #[arg(long, value_name = "FILE")]
        ca_out: Option<PathBuf>,
        /// Write repo and deck traces for this portal into this directory.
        #[arg(long, value_name = "DIR")]
        traces_out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct ProxyArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: IpAddr,
    #[arg(long, value_name = "FILE")]
    pub warc_out: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub ca_out: Option<PathBuf>,
    #[arg(long = "ca", value_name = "PEM")]
    pub ca: Vec<PathBuf>,
    #[arg(long)]
    pub insecure: bool,
    #[arg(long)]
    pub uncompressed: bool,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Repository root that receives the traces.
    #[arg(long, value_name = "DIR")]
    pub repo: PathBuf,
    #[arg(long, default_value_t = 8765)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: IpAddr,
}
