use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

/// Densities of random Euler products: characteristic functions, inversion,
/// sampling, moments and discrepancies.
#[derive(Parser, Debug, Clone, Serialize, Deserialize)]
#[command(name = "mfunc", version)]
pub struct Cli {
    /// Seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true, env = "MFN_THREADS")]
    #[serde(skip)]
    pub threads: Option<usize>,

    /// Directory for cached per-prime quadrature values.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub cache_dir: Option<PathBuf>,

    /// Primary tolerance of the subcommand (each documents its default).
    #[arg(long, global = true)]
    pub tol: Option<f64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Characteristic function on a grid (tol: truncation, default 1e-8).
    Charfn(CharfnArgs),
    /// Density of log L by Fourier inversion (tol: boundary modulus, default 1e-6).
    Density(DensityArgs),
    /// Monte Carlo draws of log L (tol: truncation for the default prime cutoff, default 1e-3).
    Sample(SampleArgs),
    /// Cumulants and even moments of the Dirichlet polynomial R_Y.
    Moments(MomentsArgs),
    /// Discrepancy of a synthetic family against the inverted density.
    Discrepancy(DiscrepancyArgs),
    /// Largest |Lambda| at given radii (tol: relative truncation, default 1e-3).
    ProbeDecay(ProbeArgs),
    /// Exact Hecke-ring computations, printed to stdout.
    Hecke {
        #[command(subcommand)]
        op: HeckeOp,
    },
    /// Re-runs the command recorded in a sidecar.
    Replay(ReplayArgs),
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct PointArgs {
    #[arg(long)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub t: f64,
    /// sato-tate, plancherel or file:<path> with rows "theta,density".
    #[arg(long, default_value = "sato-tate")]
    pub measure: String,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct CharfnArgs {
    #[command(flatten)]
    pub point: PointArgs,
    #[arg(long, default_value_t = 40.0)]
    pub rmax: f64,
    /// Points per axis.
    #[arg(long, default_value_t = 256)]
    pub points: usize,
    /// Write the grid the density command would invert, for `density --charfn`.
    #[arg(long)]
    pub for_density: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct DensityArgs {
    #[command(flatten)]
    pub point: PointArgs,
    /// Output points per axis.
    #[arg(long, default_value_t = 401)]
    pub points: usize,
    /// Invert a grid written by `charfn --for-density` instead of computing one.
    #[arg(long)]
    pub charfn: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SampleArgs {
    #[command(flatten)]
    pub point: PointArgs,
    #[arg(long)]
    pub n: usize,
    /// Largest prime in each draw; by default planned from --tol at |z| = --rmax.
    #[arg(long)]
    pub p_max: Option<u64>,
    #[arg(long, default_value_t = 10.0)]
    pub rmax: f64,
    /// Stream of the first draw; draw k uses stream first_stream + k.
    #[arg(long, default_value_t = 0)]
    pub first_stream: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct MomentsArgs {
    #[command(flatten)]
    pub point: PointArgs,
    #[arg(long = "Y")]
    pub y: f64,
    #[arg(long, default_value_t = 6)]
    pub order: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct DiscrepancyArgs {
    #[command(flatten)]
    pub point: PointArgs,
    #[arg(long)]
    pub family_size: usize,
    /// uniform, or concentrated:<exponent>.
    #[arg(long, default_value = "uniform")]
    pub weights: String,
    /// Smoothing radius of the bound; defaults to the inversion radius.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Integration points per half-axis for the bound.
    #[arg(long)]
    pub integration_points: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub point: PointArgs,
    #[arg(long, value_delimiter = ',', default_value = "10,20,40,80")]
    pub radii: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeckeOp {
    /// Expands x(n1) x(n2) ... in the basis.
    Expand {
        #[arg(required = true)]
        indices: Vec<u64>,
    },
    /// Coefficients c_m(j) with 2 cos(m theta)/m = sum_j c_m(j) U_j(cos theta).
    Transform { m: u32 },
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub sidecar: PathBuf,
    /// Output path; defaults to the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Charfn(_) => "charfn",
            Command::Density(_) => "density",
            Command::Sample(_) => "sample",
            Command::Moments(_) => "moments",
            Command::Discrepancy(_) => "discrepancy",
            Command::ProbeDecay(_) => "probe-decay",
            Command::Hecke { .. } => "hecke",
            Command::Replay(_) => "replay",
        }
    }

    pub fn out_mut(&mut self) -> Option<&mut PathBuf> {
        match self {
            Command::Charfn(a) => Some(&mut a.out),
            Command::Density(a) => Some(&mut a.out),
            Command::Sample(a) => Some(&mut a.out),
            Command::Moments(a) => Some(&mut a.out),
            Command::Discrepancy(a) => Some(&mut a.out),
            Command::ProbeDecay(a) => Some(&mut a.out),
            Command::Hecke { .. } | Command::Replay(_) => None,
        }
    }
}
