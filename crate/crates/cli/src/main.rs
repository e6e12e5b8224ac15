//! Command-line driver for the massive MU-MIMO link-level simulator.
//!
//! Subcommands:
//! - `simulate`: run a PER-vs-SNR sweep for one detector and print/write
//!   the result table.
//! - `sweep-theta`: evaluate a grid of damping factors at a fixed SNR
//!   and report the PER-minimizing one.
//! - `sweep-fixedpoint`: evaluate detector wordlengths at a fixed SNR
//!   with the hardware arithmetic models enabled.
//!
//! Flags mirror the config-file keys; explicit flags override the file.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lama_core::channel::ChannelModel;
use lama_core::coding::CodeRate;
use lama_core::constellation::Scheme;
use lama_core::harness::{
    self, DetectorKind, PerResult, SimConfig, CSV_HEADER,
};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "lama-sim", version, about = "Massive MU-MIMO link-level simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a PER-vs-SNR Monte-Carlo sweep.
    Simulate(SimArgs),
    /// Sweep the damping factor at a fixed SNR and pick the best.
    SweepTheta(ThetaArgs),
    /// Sweep detector wordlengths at a fixed SNR (hardware arithmetic on).
    SweepFixedpoint(FixedPointArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// TOML config file; explicit flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base-station antennas.
    #[arg(long = "b")]
    b_antennas: Option<usize>,
    /// Single-antenna users.
    #[arg(long = "u")]
    n_users: Option<usize>,
    /// Modulation: qpsk, qam16, qam64, qam256.
    #[arg(long = "mod")]
    scheme: Option<Scheme>,
    /// Code rate: 0.5 or 0.75.
    #[arg(long)]
    rate: Option<f64>,
    /// Channel: `rayleigh` or `corr:<rho_r>:<sigma_db>`.
    #[arg(long)]
    channel: Option<String>,
    /// SNR grid `start:step:stop` in dB, or a single value.
    #[arg(long)]
    snr: Option<String>,
    /// Packets per SNR point.
    #[arg(long)]
    packets: Option<u64>,
    /// Early-stop error count per point (0 disables early stop).
    #[arg(long = "max-errors")]
    max_errors: Option<u64>,
    /// Detector iterations.
    #[arg(long)]
    tmax: Option<usize>,
    /// Damping factor in (0,1].
    #[arg(long)]
    theta: Option<f64>,
    /// Outer detection-and-decoding iterations I.
    #[arg(long)]
    iters: Option<usize>,
    /// Detector: lama, lama-maxlog, mmse.
    #[arg(long)]
    detector: Option<String>,
    /// Independent channel realizations per packet.
    #[arg(long)]
    blocks: Option<usize>,
    /// Information bits per packet.
    #[arg(long = "packet-bits")]
    info_bits: Option<usize>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Hardware arithmetic models: off or on.
    #[arg(long = "hw-arith")]
    hw_arith: Option<String>,
    /// CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct ThetaArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated damping factors to evaluate.
    #[arg(long, default_value = "0.5,0.6,0.7,0.8,0.9,1.0")]
    thetas: String,
}

#[derive(Args)]
struct FixedPointArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Wordlength range `a..b` (total bits, inclusive).
    #[arg(long, default_value = "8..14")]
    bits: String,
}

fn parse_snr(spec: &str) -> Result<(f64, f64, f64)> {
    let parts: Vec<&str> = spec.split(':').collect();
    match parts.len() {
        1 => {
            let v: f64 = parts[0].parse().context("bad SNR value")?;
            Ok((v, v, 0.0))
        }
        3 => {
            let start: f64 = parts[0].parse().context("bad SNR start")?;
            let step: f64 = parts[1].parse().context("bad SNR step")?;
            let stop: f64 = parts[2].parse().context("bad SNR stop")?;
            if step <= 0.0 {
                bail!("SNR step must be positive");
            }
            Ok((start, step, stop))
        }
        _ => bail!("SNR spec must be `value` or `start:step:stop`"),
    }
}

impl CommonArgs {
    fn build_config(&self) -> Result<SimConfig> {
        let mut config = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                toml::from_str(&text).context("parsing config file")?
            }
            None => SimConfig::default(),
        };
        if let Some(b) = self.b_antennas {
            config.b_antennas = b;
        }
        if let Some(u) = self.n_users {
            config.n_users = u;
        }
        if let Some(scheme) = self.scheme {
            config.scheme = scheme;
        }
        if let Some(rate) = self.rate {
            config.rate = CodeRate::from_f64(rate)?;
        }
        if let Some(channel) = &self.channel {
            config.channel = channel.parse::<ChannelModel>().map_err(anyhow::Error::msg)?;
        }
        if let Some(snr) = &self.snr {
            let (start, step, stop) = parse_snr(snr)?;
            config.snr_start_db = start;
            config.snr_step_db = step;
            config.snr_stop_db = stop;
        }
        if let Some(packets) = self.packets {
            config.packets_max = packets;
        }
        if let Some(max_errors) = self.max_errors {
            config.packet_errors_max = max_errors;
        }
        if let Some(tmax) = self.tmax {
            config.t_max = tmax;
        }
        if let Some(theta) = self.theta {
            config.theta = theta;
        }
        if let Some(iters) = self.iters {
            config.outer_iters = iters;
        }
        if let Some(detector) = &self.detector {
            config.detector = detector.parse().map_err(anyhow::Error::msg)?;
        }
        if let Some(blocks) = self.blocks {
            config.diversity_blocks = blocks;
        }
        if let Some(bits) = self.info_bits {
            config.info_bits_per_packet = bits;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(hw) = &self.hw_arith {
            config.hw_arith = match hw.as_str() {
                "on" => true,
                "off" => false,
                other => bail!("--hw-arith must be `on` or `off`, got `{other}`"),
            };
        }
        Ok(config)
    }
}

fn print_results(detector: DetectorKind, results: &[PerResult]) {
    println!("{CSV_HEADER}");
    for r in results {
        println!(
            "{},{},{},{},{},{:.6e},{:.6e},{:.6e},{:.6e},{}",
            r.snr_db,
            detector.name(),
            r.packets,
            r.pkt_errors,
            r.bit_errors,
            r.per,
            r.ber,
            r.ci_lo,
            r.ci_hi,
            r.diverged
        );
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate(args) => {
            let config = args.common.build_config()?;
            let results = harness::run_sweep(&config)?;
            print_results(config.detector, &results);
            if let Some(snr) = harness::snr_at_per(&results, 0.1) {
                eprintln!("# 10% PER at {snr:.2} dB");
            }
            if let Some(out) = &args.common.out {
                harness::write_csv(out, config.detector, &results)?;
                eprintln!("# wrote {}", out.display());
            }
        }
        Command::SweepTheta(args) => {
            let config = args.common.build_config()?;
            let grid: Vec<f64> = args
                .thetas
                .split(',')
                .map(|t| t.trim().parse::<f64>().context("bad theta value"))
                .collect::<Result<_>>()?;
            let sweep = harness::sweep_theta(&config, &grid)?;
            println!("theta,per,packets,pkt_errors,diverged");
            for (theta, r) in &sweep.rows {
                println!(
                    "{},{:.6e},{},{},{}",
                    theta, r.per, r.packets, r.pkt_errors, r.diverged
                );
            }
            println!("# best theta: {}", sweep.best_theta);
        }
        Command::SweepFixedpoint(args) => {
            let config = args.common.build_config()?;
            let (lo, hi) = args
                .bits
                .split_once("..")
                .context("bits range must be `a..b`")?;
            let lo: u32 = lo.trim().parse().context("bad lower bit count")?;
            let hi: u32 = hi.trim().parse().context("bad upper bit count")?;
            let sweep = harness::sweep_fixedpoint(&config, lo..=hi)?;
            println!("total_bits,per,packets,pkt_errors,diverged");
            for (bits, r) in &sweep.rows {
                println!(
                    "{},{:.6e},{},{},{}",
                    bits, r.per, r.packets, r.pkt_errors, r.diverged
                );
            }
        }
    }
    Ok(())
}
