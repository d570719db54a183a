//! Command-line front end: compress a stream into a TDBC archive,
//! decompress snapshots back out, derive analysis CSVs, and benchmark.

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Config;
use tdb_core::adaptivity::captured_energy;
use tdb_core::archive::{
    compression_ratio, write_raw_tensor, Archive, ArchiveHeader, ArchiveWriter,
};
use tdb_core::bench::{bench_sizes, loglog_slope};
use tdb_core::coherent::core_mode_singular_values;
use tdb_core::datagen::{FileStream, SnapshotStream};
use tdb_core::driver::{run, DerivativeMode};
use tdb_core::evolve::DerivScheme;
use tdb_core::hosvd::mode_svd;
use tdb_core::tensor::MultiRank;
use tdb_core::{Result, TdbError};

#[derive(Parser)]
#[command(name = "tdb", about = "Streaming low-rank compression of simulation data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compress a stream into a TDBC archive with a CSV run log.
    Compress {
        /// TOML run configuration.
        #[arg(long)]
        config: PathBuf,
    },
    /// Reconstruct snapshots from an archive into TDBT files.
    Decompress {
        #[arg(long)]
        archive: PathBuf,
        /// Times to reconstruct (nearest-previous record); repeatable.
        #[arg(long, value_delimiter = ',')]
        times: Vec<f64>,
        /// Reconstruct every stored record instead.
        #[arg(long, default_value_t = false)]
        all: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit error, compression-ratio, captured-detail and spectra CSVs.
    Analyze {
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Manifest of raw snapshots; adds dense reference spectra.
        #[arg(long)]
        raw_manifest: Option<PathBuf>,
    },
    /// Time one evolution step against one full HOSVD over cubic sizes.
    Bench {
        /// Grid points per axis, e.g. 32,48,64,96.
        #[arg(long, value_delimiter = ',', default_values_t = vec![32, 48, 64, 96])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        rank: usize,
        #[arg(long, default_value_t = 3)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the header and record summary of an archive.
    Describe {
        #[arg(long)]
        archive: PathBuf,
    },
}

fn derivative_id(mode: DerivativeMode) -> u8 {
    match mode {
        DerivativeMode::Exact => 0,
        DerivativeMode::Fd(DerivScheme::Fd1) => 1,
        DerivativeMode::Fd(DerivScheme::Fd2) => 2,
        DerivativeMode::Fd(DerivScheme::Fd2Central) => 3,
    }
}

fn derivative_name(id: u8) -> &'static str {
    match id {
        0 => "exact",
        1 => "fd1",
        2 => "fd2",
        3 => "fd2-central",
        _ => "unknown",
    }
}

fn integrator_name(id: u8) -> &'static str {
    match id {
        0 => "euler",
        1 => "rk2",
        _ => "unknown",
    }
}

fn create_file(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(std::io::BufWriter::new(std::fs::File::create(path)?))
}

fn cmd_compress(config_path: &Path) -> Result<()> {
    let cfg = Config::from_path(config_path)?;
    let mut stream = cfg.make_stream()?;
    let run_cfg = cfg.run_config(stream.dims().len())?;

    // the archive header describes the working (possibly fused) space
    let (dims, weights) = match &run_cfg.groups {
        Some(spec) => {
            let zero = tdb_core::DenseTensor::zeros(stream.dims());
            let (fused, fw) = tdb_core::grouping::fuse(&zero, stream.weights(), spec)?;
            (fused.dims().to_vec(), fw)
        }
        None => (stream.dims().to_vec(), stream.weights().clone()),
    };
    let header = ArchiveHeader {
        dims,
        weights,
        dt: stream.dt(),
        integrator_id: cfg.integrator()?.id(),
        derivative_id: derivative_id(cfg.derivative()?),
        created: format!("tdb compress {}", config_path.display()),
    };
    let archive_path = PathBuf::from(&cfg.output.archive);
    if let Some(dir) = archive_path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut writer = ArchiveWriter::create(&archive_path, header)?;
    let out = run(stream.as_mut(), &run_cfg, Some(&mut writer))?;
    drop(writer);

    let p = out.dims.len();
    let log_path = PathBuf::from(&cfg.output.log);
    let mut log = create_file(&log_path)?;
    let gammas: Vec<String> = (1..=p).map(|n| format!("gamma_{n}")).collect();
    let ranks: Vec<String> = (1..=p).map(|n| format!("r_{n}")).collect();
    writeln!(log, "t,eps,{},{},action,cr", gammas.join(","), ranks.join(","))?;
    for l in &out.logs {
        let g: Vec<String> = l.gamma.iter().map(|x| format!("{x:.12e}")).collect();
        let r: Vec<String> = l.ranks.iter().map(|x| x.to_string()).collect();
        writeln!(
            log,
            "{:.12e},{:.12e},{},{},{},{:.12e}",
            l.t,
            l.eps,
            g.join(","),
            r.join(","),
            l.action.label(),
            l.cr
        )?;
    }
    log.flush()?;

    // echo the fully resolved configuration and the run summary next to the
    // log, so the CSV itself stays pure tabular data
    let meta_path = log_path.with_extension("meta.toml");
    let resolved = toml::to_string_pretty(&cfg.resolved())
        .map_err(|e| TdbError::Config(format!("serializing resolved config: {e}")))?;
    let mut meta = create_file(&meta_path)?;
    write!(meta, "{resolved}")?;
    writeln!(meta, "\n[summary]")?;
    writeln!(meta, "steps = {}", out.logs.len())?;
    writeln!(meta, "reinit_count = {}", out.reinit_count)?;
    writeln!(meta, "max_eps = {:.12e}", out.max_eps())?;
    writeln!(meta, "weighted_cr = {:.12e}", out.weighted_cr)?;
    meta.flush()?;

    println!(
        "compressed {} steps, weighted_cr={:.4}, max_eps={:.3e}, reinits={}",
        out.logs.len(),
        out.weighted_cr,
        out.max_eps(),
        out.reinit_count
    );
    println!("archive: {}", cfg.output.archive);
    println!("log: {} (+ {})", cfg.output.log, meta_path.display());
    Ok(())
}

fn cmd_decompress(archive: &Path, times: &[f64], all: bool, out_dir: &Path) -> Result<()> {
    let arch = Archive::open(archive)?;
    std::fs::create_dir_all(out_dir)?;
    let times: Vec<f64> = if all {
        arch.records.iter().map(|r| r.time).collect()
    } else if times.is_empty() {
        return Err(TdbError::Config(
            "give --times t1,t2,... or --all".into(),
        ));
    } else {
        times.to_vec()
    };
    for (k, &t) in times.iter().enumerate() {
        let rec = arch.record_at(t)?;
        let full = rec.to_state(&arch.header)?.reconstruct();
        let name = format!("snapshot_{k:05}_t{:.6}.tdbt", rec.time);
        write_raw_tensor(out_dir.join(&name), &full)?;
        println!("{name}");
    }
    Ok(())
}

fn cmd_analyze(archive: &Path, out_dir: &Path, raw_manifest: Option<&Path>) -> Result<()> {
    let arch = Archive::open(archive)?;
    if arch.records.is_empty() {
        return Err(TdbError::Degenerate {
            context: "archive holds no records".into(),
        });
    }
    std::fs::create_dir_all(out_dir)?;
    let p = arch.header.dims.len();

    let mut err_csv = create_file(&out_dir.join("error.csv"))?;
    writeln!(err_csv, "t,eps")?;
    let mut cr_csv = create_file(&out_dir.join("cr.csv"))?;
    writeln!(cr_csv, "t,cr")?;
    let mut gamma_csv = create_file(&out_dir.join("gamma.csv"))?;
    let gnames: Vec<String> = (1..=p).map(|n| format!("gamma_{n}")).collect();
    writeln!(gamma_csv, "t,{}", gnames.join(","))?;

    let max_rank: Vec<usize> = (0..p)
        .map(|n| arch.records.iter().map(|r| r.ranks[n]).max().unwrap())
        .collect();
    let mut spectra: Vec<_> = (0..p)
        .map(|n| -> Result<_> {
            let mut f = create_file(&out_dir.join(format!("spectra_mode{}.csv", n + 1)))?;
            let cols: Vec<String> = (1..=max_rank[n]).map(|i| format!("sigma_{i}")).collect();
            writeln!(f, "t,{}", cols.join(","))?;
            Ok(f)
        })
        .collect::<Result<_>>()?;

    for rec in &arch.records {
        writeln!(err_csv, "{:.12e},{:.12e}", rec.time, rec.eps)?;
        let mr = MultiRank::new(rec.ranks.clone(), &arch.header.dims)?;
        writeln!(
            cr_csv,
            "{:.12e},{:.12e}",
            rec.time,
            compression_ratio(&arch.header.dims, &mr)
        )?;
        let state = rec.to_state(&arch.header)?;
        let gs: Vec<String> = (0..p)
            .map(|n| captured_energy(&state, rec.eps, n).map(|g| format!("{g:.12e}")))
            .collect::<Result<_>>()?;
        writeln!(gamma_csv, "{:.12e},{}", rec.time, gs.join(","))?;
        for (n, f) in spectra.iter_mut().enumerate() {
            let sv = core_mode_singular_values(&rec.core, n)?;
            let cells: Vec<String> = (0..max_rank[n])
                .map(|i| {
                    sv.get(i)
                        .map(|s| format!("{s:.12e}"))
                        .unwrap_or_default()
                })
                .collect();
            writeln!(f, "{:.12e},{}", rec.time, cells.join(","))?;
        }
    }

    // optional dense reference spectra computed from the raw snapshots
    if let Some(manifest) = raw_manifest {
        let mut fs = FileStream::from_manifest(manifest)?;
        if fs.dims() != arch.header.dims {
            return Err(TdbError::ShapeMismatch {
                context: format!(
                    "raw snapshots are {:?}, archive is {:?}",
                    fs.dims(),
                    arch.header.dims
                ),
            });
        }
        let mut refs: Vec<_> = (0..p)
            .map(|n| -> Result<_> {
                let mut f =
                    create_file(&out_dir.join(format!("hosvd_mode{}.csv", n + 1)))?;
                let cols: Vec<String> =
                    (1..=max_rank[n]).map(|i| format!("sigma_{i}")).collect();
                writeln!(f, "t,{}", cols.join(","))?;
                Ok(f)
            })
            .collect::<Result<_>>()?;
        while let Some(snap) = fs.next_snapshot()? {
            for (n, f) in refs.iter_mut().enumerate() {
                let sv = mode_svd(&snap.data, n, &arch.header.weights, max_rank[n])?;
                let cells: Vec<String> = sv
                    .singular_values
                    .iter()
                    .map(|s| format!("{s:.12e}"))
                    .collect();
                writeln!(f, "{:.12e},{}", snap.time, cells.join(","))?;
            }
        }
        for f in &mut refs {
            f.flush()?;
        }
    }

    err_csv.flush()?;
    cr_csv.flush()?;
    gamma_csv.flush()?;
    for f in &mut spectra {
        f.flush()?;
    }
    println!("analysis written to {}", out_dir.display());
    Ok(())
}

fn cmd_bench(sizes: &[usize], rank: usize, trials: usize, seed: u64, out: &Path) -> Result<()> {
    if sizes.len() < 2 {
        return Err(TdbError::Config("bench needs at least two sizes".into()));
    }
    let points = bench_sizes(sizes, rank, trials, seed)?;
    let mut csv = create_file(out)?;
    writeln!(csv, "n,total_size,tdb_step_secs,hosvd_secs")?;
    for pt in &points {
        writeln!(
            csv,
            "{},{},{:.6e},{:.6e}",
            pt.n, pt.total_size, pt.tdb_step_secs, pt.hosvd_secs
        )?;
    }
    csv.flush()?;

    let tdb: Vec<(f64, f64)> = points
        .iter()
        .map(|p| (p.total_size, p.tdb_step_secs))
        .collect();
    let hosvd: Vec<(f64, f64)> = points
        .iter()
        .map(|p| (p.total_size, p.hosvd_secs))
        .collect();
    let tdb_slope = loglog_slope(&tdb);
    let hosvd_slope = loglog_slope(&hosvd);
    let slope_path = out.with_extension("slopes.csv");
    let mut sf = create_file(&slope_path)?;
    writeln!(sf, "series,slope")?;
    writeln!(sf, "tdb_step,{tdb_slope:.6}")?;
    writeln!(sf, "hosvd,{hosvd_slope:.6}")?;
    sf.flush()?;
    println!("tdb_step slope = {tdb_slope:.3}, hosvd slope = {hosvd_slope:.3}");
    println!("timings: {} (+ {})", out.display(), slope_path.display());
    Ok(())
}

fn cmd_describe(archive: &Path) -> Result<()> {
    let arch = Archive::open(archive)?;
    let h = &arch.header;
    println!("archive: {}", archive.display());
    println!("dims: {:?}", h.dims);
    println!("dt: {}", h.dt);
    println!("integrator: {}", integrator_name(h.integrator_id));
    println!("derivative: {}", derivative_name(h.derivative_id));
    println!("created: {}", h.created);
    println!("records: {}", arch.records.len());
    if let Some((t0, t1)) = arch.time_range() {
        println!("time range: [{t0}, {t1}]");
        let first = &arch.records[0];
        let last = arch.records.last().unwrap();
        println!("initial ranks: {:?}", first.ranks);
        println!("final ranks: {:?}", last.ranks);
        let reinits = arch.records.iter().filter(|r| r.flags.reinit).count();
        println!("reinitializations: {reinits}");
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Compress { config } => cmd_compress(&config),
        Command::Decompress {
            archive,
            times,
            all,
            out,
        } => cmd_decompress(&archive, &times, all, &out),
        Command::Analyze {
            archive,
            out,
            raw_manifest,
        } => cmd_analyze(&archive, &out, raw_manifest.as_deref()),
        Command::Bench {
            sizes,
            rank,
            trials,
            seed,
            out,
        } => cmd_bench(&sizes, rank, trials, seed, &out),
        Command::Describe { archive } => cmd_describe(&archive),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}
