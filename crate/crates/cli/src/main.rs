use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{value_parser, Arg, ArgMatches, Command};
use netstab_cli::settings::SEED_ENV;
use netstab_cli::{execute, load_settings, replay, CliError, CommandKind, Completed};

fn out_arg() -> Arg {
    Arg::new("out")
        .long("out")
        .value_name("DIR")
        .default_value(".")
        .value_parser(value_parser!(PathBuf))
        .help("directory for CSV outputs and manifest.txt")
}

fn command_for(kind: CommandKind) -> Command {
    let mut cmd = Command::new(kind.name())
        .about(kind.about())
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .value_parser(value_parser!(PathBuf))
                .help("key = value file; flags override it"),
        )
        .arg(out_arg());
    for spec in kind.keys() {
        let help = if spec.default.is_empty() {
            spec.help.to_string()
        } else {
            format!("{} [default: {}]", spec.help, spec.default)
        };
        cmd = cmd.arg(
            Arg::new(spec.name)
                .long(spec.name)
                .value_name("VALUE")
                .allow_hyphen_values(true)
                .help(help),
        );
    }
    cmd
}

fn cli() -> Command {
    let mut root = Command::new("netstab")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Stabilization limits of nonlinear maps over erasure channels")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for kind in CommandKind::ALL {
        root = root.subcommand(command_for(kind));
    }
    root.subcommand(
        Command::new("replay")
            .about("Re-run a manifest with its recorded configuration")
            .arg(
                Arg::new("manifest")
                    .required(true)
                    .value_parser(value_parser!(PathBuf)),
            )
            .arg(out_arg())
            .arg(
                Arg::new("threads")
                    .long("threads")
                    .value_name("N")
                    .value_parser(value_parser!(usize)),
            ),
    )
}

fn run(name: &str, m: &ArgMatches) -> Result<Completed, CliError> {
    let out = m.get_one::<PathBuf>("out").expect("defaulted");
    if name == "replay" {
        let manifest = m.get_one::<PathBuf>("manifest").expect("required");
        return replay(manifest, out, m.get_one::<usize>("threads").copied());
    }
    let kind = CommandKind::from_name(name).expect("registered subcommand");
    let flags: BTreeMap<String, String> = kind
        .keys()
        .iter()
        .filter_map(|k| {
            m.get_one::<String>(k.name)
                .map(|v| (k.name.to_string(), v.clone()))
        })
        .collect();
    let env_seed = std::env::var(SEED_ENV).ok();
    let settings = load_settings(
        kind,
        m.get_one::<PathBuf>("config").map(PathBuf::as_path),
        env_seed.as_deref(),
        &flags,
    )?;
    execute(&settings, out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = cli().get_matches();
    let (name, sub) = matches.subcommand().expect("subcommand required");
    match run(name, sub) {
        Ok(done) => {
            println!("{}", done.report);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
