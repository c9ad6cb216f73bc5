//! `carm` command-line harness: train, attack, defend, and evaluate from
//! the shell, with reproducible seeds and config files.

mod args;
mod commands;
mod source;

pub const USAGE: &str = "\
usage: carm <subcommand> [--flag value ...]

subcommands:
  train      --data SRC --out MODEL [--arch toy|cifar10|gtsrb] [--epochs N]
             [--batch-size N] [--lr F] [--dropout F]
  compress   --in IMG.ppm|DATASET --quality Q --out PATH
  attack     --model MODEL --data SRC --out DATASET
             [--method fgsm|deepfool] [--eps F] [--overshoot F] [--max-iter N]
  sweep      --data SRC --out CSV (--suite DIR and/or --models A.carm,B.carm)
             [--clean SRC] [--qualities phi,100,...,20]
  vaccinate  --model MODEL --data SRC --out-dir DIR [--grid 100:20:10]
             [--epochs N] [--batch-size N] [--lr F] [--dropout F]
  ensemble   --suite DIR --data SRC --out CSV [--clean SRC]
  report     --model MODEL --suite DIR --out CSV
             [--benign SRC] [--fgsm SRC] [--deepfool SRC]

common flags:
  --config FILE   key=value file mirroring the flags; flags override it
  --seed N        run seed (CARM_SEED env is the lowest-precedence default)
  --threads N     evaluation parallelism (0 = all cores); never changes results

dataset sources (SRC):
  synthetic:CLASSES:PER_CLASS:DIM   seeded synthetic shapes
  ppmdir:DIR:INDEX:SIZE             PPM directory with a label index
  path/to/batches | file.bin        CIFAR-10 binary layout
  file.ds                           dataset written by attack/compress";

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation: unknown subcommand, flag, or config key. Exit 2.
    Usage(String),
    /// Anything that went wrong while running the pipeline. Exit 1.
    Pipeline(String),
}

/// Run one invocation; returns the process exit code.
pub fn dispatch(argv: &[String]) -> i32 {
    match run(argv) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("{msg}\n\n{USAGE}");
            2
        }
        Err(CliError::Pipeline(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

fn run(argv: &[String]) -> Result<(), CliError> {
    let Some(sub) = argv.first() else {
        return Err(CliError::Usage("missing subcommand".into()));
    };
    let rest = &argv[1..];
    match sub.as_str() {
        "train" => commands::cmd_train(rest),
        "compress" => commands::cmd_compress(rest),
        "attack" => commands::cmd_attack(rest),
        "sweep" => commands::cmd_sweep(rest),
        "vaccinate" => commands::cmd_vaccinate(rest),
        "ensemble" => commands::cmd_ensemble(rest),
        "report" => commands::cmd_report(rest),
        "help" | "--help" | "-h" => {
            println!("{USAGE}");
            Ok(())
        }
        other => Err(CliError::Usage(format!("unknown subcommand '{other}'"))),
    }
}
