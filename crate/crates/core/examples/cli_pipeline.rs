//! The command-line pipeline run in-process on a temporary work directory,
//! followed by a checkpoint round trip.
//!
//! `cargo run --release --example cli_pipeline`

use pwe_fusion::checkpoint::Checkpoint;
use pwe_fusion::cli;

const CONFIG: &str = "\
[suite]
kind = quadratic
T = 2
centers = 1, 0; 0, 1

[train]
steps = 2000
lr = 0.05

[eval]
grid_resolution = 11
";

fn main() -> pwe_fusion::Result<()> {
    let dir = tempfile::tempdir()?;
    let config = dir.path().join("experiment.ini");
    std::fs::write(&config, CONFIG)?;
    let workdir = dir.path().join("run");
    for stage in ["gen-tasks", "finetune", "upscale", "train-routers", "eval-front", "dump-routing", "sweep-lambda"] {
        let args = [
            "pwe",
            "--config",
            config.to_str().expect("utf-8 path"),
            "--workdir",
            workdir.to_str().expect("utf-8 path"),
            stage,
        ];
        println!("$ pwe {stage}");
        let code = cli::run(args);
        if code != 0 {
            eprintln!("{stage} exited with {code}");
            std::process::exit(code);
        }
    }
    print!("\nfront.csv\n{}", std::fs::read_to_string(workdir.join("front.csv"))?);

    let path = workdir.join("trained.ckpt");
    let bytes = std::fs::read(&path)?;
    let ckpt = Checkpoint::load(&path)?;
    println!(
        "\n{} is a {:?} checkpoint of {} bytes; re-encoding is byte-identical: {}",
        path.display(),
        ckpt.kind(),
        bytes.len(),
        ckpt.to_bytes()? == bytes
    );

    let bad = dir.path().join("typo.ini");
    std::fs::write(&bad, format!("{CONFIG}\n[trian]\nlr = 0.1\n"))?;
    let code = cli::run(["pwe", "--config", bad.to_str().expect("utf-8 path"), "gen-tasks"]);
    println!("a config with the key `trian.lr` exits with status {code}");
    Ok(())
}
