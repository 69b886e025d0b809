// Drives the command-line entry point: synthesize data, train briefly,
// evaluate and run inference on one image.

use artseg::cli::main_with_args;

type Res = Result<(), Box<dyn std::error::Error>>;

fn run(args: &[&str]) -> Result<String, Box<dyn std::error::Error>> {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = main_with_args(std::iter::once("artseg").chain(args.iter().copied()), &mut out, &mut err);
    if code != 0 {
        return Err(format!("artseg {} exited {code}: {}", args[0], String::from_utf8_lossy(&err)).into());
    }
    Ok(String::from_utf8(out)?)
}

pub fn run_example() -> Res {
    let dir = tempfile::tempdir()?;
    let data = dir.path().join("data");
    let out = dir.path().join("run");
    let (data, out) = (data.to_str().ok_or("path")?, out.to_str().ok_or("path")?);
    let model = ["--classes", "3", "--width", "0.125", "--size", "32"];

    run(&["synth", "-n", "3", "--out", data, "--seed", "4", "--classes", "3", "--size", "32"])?;
    let mut train = vec!["train", "--data", data, "--out", out, "--epochs", "3", "--batch", "3"];
    train.extend(model);
    print!("{}", run(&train)?);

    let ckpt = format!("{out}/final.arts");
    print!("{}", run(&["eval", "--data", data, "--out", out, "--checkpoint", &ckpt, "--split", "train", "--size", "32"])?);

    let image = format!("{data}/images/synth_0000.png");
    print!("{}", run(&["infer", "--checkpoint", &ckpt, "--out", out, "--size", "32", &image])?);
    if !std::path::Path::new(out).join("synth_0000_vis.png").is_file() {
        return Err("no visualization written".into());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Res {
    run_example()
}
