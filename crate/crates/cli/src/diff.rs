use anyhow::{anyhow, Context};
use impasto_core::image::{encode_png, BitDepth};
use impasto_core::ImageTensor;

use crate::{DiffArgs, Failure};

pub fn run(args: DiffArgs) -> Result<(), Failure> {
    if !(args.gain >= 0.0 && args.gain.is_finite()) {
        return Err(Failure::usage(anyhow!("gain must be finite and non-negative")));
    }
    for p in [&args.a, &args.b] {
        if !p.is_file() {
            return Err(Failure::usage(anyhow!("{} is not a file", p.display())));
        }
    }
    let a = ImageTensor::load_png(&args.a).with_context(|| format!("reading {}", args.a.display())).map_err(Failure::run)?;
    let b = ImageTensor::load_png(&args.b).with_context(|| format!("reading {}", args.b.display())).map_err(Failure::run)?;
    a.ensure_same_shape(&b, "difference").map_err(Failure::run)?;
    let d = a.zip_map(&b, |p, q| ((p - q).abs() * args.gain).clamp(0.0, 1.0));
    let bytes = encode_png(&d, BitDepth::Sixteen).map_err(Failure::run)?;
    std::fs::write(&args.out, bytes)
        .with_context(|| format!("writing {}", args.out.display()))
        .map_err(Failure::run)
}
