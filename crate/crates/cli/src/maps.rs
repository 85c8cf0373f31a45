use anyhow::{anyhow, Context};
use impasto_core::image::{save_plane_png, BitDepth};
use impasto_core::jnd::{quantize_sensitivity, PerceptualMaps};
use impasto_core::{to_luminance, ImageTensor, Plane};

use crate::{Failure, MapsArgs};

/// Scale by the map maximum so that zero stays black.
fn display(p: &Plane) -> Plane {
    let m = p.max();
    if m > 0.0 {
        p.map(|v| v / m)
    } else {
        Plane::zeros(p.height(), p.width())
    }
}

pub fn run(args: MapsArgs) -> Result<(), Failure> {
    if !(args.ppd > 0.0 && args.ppd.is_finite()) {
        return Err(Failure::usage(anyhow!("ppd must be positive")));
    }
    if !args.input.is_file() {
        return Err(Failure::usage(anyhow!("{} is not a file", args.input.display())));
    }
    let go = || -> anyhow::Result<()> {
        let img = ImageTensor::load_png(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
        let maps = PerceptualMaps::compute(&to_luminance(&img)?, args.ppd)?;
        std::fs::create_dir_all(&args.out)?;
        for raw in &maps.raw {
            save_plane_png(&display(&raw.values), args.out.join(format!("{}.png", raw.kind)), BitDepth::Eight)?;
        }
        let mean = maps.mean_sensitivity();
        save_plane_png(mean.plane(), args.out.join("average.png"), BitDepth::Eight)?;
        save_plane_png(quantize_sensitivity(&mean).plane(), args.out.join("quantized.png"), BitDepth::Eight)?;
        Ok(())
    };
    go().map_err(Failure::run)
}
