use mfmil::synth::{generate, SynthConfig};

use crate::args::GenArgs;
use crate::error::CliResult;
use crate::io::{write_json, Invocation, DATASET_MANIFEST, RUN_MANIFEST};

pub const PLANTED_TRUTH: &str = "planted.json";

pub fn config_from(a: &GenArgs) -> SynthConfig {
    let d = SynthConfig::default();
    SynthConfig {
        n_pos: a.n_pos.unwrap_or(d.n_pos),
        n_neg: a.n_neg.unwrap_or(d.n_neg),
        dim: a.dim.unwrap_or(d.dim),
        signal_strength: a.alpha.unwrap_or(d.signal_strength),
        noise_sigma: a.noise.unwrap_or(d.noise_sigma),
        candidates_per_image: a.candidates.unwrap_or(d.candidates_per_image),
        jitter: a.jitter.unwrap_or(d.jitter),
        clutter_contours: a.clutter.unwrap_or(d.clutter_contours),
        context_signal: a.context_signal.unwrap_or(d.context_signal),
        context: a.context.map(Into::into).unwrap_or(d.context),
        background: !a.no_background,
        flips: a.flips,
        seed: a.seed,
        ..d
    }
}

pub fn run(a: &GenArgs, inv: &Invocation) -> CliResult<()> {
    let cfg = config_from(a);
    let out = generate(&cfg)?;
    let manifest = a.out.join(DATASET_MANIFEST);
    out.dataset.save(&manifest)?;
    let truth = a.out.join(PLANTED_TRUTH);
    write_json(&truth, &out.truth)?;
    let hash = out.dataset.content_hash()?;
    let features = a.out.join(mfmil::dataset::DEFAULT_FEATURES_FILE);
    let rm = inv.manifest(&cfg, &[("seed", cfg.seed)], Some(hash.clone()), &[&manifest, &features, &truth])?;
    write_json(&a.out.join(RUN_MANIFEST), &rm)?;
    println!("dataset {hash}");
    Ok(())
}
