//! Epoch loop: plan, differentiate, step, log, checkpoint.

use crate::autodiff::AdamConfig;
use crate::error::{Error, Result};
use crate::fields::checkpoint::save_checkpoint;
use crate::fields::config::FieldConfig;
use crate::fields::net::FieldPair;
use crate::seed;
use crate::train::batch::{build_epoch_plan, TrainView};
use crate::train::config::TrainConfig;
use crate::train::loss::{epoch_gradients, TermValues};
use crate::{ParamSetS, S};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

#[derive(Clone, Copy, Debug)]
pub struct EpochLog {
    pub epoch: u64,
    pub terms: TermValues,
    pub beta: S,
    pub alpha: S,
}

pub struct TrainResult {
    pub pair: FieldPair,
    pub params: ParamSetS,
    pub log: Vec<EpochLog>,
}

pub const TRAIN_LOG_HEADER: &str = "epoch,mvs,ps,render,mask,eikonal,total,beta,alpha";

/// The single light index used for photometric supervision in a run.
pub fn choose_light_index(run_seed: u64, n_lights: usize) -> usize {
    assert!(n_lights > 0, "a rig needs at least one light");
    (seed::derive(run_seed, "supervision-light") % n_lights as u64) as usize
}

fn log_line(e: &EpochLog) -> String {
    let t = &e.terms;
    format!(
        "{},{},{},{},{},{},{},{},{}",
        e.epoch, t.mvs, t.ps, t.render, t.mask, t.eikonal, t.total, e.beta, e.alpha
    )
}

/// Runs the optimization from scratch or from a restored state.
///
/// One epoch draws a ray batch from every view, accumulates the gradient of
/// the five-term objective, and applies one Adam update. The epoch counter
/// continues from the optimizer's step count, so a restored state replays
/// exactly the remaining epochs. A non-finite objective aborts with an error
/// and leaves the newest on-disk checkpoint untouched.
pub fn train(
    views: &[TrainView],
    field_cfg: &FieldConfig,
    cfg: &TrainConfig,
    resume: Option<(FieldPair, ParamSetS)>,
    log_path: Option<&Path>,
    checkpoint_path: Option<&Path>,
) -> Result<TrainResult> {
    cfg.validate()?;
    for v in views {
        v.validate()?;
    }
    if views.is_empty() {
        return Err(Error::Config("training needs at least one view".into()));
    }

    let (pair, mut params) = match resume {
        Some((pair, params)) => {
            if pair.cfg != *field_cfg {
                return Err(Error::Config(
                    "restored checkpoint architecture disagrees with the requested one".into(),
                ));
            }
            (pair, params)
        }
        None => {
            let mut params = ParamSetS::new();
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, "field-init"));
            let pair = FieldPair::init(field_cfg.clone(), &mut params, &mut rng)?;
            (pair, params)
        }
    };

    let start = params.adam_step_count();
    if start > cfg.epochs {
        return Err(Error::Config(format!(
            "checkpoint already at epoch {start}, beyond the requested {}",
            cfg.epochs
        )));
    }

    let mut writer = match log_path {
        Some(p) => {
            let fresh = start == 0 || !p.exists();
            let file = if fresh {
                File::create(p).map_err(|e| Error::io(p, e))?
            } else {
                File::options()
                    .append(true)
                    .open(p)
                    .map_err(|e| Error::io(p, e))?
            };
            let mut w = BufWriter::new(file);
            if fresh {
                writeln!(w, "{TRAIN_LOG_HEADER}").map_err(|e| Error::io(p, e))?;
            }
            Some((w, p))
        }
        None => None,
    };

    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut log = Vec::with_capacity((cfg.epochs - start) as usize);

    for epoch in start..cfg.epochs {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed::derive_indexed(cfg.seed, "epoch", epoch));
        let plan = build_epoch_plan(views, &pair, &params, cfg, &mut rng);
        let terms = epoch_gradients(&pair, &mut params, &plan, cfg).map_err(|e| {
            Error::Train(format!(
                "epoch {epoch}: {e}; newest checkpoint on disk is still valid"
            ))
        })?;
        params.adam_step(&adam);

        let entry = EpochLog {
            epoch,
            terms,
            beta: pair.beta(&params),
            alpha: pair.alpha(&params),
        };
        if let Some((w, p)) = writer.as_mut() {
            writeln!(w, "{}", log_line(&entry)).map_err(|e| Error::io(*p, e))?;
        }
        log.push(entry);

        let done = epoch + 1;
        if done % cfg.checkpoint_interval.max(1) == 0 || done == cfg.epochs {
            if let Some(p) = checkpoint_path {
                save_checkpoint(p, &pair.cfg, &params)?;
            }
            if let Some((w, p)) = writer.as_mut() {
                w.flush().map_err(|e| Error::io(*p, e))?;
            }
        }
    }
    if let Some((mut w, p)) = writer {
        w.flush().map_err(|e| Error::io(p, e))?;
    }

    Ok(TrainResult { pair, params, log })
}
