//! Training regimes: generator-only maximum likelihood, adversarial
//! training from scratch, and adversarial training with pretraining,
//! plus the REINFORCE machinery that couples generator and discriminator.

use crate::autodiff::{AdamConfig, AdamState, Value};
use crate::data::Example;
use crate::error::{Error, Result};
use crate::grammar::{actions_to_ast, render_code, sample_random_ast, Action, AstNode, Grammar};
use crate::model::{DiscriminatorModel, GeneratorModel, ProgramEncoderKind, SampleOutcome};
use crate::rng::SeededRng;

/// Per-step rewards of one sampled derivation. Every entry equals the
/// terminal discriminator score; incomplete samples carry zero.
#[derive(Clone, Debug)]
pub struct RewardVector {
    pub per_step: Vec<f32>,
    pub terminal: f32,
}

impl RewardVector {
    pub fn terminal(score: f32, steps: usize) -> RewardVector {
        RewardVector {
            per_step: vec![score; steps],
            terminal: score,
        }
    }

    pub fn incomplete(steps: usize) -> RewardVector {
        RewardVector::terminal(0.0, steps)
    }

    pub fn is_constant(&self) -> bool {
        self.per_step.iter().all(|&r| r == self.terminal)
    }
}

/// Counters, reward baseline, and the per-epoch metric history.
pub struct TrainState {
    pub epoch: usize,
    pub step: usize,
    /// Exponential moving average of batch mean reward, in [0, 1].
    pub baseline: f64,
    pub history: Vec<EpochMetrics>,
    pub rng_seed: u64,
}

impl TrainState {
    pub fn new(rng_seed: u64) -> TrainState {
        TrainState {
            epoch: 0,
            step: 0,
            baseline: 0.0,
            history: Vec::new(),
            rng_seed,
        }
    }
}

const BASELINE_DECAY: f64 = 0.95;

#[derive(Clone, Copy, Debug)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mle_nll: f64,
    pub d_loss: f64,
    pub mean_reward: f64,
    pub dev_exact_match: f64,
}

fn fmt_metric(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else {
        format!("{x:.6}")
    }
}

impl EpochMetrics {
    /// Tab-separated log line: epoch, mle_nll, d_loss, mean_reward,
    /// dev_exact_match.
    pub fn line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.epoch,
            fmt_metric(self.mle_nll),
            fmt_metric(self.d_loss),
            fmt_metric(self.mean_reward),
            fmt_metric(self.dev_exact_match)
        )
    }
}

pub fn metrics_text(history: &[EpochMetrics]) -> String {
    let mut out = String::new();
    for m in history {
        out.push_str(&m.line());
        out.push('\n');
    }
    out
}

// ---- maximum likelihood -----------------------------------------------

/// Mean negative log-likelihood of gold traces over a batch.
pub fn mle_loss(m: &GeneratorModel, batch: &[&Example], g: &Grammar) -> Result<Value> {
    let mut acc: Option<Value> = None;
    for ex in batch {
        let actions = crate::grammar::ast_to_actions(&ex.ast, g).map_err(|e| Error::Corpus {
            record: ex.id.clone(),
            msg: e.to_string(),
        })?;
        let lp = m
            .sequence_log_prob(&ex.nl, &actions, g)
            .map_err(|e| match e {
                Error::IllegalAction { .. } => Error::Corpus {
                    record: ex.id.clone(),
                    msg: e.to_string(),
                },
                other => other,
            })?;
        acc = Some(match acc {
            None => lp,
            Some(a) => a.add(&lp)?,
        });
    }
    acc.ok_or_else(|| Error::Domain {
        op: "mle_loss",
        detail: "empty batch".into(),
    })?
    .mul(&Value::scalar(-1.0 / batch.len() as f32))
}

/// One shuffled pass of minibatch Adam on the corpus; returns the epoch
/// mean NLL.
pub fn mle_epoch(
    m: &GeneratorModel,
    opt: &mut AdamState,
    corpus: &[Example],
    g: &Grammar,
    batch_size: usize,
    rng: &mut SeededRng,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    rng.shuffle(&mut order);
    let mut total = 0.0f64;
    for chunk in order.chunks(batch_size.max(1)) {
        let batch: Vec<&Example> = chunk.iter().map(|&i| &corpus[i]).collect();
        let loss = mle_loss(m, &batch, g)?;
        loss.backward()?;
        opt.step(&m.params)?;
        total += loss.item() as f64 * batch.len() as f64;
    }
    Ok(total / corpus.len().max(1) as f64)
}

/// Forward-only mean NLL (no updates).
pub fn mean_nll(m: &GeneratorModel, corpus: &[Example], g: &Grammar) -> Result<f64> {
    let mut total = 0.0f64;
    for ex in corpus {
        let actions = crate::grammar::ast_to_actions(&ex.ast, g)?;
        let lp = m.sequence_log_prob(&ex.nl, &actions, g)?;
        total -= lp.item() as f64;
    }
    Ok(total / corpus.len().max(1) as f64)
}

// ---- policy gradient ---------------------------------------------------

/// REINFORCE surrogate: `-(1/B) * sum_i adv_i * sum_t log p(a_t)`.
pub fn pg_surrogate_loss(samples: &[SampleOutcome], advantages: &[f32]) -> Result<Value> {
    assert_eq!(samples.len(), advantages.len());
    let b = samples.len() as f32;
    let mut acc: Option<Value> = None;
    for (sample, &adv) in samples.iter().zip(advantages.iter()) {
        let mut sum_lp: Option<Value> = None;
        for lp in &sample.step_log_probs {
            sum_lp = Some(match sum_lp {
                None => lp.clone(),
                Some(a) => a.add(lp)?,
            });
        }
        let Some(sum_lp) = sum_lp else { continue };
        let term = sum_lp.mul(&Value::scalar(-adv / b))?;
        acc = Some(match acc {
            None => term,
            Some(a) => a.add(&term)?,
        });
    }
    acc.ok_or_else(|| Error::Domain {
        op: "pg_surrogate_loss",
        detail: "no samples".into(),
    })
}

pub struct PgStepStats {
    pub mean_reward: f64,
    pub completed: usize,
    pub samples: Vec<SampleOutcome>,
    pub rewards: Vec<RewardVector>,
}

/// One REINFORCE step against an arbitrary reward function (called only on
/// complete samples). The discriminator-backed variant wraps this.
pub fn policy_gradient_step_with(
    m: &GeneratorModel,
    opt: &mut AdamState,
    batch: &[&Example],
    g: &Grammar,
    reward_fn: &mut dyn FnMut(&Example, &[Action]) -> f32,
    state: &mut TrainState,
    rng: &mut SeededRng,
    max_steps: usize,
) -> Result<PgStepStats> {
    let mut samples = Vec::with_capacity(batch.len());
    let mut rewards = Vec::with_capacity(batch.len());
    for ex in batch {
        let sample = m.sample(&ex.nl, g, rng, max_steps)?;
        let reward = if sample.complete {
            RewardVector::terminal(reward_fn(ex, &sample.actions), sample.actions.len())
        } else {
            RewardVector::incomplete(sample.actions.len())
        };
        samples.push(sample);
        rewards.push(reward);
    }
    let completed = samples.iter().filter(|s| s.complete).count();
    let mean_reward = rewards.iter().map(|r| r.terminal as f64).sum::<f64>()
        / batch.len().max(1) as f64;
    if completed == 0 {
        eprintln!(
            "warning: policy gradient batch had no complete samples; skipping update"
        );
    } else {
        let advantages: Vec<f32> = rewards
            .iter()
            .map(|r| r.terminal - state.baseline as f32)
            .collect();
        let loss = pg_surrogate_loss(&samples, &advantages)?;
        loss.backward()?;
        opt.step(&m.params)?;
    }
    state.baseline = BASELINE_DECAY * state.baseline + (1.0 - BASELINE_DECAY) * mean_reward;
    state.step += 1;
    Ok(PgStepStats {
        mean_reward,
        completed,
        samples,
        rewards,
    })
}

/// Terminal reward: the frozen discriminator's match probability of the
/// completed sample.
pub fn discriminator_reward<'a>(
    dis: &'a DiscriminatorModel,
    g: &'a Grammar,
) -> impl FnMut(&Example, &[Action]) -> f32 + 'a {
    move |ex, actions| {
        let ast = actions_to_ast(actions, g).expect("masked samples parse");
        dis.score(&ex.nl, &ast, g)
            .map(|s| s.p_sim_value())
            .unwrap_or(0.0)
    }
}

/// One REINFORCE step with the discriminator frozen as the reward.
#[allow(clippy::too_many_arguments)]
pub fn policy_gradient_step(
    m: &GeneratorModel,
    opt: &mut AdamState,
    batch: &[&Example],
    g: &Grammar,
    dis: &DiscriminatorModel,
    state: &mut TrainState,
    rng: &mut SeededRng,
    max_steps: usize,
) -> Result<PgStepStats> {
    let mut reward = discriminator_reward(dis, g);
    policy_gradient_step_with(m, opt, batch, g, &mut reward, state, rng, max_steps)
}

// ---- discriminator training --------------------------------------------

fn ordinary_code_tokens(dis: &DiscriminatorModel) -> Vec<String> {
    (3..dis.code_vocab.len())
        .map(|i| dis.code_vocab.token(i).to_string())
        .collect()
}

/// Held-out accuracy at threshold 0.5: dev gold pairs as reals, one
/// uniform-random-policy derivation per dev utterance as fakes.
pub fn discriminator_holdout_accuracy(
    dis: &DiscriminatorModel,
    heldout: &[Example],
    g: &Grammar,
    rng: &mut SeededRng,
) -> Result<f64> {
    let pool = ordinary_code_tokens(dis);
    let mut correct = 0usize;
    let mut total = 0usize;
    for ex in heldout {
        let s = dis.score(&ex.nl, &ex.ast, g)?;
        if s.p_sim_value() > 0.5 {
            correct += 1;
        }
        total += 1;
        let fake = sample_random_ast(g, rng, &pool, 4);
        let s = dis.score(&ex.nl, &fake, g)?;
        if s.p_sim_value() <= 0.5 {
            correct += 1;
        }
        total += 1;
    }
    Ok(correct as f64 / total.max(1) as f64)
}

/// Warm up the discriminator on gold pairs vs negatives (half generator
/// samples, half mismatched gold pairs); the generator stays frozen.
/// Returns held-out real/fake accuracy at threshold 0.5.
#[allow(clippy::too_many_arguments)]
pub fn pretrain_discriminator(
    dis: &DiscriminatorModel,
    opt: &mut AdamState,
    corpus: &[Example],
    heldout: &[Example],
    g: &Grammar,
    gen: &GeneratorModel,
    steps: usize,
    batch_size: usize,
    rng: &mut SeededRng,
    max_steps: usize,
) -> Result<f64> {
    let half = (batch_size / 2).max(1);
    for _ in 0..steps {
        let mut owned_fakes: Vec<(Vec<String>, AstNode)> = Vec::new();
        let mut reals: Vec<&Example> = Vec::new();
        for _ in 0..half {
            reals.push(&corpus[rng.below(corpus.len())]);
        }
        for k in 0..half {
            let ex = &corpus[rng.below(corpus.len())];
            if k % 2 == 0 {
                // generator sample; incomplete samples stay out of the pool
                let sample = gen.sample(&ex.nl, g, rng, max_steps)?;
                if sample.complete {
                    let ast = actions_to_ast(&sample.actions, g)?;
                    owned_fakes.push((ex.nl.clone(), ast));
                    continue;
                }
            }
            // mismatched gold pair
            let mut other = rng.below(corpus.len());
            if corpus.len() > 1 {
                while corpus[other].id == ex.id {
                    other = rng.below(corpus.len());
                }
            }
            owned_fakes.push((ex.nl.clone(), corpus[other].ast.clone()));
        }
        let mut batch: Vec<(&[String], &AstNode, bool)> = Vec::new();
        for ex in &reals {
            batch.push((ex.nl.as_slice(), &ex.ast, true));
        }
        for (nl, ast) in &owned_fakes {
            batch.push((nl.as_slice(), ast, false));
        }
        let loss = dis.discriminator_loss(&batch, g)?;
        loss.backward()?;
        opt.step(&dis.params)?;
    }
    discriminator_holdout_accuracy(dis, heldout, g, rng)
}

// ---- evaluation ---------------------------------------------------------

/// Fraction of examples whose beam top-1 rendered code equals the gold
/// code string exactly.
pub fn evaluate_exact_match(
    m: &GeneratorModel,
    corpus: &[Example],
    g: &Grammar,
    beam_width: usize,
    max_steps: usize,
) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::Domain {
            op: "evaluate_exact_match",
            detail: "empty split".into(),
        });
    }
    let mut hits = 0usize;
    for ex in corpus {
        if let Some(best) = m.beam_search(&ex.nl, g, beam_width, max_steps)?.first() {
            let ast = actions_to_ast(&best.actions, g)?;
            if render_code(&ast, g)? == ex.code {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / corpus.len() as f64)
}

/// Per-example pass/fail detail for verbose evaluation.
pub fn exact_match_report(
    m: &GeneratorModel,
    corpus: &[Example],
    g: &Grammar,
    beam_width: usize,
    max_steps: usize,
) -> Result<Vec<(String, bool, String)>> {
    let mut rows = Vec::with_capacity(corpus.len());
    for ex in corpus {
        let rendered = match m.beam_search(&ex.nl, g, beam_width, max_steps)?.first() {
            Some(best) => render_code(&actions_to_ast(&best.actions, g)?, g)?,
            None => String::new(),
        };
        let pass = rendered == ex.code;
        rows.push((ex.id.clone(), pass, rendered));
    }
    Ok(rows)
}

// ---- adversarial loop ----------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct Schedule {
    pub adv_epochs: usize,
    pub d_steps_per_g: usize,
    pub batch_size: usize,
    pub max_steps: usize,
    pub beam_width: usize,
}

pub const COLLAPSE_THRESHOLD: f64 = 0.01;
pub const COLLAPSE_PATIENCE: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub enum TrainOutcome {
    Completed,
    /// Mean reward stayed below the collapse threshold for
    /// `COLLAPSE_PATIENCE` consecutive epochs.
    Collapsed { epoch: usize },
}

/// Alternate policy-gradient generator updates (discriminator frozen) with
/// discriminator updates on fresh samples (generator frozen). Snapshots of
/// the best-dev parameters are kept in `best`.
pub struct AdversarialResult {
    pub outcome: TrainOutcome,
    pub best_dev_exact: f64,
    pub best_gen: Vec<Vec<f32>>,
    pub best_dis: Vec<Vec<f32>>,
}

#[allow(clippy::too_many_arguments)]
pub fn adversarial_loop(
    gen: &GeneratorModel,
    gen_opt: &mut AdamState,
    dis: &DiscriminatorModel,
    dis_opt: &mut AdamState,
    train: &[Example],
    dev: &[Example],
    g: &Grammar,
    schedule: Schedule,
    state: &mut TrainState,
    rng: &mut SeededRng,
) -> Result<AdversarialResult> {
    let mut best_dev = f64::NEG_INFINITY;
    let mut best_gen = gen.params.snapshot();
    let mut best_dis = dis.params.snapshot();
    let mut low_reward_run = 0usize;
    for _ in 0..schedule.adv_epochs {
        state.epoch += 1;
        let mut order: Vec<usize> = (0..train.len()).collect();
        rng.shuffle(&mut order);
        let mut reward_sum = 0.0f64;
        let mut d_loss_sum = 0.0f64;
        let mut d_loss_count = 0usize;
        let mut batches = 0usize;
        for chunk in order.chunks(schedule.batch_size.max(1)) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            let stats = policy_gradient_step(
                gen,
                gen_opt,
                &batch,
                g,
                dis,
                state,
                rng,
                schedule.max_steps,
            )?;
            reward_sum += stats.mean_reward;
            batches += 1;
            for _ in 0..schedule.d_steps_per_g {
                let mut owned_fakes: Vec<(Vec<String>, AstNode)> = Vec::new();
                for ex in &batch {
                    let sample = gen.sample(&ex.nl, g, rng, schedule.max_steps)?;
                    if sample.complete {
                        owned_fakes
                            .push((ex.nl.clone(), actions_to_ast(&sample.actions, g)?));
                    }
                }
                let mut d_batch: Vec<(&[String], &AstNode, bool)> = Vec::new();
                for ex in &batch {
                    d_batch.push((ex.nl.as_slice(), &ex.ast, true));
                }
                for (nl, ast) in &owned_fakes {
                    d_batch.push((nl.as_slice(), ast, false));
                }
                let loss = dis.discriminator_loss(&d_batch, g)?;
                loss.backward()?;
                dis_opt.step(&dis.params)?;
                d_loss_sum += loss.item() as f64;
                d_loss_count += 1;
            }
        }
        let mean_reward = reward_sum / batches.max(1) as f64;
        let d_loss = if d_loss_count == 0 {
            f64::NAN
        } else {
            d_loss_sum / d_loss_count as f64
        };
        let nll = mean_nll(gen, train, g)?;
        let dev_em = evaluate_exact_match(gen, dev, g, schedule.beam_width, schedule.max_steps)?;
        state.history.push(EpochMetrics {
            epoch: state.epoch,
            mle_nll: nll,
            d_loss,
            mean_reward,
            dev_exact_match: dev_em,
        });
        if dev_em > best_dev {
            best_dev = dev_em;
            best_gen = gen.params.snapshot();
            best_dis = dis.params.snapshot();
        }
        if mean_reward < COLLAPSE_THRESHOLD {
            low_reward_run += 1;
            if low_reward_run >= COLLAPSE_PATIENCE {
                return Ok(AdversarialResult {
                    outcome: TrainOutcome::Collapsed { epoch: state.epoch },
                    best_dev_exact: best_dev,
                    best_gen,
                    best_dis,
                });
            }
        } else {
            low_reward_run = 0;
        }
    }
    Ok(AdversarialResult {
        outcome: TrainOutcome::Completed,
        best_dev_exact: best_dev,
        best_gen,
        best_dis,
    })
}

// ---- regime driver -------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    Mle,
    Gan,
    GanPretrain,
}

impl std::str::FromStr for Regime {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mle" => Ok(Regime::Mle),
            "gan" => Ok(Regime::Gan),
            "gan_pretrain" => Ok(Regime::GanPretrain),
            other => Err(format!(
                "unknown regime {other:?} (mle|gan|gan_pretrain)"
            )),
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::Mle => "mle",
            Regime::Gan => "gan",
            Regime::GanPretrain => "gan_pretrain",
        })
    }
}

/// Everything a training run needs; mirrors the operator config.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub regime: Regime,
    pub hidden: usize,
    pub embed: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub gen_lr: f32,
    pub dis_lr: f32,
    pub mle_epochs: usize,
    pub adv_epochs: usize,
    pub d_pretrain_steps: usize,
    pub d_steps_per_g: usize,
    pub beam_width: usize,
    pub max_steps: usize,
    pub max_input_len: usize,
    pub min_freq: usize,
    pub dis_encoder: ProgramEncoderKind,
}

pub struct RunOutput {
    pub gen: GeneratorModel,
    pub dis: DiscriminatorModel,
    pub state: TrainState,
    pub outcome: TrainOutcome,
    /// Held-out discriminator accuracy after pretraining, when that phase
    /// ran.
    pub d_pretrain_accuracy: Option<f64>,
    pub best_dev_exact: f64,
    pub best_gen: Vec<Vec<f32>>,
    pub best_dis: Vec<Vec<f32>>,
    /// Human-readable phase notes for the operator log.
    pub info: Vec<String>,
}

impl RunOutput {
    pub fn metrics_text(&self) -> String {
        metrics_text(&self.state.history)
    }
}

pub fn build_models(
    cfg: &RunConfig,
    g: &Grammar,
    train: &[Example],
) -> Result<(GeneratorModel, DiscriminatorModel)> {
    let (nl_vocab, code_vocab, layout) =
        crate::data::build_vocab(train, cfg.min_freq, g, cfg.max_input_len);
    let gen = GeneratorModel::new(
        cfg.hidden,
        cfg.embed,
        nl_vocab.clone(),
        code_vocab.clone(),
        layout,
        cfg.seed,
    )?;
    let seq_vocab = match cfg.dis_encoder {
        ProgramEncoderKind::Tree => None,
        ProgramEncoderKind::Seq => {
            let toks: Vec<String> = train
                .iter()
                .flat_map(|e| crate::data::tokenize(&e.code))
                .collect();
            Some(crate::data::Vocabulary::build(
                toks.iter().map(|s| s.as_str()),
                cfg.min_freq,
            ))
        }
    };
    let dis = DiscriminatorModel::new(
        cfg.hidden,
        cfg.embed,
        cfg.dis_encoder,
        nl_vocab,
        code_vocab,
        seq_vocab,
        g,
        cfg.seed ^ 0x5f5f_5f5f,
    )?;
    Ok((gen, dis))
}

/// Run one full training regime on a train/dev split. Metric history,
/// phase notes, and best-dev snapshots end up in the returned output.
pub fn run_regime(
    cfg: &RunConfig,
    g: &Grammar,
    train: &[Example],
    dev: &[Example],
) -> Result<RunOutput> {
    if train.is_empty() {
        return Err(Error::Domain {
            op: "run_regime",
            detail: "empty training corpus".into(),
        });
    }
    let (gen, dis) = build_models(cfg, g, train)?;
    let mut gen_opt = AdamState::new(&gen.params, AdamConfig::with_lr(cfg.gen_lr));
    let mut dis_opt = AdamState::new(&dis.params, AdamConfig::with_lr(cfg.dis_lr));
    let mut state = TrainState::new(cfg.seed);
    let mut rng = SeededRng::new(cfg.seed ^ 0x7472_6169);
    let mut info = Vec::new();
    let mut best_dev = f64::NEG_INFINITY;
    let mut best_gen = gen.params.snapshot();
    let mut best_dis = dis.params.snapshot();
    let mut d_pretrain_accuracy = None;

    let mle_epochs = match cfg.regime {
        Regime::Mle | Regime::GanPretrain => cfg.mle_epochs,
        Regime::Gan => 0,
    };
    for _ in 0..mle_epochs {
        state.epoch += 1;
        let nll = mle_epoch(&gen, &mut gen_opt, train, g, cfg.batch_size, &mut rng)?;
        let dev_em = evaluate_exact_match(&gen, dev, g, cfg.beam_width, cfg.max_steps)?;
        state.history.push(EpochMetrics {
            epoch: state.epoch,
            mle_nll: nll,
            d_loss: f64::NAN,
            mean_reward: f64::NAN,
            dev_exact_match: dev_em,
        });
        if dev_em > best_dev {
            best_dev = dev_em;
            best_gen = gen.params.snapshot();
            best_dis = dis.params.snapshot();
        }
    }

    if cfg.regime == Regime::GanPretrain && cfg.d_pretrain_steps > 0 {
        let acc = pretrain_discriminator(
            &dis,
            &mut dis_opt,
            train,
            dev,
            g,
            &gen,
            cfg.d_pretrain_steps,
            cfg.batch_size,
            &mut rng,
            cfg.max_steps,
        )?;
        d_pretrain_accuracy = Some(acc);
        info.push(format!("d_pretrain_holdout_accuracy\t{acc:.6}"));
    }

    let mut outcome = TrainOutcome::Completed;
    if cfg.regime != Regime::Mle && cfg.adv_epochs > 0 {
        let schedule = Schedule {
            adv_epochs: cfg.adv_epochs,
            d_steps_per_g: cfg.d_steps_per_g,
            batch_size: cfg.batch_size,
            max_steps: cfg.max_steps,
            beam_width: cfg.beam_width,
        };
        let result = adversarial_loop(
            &gen,
            &mut gen_opt,
            &dis,
            &mut dis_opt,
            train,
            dev,
            g,
            schedule,
            &mut state,
            &mut rng,
        )?;
        outcome = result.outcome;
        if result.best_dev_exact > best_dev {
            best_dev = result.best_dev_exact;
            best_gen = result.best_gen;
            best_dis = result.best_dis;
        }
        if let TrainOutcome::Collapsed { epoch } = outcome {
            info.push(format!("gan_collapse_at_epoch\t{epoch}"));
        }
    }

    if best_dev == f64::NEG_INFINITY {
        best_dev = f64::NAN;
    }
    Ok(RunOutput {
        gen,
        dis,
        state,
        outcome,
        d_pretrain_accuracy,
        best_dev_exact: best_dev,
        best_gen,
        best_dis,
        info,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_vocab, generate_synthetic_corpus};
    use crate::grammar::{ast_to_actions, load_grammar};

    fn jobs_grammar() -> Grammar {
        load_grammar(include_str!("../assets/jobs.grammar")).unwrap()
    }

    fn tiny_cfg(regime: Regime, seed: u64) -> RunConfig {
        RunConfig {
            regime,
            hidden: 12,
            embed: 8,
            seed,
            batch_size: 8,
            gen_lr: 5e-3,
            dis_lr: 2e-3,
            mle_epochs: 2,
            adv_epochs: 2,
            d_pretrain_steps: 10,
            d_steps_per_g: 1,
            beam_width: 2,
            max_steps: 60,
            max_input_len: 30,
            min_freq: 1,
            dis_encoder: ProgramEncoderKind::Tree,
        }
    }

    fn jobs_models(
        n: usize,
        seed: u64,
    ) -> (Grammar, Vec<Example>, GeneratorModel, DiscriminatorModel) {
        let g = jobs_grammar();
        let mut rng = SeededRng::new(seed);
        let train = generate_synthetic_corpus(&g, n, &mut rng).unwrap();
        let cfg = tiny_cfg(Regime::Mle, seed);
        let (gen, dis) = build_models(&cfg, &g, &train).unwrap();
        (g, train, gen, dis)
    }

    #[test]
    fn one_example_is_memorized_in_200_steps() {
        let g = jobs_grammar();
        let mut rng = SeededRng::new(41);
        let corpus = generate_synthetic_corpus(&g, 1, &mut rng).unwrap();
        let (nl_vocab, code_vocab, layout) = build_vocab(&corpus, 1, &g, 30);
        let gen = GeneratorModel::new(16, 8, nl_vocab, code_vocab, layout, 41).unwrap();
        let mut opt = AdamState::new(&gen.params, AdamConfig::with_lr(0.01));
        let mut rng = SeededRng::new(42);
        let mut nll = f64::INFINITY;
        for _ in 0..200 {
            nll = mle_epoch(&gen, &mut opt, &corpus, &g, 1, &mut rng).unwrap();
        }
        assert!(nll < 0.01, "final NLL {nll}");
    }

    #[test]
    fn first_epoch_improves_nll() {
        let (g, train, gen, _dis) = jobs_models(30, 7);
        let before = mean_nll(&gen, &train, &g).unwrap();
        let mut opt = AdamState::new(&gen.params, AdamConfig::with_lr(1e-3));
        let mut rng = SeededRng::new(8);
        mle_epoch(&gen, &mut opt, &train, &g, 8, &mut rng).unwrap();
        let after = mean_nll(&gen, &train, &g).unwrap();
        assert!(after < before, "NLL {before} -> {after}");
    }

    #[test]
    fn run_regime_is_deterministic() {
        let g = jobs_grammar();
        let mut rng = SeededRng::new(5);
        let corpus = generate_synthetic_corpus(&g, 24, &mut rng).unwrap();
        let (train, dev) = corpus.split_at(18);
        let cfg = tiny_cfg(Regime::GanPretrain, 13);
        let a = run_regime(&cfg, &g, train, dev).unwrap();
        let b = run_regime(&cfg, &g, train, dev).unwrap();
        assert_eq!(a.metrics_text(), b.metrics_text());
        assert!(!a.metrics_text().is_empty());
        for (x, y) in a.gen.params.snapshot().iter().zip(b.gen.params.snapshot()) {
            assert_eq!(x, &y);
        }
    }

    #[test]
    fn reward_equal_to_baseline_leaves_parameters_unchanged() {
        let (g, train, gen, _dis) = jobs_models(8, 9);
        let mut opt = AdamState::new(&gen.params, AdamConfig::with_lr(0.05));
        let mut state = TrainState::new(0);
        state.baseline = 0.5;
        let before = gen.params.snapshot();
        let batch: Vec<&Example> = train.iter().take(4).collect();
        let mut rng = SeededRng::new(10);
        let mut reward = |_: &Example, _: &[Action]| 0.5f32;
        policy_gradient_step_with(
            &gen, &mut opt, &batch, &g, &mut reward, &mut state, &mut rng, 60,
        )
        .unwrap();
        for (b, a) in before.iter().zip(gen.params.snapshot().iter()) {
            assert_eq!(b, a, "centered reward must not move parameters");
        }
    }

    #[test]
    fn bandit_reward_raises_target_log_prob() {
        // two single-step derivations; reward 1 for exactly one of them
        let g = load_grammar("S -> A()\nS -> B()").unwrap();
        let ex = Example {
            id: "bandit".into(),
            nl: vec!["go".into()],
            code: "a()".into(),
            ast: crate::grammar::parse_code("a()", &g).unwrap(),
        };
        let corpus = vec![ex];
        let (nl_vocab, code_vocab, layout) = build_vocab(&corpus, 1, &g, 8);
        let gen = GeneratorModel::new(8, 6, nl_vocab, code_vocab, layout, 3).unwrap();
        let mut opt = AdamState::new(&gen.params, AdamConfig::with_lr(0.05));
        let mut state = TrainState::new(0);
        let target = vec![Action::ApplyRule(0)];
        let before = gen
            .sequence_log_prob(&corpus[0].nl, &target, &g)
            .unwrap()
            .item();
        let mut rng = SeededRng::new(11);
        let batch: Vec<&Example> = corpus.iter().collect();
        for _ in 0..100 {
            let mut reward = |_: &Example, actions: &[Action]| {
                if actions == [Action::ApplyRule(0)] {
                    1.0f32
                } else {
                    0.0
                }
            };
            policy_gradient_step_with(
                &gen, &mut opt, &batch, &g, &mut reward, &mut state, &mut rng, 8,
            )
            .unwrap();
        }
        let after = gen
            .sequence_log_prob(&corpus[0].nl, &target, &g)
            .unwrap()
            .item();
        assert!(
            after > before,
            "target log-prob should increase: {before} -> {after}"
        );
        assert!(after.exp() > 0.9, "target prob {}", after.exp());
    }

    #[test]
    fn unit_reward_zero_baseline_matches_mle_gradients_on_own_samples() {
        let (g, train, gen, _dis) = jobs_models(6, 15);
        let batch: Vec<&Example> = train.iter().take(3).collect();
        // sample once with a fixed seed, compute PG surrogate grads
        let mut rng = SeededRng::new(77);
        let mut samples = Vec::new();
        for ex in &batch {
            samples.push(gen.sample(&ex.nl, &g, &mut rng, 60).unwrap());
        }
        assert!(samples.iter().all(|s| s.complete));
        let advantages = vec![1.0f32; samples.len()];
        let loss = pg_surrogate_loss(&samples, &advantages).unwrap();
        gen.params.zero_grads();
        loss.backward().unwrap();
        let pg_grads: Vec<Vec<f32>> =
            gen.params.values().map(|v| v.grad().clone()).collect();
        // MLE loss on the same action sequences as pseudo-gold
        gen.params.zero_grads();
        let mut acc: Option<Value> = None;
        for (ex, s) in batch.iter().zip(samples.iter()) {
            let lp = gen.sequence_log_prob(&ex.nl, &s.actions, &g).unwrap();
            acc = Some(match acc {
                None => lp,
                Some(a) => a.add(&lp).unwrap(),
            });
        }
        let mle = acc
            .unwrap()
            .mul(&Value::scalar(-1.0 / batch.len() as f32))
            .unwrap();
        mle.backward().unwrap();
        for (pg, v) in pg_grads.iter().zip(gen.params.values()) {
            for (a, b) in pg.iter().zip(v.grad().iter()) {
                assert!(
                    (a - b).abs() <= 1e-6,
                    "PG and MLE gradients diverge: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn freezing_contracts_hold_bitwise() {
        let (g, train, gen, dis) = jobs_models(8, 16);
        let batch: Vec<&Example> = train.iter().take(4).collect();
        // discriminator untouched by a PG step
        let mut gen_opt = AdamState::new(&gen.params, AdamConfig::with_lr(1e-3));
        let mut state = TrainState::new(0);
        let mut rng = SeededRng::new(17);
        let dis_before = dis.params.snapshot();
        policy_gradient_step(
            &gen, &mut gen_opt, &batch, &g, &dis, &mut state, &mut rng, 60,
        )
        .unwrap();
        assert_eq!(dis_before, dis.params.snapshot());
        // generator untouched by a discriminator update
        let mut dis_opt = AdamState::new(&dis.params, AdamConfig::with_lr(1e-3));
        let gen_before = gen.params.snapshot();
        let d_batch: Vec<(&[String], &AstNode, bool)> = batch
            .iter()
            .enumerate()
            .map(|(i, ex)| (ex.nl.as_slice(), &ex.ast, i % 2 == 0))
            .collect();
        let loss = dis.discriminator_loss(&d_batch, &g).unwrap();
        loss.backward().unwrap();
        dis_opt.step(&dis.params).unwrap();
        assert_eq!(gen_before, gen.params.snapshot());
    }

    #[test]
    fn all_incomplete_batch_skips_the_update() {
        let (g, train, gen, _dis) = jobs_models(4, 18);
        let mut opt = AdamState::new(&gen.params, AdamConfig::with_lr(0.05));
        let mut state = TrainState::new(0);
        let before = gen.params.snapshot();
        let batch: Vec<&Example> = train.iter().take(2).collect();
        let mut rng = SeededRng::new(19);
        let mut reward = |_: &Example, _: &[Action]| 1.0f32;
        // max_steps 1: nothing can complete
        let stats = policy_gradient_step_with(
            &gen, &mut opt, &batch, &g, &mut reward, &mut state, &mut rng, 1,
        )
        .unwrap();
        assert_eq!(stats.completed, 0);
        assert_eq!(stats.mean_reward, 0.0);
        assert_eq!(before, gen.params.snapshot());
    }

    #[test]
    fn zero_head_discriminator_scores_half_on_balanced_data() {
        let (g, train, gen, dis) = jobs_models(10, 20);
        let _ = gen;
        dis.zero_head();
        let mut rng = SeededRng::new(21);
        let acc = discriminator_holdout_accuracy(&dis, &train, &g, &mut rng).unwrap();
        assert_eq!(acc, 0.5);
    }

    #[test]
    fn label_flip_flips_accuracy() {
        let (g, train, _gen, dis) = jobs_models(10, 22);
        let mut rng = SeededRng::new(23);
        let pool = ordinary_code_tokens(&dis);
        // balanced labelled set: gold pairs real, random derivations fake
        let mut items: Vec<(&Example, AstNode, bool)> = Vec::new();
        for ex in &train {
            items.push((ex, ex.ast.clone(), true));
            items.push((ex, sample_random_ast(&g, &mut rng, &pool, 4), false));
        }
        let acc = |flip: bool| -> f64 {
            let mut correct = 0usize;
            for (ex, ast, label) in &items {
                let predicted_real =
                    dis.score(&ex.nl, ast, &g).unwrap().p_sim_value() > 0.5;
                let label = if flip { !label } else { *label };
                if predicted_real == label {
                    correct += 1;
                }
            }
            correct as f64 / items.len() as f64
        };
        let plain = acc(false);
        let flipped = acc(true);
        assert!((plain + flipped - 1.0).abs() < 1e-12);
    }

    #[test]
    fn discriminator_loss_decreases_over_fifty_steps_on_separable_batch() {
        let (g, train, _gen, dis) = jobs_models(8, 24);
        let mut rng = SeededRng::new(25);
        let pool = ordinary_code_tokens(&dis);
        let fakes: Vec<(Vec<String>, AstNode)> = train
            .iter()
            .map(|ex| (ex.nl.clone(), sample_random_ast(&g, &mut rng, &pool, 4)))
            .collect();
        let mut batch: Vec<(&[String], &AstNode, bool)> = Vec::new();
        for ex in &train {
            batch.push((ex.nl.as_slice(), &ex.ast, true));
        }
        for (nl, ast) in &fakes {
            batch.push((nl.as_slice(), ast, false));
        }
        let mut opt = AdamState::new(&dis.params, AdamConfig::with_lr(2e-3));
        let mut prev = f64::INFINITY;
        for step in 0..50 {
            let loss = dis.discriminator_loss(&batch, &g).unwrap();
            let now = loss.item() as f64;
            assert!(now < prev, "loss rose at step {step}: {prev} -> {now}");
            prev = now;
            loss.backward().unwrap();
            opt.step(&dis.params).unwrap();
        }
    }

    #[test]
    fn collapse_guard_halts_after_three_low_epochs() {
        let (g, corpus, gen, dis) = jobs_models(12, 26);
        let (train, dev) = corpus.split_at(9);
        // pin the discriminator to "mismatch" so rewards stay ~0
        {
            let b = dis.params.get("dis.head.b").unwrap();
            let mut d = b.data_mut();
            d[0] = -40.0;
            d[1] = 40.0;
        }
        let mut gen_opt = AdamState::new(&gen.params, AdamConfig::with_lr(1e-3));
        let mut dis_opt = AdamState::new(&dis.params, AdamConfig::with_lr(1e-3));
        let mut state = TrainState::new(0);
        let mut rng = SeededRng::new(27);
        let schedule = Schedule {
            adv_epochs: 10,
            d_steps_per_g: 0, // discriminator never recovers
            batch_size: 4,
            max_steps: 60,
            beam_width: 1,
        };
        let result = adversarial_loop(
            &gen, &mut gen_opt, &dis, &mut dis_opt, train, dev, &g, schedule, &mut state,
            &mut rng,
        )
        .unwrap();
        assert_eq!(result.outcome, TrainOutcome::Collapsed { epoch: 3 });
        assert_eq!(state.history.len(), 3);
    }

    #[test]
    fn gan_pretrain_with_zero_adversarial_epochs_reduces_to_mle() {
        let g = jobs_grammar();
        let mut rng = SeededRng::new(28);
        let corpus = generate_synthetic_corpus(&g, 20, &mut rng).unwrap();
        let (train, dev) = corpus.split_at(15);
        let mut cfg = tiny_cfg(Regime::GanPretrain, 29);
        cfg.adv_epochs = 0;
        cfg.d_pretrain_steps = 0;
        let a = run_regime(&cfg, &g, train, dev).unwrap();
        cfg.regime = Regime::Mle;
        let b = run_regime(&cfg, &g, train, dev).unwrap();
        assert_eq!(a.metrics_text(), b.metrics_text());
        assert_eq!(a.gen.params.snapshot(), b.gen.params.snapshot());
    }

    #[test]
    fn reward_vector_entries_are_constant_and_bounded() {
        let r = RewardVector::terminal(0.73, 5);
        assert!(r.is_constant());
        assert!(r.per_step.iter().all(|&x| (0.0..=1.0).contains(&x)));
        let z = RewardVector::incomplete(3);
        assert!(z.is_constant() && z.terminal == 0.0);
    }

    #[test]
    fn regime_names_roundtrip() {
        for r in [Regime::Mle, Regime::Gan, Regime::GanPretrain] {
            assert_eq!(r.to_string().parse::<Regime>().unwrap(), r);
        }
        assert!("bogus".parse::<Regime>().is_err());
    }
}
