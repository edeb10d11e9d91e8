use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::state::{read_json, write_json, RunDir, RunState, Stage};
use crate::adjust_infer::{literal_sample, personalized_sample, save_samples, InferenceRequest};
use crate::augment::candidates::{load_pool, save_pool, score_pool, write_manifest};
use crate::augment::{
    append_decision, apply_decisions, auto_filter, oracle_review, Reviewer, finalize_sets, generate_candidates, load_decisions, novel_prompts,
    synthesize_prompts, Candidate, CuratedSet, CurationDecision, PromptSet,
};
use crate::error::{Error, IoContext, Result};
use crate::evalharness::{
    evaluate, render_markdown, sample_family, write_readings, Condition, EvalReport, FamilyMode, ResolveContext,
    SweepConfig,
};
use crate::par::Exec;
use crate::personalize::{dual_train, make_prior_set, prelearn, TrainingPair};
use crate::rng::derive;
use crate::synthdata::corpus::{build_corpus_with, load_images, load_manifest, MANIFEST};
use crate::synthdata::Image;
use crate::toydiff::train::{JsonLines, LabeledImage};
use crate::toydiff::{build_schedule, load_checkpoint, save_checkpoint, train_base, Checkpoint};

/// An open run directory with its configuration and state.
#[derive(Debug, Clone)]
pub struct Run {
    pub dir: RunDir,
    pub config: RunConfig,
    pub state: RunState,
    pub exec: Exec,
}

impl Run {
    /// Opens an existing run, or creates it with `config` (defaults when
    /// `None`). A different `config` for an existing run is stored and rolls
    /// the run back to the last stage it does not affect.
    pub fn open_or_create(root: &Path, config: Option<RunConfig>) -> Result<Run> {
        let dir = RunDir::new(root);
        if dir.exists() {
            let mut run = Run::open(root)?;
            if let Some(cfg) = config {
                cfg.validate()?;
                let cfg = cfg.normalized();
                if let Some(stage) = run.config.first_invalidated(&cfg) {
                    dir.ensure_unlocked()?;
                    log::info!("config change invalidates {stage} and later stages");
                    run.state.invalidate_from(stage, &cfg.hash());
                    if stage == Stage::BaseTrained && run.config.corpus != cfg.corpus {
                        run.state.artifacts.remove("corpus");
                    }
                }
                run.config = cfg;
                write_json(&dir.config(), &run.config)?;
                run.state.config_hash = run.config.hash();
                dir.save_state(&run.state)?;
            }
            return Ok(run);
        }
        let cfg = config.unwrap_or_default();
        cfg.validate()?;
        let cfg = cfg.normalized();
        fs::create_dir_all(&dir.root).at(&dir.root)?;
        write_json(&dir.config(), &cfg)?;
        let state = RunState::new(&dir.id(), &cfg.hash());
        dir.save_state(&state)?;
        Ok(Run {
            dir,
            config: cfg,
            state,
            exec: Exec::default(),
        })
    }

    pub fn open(root: &Path) -> Result<Run> {
        let dir = RunDir::new(root);
        if !dir.exists() {
            return Err(Error::Validation(format!("no run at {}", root.display())));
        }
        let config: RunConfig = read_json(&dir.config())?;
        let state = dir.load_state()?;
        Ok(Run {
            dir,
            config: config.normalized(),
            state,
            exec: Exec::default(),
        })
    }

    fn commit(&mut self, stage: Stage, artifacts: &[(&str, String)]) -> Result<()> {
        for (k, v) in artifacts {
            self.state.artifacts.insert((*k).into(), v.clone());
        }
        self.state.advance(stage, &self.config.hash());
        self.dir.save_state(&self.state)
    }

    fn seed(&self, label: &str) -> u64 {
        derive(self.config.seed, label, 0)
    }

    fn checkpoint(&self, name: &str) -> Result<Checkpoint> {
        load_checkpoint(&self.dir.checkpoint(name))
    }

    /// The dual checkpoint once trained, otherwise the prelearned one.
    pub fn best_checkpoint(&self) -> Result<Checkpoint> {
        if self.state.stage >= Stage::DualTrained {
            self.checkpoint("dual")
        } else {
            self.state.require(Stage::Prelearned)?;
            self.checkpoint("prelearned")
        }
    }

    pub fn references(&self) -> Result<Vec<Image>> {
        Ok(load_images(&self.dir.refs())?.into_iter().map(|(_, im)| im).collect())
    }

    pub fn resolve_context(&self) -> ResolveContext {
        ResolveContext {
            reference: self.config.corpus.reference,
            target_axis: self.config.augment.target_axis,
        }
    }

    fn training_guard(&self) -> Result<()> {
        self.dir.ensure_unlocked()
    }

    /// Renders the corpus and references.
    pub fn synth(&mut self) -> Result<()> {
        self.training_guard()?;
        build_corpus_with(&self.config.corpus, &self.dir.corpus(), &self.dir.refs(), self.exec)?;
        self.state.artifacts.insert("corpus".into(), format!("corpus/{MANIFEST}"));
        self.state.artifacts.insert("refs".into(), format!("refs/{MANIFEST}"));
        self.dir.save_state(&self.state)
    }

    fn ensure_corpus(&mut self) -> Result<()> {
        if self.state.artifacts.contains_key("corpus") && self.dir.corpus().join(MANIFEST).is_file() {
            Ok(())
        } else {
            self.synth()
        }
    }

    pub fn train_base(&mut self) -> Result<()> {
        self.training_guard()?;
        self.ensure_corpus()?;
        let records = load_manifest(&self.dir.corpus().join(MANIFEST))?;
        let corpus = self
            .exec
            .map(&records, |r| Image::load_png(&self.dir.corpus().join(&r.path)))
            .into_iter()
            .zip(&records)
            .map(|(im, r)| Ok(LabeledImage { attrs: r.attrs, image: im? }))
            .collect::<Result<Vec<_>>>()?;
        let s = &self.config.schedule;
        let schedule = build_schedule(s.t_train, s.beta_start, s.beta_end)?;
        let mut cfg = self.config.base.clone();
        cfg.seed = self.seed("base");
        let mut log = self.log_writer("base")?;
        let ckpt = train_base(&corpus, &self.config.model, &schedule, &cfg, &mut log, self.exec)?;
        self.save_ckpt("base", &ckpt)?;
        self.commit(Stage::BaseTrained, &[("base", "checkpoints/base.uvap".into())])
    }

    fn log_writer(&self, name: &str) -> Result<JsonLines<std::io::BufWriter<fs::File>>> {
        let dir = self.dir.logs();
        fs::create_dir_all(&dir).at(&dir)?;
        let path = dir.join(format!("{name}.jsonl"));
        let f = fs::File::create(&path).at(&path)?;
        Ok(JsonLines(std::io::BufWriter::new(f)))
    }

    fn save_ckpt(&self, name: &str, ckpt: &Checkpoint) -> Result<()> {
        let dir = self.dir.checkpoints();
        fs::create_dir_all(&dir).at(&dir)?;
        save_checkpoint(ckpt, &self.dir.checkpoint(name))
    }

    pub fn prelearn(&mut self) -> Result<()> {
        self.training_guard()?;
        self.state.require(Stage::BaseTrained)?;
        let base = self.checkpoint("base")?;
        let cfg = &self.config.prelearn;
        let sampler = self.config.inference.sampler();
        let priors = make_prior_set(&base, &cfg.class_word, cfg.n_prior, self.seed("prior"), &sampler, self.exec)?;
        let pdir = self.dir.priors();
        if pdir.exists() {
            fs::remove_dir_all(&pdir).at(&pdir)?;
        }
        fs::create_dir_all(&pdir).at(&pdir)?;
        for (k, im) in priors.iter().enumerate() {
            im.save_png(&pdir.join(format!("{k:03}.png")))?;
        }
        let refs = self.references()?;
        let mut log = self.log_writer("prelearn")?;
        let g0 = prelearn(&base, &refs, &priors, cfg, self.seed("prelearn"), &mut log, self.exec)?;
        self.save_ckpt("prelearned", &g0)?;
        self.commit(Stage::Prelearned, &[("prelearned", "checkpoints/prelearned.uvap".into())])
    }

    pub fn augment(&mut self) -> Result<()> {
        self.training_guard()?;
        self.state.require(Stage::Prelearned)?;
        let g0 = self.checkpoint("prelearned")?;
        let a = &self.config.augment;
        let q = self.config.query();
        let prompts = synthesize_prompts(&q, &g0.model.vocab, a.n_each, &a.source)?;
        let sampler = self.config.inference.sampler();
        let mut pool = generate_candidates(&g0, &prompts, a.per_prompt, self.seed("candidates"), &sampler, self.exec)?;
        score_pool(&mut pool, &self.references()?, self.exec)?;
        pool.candidates = auto_filter(&pool.candidates, a.fraction)?;
        let dir = self.dir.candidates();
        if dir.exists() {
            fs::remove_dir_all(&dir).at(&dir)?;
        }
        let decisions = self.dir.decisions();
        if decisions.exists() {
            let stale = self.dir.root.join("decisions.stale.jsonl");
            log::warn!("new candidate pool; moving old decisions to {}", stale.display());
            fs::rename(&decisions, &stale).at(&decisions)?;
        }
        save_pool(&dir, &pool)?;
        write_json(&dir.join("prompts.json"), &prompts)?;
        self.commit(Stage::CandidatesReady, &[("candidates", "candidates/pool.jsonl".into())])
    }

    pub fn pool(&self) -> Result<Vec<Candidate>> {
        self.state.require(Stage::CandidatesReady)?;
        load_pool(&self.dir.candidates())
    }

    /// The pool with the decisions file applied.
    pub fn reviewed_pool(&self) -> Result<Vec<Candidate>> {
        let pool = self.pool()?;
        apply_decisions(&pool, &load_decisions(&self.dir.decisions())?)
    }

    pub fn prompts(&self) -> Result<PromptSet> {
        read_json(&self.dir.candidates().join("prompts.json"))
    }

    /// Appends a human decision after checking it targets an auto-kept
    /// candidate.
    pub fn record_decision(&self, d: &CurationDecision) -> Result<()> {
        let pool = self.pool()?;
        match pool.iter().find(|c| c.id == d.candidate_id) {
            None => Err(Error::Validation(format!("unknown candidate {}", d.candidate_id))),
            Some(c) if !c.auto_kept => Err(Error::Validation(format!("candidate {} was not auto-kept", c.id))),
            Some(_) => append_decision(&self.dir.decisions(), d),
        }
    }

    fn curated_sets(&self, m: usize) -> Result<(CuratedSet, CuratedSet)> {
        let pool = self.pool()?;
        let decisions = load_decisions(&self.dir.decisions())?;
        finalize_sets(&pool, &decisions, m, &self.config.query())
    }

    /// Curates with the decisions file plus automatic fill.
    pub fn finalize(&mut self, m: usize) -> Result<(usize, usize)> {
        self.state.require(Stage::CandidatesReady)?;
        let (plus, minus) = self.curated_sets(m)?;
        let dir = self.dir.curated();
        write_json(&dir.join("plus.json"), &plus)?;
        write_json(&dir.join("minus.json"), &minus)?;
        if self.state.stage > Stage::Curated {
            self.state.invalidate_from(Stage::DualTrained, &self.config.hash());
        }
        self.commit(
            Stage::Curated,
            &[
                ("curated_plus", "curated/plus.json".into()),
                ("curated_minus", "curated/minus.json".into()),
            ],
        )?;
        Ok((plus.pairs.len(), minus.pairs.len()))
    }

    /// Headless curation. With the oracle reviewer, its decisions are written
    /// first unless the decisions file already has some.
    pub fn curate_auto(&mut self) -> Result<(usize, usize)> {
        self.training_guard()?;
        self.state.require(Stage::CandidatesReady)?;
        if self.config.augment.reviewer == Reviewer::Oracle && load_decisions(&self.dir.decisions())?.is_empty() {
            let decisions = oracle_review(&self.pool()?, &self.dir.candidates(), &self.resolve_context(), self.exec)?;
            for d in &decisions {
                append_decision(&self.dir.decisions(), d)?;
            }
        }
        self.finalize(self.config.dual.m)
    }

    fn training_pairs(&self, set: &CuratedSet) -> Result<Vec<TrainingPair>> {
        set.pairs
            .iter()
            .map(|p| {
                Ok(TrainingPair {
                    caption: p.caption.clone(),
                    image: Image::load_png(&self.dir.candidates().join(&p.path))?,
                })
            })
            .collect()
    }

    fn train_dual(&self, plus: &CuratedSet, minus: &CuratedSet, log_name: &str) -> Result<Checkpoint> {
        let g0 = self.checkpoint("prelearned")?;
        let plus = self.training_pairs(plus)?;
        let minus = self.training_pairs(minus)?;
        let mut log = self.log_writer(log_name)?;
        dual_train(&g0, &plus, &minus, &self.config.dual.train, self.seed("dual"), &mut log, self.exec)
    }

    pub fn dual_train(&mut self) -> Result<()> {
        self.training_guard()?;
        self.state.require(Stage::Curated)?;
        let dir = self.dir.curated();
        let plus: CuratedSet = read_json(&dir.join("plus.json"))?;
        let minus: CuratedSet = read_json(&dir.join("minus.json"))?;
        let ckpt = self.train_dual(&plus, &minus, "dual")?;
        self.save_ckpt("dual", &ckpt)?;
        self.commit(Stage::DualTrained, &[("dual", "checkpoints/dual.uvap".into())])
    }

    /// Samples a request with the best checkpoint and writes it under
    /// `samples/<name>`.
    pub fn sample(&self, req: &InferenceRequest, name: &str) -> Result<Vec<Image>> {
        let ckpt = self.best_checkpoint()?;
        let images = if req.specs.is_empty() && !has_slot(&req.prompt) {
            literal_sample(req, &ckpt, self.exec)?
        } else {
            self.state.require(Stage::DualTrained)?;
            personalized_sample(req, &ckpt, self.exec)?
        };
        save_samples(&self.dir.samples().join(name), req, &images)?;
        Ok(images)
    }

    fn sweep_config(&self, family_len: usize) -> SweepConfig {
        let per = self.config.eval.seeds_per_condition.div_ceil(family_len.max(1));
        SweepConfig {
            seed: self.seed("eval"),
            count: per,
            steps: self.config.inference.steps,
            guidance: self.config.inference.guidance,
        }
    }

    fn eval_family(
        &self,
        ckpt: &Checkpoint,
        name: &str,
        family: &[String],
        mode: FamilyMode,
        method: &str,
        m: Option<usize>,
        refs: &[Image],
    ) -> Result<NamedReport> {
        let cfg = self.sweep_config(family.len());
        let (images, prompts, seeds) = sample_family(ckpt, family, mode, &cfg, self.exec)?;
        let condition = Condition {
            method: method.into(),
            lambda: match mode {
                FamilyMode::Adjusted(l) => Some(l),
                FamilyMode::Literal => None,
            },
            m,
            prompt_family: name.into(),
        };
        let (report, records) = evaluate(&images, &prompts, &seeds, &self.resolve_context(), refs, condition, self.exec)?;
        let key = report_key(&report);
        let rdir = self.dir.reports().join("readings");
        fs::create_dir_all(&rdir).at(&rdir)?;
        write_readings(&rdir.join(format!("{key}.jsonl")), &records)?;
        Ok(NamedReport { key, report })
    }

    /// Lambda sweep of the dual checkpoint on the novel-concept family.
    pub fn sweep(&self, lambdas: &[f64]) -> Result<Vec<NamedReport>> {
        self.state.require(Stage::DualTrained)?;
        let dual = self.checkpoint("dual")?;
        let refs = self.references()?;
        let q = self.config.query();
        let family = novel_prompts(&q, &q.identifier);
        let mut out = Vec::new();
        for &l in lambdas {
            out.push(self.eval_family(&dual, "novel", &family, FamilyMode::Adjusted(l), "u-vap", None, &refs)?);
        }
        let reports: Vec<&EvalReport> = out.iter().map(|r| &r.report).collect();
        write_json(&self.dir.reports().join("sweep.json"), &reports)?;
        Ok(out)
    }

    /// Full evaluation suite; writes `reports/`.
    pub fn evaluate(&mut self) -> Result<EvalSummary> {
        self.training_guard()?;
        self.state.require(Stage::DualTrained)?;
        let refs = self.references()?;
        let q = self.config.query();
        let lambda = self.config.inference.lambda;
        let dual = self.checkpoint("dual")?;
        let g0 = self.checkpoint("prelearned")?;
        let base = self.checkpoint("base")?;
        let novel = novel_prompts(&q, &q.identifier);
        let mut reports = Vec::new();

        let mut lambdas = self.config.eval.lambdas.clone();
        for l in [0.0, lambda] {
            if !lambdas.contains(&l) {
                lambdas.push(l);
            }
        }
        for &l in &lambdas {
            reports.push(self.eval_family(&dual, "novel", &novel, FamilyMode::Adjusted(l), "u-vap", None, &refs)?);
        }
        reports.push(self.eval_family(&g0, "novel", &novel, FamilyMode::Literal, "prelearn-only", None, &refs)?);
        for (tok, method) in [(&q.tgt, "tgt-literal"), (&q.ngt, "ngt-literal")] {
            let family = novel_prompts(&q, tok);
            reports.push(self.eval_family(&dual, "novel", &family, FamilyMode::Literal, method, None, &refs)?);
        }
        let class = vec![crate::personalize::prior_caption(&self.config.prelearn.class_word)];
        reports.push(self.eval_family(&base, "class", &class, FamilyMode::Literal, "base", None, &refs)?);
        let sks_class = vec![self.config.prelearn.reference_caption()];
        reports.push(self.eval_family(&g0, "class", &sks_class, FamilyMode::Literal, "prelearn-only", None, &refs)?);

        for &m in &self.config.eval.m_values {
            let ckpt = if m == self.config.dual.m {
                dual.clone()
            } else {
                let (plus, minus) = self.curated_sets(m)?;
                self.train_dual(&plus, &minus, &format!("dual_m{m}"))?
            };
            reports.push(self.eval_family(&ckpt, "novel", &novel, FamilyMode::Adjusted(lambda), "u-vap", Some(m), &refs)?);
        }

        let summary = EvalSummary::from_reports(&reports, lambda, &self.config.eval.m_values);
        let rdir = self.dir.reports();
        let all: Vec<&EvalReport> = reports.iter().map(|r| &r.report).collect();
        write_json(&rdir.join("eval.json"), &all)?;
        let owned: Vec<EvalReport> = all.iter().map(|r| (*r).clone()).collect();
        fs::write(rdir.join("summary.md"), render_markdown(&owned)).at(rdir.join("summary.md"))?;
        write_json(&rdir.join("claims.json"), &summary)?;
        if let Some(main) = reports.iter().find(|r| r.report.condition.method == "u-vap" && r.report.condition.lambda == Some(lambda) && r.report.condition.m.is_none()) {
            write_json(&rdir.join("latest.json"), &main.report)?;
        }
        self.commit(Stage::Evaluated, &[("report", "reports/latest.json".into())])?;
        Ok(summary)
    }

    /// Runs every remaining stage with automatic curation.
    pub fn pipeline(&mut self) -> Result<EvalSummary> {
        if self.state.stage < Stage::BaseTrained {
            self.synth()?;
            self.train_base()?;
        }
        if self.state.stage < Stage::Prelearned {
            self.prelearn()?;
        }
        if self.state.stage < Stage::CandidatesReady {
            self.augment()?;
        }
        if self.state.stage < Stage::Curated {
            self.curate_auto()?;
        }
        if self.state.stage < Stage::DualTrained {
            self.dual_train()?;
        }
        self.evaluate()
    }

    /// Rewrites the candidate manifest; used after re-scoring.
    pub fn write_pool(&self, pool: &[Candidate]) -> Result<()> {
        write_manifest(&self.dir.candidates(), pool)
    }
}

fn has_slot(prompt: &str) -> bool {
    prompt.split_whitespace().any(crate::toydiff::text::is_slot)
}

fn report_key(r: &EvalReport) -> String {
    let c = &r.condition;
    let mut key = format!("{}_{}", c.method, c.prompt_family);
    if let Some(l) = c.lambda {
        key.push_str(&format!("_l{l:.2}"));
    }
    if let Some(m) = c.m {
        key.push_str(&format!("_m{m}"));
    }
    key
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedReport {
    pub key: String,
    pub report: EvalReport,
}

/// Headline numbers behind the directional claims.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub leakage_lambda0: f64,
    pub leakage_lambda: f64,
    pub lambda: f64,
    pub target_accuracy_full: f64,
    pub target_accuracy_prelearn_only: f64,
    pub target_accuracy_tgt: f64,
    pub target_accuracy_ngt: f64,
    pub target_accuracy_by_m: Vec<(usize, f64)>,
    pub image_fidelity_base_class: f64,
    pub image_fidelity_prelearn_class: f64,
}

impl EvalSummary {
    fn from_reports(reports: &[NamedReport], lambda: f64, m_values: &[usize]) -> Self {
        let find = |method: &str, family: &str, l: Option<f64>, m: Option<usize>| -> Option<&EvalReport> {
            reports
                .iter()
                .map(|r| &r.report)
                .find(|r| r.condition.method == method && r.condition.prompt_family == family && r.condition.lambda == l && r.condition.m == m)
        };
        let acc = |r: Option<&EvalReport>| r.map_or(f64::NAN, |r| r.target_accuracy);
        let leak = |r: Option<&EvalReport>| r.map_or(f64::NAN, |r| r.leakage_rate);
        let fid = |r: Option<&EvalReport>| r.map_or(f64::NAN, |r| r.image_fidelity.mean);
        Self {
            leakage_lambda0: leak(find("u-vap", "novel", Some(0.0), None)),
            leakage_lambda: leak(find("u-vap", "novel", Some(lambda), None)),
            lambda,
            target_accuracy_full: acc(find("u-vap", "novel", Some(lambda), None)),
            target_accuracy_prelearn_only: acc(find("prelearn-only", "novel", None, None)),
            target_accuracy_tgt: acc(find("tgt-literal", "novel", None, None)),
            target_accuracy_ngt: acc(find("ngt-literal", "novel", None, None)),
            target_accuracy_by_m: m_values
                .iter()
                .map(|&m| (m, acc(find("u-vap", "novel", Some(lambda), Some(m)))))
                .collect(),
            image_fidelity_base_class: fid(find("base", "class", None, None)),
            image_fidelity_prelearn_class: fid(find("prelearn-only", "class", None, None)),
        }
    }
}

/// Current time for decision records.
pub fn now_seconds() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}
