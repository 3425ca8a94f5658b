//! Study directory pipeline.
//!
//! Layout: `study.json`, `stakeholders/`, `corpus/`, `annotations/`,
//! `report/`. Each step reads the artifacts of the previous ones and fails
//! with [`Error::MissingArtifact`] when they are absent.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::aggregation::{build_dem, DescriptiveEthicalMatrix};
use crate::annotation::{llm_annotate, records_to_csv, AnnotationStore, ImportSummary};
use crate::error::{Error, Result};
use crate::fixtures::{bundled_fixture, Fixture, FIXTURE_TIMESTAMP};
use crate::genai::Provider;
use crate::inference::{analyze, build_iem, Analysis, InferentialEthicalMatrix};
use crate::reporting::{render_report, write_documents, Document, ReportFormat, ReportInputs};
use crate::stakeholder::{curate, generate_stakeholders, StakeholderCandidateSet};
use crate::taxonomy::{bundled_study, load_study_config, save_study_config, StudyConfig};
use crate::vignette::{build_corpus, read_corpus, validate_corpus, write_corpus, AugmentedVignette, CellFailure, Overrides};

pub const STUDY_FILE: &str = "study.json";
pub const OVERRIDES_FILE: &str = "overrides.json";
const CANDIDATES: &str = "stakeholders/candidates.json";
const CURATED: &str = "stakeholders/curated.json";
const FAILURES: &str = "corpus/failures.json";
const FIXTURE_MARKER: &str = "annotations/fixture.json";
const DEM: &str = "report/dem.json";
const ANALYSIS: &str = "report/analysis.json";
const IEM: &str = "report/iem.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct FixtureMarker {
    fixture: String,
}

/// An opened study directory.
#[derive(Clone, Debug)]
pub struct Study {
    dir: PathBuf,
    pub config: StudyConfig,
}

fn read(path: &Path, step: &'static str) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            step,
        });
    }
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("artifact serializes");
    s.push('\n');
    s
}

impl Study {
    /// Scaffolds a new study from a bundled configuration name or a config
    /// file path.
    pub fn init(dir: &Path, template: &str) -> Result<Study> {
        let config = if Path::new(template).is_file() {
            load_study_config(Path::new(template))?
        } else {
            bundled_study(template)?
        };
        Self::init_with(dir, config)
    }

    pub fn init_with(dir: &Path, config: StudyConfig) -> Result<Study> {
        config.validate()?;
        let file = dir.join(STUDY_FILE);
        if file.exists() {
            return Err(Error::invalid("study", format!("{} already exists", file.display())));
        }
        for sub in ["stakeholders", "corpus", "annotations", "report"] {
            let p = dir.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        save_study_config(&config, &file)?;
        Ok(Study {
            dir: dir.to_path_buf(),
            config,
        })
    }

    pub fn open(dir: &Path) -> Result<Study> {
        let text = read(&dir.join(STUDY_FILE), "init")?;
        Ok(Study {
            dir: dir.to_path_buf(),
            config: StudyConfig::from_json(&text)?,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    pub fn save_config(&self) -> Result<()> {
        self.config.validate()?;
        save_study_config(&self.config, &self.dir.join(STUDY_FILE))
    }

    pub fn generate_stakeholders(&self, provider: &dyn Provider) -> Result<StakeholderCandidateSet> {
        let set = generate_stakeholders(&self.config.domain, provider)?;
        write(&self.path(CANDIDATES), &pretty(&set))?;
        Ok(set)
    }

    pub fn candidates(&self) -> Result<StakeholderCandidateSet> {
        let text = read(&self.path(CANDIDATES), "stakeholders generate")?;
        let set: StakeholderCandidateSet =
            serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{CANDIDATES}: {e}")))?;
        set.validate()?;
        Ok(set)
    }

    /// Replaces the study's stakeholders with the kept candidates.
    pub fn curate(&mut self, keep: &[&str]) -> Result<()> {
        let chosen = curate(&self.candidates()?, keep)?;
        self.config.stakeholders = chosen;
        self.save_config()?;
        write(&self.path(CURATED), &pretty(&self.config.stakeholders))
    }

    pub fn overrides(&self) -> Result<Overrides> {
        let path = self.path(OVERRIDES_FILE);
        if !path.exists() {
            return Ok(Overrides::new());
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{OVERRIDES_FILE}: {e}")))
    }

    /// Builds the corpus. It is written only when every cell succeeded;
    /// otherwise the failures are written and returned.
    pub fn build_vignettes(&self, provider: &dyn Provider, seed: u64) -> Result<std::result::Result<usize, Vec<CellFailure>>> {
        let build = build_corpus(&self.config, provider, &self.overrides()?, seed)?;
        let failures = self.path(FAILURES);
        if !build.is_complete() {
            write(&failures, &pretty(&build.failures))?;
            return Ok(Err(build.failures));
        }
        if failures.exists() {
            std::fs::remove_file(&failures).map_err(|e| Error::io(&failures, e))?;
        }
        validate_corpus(&build.vignettes, &self.config)?;
        write_corpus(&build.vignettes, &self.path("corpus"))?;
        Ok(Ok(build.vignettes.len()))
    }

    pub fn corpus(&self) -> Result<Vec<AugmentedVignette>> {
        read(&self.path("corpus/corpus.json"), "vignettes build")?;
        let corpus = read_corpus(&self.path("corpus"))?;
        validate_corpus(&corpus, &self.config)?;
        Ok(corpus)
    }

    pub fn store(&self, corpus: &[AugmentedVignette]) -> Result<AnnotationStore> {
        AnnotationStore::open(&self.path("annotations"), &self.config.study_id, corpus)
    }

    /// Adds LLM annotations; returns (records added, failed vignette ids).
    pub fn annotate_llm(&self, provider: &dyn Provider, at: DateTime<Utc>) -> Result<(usize, Vec<CellFailure>)> {
        let corpus = self.corpus()?;
        let mut store = self.store(&corpus)?;
        let out = llm_annotate(&corpus, provider, at);
        let added = store.append_all(out.records, &corpus)?;
        Ok((added, out.failures))
    }

    pub fn import_csv(&self, path: &Path) -> Result<ImportSummary> {
        let corpus = self.corpus()?;
        let mut store = self.store(&corpus)?;
        store.import_file(path, &corpus)
    }

    /// Loads the bundled reference annotations for the study's domain.
    pub fn load_fixtures(&self) -> Result<usize> {
        let fixture = bundled_fixture(&self.config.domain)?;
        let corpus = self.corpus()?;
        let mut store = self.store(&corpus)?;
        let added = fixture.load_into(&mut store, &corpus)?;
        write(
            &self.path(FIXTURE_MARKER),
            &pretty(&FixtureMarker {
                fixture: self.config.domain.clone(),
            }),
        )?;
        Ok(added)
    }

    /// Reference values to compare against, if fixture annotations were loaded.
    pub fn reference(&self) -> Result<Option<Fixture>> {
        let path = self.path(FIXTURE_MARKER);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: FixtureMarker = serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{FIXTURE_MARKER}: {e}")))?;
        bundled_fixture(&m.fixture).map(Some)
    }

    pub fn export_csv(&self) -> Result<String> {
        let corpus = self.corpus()?;
        records_to_csv(self.store(&corpus)?.records())
    }

    pub fn aggregate(&self) -> Result<DescriptiveEthicalMatrix> {
        let corpus = self.corpus()?;
        let store = self.store(&corpus)?;
        let dem = build_dem(&store, &corpus, &self.config)?;
        write(&self.path(DEM), &dem.to_json())?;
        Ok(dem)
    }

    pub fn dem(&self) -> Result<DescriptiveEthicalMatrix> {
        DescriptiveEthicalMatrix::from_json(&read(&self.path(DEM), "aggregate")?)
    }

    /// Runs the tests against the store snapshot the stored dEM was built
    /// from. With `refresh` a stale dEM is rebuilt first.
    pub fn analyze(&self, refresh: bool) -> Result<(Analysis, InferentialEthicalMatrix)> {
        let corpus = self.corpus()?;
        let store = self.store(&corpus)?;
        let mut dem = self.dem()?;
        let current = store.snapshot_digest();
        if dem.snapshot_digest != current {
            if !refresh {
                return Err(Error::SnapshotMismatch {
                    expected: dem.snapshot_digest,
                    found: current,
                });
            }
            dem = build_dem(&store, &corpus, &self.config)?;
            write(&self.path(DEM), &dem.to_json())?;
        }
        let analysis = analyze(&store, &corpus, &self.config)?;
        let iem = build_iem(&dem, &analysis, &self.config)?;
        write(&self.path(ANALYSIS), &analysis.to_json())?;
        write(&self.path(IEM), &iem.to_json())?;
        Ok((analysis, iem))
    }

    pub fn analysis(&self) -> Result<Analysis> {
        Analysis::from_json(&read(&self.path(ANALYSIS), "analyze")?)
    }

    pub fn iem(&self) -> Result<InferentialEthicalMatrix> {
        InferentialEthicalMatrix::from_json(&read(&self.path(IEM), "analyze")?)
    }

    pub fn report(&self, format: ReportFormat) -> Result<Vec<Document>> {
        let dem = self.dem()?;
        let analysis = self.analysis()?;
        let iem = self.iem()?;
        let reference = self.reference()?;
        let docs = render_report(
            &ReportInputs {
                config: &self.config,
                dem: &dem,
                iem: &iem,
                analysis: &analysis,
                reference: reference.as_ref(),
            },
            format,
        )?;
        write_documents(&self.path("report"), &docs)?;
        Ok(docs)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub study_id: String,
    pub candidates: usize,
    pub vignettes: usize,
    pub records: usize,
    pub dem_cells: usize,
    pub significant_stakeholders: Vec<String>,
    pub report_files: usize,
}

pub struct RunOptions<'a> {
    pub template: &'a str,
    pub seed: u64,
    pub format: ReportFormat,
    /// Also annotate every vignette with the provider.
    pub with_llm: bool,
}

/// End-to-end run into an empty directory: stakeholders, corpus, fixture
/// annotations (plus optional LLM annotations), aggregation, analysis and
/// report. The curated stakeholders are those of the template config.
pub fn run_all(dir: &Path, provider: &dyn Provider, opts: &RunOptions) -> Result<RunSummary> {
    let mut study = Study::init(dir, opts.template)?;
    let keep: Vec<String> = study.config.stakeholders.iter().map(|s| s.id.clone()).collect();
    let candidates = study.generate_stakeholders(provider)?;
    let missing: Vec<&String> = keep.iter().filter(|k| !candidates.ids().contains(&k.as_str())).collect();
    if !missing.is_empty() {
        // Keep the configured stakeholders even when the provider did not propose them.
        let manual = StakeholderCandidateSet::manual(&study.config.domain, study.config.stakeholders.clone())?;
        write(&study.path(CANDIDATES), &pretty(&manual.merge(&candidates)))?;
    }
    let keep_refs: Vec<&str> = keep.iter().map(String::as_str).collect();
    study.curate(&keep_refs)?;
    let vignettes = match study.build_vignettes(provider, opts.seed)? {
        Ok(n) => n,
        Err(failures) => {
            return Err(Error::CoverageGap(failures.into_iter().map(|f| f.vignette_id).collect()));
        }
    };
    study.load_fixtures()?;
    if opts.with_llm {
        let at: DateTime<Utc> = FIXTURE_TIMESTAMP.parse().expect("fixture timestamp");
        let (_, failures) = study.annotate_llm(provider, at)?;
        if !failures.is_empty() {
            return Err(Error::CoverageGap(failures.into_iter().map(|f| f.vignette_id).collect()));
        }
    }
    let dem = study.aggregate()?;
    let (_, iem) = study.analyze(false)?;
    let docs = study.report(opts.format)?;
    let corpus = study.corpus()?;
    Ok(RunSummary {
        study_id: study.config.study_id.clone(),
        candidates: candidates.candidates.len(),
        vignettes,
        records: study.store(&corpus)?.len(),
        dem_cells: dem.individual.len() + dem.representational.len(),
        significant_stakeholders: iem.significant_stakeholders.clone(),
        report_files: docs.len(),
    })
}
