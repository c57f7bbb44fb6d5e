//! Episode files and the end-to-end pipeline: per-shot initial priors,
//! fixed-point refinement over the query's structure graph, K-shot fusion,
//! binarization and optional evaluation.

use std::path::{Path, PathBuf};

use crate::config::{strip_comment, SolverConfig};
use crate::error::{Error, Result};
use crate::graph::build_transfer;
use crate::io::{read_mask_pgm, read_tensor};
use crate::metrics::{binarize, evaluate_episodes, kshot_fuse, Episode, EvalReport};
use crate::prior_init::initial_prior;
use crate::solver::{solve_fixed_point, FixedPrior};
use crate::tensor::{BinaryMask, FeatureMap, Prior};

/// Parsed episode file.
///
/// ```text
/// # one line per support shot
/// support=shot0.cmpt,shot0.pgm
/// query=query.cmpt
/// gt=query.pgm
/// class=7
/// ```
///
/// Relative paths resolve against the episode file's directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeSpec {
    pub supports: Vec<(PathBuf, PathBuf)>,
    pub query: PathBuf,
    pub gt: Option<PathBuf>,
    pub class_id: u32,
}

impl EpisodeSpec {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let resolve = |p: &str| base_dir.join(p.trim());
        let mut supports = Vec::new();
        let (mut query, mut gt, mut class_id) = (None, None, None);
        let mut last_line = 0;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            last_line = line_no;
            let line = strip_comment(raw);
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse { line: line_no, msg };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got {line:?}")))?;
            let value = value.trim();
            if value.is_empty() {
                return Err(err(format!("empty value for {}", key.trim())));
            }
            let once = |taken: bool, name: &str| {
                if taken {
                    Err(err(format!("duplicate {name} entry")))
                } else {
                    Ok(())
                }
            };
            match key.trim() {
                "support" => {
                    let (feat, mask) = value
                        .split_once(',')
                        .ok_or_else(|| err("support expects <features>,<mask>".into()))?;
                    if feat.trim().is_empty() || mask.trim().is_empty() {
                        return Err(err("support expects <features>,<mask>".into()));
                    }
                    supports.push((resolve(feat), resolve(mask)));
                }
                "query" => {
                    once(query.is_some(), "query")?;
                    query = Some(resolve(value));
                }
                "gt" => {
                    once(gt.is_some(), "gt")?;
                    gt = Some(resolve(value));
                }
                "class" => {
                    once(class_id.is_some(), "class")?;
                    class_id = Some(value.parse().map_err(|_| err(format!("bad class id {value:?}")))?);
                }
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }
        let at_end = |msg: &str| Error::Parse {
            line: last_line,
            msg: msg.to_string(),
        };
        if supports.is_empty() {
            return Err(at_end("no support entries"));
        }
        Ok(Self {
            supports,
            query: query.ok_or_else(|| at_end("missing query entry"))?,
            gt,
            class_id: class_id.ok_or_else(|| at_end("missing class entry"))?,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn shots(&self) -> usize {
        self.supports.len()
    }

    /// Checks every referenced file exists before any work starts.
    pub fn check_files(&self) -> Result<()> {
        let all = self
            .supports
            .iter()
            .flat_map(|(f, m)| [f, m])
            .chain(std::iter::once(&self.query))
            .chain(self.gt.iter());
        for p in all {
            if !p.is_file() {
                return Err(Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "file not found")));
            }
        }
        Ok(())
    }

    /// Reads every referenced file.
    pub fn read(&self) -> Result<EpisodeData> {
        self.check_files()?;
        let supports = self
            .supports
            .iter()
            .map(|(f, m)| Ok((FeatureMap::from_tensor(read_tensor(f)?)?, read_mask_pgm(m)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(EpisodeData {
            supports,
            query: FeatureMap::from_tensor(read_tensor(&self.query)?)?,
            gt: self.gt.as_ref().map(read_mask_pgm).transpose()?,
            class_id: self.class_id,
        })
    }
}

/// In-memory episode.
#[derive(Debug, Clone)]
pub struct EpisodeData {
    pub supports: Vec<(FeatureMap<f32>, BinaryMask)>,
    pub query: FeatureMap<f32>,
    pub gt: Option<BinaryMask>,
    pub class_id: u32,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// Per-shot initial priors.
    pub initial: Vec<Prior<f32>>,
    /// Per-shot refined priors and traces.
    pub solved: Vec<FixedPrior<f32>>,
    /// Mean of the refined priors.
    pub fused: Prior<f32>,
    /// Mean of the initial priors, for comparison.
    pub fused_initial: Prior<f32>,
    /// Binarized `fused`, at query feature resolution.
    pub mask: BinaryMask,
    pub report: Option<EvalReport>,
}

impl PipelineOutput {
    pub fn converged(&self) -> bool {
        self.solved.iter().all(|s| s.trace.converged)
    }
}

/// Brings a feature-resolution prediction to the ground truth's resolution.
pub fn match_resolution(pred: &BinaryMask, gt: &BinaryMask) -> Result<BinaryMask> {
    if pred.shape() == gt.shape() {
        Ok(pred.clone())
    } else {
        pred.resize_nearest(gt.height(), gt.width())
    }
}

pub fn run_episode(data: &EpisodeData, cfg: &SolverConfig) -> Result<PipelineOutput> {
    cfg.certify()?;
    if data.supports.is_empty() {
        return Err(Error::EmptyInput("support shots"));
    }
    let transfer = build_transfer(&data.query, cfg.top_k, cfg.temperature, cfg.similarity)?;
    let mut initial = Vec::with_capacity(data.supports.len());
    let mut solved = Vec::with_capacity(data.supports.len());
    for (features, mask) in &data.supports {
        let m0 = initial_prior(features, &mask.to_prior(), &data.query)?;
        solved.push(solve_fixed_point(&m0, &transfer, cfg, None)?);
        initial.push(m0);
    }
    let fused = kshot_fuse(&solved.iter().map(|s| s.prior.clone()).collect::<Vec<_>>())?;
    let fused_initial = kshot_fuse(&initial)?;
    let mask = binarize(&fused, cfg.threshold)?;
    let report = data
        .gt
        .as_ref()
        .map(|gt| {
            evaluate_episodes(&[Episode {
                pred: match_resolution(&mask, gt)?,
                gt: gt.clone(),
                class_id: data.class_id,
            }])
        })
        .transpose()?;
    Ok(PipelineOutput {
        initial,
        solved,
        fused,
        fused_initial,
        mask,
        report,
    })
}
