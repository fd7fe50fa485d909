use crate::corpus::{Dataset, Sample, TaskKind};
use crate::error::{Error, Result};
use crate::reformulate::{ReformulatedInput, Reformulator};
use crate::text::{find_all_ci, tidy_whitespace};
use crate::textnorm::{normalize, NormConfig};

/// Normalization followed by reformulation.
///
/// For the targeted task the entity is located on the raw text first and
/// only the text around its mentions is normalized, so that rewriting never
/// touches the entity itself.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub task: TaskKind,
    pub norm: NormConfig,
    pub reformulator: Reformulator,
}

/// One prepared sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub id: String,
    pub input: ReformulatedInput,
    pub label: crate::label::Label,
}

impl Pipeline {
    pub fn new(task: TaskKind, norm: NormConfig, reformulator: Reformulator) -> Self {
        Pipeline {
            task,
            norm,
            reformulator,
        }
    }

    fn entity<'a>(&self, sample: &'a Sample) -> Result<&'a str> {
        sample
            .target_entity
            .as_deref()
            .filter(|e| !e.is_empty())
            .ok_or_else(|| Error::Invalid(format!("sample `{}` has no target entity", sample.id)))
    }

    /// Normalized text pieces between the entity mentions.
    fn normalized_segments(&self, sample: &Sample, entity: &str) -> Vec<String> {
        let mut pieces = Vec::new();
        let mut last = 0;
        for hit in find_all_ci(&sample.text, entity) {
            pieces.push(normalize(&sample.text[last..hit.start], &self.norm));
            last = hit.end;
        }
        pieces.push(normalize(&sample.text[last..], &self.norm));
        pieces
    }

    /// Normalize a sample's text. Entity mentions of targeted samples are
    /// kept verbatim.
    pub fn normalize_sample(&self, sample: &Sample) -> Result<Sample> {
        let text = match self.task {
            TaskKind::General => normalize(&sample.text, &self.norm),
            TaskKind::Targeted => {
                let entity = self.entity(sample)?;
                // Fails like reformulation would on a missing entity.
                self.reformulator.targeted(sample)?;
                let segments = self.normalized_segments(sample, entity);
                let mentions = sample_mentions(sample, entity);
                let mut joined = segments[0].clone();
                for (seg, mention) in segments[1..].iter().zip(mentions) {
                    joined.push(' ');
                    joined.push_str(mention);
                    joined.push(' ');
                    joined.push_str(seg);
                }
                tidy_whitespace(&joined)
            }
        };
        Ok(Sample {
            text,
            ..sample.clone()
        })
    }

    /// Normalize, then build the model input.
    pub fn prepare(&self, sample: &Sample) -> Result<ReformulatedInput> {
        match self.task {
            TaskKind::General => {
                let normalized = Sample {
                    text: normalize(&sample.text, &self.norm),
                    ..sample.clone()
                };
                self.reformulator.general(&normalized)
            }
            TaskKind::Targeted => {
                let entity = self.entity(sample)?;
                let raw = self.reformulator.targeted(sample)?;
                let mask = &self.reformulator.mask_token;
                let segments = self.normalized_segments(sample, entity);
                let joined = segments.join(&format!(" {mask} "));
                Ok(ReformulatedInput {
                    sentence_a: tidy_whitespace(&joined),
                    ..raw
                })
            }
        }
    }

    pub fn prepare_dataset(&self, dataset: &Dataset) -> Result<Vec<Prepared>> {
        dataset
            .samples()
            .iter()
            .map(|s| {
                Ok(Prepared {
                    id: s.id.clone(),
                    input: self.prepare(s)?,
                    label: s.label,
                })
            })
            .collect()
    }

    pub fn normalize_dataset(&self, dataset: &Dataset) -> Result<Dataset> {
        let samples = dataset
            .samples()
            .iter()
            .map(|s| self.normalize_sample(s))
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(dataset.name.clone(), dataset.task_kind, samples)
    }
}

fn sample_mentions<'a>(sample: &'a Sample, entity: &str) -> Vec<&'a str> {
    find_all_ci(&sample.text, entity)
        .into_iter()
        .map(|r| &sample.text[r])
        .collect()
}
