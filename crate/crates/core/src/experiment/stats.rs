use std::fmt::Write as _;
use std::path::Path;

use crate::corpus::{class_distribution, load_dataset, ClassDistribution, Dataset, TaskKind};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub name: String,
    pub size: usize,
    pub distribution: ClassDistribution,
}

pub fn stats_of(dataset: &Dataset) -> DatasetStats {
    DatasetStats {
        name: dataset.name.clone(),
        size: dataset.len(),
        distribution: class_distribution(dataset),
    }
}

pub fn dataset_stats(path: &Path, task_kind: TaskKind) -> Result<DatasetStats> {
    Ok(stats_of(&load_dataset(path, task_kind)?))
}

/// Sizes, then whole-percent class shares (positive, negative, neutral)
/// for the train and test parts side by side. Missing parts print `-`.
pub fn stats_table(name: &str, train: Option<&DatasetStats>, test: Option<&DatasetStats>) -> String {
    let size = |s: Option<&DatasetStats>| s.map_or("-".to_string(), |s| s.size.to_string());
    let mut out = String::new();
    writeln!(out, "dataset\ttrain\ttest").unwrap();
    writeln!(out, "{name}\t{}\t{}", size(train), size(test)).unwrap();
    out.push('\n');
    writeln!(
        out,
        "dataset\ttrain positive\ttrain negative\ttrain neutral\ttest positive\ttest negative\ttest neutral"
    )
    .unwrap();
    write!(out, "{name}").unwrap();
    for part in [train, test] {
        match part {
            Some(s) => {
                for p in s.distribution.rounded() {
                    write!(out, "\t{p}").unwrap();
                }
            }
            None => out.push_str("\t-\t-\t-"),
        }
    }
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Sample;
    use crate::label::Label;

    #[test]
    fn four_sample_fixture() {
        let s = |id: &str, l| Sample::general(id, "t", l);
        let ds = Dataset::new(
            "tiny",
            TaskKind::General,
            vec![s("1", Label::Positive), s("2", Label::Negative), s("3", Label::Neutral), s("4", Label::Neutral)],
        )
        .unwrap();
        let st = stats_of(&ds);
        assert_eq!(st.size, 4);
        assert_eq!(st.distribution.rounded(), [25, 25, 50]);
        let table = stats_table("tiny", Some(&st), None);
        assert!(table.contains("tiny\t4\t-\n"));
        assert!(table.ends_with("tiny\t25\t25\t50\t-\t-\t-\n"));
    }
}
