//! Sweeps that vary one configuration field and compare the reports.

use std::fmt;
use std::str::FromStr;

use crate::eval::ExamReport;
use crate::fewshot::Strategy;
use crate::llm::LanguageModel;
use crate::prompt::InstructionKind;

use super::config::{RunConfig, SourceKind};
use super::run::{run_exam, PipelineError, Resources};

pub const SHOT_GRID: [usize; 5] = [1, 3, 6, 9, 12];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sweep {
    Shots,
    Strategy,
    Instruction,
    Knowledge,
    Source,
    Constrained,
}

impl Sweep {
    pub const ALL: [Sweep; 6] =
        [Self::Shots, Self::Strategy, Self::Instruction, Self::Knowledge, Self::Source, Self::Constrained];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Shots => "shots",
            Self::Strategy => "strategy",
            Self::Instruction => "instruction",
            Self::Knowledge => "knowledge",
            Self::Source => "source",
            Self::Constrained => "constrained",
        }
    }
}

impl fmt::Display for Sweep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Sweep {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|w| w.as_str() == s).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|w| w.as_str()).collect();
            format!("unknown sweep {s:?} (expected one of {})", names.join(", "))
        })
    }
}

/// Labelled configurations for each point of `sweep`, in table order.
pub fn sweep_points(base: &RunConfig, sweep: Sweep) -> Vec<(String, RunConfig)> {
    let with = |label: String, f: &dyn Fn(&mut RunConfig)| {
        let mut config = base.clone();
        f(&mut config);
        (label, config)
    };
    match sweep {
        Sweep::Shots => SHOT_GRID.iter().map(|&n| with(format!("{n}-shot"), &|c| c.num_shots = n)).collect(),
        Sweep::Strategy => Strategy::ALL.iter().map(|&s| with(s.to_string(), &|c| c.strategy = s)).collect(),
        Sweep::Instruction => [InstructionKind::Direct, InstructionKind::Steps]
            .iter()
            .map(|&i| with(i.to_string(), &|c| c.instruction = i))
            .collect(),
        Sweep::Knowledge => [(true, "knowledge-on"), (false, "knowledge-off")]
            .iter()
            .map(|&(on, label)| with(label.into(), &|c| c.use_knowledge = on))
            .collect(),
        Sweep::Source => vec![
            with("retrieved".into(), &|c| c.example_source = SourceKind::Retrieved),
            with("random".into(), &|c| {
                c.example_source = SourceKind::Random;
                c.seed = Some(c.seed.unwrap_or(1));
            }),
        ],
        Sweep::Constrained => [(false, "free-form"), (true, "constrained")]
            .iter()
            .map(|&(on, label)| with(label.into(), &|c| c.constrained = on))
            .collect(),
    }
}

/// One run per sweep point against shared resources and model.
pub fn ablate(
    base: &RunConfig,
    sweep: Sweep,
    resources: &Resources,
    llm: &dyn LanguageModel,
) -> Result<Vec<(String, ExamReport)>, PipelineError> {
    let points = sweep_points(base, sweep);
    for (_, config) in &points {
        config.validate()?;
    }
    points
        .into_iter()
        .map(|(label, config)| Ok((label.clone(), run_exam(&config, resources, llm, None)?.with_label(label))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        let base = RunConfig::default();
        let shots: Vec<_> = sweep_points(&base, Sweep::Shots).into_iter().map(|(_, c)| c.num_shots).collect();
        assert_eq!(shots, SHOT_GRID);
        assert_eq!(sweep_points(&base, Sweep::Strategy).len(), 4);
        let random = &sweep_points(&base, Sweep::Source)[1].1;
        assert!(random.example_source().is_ok());
        for sweep in Sweep::ALL {
            assert_eq!(sweep.as_str().parse::<Sweep>().unwrap(), sweep);
        }
    }
}
