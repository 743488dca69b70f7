use std::fmt;

use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Regime {
    St,
    Wd,
    Cd,
    All,
}

impl Regime {
    pub const EVERY: [Regime; 4] = [Regime::St, Regime::Wd, Regime::Cd, Regime::All];

    pub fn label(self) -> &'static str {
        match self {
            Regime::St => "ST",
            Regime::Wd => "WD",
            Regime::Cd => "CD",
            Regime::All => "ALL",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for Regime {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "ST" => Ok(Regime::St),
            "WD" => Ok(Regime::Wd),
            "CD" => Ok(Regime::Cd),
            "ALL" => Ok(Regime::All),
            _ => Err(EvalError::Config(format!("unknown regime {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskRef {
    pub database: String,
    pub task: String,
}

impl TaskRef {
    pub fn new(database: impl Into<String>, task: impl Into<String>) -> Self {
        Self { database: database.into(), task: task.into() }
    }
}

impl fmt::Display for TaskRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.database, self.task)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegimeSpec {
    pub regime: Regime,
    pub target: TaskRef,
    /// `None` when the regime is not computable for this target.
    pub training: Option<Vec<TaskRef>>,
}

/// All `(regime, target)` pairs. WD (and CD) without any eligible training
/// task are kept with `training = None`.
pub fn build_regimes(tasks: &[TaskRef], regimes: &[Regime]) -> Result<Vec<RegimeSpec>, EvalError> {
    if tasks.is_empty() {
        return Err(EvalError::Config("no tasks to evaluate".into()));
    }
    let mut out = Vec::new();
    for target in tasks {
        for &regime in regimes {
            let training: Vec<TaskRef> = match regime {
                Regime::St => vec![target.clone()],
                Regime::Wd => tasks.iter().filter(|t| t.database == target.database && *t != target).cloned().collect(),
                Regime::Cd => tasks.iter().filter(|t| t.database != target.database).cloned().collect(),
                Regime::All => tasks.to_vec(),
            };
            out.push(RegimeSpec {
                regime,
                target: target.clone(),
                training: if training.is_empty() { None } else { Some(training) },
            });
        }
    }
    Ok(out)
}
