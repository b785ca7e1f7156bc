use std::fmt;

/// Where a command failed; decides the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Other,
    Config,
    Simulation,
    Training,
    Inference,
}

impl Stage {
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Other => 1,
            Stage::Config => 2,
            Stage::Simulation => 3,
            Stage::Training => 4,
            Stage::Inference => 5,
        }
    }
}

#[derive(Debug)]
pub struct Failure {
    pub stage: Stage,
    pub message: String,
}

impl Failure {
    pub fn new(stage: Stage, message: impl Into<String>) -> Self {
        Self { stage, message: message.into() }
    }

    pub fn context(mut self, what: &str) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Attaches a stage to core errors. Configuration and format problems keep
/// their own code whatever stage they surface in.
pub trait StageExt<T> {
    fn stage(self, stage: Stage) -> Result<T, Failure>;
}

impl<T> StageExt<T> for plume_core::Result<T> {
    fn stage(self, stage: Stage) -> Result<T, Failure> {
        use plume_core::Error as E;
        self.map_err(|e| {
            let s = match &e {
                E::Config(_) | E::Format(_) | E::Csv(_) | E::Json(_) => Stage::Config,
                E::Io(_) => Stage::Other,
                _ => stage,
            };
            Failure::new(s, e.to_string())
        })
    }
}

impl<T> StageExt<T> for std::io::Result<T> {
    fn stage(self, _: Stage) -> Result<T, Failure> {
        self.map_err(|e| Failure::new(Stage::Other, e.to_string()))
    }
}
