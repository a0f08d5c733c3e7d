use std::fmt;

/// Error class, which also fixes the process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Config,
    Validation,
    Solver,
    Io,
}

impl Category {
    pub fn exit_code(self) -> i32 {
        match self {
            Category::Config => 1,
            Category::Validation => 2,
            Category::Solver => 3,
            Category::Io => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Config => "config",
            Category::Validation => "validation",
            Category::Solver => "solver",
            Category::Io => "io",
        }
    }
}

/// Printed as a single line: `error[<category>]: <message>`.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct CliError {
    pub category: Category,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg: Vec<&str> = self.message.split_whitespace().collect();
        write!(f, "error[{}]: {}", self.category.as_str(), msg.join(" "))
    }
}

impl CliError {
    fn new(category: Category, message: impl Into<String>) -> Self {
        Self {
            category,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(Category::Config, message)
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(Category::Validation, message)
    }

    pub fn solver(message: impl Into<String>) -> Self {
        Self::new(Category::Solver, message)
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self::new(Category::Io, message)
    }

    pub fn exit_code(&self) -> i32 {
        self.category.exit_code()
    }
}
