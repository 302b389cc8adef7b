//! Text formats, machine files and the `exrules` command-line driver.

pub mod cli;
pub mod machine;
pub mod syntax;
