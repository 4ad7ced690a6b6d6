//! Shared helpers for CLI integration tests.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sucrep"))
}

pub fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn exit_code(cmd: &mut Command) -> i32 {
    cmd.output().expect("binary runs").status.code().unwrap_or(-1)
}

pub fn write(path: &Path, content: &str) -> PathBuf {
    std::fs::write(path, content).expect("write test file");
    path.to_path_buf()
}

/// An 8x3 corridor maze with a pillar: quick to train on, still loopy.
pub const TINY_MAZE: &str = "........\n..#..#..\n........";

/// A config small enough that training takes well under a second.
pub const TINY_CONFIG: &str = "\
steps = 30
batch_size = 8
encoder_hidden = 8
encoder_out = 4
actor_hidden = 8
record_every = 10
lr = 0.003
";
