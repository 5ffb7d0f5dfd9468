use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the final layer produces the network output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    /// The last hidden block's outputs are summed into one scalar.
    SummedScalar,
    /// An extra block maps the last hidden layer to `d_out` outputs.
    OutputBlock,
}

/// Layer widths `d_in -> [d_1, ..., d_L] -> d_out`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub d_in: usize,
    pub hidden: Vec<usize>,
    pub d_out: usize,
    pub output_mode: OutputMode,
}

impl Architecture {
    /// Output mode defaults to summation when `d_out == 1`.
    pub fn new(d_in: usize, hidden: Vec<usize>, d_out: usize) -> Result<Self> {
        let mode = if d_out == 1 {
            OutputMode::SummedScalar
        } else {
            OutputMode::OutputBlock
        };
        Self::with_mode(d_in, hidden, d_out, mode)
    }

    pub fn with_mode(
        d_in: usize,
        hidden: Vec<usize>,
        d_out: usize,
        mode: OutputMode,
    ) -> Result<Self> {
        let arch = Architecture {
            d_in,
            hidden,
            d_out,
            output_mode: mode,
        };
        let text = arch.to_string();
        let bad = |reason: &str| Error::Architecture {
            text: text.clone(),
            reason: reason.into(),
        };
        if arch.hidden.is_empty() {
            return Err(bad("at least one hidden layer is required"));
        }
        if arch.d_in == 0 || arch.d_out == 0 || arch.hidden.contains(&0) {
            return Err(bad("dimensions must be positive"));
        }
        if mode == OutputMode::SummedScalar && d_out != 1 {
            return Err(bad("summed output needs d_out = 1"));
        }
        Ok(arch)
    }

    /// Forces an explicit output block.
    pub fn force_output_block(mut self) -> Self {
        self.output_mode = OutputMode::OutputBlock;
        self
    }

    /// `(d_in, d_out)` of every block in order.
    pub fn block_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.d_in];
        dims.extend_from_slice(&self.hidden);
        if self.output_mode == OutputMode::OutputBlock {
            dims.push(self.d_out);
        }
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn n_blocks(&self) -> usize {
        self.hidden.len() + usize::from(self.output_mode == OutputMode::OutputBlock)
    }

    /// Parses `"2->[5,3,8]->1"` or `"2:[5,3,8]:1"`; whitespace is ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let compact: String = text.chars().filter(|c| !c.is_whitespace()).collect();
        let bad = |reason: &str| Error::Architecture {
            text: text.to_string(),
            reason: reason.into(),
        };
        let open = compact.find('[').ok_or_else(|| bad("missing `[`"))?;
        let close = compact.rfind(']').ok_or_else(|| bad("missing `]`"))?;
        if close < open {
            return Err(bad("brackets out of order"));
        }
        let head = &compact[..open];
        let tail = &compact[close + 1..];
        let head = head
            .strip_suffix("->")
            .or_else(|| head.strip_suffix(':'))
            .ok_or_else(|| bad("expected `->` or `:` before `[`"))?;
        let tail = tail
            .strip_prefix("->")
            .or_else(|| tail.strip_prefix(':'))
            .ok_or_else(|| bad("expected `->` or `:` after `]`"))?;
        let dim = |s: &str| -> Result<usize> {
            s.parse::<usize>()
                .map_err(|_| bad(&format!("`{s}` is not a positive integer")))
        };
        let inner = &compact[open + 1..close];
        let hidden = if inner.is_empty() {
            Vec::new()
        } else {
            inner.split(',').map(dim).collect::<Result<Vec<_>>>()?
        };
        Self::new(dim(head)?, hidden, dim(tail)?).map_err(|e| match e {
            Error::Architecture { reason, .. } => Error::Architecture {
                text: text.to_string(),
                reason,
            },
            other => other,
        })
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let hidden: Vec<String> = self.hidden.iter().map(|d| d.to_string()).collect();
        write!(f, "{}->[{}]->{}", self.d_in, hidden.join(","), self.d_out)
    }
}
