use thiserror::Error;

/// Errors produced by the attention, cost-model and training routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Shapes or dimensional parameters that violate an operation's contract.
    #[error("configuration error: {0}")]
    Config(String),

    /// A positive-random-feature exponent left the representable range.
    #[error(
        "feature map overflow: exponent {exponent:.1} exceeds {limit}; scale the inputs down \
         (enable input scaling or reduce the input magnitude)"
    )]
    FeatureOverflow { exponent: f64, limit: f64 },

    /// Parameters of a base model cannot be transferred into the fused model.
    #[error("transfer error: {0}")]
    Transfer(String),

    /// A FLOP count does not fit in 64 bits.
    #[error("FLOP count overflows u64 while evaluating {0}")]
    Overflow(&'static str),

    /// Training produced a non-finite loss.
    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },

    /// An experiment invariant did not hold.
    #[error("assertion failed: {0}")]
    Assertion(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
