use ncm_core::eval::EvalError;
use ncm_core::train::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Ok = 0,
    Usage = 1,
    Data = 2,
    Numeric = 3,
}

/// Numeric failures (non-finite losses or gradients) map to 3, anything
/// else that reaches the top level is a data error.
pub fn exit_code(err: &anyhow::Error) -> ExitCode {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            if matches!(
                e,
                TrainError::NonFiniteLoss { .. }
                    | TrainError::NonFiniteGradient { .. }
                    | TrainError::Eval(EvalError::NonFinite { .. })
            ) {
                return ExitCode::Numeric;
            }
        }
        if let Some(EvalError::NonFinite { .. }) = cause.downcast_ref::<EvalError>() {
            return ExitCode::Numeric;
        }
    }
    ExitCode::Data
}
