#pragma once

#include <stdexcept>
#include <string>

namespace mvh {

// Base for everything thrown by the engine; catch this at pipeline level.
struct EngineError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Model coefficient evaluated to a singular / ill-conditioned matrix.
struct NonInvertibleCoefficient : EngineError {
  using EngineError::EngineError;
};

// A realized intensity exceeded the per-step thinning bound.
struct IntensityBoundViolated : EngineError {
  using EngineError::EngineError;
};

// ODE step produced a state outside its admissible set (covariance lost
// positive semidefiniteness beyond tolerance, etc.).
struct StepTooCoarse : EngineError {
  using EngineError::EngineError;
};

// Unnormalized filter weights left the strictly positive orthant.
struct PositivityLost : EngineError {
  using EngineError::EngineError;
};

// Event applied to a channel whose queue gate is closed.
struct GateClosed : EngineError {
  using EngineError::EngineError;
};

// Riccati solution norm crossed the divergence threshold before reaching
// the left end of the integration interval.
struct BlowUpError : EngineError {
  double time;
  explicit BlowUpError(double t)
      : EngineError("riccati solution blew up at t = " + std::to_string(t)),
        time(t) {}
};

// Regression surface queried before fit_surface succeeded.
struct SurfaceNotFitted : EngineError {
  using EngineError::EngineError;
};

// Regression basis singular even after the ridge fallback.
struct RankDeficientBasis : EngineError {
  using EngineError::EngineError;
};

// A queue went negative; indicates a broken gate or inconsistent event log.
struct NegativeQueue : EngineError {
  using EngineError::EngineError;
};

// Configuration rejected; message names the offending field.
struct ConfigInvalid : EngineError {
  using EngineError::EngineError;
};

// A pipeline stage failed after configuration parsed cleanly.
struct PipelineFailed : EngineError {
  using EngineError::EngineError;
};

}  // namespace mvh
