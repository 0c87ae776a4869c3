#pragma once

#include <stdexcept>
#include <string>

namespace trailcam {

// Input violates a documented precondition or invariant (CLI exit code 1).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File system or codec failure (CLI exit code 2).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed message on the predictor wire protocol.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A predictor failed to produce a prediction. Carries the predictor id.
class PredictorError : public std::runtime_error {
 public:
  PredictorError(std::string predictor_id, const std::string& cause)
      : std::runtime_error("predictor '" + predictor_id + "': " + cause),
        predictor_id_(std::move(predictor_id)) {}

  const std::string& predictor_id() const noexcept { return predictor_id_; }

 private:
  std::string predictor_id_;
};

}  // namespace trailcam
