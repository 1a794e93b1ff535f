#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace asyncsteer {

enum class ConvergencePhase { Running, Tentative, Verifying, Converged };

std::string_view to_string(ConvergencePhase phase);

struct ResidualReport {
  std::size_t worker = 0;
  double residual = 0.0;
  std::uint64_t iteration = 0;
};

/// Thrown when the monitor is about to declare convergence on a field whose
/// true residual is above tolerance. Reaching this is a bug, never a result.
class ConvergenceSoundnessError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Two-phase detector state. While RUNNING/TENTATIVE, incoming reports are
/// each worker's latest sweep residual. In VERIFYING they are the residuals
/// of one extra sweep per worker over a quiesced field; when every worker has
/// delivered one, the state moves to CONVERGED or back to RUNNING.
struct ConvergenceState {
  struct Slot {
    double residual = 0.0;
    std::uint64_t iteration = 0;
    bool seen = false;
  };

  ConvergenceState(std::size_t workers, double tolerance);

  ConvergencePhase phase = ConvergencePhase::Running;
  double tolerance = 1e-6;
  std::vector<Slot> latest;
  std::vector<Slot> verification;
  /// Residual of a sequential sweep over the frozen field, supplied by the
  /// engine before verification reports arrive. Checked on CONVERGED.
  std::optional<double> frozen_residual;
  std::optional<double> verified_residual;
  std::size_t verification_rounds = 0;
};

/// Advances the detector. RUNNING -> TENTATIVE when all latest residuals are
/// within tolerance; TENTATIVE -> VERIFYING on the next call (the caller then
/// runs the verification pass); VERIFYING -> CONVERGED iff the global residual
/// of the fresh reports is within tolerance, otherwise -> RUNNING. CONVERGED
/// is terminal. Throws std::out_of_range for an unknown worker id.
ConvergenceState detect_convergence(ConvergenceState state, std::span<const ResidualReport> reports);

/// Number of CONVERGED transitions whose frozen-field residual was checked,
/// process-wide.
std::size_t convergence_soundness_checks() noexcept;

}  // namespace asyncsteer
