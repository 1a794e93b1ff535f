#include "asyncsteer/convergence.hpp"

#include <algorithm>
#include <atomic>
#include <string>

#include "asyncsteer/field.hpp"

namespace asyncsteer {

namespace {
std::atomic<std::size_t> g_soundness_checks{0};

void check_ids(const ConvergenceState& state, std::span<const ResidualReport> reports) {
  for (const auto& r : reports) {
    if (r.worker >= state.latest.size()) {
      throw std::out_of_range("residual report from unknown worker " + std::to_string(r.worker));
    }
  }
}

void record(std::vector<ConvergenceState::Slot>& slots, const ResidualReport& r) {
  auto& slot = slots[r.worker];
  // Keyed by worker id: a newer report replaces an older one.
  if (!slot.seen || r.iteration >= slot.iteration) slot = {r.residual, r.iteration, true};
}
}  // namespace

std::string_view to_string(ConvergencePhase phase) {
  switch (phase) {
    case ConvergencePhase::Running: return "RUNNING";
    case ConvergencePhase::Tentative: return "TENTATIVE";
    case ConvergencePhase::Verifying: return "VERIFYING";
    case ConvergencePhase::Converged: return "CONVERGED";
  }
  return "RUNNING";
}

ConvergenceState::ConvergenceState(std::size_t workers, double tol)
    : tolerance(tol), latest(workers), verification(workers) {
  if (workers == 0) throw std::invalid_argument("convergence state needs at least one worker");
  if (!(tol > 0.0)) throw std::invalid_argument("tolerance must be > 0");
}

ConvergenceState detect_convergence(ConvergenceState state, std::span<const ResidualReport> reports) {
  check_ids(state, reports);
  switch (state.phase) {
    case ConvergencePhase::Converged:
      return state;

    case ConvergencePhase::Running:
    case ConvergencePhase::Tentative: {
      for (const auto& r : reports) record(state.latest, r);
      const bool all_below = std::ranges::all_of(
          state.latest, [&](const auto& s) { return s.seen && s.residual <= state.tolerance; });
      if (!all_below) {
        state.phase = ConvergencePhase::Running;
      } else if (state.phase == ConvergencePhase::Running) {
        state.phase = ConvergencePhase::Tentative;
      } else {
        state.phase = ConvergencePhase::Verifying;
        std::ranges::fill(state.verification, ConvergenceState::Slot{});
        state.frozen_residual.reset();
        ++state.verification_rounds;
      }
      return state;
    }

    case ConvergencePhase::Verifying: {
      for (const auto& r : reports) record(state.verification, r);
      if (!std::ranges::all_of(state.verification, [](const auto& s) { return s.seen; })) return state;

      std::vector<double> fresh;
      fresh.reserve(state.verification.size());
      for (const auto& s : state.verification) fresh.push_back(s.residual);
      const double global = global_residual(fresh);

      if (global <= state.tolerance) {
        if (state.frozen_residual) {
          g_soundness_checks.fetch_add(1, std::memory_order_relaxed);
          if (*state.frozen_residual > state.tolerance) {
            throw ConvergenceSoundnessError("frozen-field residual " + std::to_string(*state.frozen_residual) +
                                            " exceeds tolerance " + std::to_string(state.tolerance) +
                                            " at CONVERGED");
          }
        }
        state.phase = ConvergencePhase::Converged;
        state.verified_residual = global;
      } else {
        state.phase = ConvergencePhase::Running;
        // Stale latest values must be re-earned after a failed verification.
        for (auto& s : state.latest) s.seen = false;
      }
      return state;
    }
  }
  return state;
}

std::size_t convergence_soundness_checks() noexcept {
  return g_soundness_checks.load(std::memory_order_relaxed);
}

}  // namespace asyncsteer
