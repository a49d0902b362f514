#include "layerscope/rng.hpp"

#include <cmath>
#include <numbers>

#include "layerscope/error.hpp"

namespace layerscope {

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  // splitmix64 finalizer over the combined value
  std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t Rng::below(std::uint64_t n) {
  // rejection sampling keeps the result unbiased
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return x % n;
}

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::Syntax: return "syntax";
    case ErrorCode::UnknownKind: return "unknown_kind";
    case ErrorCode::DanglingReference: return "dangling_reference";
    case ErrorCode::Cycle: return "cycle";
    case ErrorCode::Validation: return "validation";
    case ErrorCode::UnknownBuiltin: return "unknown_builtin";
    case ErrorCode::JumpMismatch: return "jump_mismatch";
    case ErrorCode::ShapeMismatch: return "shape_mismatch";
    case ErrorCode::DimensionMismatch: return "dimension_mismatch";
    case ErrorCode::Io: return "io";
    case ErrorCode::BadMagic: return "bad_magic";
    case ErrorCode::VersionMismatch: return "version_mismatch";
    case ErrorCode::Truncated: return "truncated";
    case ErrorCode::InvalidArgument: return "invalid_argument";
    case ErrorCode::NotEnoughSamples: return "not_enough_samples";
    case ErrorCode::NonFinite: return "non_finite";
    case ErrorCode::Divergence: return "divergence";
    case ErrorCode::RunMismatch: return "run_mismatch";
    case ErrorCode::AlreadyExists: return "already_exists";
  }
  return "unknown";
}

}  // namespace layerscope
