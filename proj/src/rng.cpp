#include "cwm/rng.hpp"

#include <cmath>
#include <numbers>

#include "cwm/error.hpp"

namespace cwm {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidState: return "InvalidState";
    case ErrorKind::InvalidIntervention: return "InvalidIntervention";
    case ErrorKind::GenerationFailed: return "GenerationFailed";
    case ErrorKind::StorageError: return "StorageError";
    case ErrorKind::SchemaError: return "SchemaError";
    case ErrorKind::CorruptData: return "CorruptData";
    case ErrorKind::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorKind::GraphError: return "GraphError";
    case ErrorKind::NumericsError: return "NumericsError";
    case ErrorKind::PropensityError: return "PropensityError";
    case ErrorKind::InvalidAction: return "InvalidAction";
    case ErrorKind::TrainingError: return "TrainingError";
    case ErrorKind::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) return 0;
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  // Box-Muller; one draw per call keeps the stream position simple.
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace cwm
