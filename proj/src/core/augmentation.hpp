#pragma once

#include <cstdint>
#include <string>

#include "geometry.hpp"
#include "rng.hpp"

namespace pskn {

enum class AugmentMode {
  kNone,
  kRotation,
  kJitter,
  kAnisotropicScaling,
  kTranslation,
  kAll,
};

AugmentMode parse_augment_mode(const std::string& name);
std::string augment_mode_name(AugmentMode mode);

struct AugmentConfig {
  AugmentMode mode = AugmentMode::kNone;
  std::uint64_t seed = 0;
  double jitter_sigma = 0.01;
  double jitter_clip = 0.05;
  double scale_lo = 0.8;
  double scale_hi = 1.25;
  double translate_range = 0.1;  // offset drawn per axis in [-range, range]

  void validate() const;
};

// The random factors one augmentation drew; exposed so tests can check the
// geometry against the exact values used.
struct AugmentDraw {
  double scale[3] = {1, 1, 1};
  double angle = 0.0;
  double translate[3] = {0, 0, 0};
};

// Applies the configured augmentation. The randomness is derived from
// (cfg.seed, sample_index) only, so the same pair always yields the same
// cloud. Mode `all` composes scaling, rotation, translation, jitter in that
// order. Features pass through untouched.
PointCloud augment(const PointCloud& cloud, const AugmentConfig& cfg,
                   std::uint64_t sample_index, AugmentDraw* draw = nullptr);

}  // namespace pskn
