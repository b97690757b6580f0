#include "augmentation.hpp"

#include <algorithm>
#include <cmath>

namespace pskn {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

void apply_scale(PointCloud& cloud, const double s[3]) {
  for (std::size_t i = 0; i < cloud.n; ++i) {
    double* p = cloud.points.data() + 3 * i;
    p[0] *= s[0];
    p[1] *= s[1];
    p[2] *= s[2];
  }
}

// Rigid rotation about the vertical (y) axis; y is untouched exactly.
void apply_rotation(PointCloud& cloud, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  for (std::size_t i = 0; i < cloud.n; ++i) {
    double* p = cloud.points.data() + 3 * i;
    const double x = p[0], z = p[2];
    p[0] = x * c + z * s;
    p[2] = -x * s + z * c;
  }
}

void apply_translation(PointCloud& cloud, const double t[3]) {
  for (std::size_t i = 0; i < cloud.n; ++i) {
    double* p = cloud.points.data() + 3 * i;
    p[0] += t[0];
    p[1] += t[1];
    p[2] += t[2];
  }
}

void apply_jitter(PointCloud& cloud, double sigma, double clip, Rng& rng) {
  for (double& v : cloud.points)
    v += std::clamp(rng.normal(0.0, sigma), -clip, clip);
}

}  // namespace

AugmentMode parse_augment_mode(const std::string& name) {
  if (name == "none") return AugmentMode::kNone;
  if (name == "rotation") return AugmentMode::kRotation;
  if (name == "jitter") return AugmentMode::kJitter;
  if (name == "anisotropic_scaling") return AugmentMode::kAnisotropicScaling;
  if (name == "translation") return AugmentMode::kTranslation;
  if (name == "all") return AugmentMode::kAll;
  throw ConfigError("unknown augmentation mode '" + name +
                    "' (expected none, rotation, jitter, anisotropic_scaling, "
                    "translation, all)");
}

std::string augment_mode_name(AugmentMode mode) {
  switch (mode) {
    case AugmentMode::kNone: return "none";
    case AugmentMode::kRotation: return "rotation";
    case AugmentMode::kJitter: return "jitter";
    case AugmentMode::kAnisotropicScaling: return "anisotropic_scaling";
    case AugmentMode::kTranslation: return "translation";
    case AugmentMode::kAll: return "all";
  }
  return "none";
}

void AugmentConfig::validate() const {
  if (jitter_sigma <= 0.0)
    throw ConfigError("augment: jitter_sigma must be positive");
  if (jitter_clip <= 0.0)
    throw ConfigError("augment: jitter_clip must be positive");
  if (scale_lo > scale_hi)
    throw ConfigError("augment: scale range is not ordered");
  if (scale_lo <= 0.0)
    throw ConfigError("augment: scale factors must stay positive");
  if (translate_range < 0.0)
    throw ConfigError("augment: translate_range must be non-negative");
}

PointCloud augment(const PointCloud& cloud, const AugmentConfig& cfg,
                   std::uint64_t sample_index, AugmentDraw* draw) {
  cfg.validate();
  PointCloud out = cloud;
  if (cfg.mode == AugmentMode::kNone) return out;

  Rng rng(mix_seed(cfg.seed, sample_index));
  AugmentDraw local;
  AugmentDraw& d = draw ? *draw : local;

  const bool all = cfg.mode == AugmentMode::kAll;
  if (all || cfg.mode == AugmentMode::kAnisotropicScaling) {
    for (int a = 0; a < 3; ++a)
      d.scale[a] = rng.uniform(cfg.scale_lo, cfg.scale_hi);
    apply_scale(out, d.scale);
  }
  if (all || cfg.mode == AugmentMode::kRotation) {
    d.angle = rng.uniform(0.0, kTwoPi);
    apply_rotation(out, d.angle);
  }
  if (all || cfg.mode == AugmentMode::kTranslation) {
    for (int a = 0; a < 3; ++a)
      d.translate[a] = rng.uniform(-cfg.translate_range, cfg.translate_range);
    apply_translation(out, d.translate);
  }
  if (all || cfg.mode == AugmentMode::kJitter) {
    apply_jitter(out, cfg.jitter_sigma, cfg.jitter_clip, rng);
  }
  return out;
}

}  // namespace pskn
