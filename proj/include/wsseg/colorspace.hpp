// wsseg - weakly supervised point cloud segmentation
//
// sRGB <-> CIELAB (D65) conversion and the channel split used by the
// colorization pretext task.
//
// Network-facing quantities are rescaled to O(1): L by 1/100, a and b by
// 1/128 (see kLightnessScale / kChromaScale).

#ifndef WSSEG_COLORSPACE_HPP
#define WSSEG_COLORSPACE_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>

#include "wsseg/core/types.hpp"

namespace wsseg {

struct LabColor {
  double L = 0.0;
  double a = 0.0;
  double b = 0.0;
};

inline constexpr double kLightnessScale = 1.0 / 100.0;
inline constexpr double kChromaScale = 1.0 / 128.0;

namespace detail {

inline const Eigen::Matrix3d& srgb_to_xyz_matrix() {
  static const Eigen::Matrix3d m = (Eigen::Matrix3d() << 0.4124564, 0.3575761, 0.1804375,  //
                                    0.2126729, 0.7151522, 0.0721750,                        //
                                    0.0193339, 0.1191920, 0.9503041)
                                       .finished();
  return m;
}

inline const Eigen::Matrix3d& xyz_to_srgb_matrix() {
  static const Eigen::Matrix3d m = srgb_to_xyz_matrix().inverse();
  return m;
}

// Reference white is the image of linear (1,1,1) so the gray axis maps to a = b = 0 exactly.
inline const Eigen::Vector3d& white_point() {
  static const Eigen::Vector3d w = srgb_to_xyz_matrix() * Eigen::Vector3d::Ones();
  return w;
}

inline double srgb_to_linear(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

inline double linear_to_srgb(double c) {
  return c <= 0.0031308 ? 12.92 * c : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
}

inline constexpr double kDelta = 6.0 / 29.0;

inline double lab_f(double t) {
  return t > kDelta * kDelta * kDelta ? std::cbrt(t) : t / (3.0 * kDelta * kDelta) + 4.0 / 29.0;
}

inline double lab_f_inv(double t) {
  return t > kDelta ? t * t * t : 3.0 * kDelta * kDelta * (t - 4.0 / 29.0);
}

}  // namespace detail

/// sRGB in [0,1]^3 to CIELAB with a D65 white. Throws on out-of-range input.
inline LabColor rgb_to_lab(const Vector3& rgb) {
  for (int c = 0; c < 3; ++c) {
    if (!(rgb[c] >= 0.0 && rgb[c] <= 1.0))
      throw InvalidArgument("rgb component " + std::to_string(c) + " = " + std::to_string(rgb[c]) +
                            " outside [0,1]");
  }
  const Eigen::Vector3d linear(detail::srgb_to_linear(rgb[0]), detail::srgb_to_linear(rgb[1]),
                               detail::srgb_to_linear(rgb[2]));
  const Eigen::Vector3d xyz = detail::srgb_to_xyz_matrix() * linear;
  const Eigen::Vector3d& w = detail::white_point();
  const double fx = detail::lab_f(xyz[0] / w[0]);
  const double fy = detail::lab_f(xyz[1] / w[1]);
  const double fz = detail::lab_f(xyz[2] / w[2]);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

/// Inverse of rgb_to_lab; out-of-gamut results are clamped per channel at the end.
inline Vector3 lab_to_rgb(const LabColor& lab) {
  const double fy = (lab.L + 16.0) / 116.0;
  const double fx = fy + lab.a / 500.0;
  const double fz = fy - lab.b / 200.0;
  const Eigen::Vector3d& w = detail::white_point();
  const Eigen::Vector3d xyz(w[0] * detail::lab_f_inv(fx), w[1] * detail::lab_f_inv(fy),
                            w[2] * detail::lab_f_inv(fz));
  const Eigen::Vector3d linear = detail::xyz_to_srgb_matrix() * xyz;
  Vector3 rgb;
  for (int c = 0; c < 3; ++c) {
    const double v = linear[c] <= 0.0 ? 0.0 : detail::linear_to_srgb(linear[c]);
    rgb[c] = std::clamp(v, 0.0, 1.0);
  }
  return rgb;
}

/// Euclidean distance in Lab (CIE76 delta E).
inline double delta_e(const LabColor& x, const LabColor& y) {
  return std::sqrt((x.L - y.L) * (x.L - y.L) + (x.a - y.a) * (x.a - y.a) + (x.b - y.b) * (x.b - y.b));
}

/// Pretext network input: rows (x, y, z, L', L', L') with L' = L / 100.
struct PretextInput {
  Matrix features;
};

struct PretextChannels {
  PretextInput input;
  MatrixX2 ab_targets;  ///< (a, b) / 128 per point
};

/// Splits colors into the given channels (position + lightness) and the predicted ones (a, b).
inline PretextChannels split_pretext_channels(const PointCloud& cloud) {
  const auto n = static_cast<Eigen::Index>(cloud.size());
  PretextChannels out;
  out.input.features.resize(n, 6);
  out.ab_targets.resize(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const LabColor lab = rgb_to_lab(cloud.colors().row(i).transpose());
    const double l = lab.L * kLightnessScale;
    out.input.features.row(i) << cloud.positions()(i, 0), cloud.positions()(i, 1),
        cloud.positions()(i, 2), l, l, l;
    out.ab_targets.row(i) << lab.a * kChromaScale, lab.b * kChromaScale;
  }
  return out;
}

/// Segmentation network input: rows (x, y, z, L/100, a/128, b/128).
inline Matrix segmentation_features(const PointCloud& cloud) {
  const auto n = static_cast<Eigen::Index>(cloud.size());
  Matrix f(n, 6);
  for (Eigen::Index i = 0; i < n; ++i) {
    const LabColor lab = rgb_to_lab(cloud.colors().row(i).transpose());
    f.row(i) << cloud.positions()(i, 0), cloud.positions()(i, 1), cloud.positions()(i, 2),
        lab.L * kLightnessScale, lab.a * kChromaScale, lab.b * kChromaScale;
  }
  return f;
}

}  // namespace wsseg

#endif  // WSSEG_COLORSPACE_HPP
