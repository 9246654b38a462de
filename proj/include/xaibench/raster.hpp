#pragma once

#include <Eigen/Core>
#include <cstdint>

namespace xb {

/// Row-major 2-D raster, the unit of all spatial data.
template <typename Scalar>
using Raster =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Grayscale intensities, normally in [0, 1].
using Image = Raster<float>;
/// Binary raster, values in {0, 1}.
using Mask = Raster<std::uint8_t>;
/// Multiplicative lesion attenuation factors in [1 - intensity, 1].
using LesionMap = Raster<double>;

struct Shape {
  int height = 0;
  int width = 0;
  friend bool operator==(const Shape&, const Shape&) = default;
  int pixels() const { return height * width; }
};

template <typename Derived>
Shape shape_of(const Eigen::DenseBase<Derived>& r) {
  return {static_cast<int>(r.rows()), static_cast<int>(r.cols())};
}

}  // namespace xb
