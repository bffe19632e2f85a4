#pragma once

#include <complex>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace spatial_diar {

using Complex = std::complex<double>;

// Row-major so that each row (channel, frame) is contiguous in memory.
using RealMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Soft frame-by-speaker activity d(l, k) in [0, 1].
struct DiarizationMatrix {
  RealMatrix d;            // frames x speakers
  double frame_rate = 0.0;  // frames per second

  int frames() const { return static_cast<int>(d.rows()); }
  int speakers() const { return static_cast<int>(d.cols()); }
};

// Binary frame-by-speaker activity.
struct SpeakerActivityMatrix {
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> m;
  double frame_rate = 0.0;

  int frames() const { return static_cast<int>(m.rows()); }
  int speakers() const { return static_cast<int>(m.cols()); }

  DiarizationMatrix to_diarization() const {
    return {m.cast<double>(), frame_rate};
  }
};

// Class posteriors gamma(l, f, k), stored frame-major: [frame][bin][class].
struct PosteriorTensor {
  int frames = 0;
  int bins = 0;
  int classes = 0;
  std::vector<double> values;

  PosteriorTensor() = default;
  PosteriorTensor(int frames_, int bins_, int classes_, double fill = 0.0)
      : frames(frames_),
        bins(bins_),
        classes(classes_),
        values(static_cast<std::size_t>(frames_) * bins_ * classes_, fill) {}

  std::size_t index(int l, int f, int k) const {
    return (static_cast<std::size_t>(l) * bins + f) * classes + k;
  }
  double& at(int l, int f, int k) { return values[index(l, f, k)]; }
  double at(int l, int f, int k) const { return values[index(l, f, k)]; }
};

}  // namespace spatial_diar
