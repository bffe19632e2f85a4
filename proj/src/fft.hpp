#pragma once

#include <complex>

#include <fftw3.h>

namespace spatial_diar::detail {

// Real-input FFT of a fixed length backed by FFTW. forward() produces the
// n/2+1 non-negative frequency bins; inverse() is unnormalized, so
// inverse(forward(x)) == n * x.
class RealFft {
 public:
  explicit RealFft(int n);
  ~RealFft();
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  int size() const { return n_; }
  int bins() const { return n_ / 2 + 1; }

  void forward(const double* in, std::complex<double>* out);
  void inverse(const std::complex<double>* in, double* out);

 private:
  int n_;
  double* real_;
  fftw_complex* spectrum_;
  fftw_plan forward_plan_;
  fftw_plan inverse_plan_;
};

}  // namespace spatial_diar::detail
