#include "fft.hpp"

#include <algorithm>
#include <cstring>
#include <mutex>
#include <new>

namespace spatial_diar::detail {

namespace {
// FFTW's planner is not thread-safe; execution on distinct plans is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

RealFft::RealFft(int n) : n_(n) {
  std::lock_guard lock(planner_mutex());
  real_ = fftw_alloc_real(static_cast<std::size_t>(n));
  spectrum_ = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
  if (real_ == nullptr || spectrum_ == nullptr) throw std::bad_alloc();
  forward_plan_ = fftw_plan_dft_r2c_1d(n, real_, spectrum_, FFTW_ESTIMATE);
  inverse_plan_ = fftw_plan_dft_c2r_1d(n, spectrum_, real_, FFTW_ESTIMATE);
}

RealFft::~RealFft() {
  std::lock_guard lock(planner_mutex());
  fftw_destroy_plan(forward_plan_);
  fftw_destroy_plan(inverse_plan_);
  fftw_free(real_);
  fftw_free(spectrum_);
}

void RealFft::forward(const double* in, std::complex<double>* out) {
  std::copy(in, in + n_, real_);
  fftw_execute(forward_plan_);
  std::memcpy(static_cast<void*>(out), spectrum_, sizeof(fftw_complex) * bins());
}

void RealFft::inverse(const std::complex<double>* in, double* out) {
  std::memcpy(spectrum_, static_cast<const void*>(in), sizeof(fftw_complex) * bins());
  fftw_execute(inverse_plan_);
  std::copy(real_, real_ + n_, out);
}

}  // namespace spatial_diar::detail
