#include "spatial_diar/cacgmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "spatial_diar/errors.hpp"
#include "spatial_diar/parallel.hpp"

namespace spatial_diar {

namespace {

// Below this total responsibility a class falls back to the identity.
constexpr double kEmptyClassMass = 1e-12;

struct BinView {
  const Complex* z;              // frames x channels
  const std::uint8_t* active;    // frames
  int frames;
  int channels;
};

BinView bin_view(const NormalizedObservations& obs, int f) {
  return {obs.z.data() + static_cast<std::size_t>(f) * obs.frames * obs.channels,
          obs.active.data() + static_cast<std::size_t>(f) * obs.frames, obs.frames,
          obs.channels};
}

// Row-major lower Cholesky factor of a shape matrix and its log-determinant.
struct Factor {
  std::vector<Complex> lower;
  std::vector<double> inv_diag;
  double log_det = 0.0;
};

Factor factorize(const Eigen::MatrixXcd& b, int f, int k) {
  Eigen::LLT<Eigen::MatrixXcd> llt(b);
  const int n = static_cast<int>(b.rows());
  Factor out;
  out.lower.assign(static_cast<std::size_t>(n) * n, Complex{});
  out.inv_diag.resize(static_cast<std::size_t>(n));
  bool ok = llt.info() == Eigen::Success;
  if (ok) {
    const Eigen::MatrixXcd l = llt.matrixL();
    for (int i = 0; i < n && ok; ++i) {
      const double d = l(i, i).real();
      if (!(d > 0.0) || !std::isfinite(d)) {
        ok = false;
        break;
      }
      out.inv_diag[static_cast<std::size_t>(i)] = 1.0 / d;
      out.log_det += 2.0 * std::log(d);
      for (int j = 0; j <= i; ++j) out.lower[static_cast<std::size_t>(i) * n + j] = l(i, j);
    }
  }
  if (!ok || !std::isfinite(out.log_det)) {
    throw NumericalError("shape matrix for bin " + std::to_string(f) + ", class " +
                         std::to_string(k) +
                         " is not positive definite after loading; increase load_eps");
  }
  return out;
}

// z^H B^-1 z = |L^-1 z|^2 by forward substitution.
double quadratic_form(const Factor& fac, const Complex* z, int n, Complex* work) {
  double q = 0.0;
  for (int i = 0; i < n; ++i) {
    Complex s = z[i];
    const Complex* row = fac.lower.data() + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < i; ++j) s -= row[j] * work[j];
    work[i] = s * fac.inv_diag[static_cast<std::size_t>(i)];
    q += std::norm(work[i]);
  }
  return q;
}

// Weighted fixed-point update of the shape matrices for one bin. `gamma` and
// `quad` are frames x classes; a null `quad` means the identity was the
// previous estimate (unit quadratic forms). Writes the loaded,
// trace-normalized matrices and their factors, and the time-invariant priors
// (mean responsibility over active frames).
void m_step_bin(const BinView& bin, const double* gamma, const double* quad, int classes,
                double load_eps, int f, std::vector<Eigen::MatrixXcd>& shapes,
                std::vector<Factor>& factors, std::vector<double>& priors) {
  const int n = bin.channels;
  const int packed = n * (n + 1) / 2;
  std::vector<Complex> acc(static_cast<std::size_t>(classes) * packed, Complex{});
  std::vector<double> mass(static_cast<std::size_t>(classes), 0.0);
  std::vector<Complex> outer(static_cast<std::size_t>(packed));
  int active = 0;

  for (int l = 0; l < bin.frames; ++l) {
    if (!bin.active[l]) continue;
    ++active;
    const Complex* z = bin.z + static_cast<std::size_t>(l) * n;
    int p = 0;
    for (int i = 0; i < n; ++i) {
      for (int j = i; j < n; ++j) outer[static_cast<std::size_t>(p++)] = z[i] * std::conj(z[j]);
    }
    const double* g = gamma + static_cast<std::size_t>(l) * classes;
    for (int k = 0; k < classes; ++k) {
      if (g[k] == 0.0) continue;
      mass[static_cast<std::size_t>(k)] += g[k];
      const double w = quad ? g[k] / quad[static_cast<std::size_t>(l) * classes + k] : g[k];
      Complex* a = acc.data() + static_cast<std::size_t>(k) * packed;
      for (int q = 0; q < packed; ++q) a[q] += w * outer[static_cast<std::size_t>(q)];
    }
  }

  shapes.resize(static_cast<std::size_t>(classes));
  factors.resize(static_cast<std::size_t>(classes));
  priors.assign(static_cast<std::size_t>(classes), 1.0 / classes);
  for (int k = 0; k < classes; ++k) {
    Eigen::MatrixXcd& b = shapes[static_cast<std::size_t>(k)];
    const double m = mass[static_cast<std::size_t>(k)];
    if (m < kEmptyClassMass) {
      b = Eigen::MatrixXcd::Identity(n, n);
    } else {
      b.resize(n, n);
      const Complex* a = acc.data() + static_cast<std::size_t>(k) * packed;
      const double scale = n / m;
      int p = 0;
      for (int i = 0; i < n; ++i) {
        for (int j = i; j < n; ++j) {
          const Complex v = scale * a[p++];
          if (i == j) {
            b(i, i) = v.real();
          } else {
            b(i, j) = v;
            b(j, i) = std::conj(v);
          }
        }
      }
      const double trace = b.trace().real();
      b.diagonal().array() += load_eps * trace / n;
      b *= n / b.trace().real();
    }
    factors[static_cast<std::size_t>(k)] = factorize(b, f, k);
    if (active > 0) priors[static_cast<std::size_t>(k)] = m / active;
  }
}

// Priors for one bin: pi(l, k) = base[l * frame_stride + k].
struct PriorView {
  const double* base;
  std::size_t frame_stride;
};

// E-step for one bin. Writes responsibilities and quadratic forms (frames x
// classes) and returns the summed log-likelihood over active frames.
double e_step_bin(const BinView& bin, const std::vector<Factor>& factors, PriorView priors,
                  int classes, double inverse_eps, int f, double* gamma, double* quad) {
  const int n = bin.channels;
  std::vector<Complex> work(static_cast<std::size_t>(n));
  std::vector<double> logit(static_cast<std::size_t>(classes));
  std::vector<double> log_prior(static_cast<std::size_t>(classes));
  if (priors.frame_stride == 0) {
    for (int k = 0; k < classes; ++k) log_prior[static_cast<std::size_t>(k)] = std::log(priors.base[k]);
  }
  const double uniform = 1.0 / classes;
  double total = 0.0;

  for (int l = 0; l < bin.frames; ++l) {
    double* g = gamma + static_cast<std::size_t>(l) * classes;
    double* q = quad + static_cast<std::size_t>(l) * classes;
    if (!bin.active[l]) {
      std::fill(g, g + classes, uniform);
      std::fill(q, q + classes, 1.0);
      continue;
    }
    const Complex* z = bin.z + static_cast<std::size_t>(l) * n;
    const double* pi = priors.base + static_cast<std::size_t>(l) * priors.frame_stride;
    double best = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < classes; ++k) {
      const Factor& fac = factors[static_cast<std::size_t>(k)];
      q[k] = quadratic_form(fac, z, n, work.data());
      const double lp = priors.frame_stride == 0 ? log_prior[static_cast<std::size_t>(k)]
                                                 : std::log(pi[k]);
      const double v = lp - fac.log_det - n * std::log(q[k] + inverse_eps);
      logit[static_cast<std::size_t>(k)] = v;
      best = std::max(best, v);
    }
    if (!std::isfinite(best)) {
      if (best == std::numeric_limits<double>::infinity() || std::isnan(best)) {
        throw NumericalError("non-finite class log-density in bin " + std::to_string(f));
      }
      // Every class has zero prior mass here.
      std::fill(g, g + classes, uniform);
      continue;
    }
    double sum = 0.0;
    for (int k = 0; k < classes; ++k) {
      g[k] = std::exp(logit[static_cast<std::size_t>(k)] - best);
      sum += g[k];
    }
    for (int k = 0; k < classes; ++k) g[k] /= sum;
    total += best + std::log(sum);
  }
  return total;
}

int active_count(const BinView& bin) {
  int c = 0;
  for (int l = 0; l < bin.frames; ++l) c += bin.active[l] ? 1 : 0;
  return c;
}

void check_shapes(const NormalizedObservations& z, const PosteriorTensor& gamma) {
  if (gamma.frames != z.frames || gamma.bins != z.bins) {
    throw InputError("posterior shape " + std::to_string(gamma.frames) + "x" +
                     std::to_string(gamma.bins) + " does not match observations " +
                     std::to_string(z.frames) + "x" + std::to_string(z.bins));
  }
  if (gamma.classes < 1) throw InputError("posterior must have at least one class");
}

void check_params(const NormalizedObservations& z, const CacgmmParams& params) {
  if (params.bins != z.bins || params.channels != z.channels ||
      params.shape.size() != static_cast<std::size_t>(params.bins) * params.classes) {
    throw InputError("cACGMM parameters do not match the observations");
  }
  if (params.prior_frames != 0 && params.prior_frames != z.frames) {
    throw InputError("time-varying priors do not match the observation frame count");
  }
}

std::vector<double> gather_bin(const PosteriorTensor& gamma, int f) {
  std::vector<double> out(static_cast<std::size_t>(gamma.frames) * gamma.classes);
  for (int l = 0; l < gamma.frames; ++l) {
    std::copy_n(&gamma.values[gamma.index(l, f, 0)], gamma.classes,
                out.data() + static_cast<std::size_t>(l) * gamma.classes);
  }
  return out;
}

void scatter_bin(const std::vector<double>& local, int f, PosteriorTensor& gamma) {
  for (int l = 0; l < gamma.frames; ++l) {
    std::copy_n(local.data() + static_cast<std::size_t>(l) * gamma.classes, gamma.classes,
                &gamma.values[gamma.index(l, f, 0)]);
  }
}

PriorView prior_view(const CacgmmParams& params, int f) {
  const std::size_t offset = static_cast<std::size_t>(f) * params.classes;
  if (params.prior_frames == 0) return {params.priors.data() + offset, 0};
  return {params.priors.data() + offset, static_cast<std::size_t>(params.bins) * params.classes};
}

// Shared E-step over all bins; fills `out` when given and returns the mean
// log-likelihood over active bins.
double e_step_all(const NormalizedObservations& z, const CacgmmParams& params,
                  const EmOptions& opts, PosteriorTensor* out) {
  check_params(z, params);
  std::vector<double> ll(static_cast<std::size_t>(z.bins), 0.0);
  std::vector<int> counts(static_cast<std::size_t>(z.bins), 0);
  parallel_for(static_cast<std::size_t>(z.bins), [&](std::size_t fi) {
    const int f = static_cast<int>(fi);
    std::vector<Factor> factors;
    factors.reserve(static_cast<std::size_t>(params.classes));
    for (int k = 0; k < params.classes; ++k) factors.push_back(factorize(params.shape_matrix(f, k), f, k));
    std::vector<double> gamma(static_cast<std::size_t>(z.frames) * params.classes);
    std::vector<double> quad(gamma.size());
    const BinView bin = bin_view(z, f);
    ll[fi] = e_step_bin(bin, factors, prior_view(params, f), params.classes, opts.inverse_eps, f,
                        gamma.data(), quad.data());
    counts[fi] = active_count(bin);
    if (out != nullptr) scatter_bin(gamma, f, *out);
  });
  double total = 0.0;
  long long count = 0;
  for (int f = 0; f < z.bins; ++f) {
    total += ll[static_cast<std::size_t>(f)];
    count += counts[static_cast<std::size_t>(f)];
  }
  return count > 0 ? total / static_cast<double>(count) : 0.0;
}

}  // namespace

void EmOptions::validate() const {
  if (iterations < 1) throw InputError("EM iterations must be >= 1");
  if (!(load_eps > 0.0 && load_eps <= 1e-2)) throw InputError("load_eps must lie in (0, 1e-2]");
  if (!(inverse_eps > 0.0 && inverse_eps <= 1e-2)) {
    throw InputError("inverse_eps must lie in (0, 1e-2]");
  }
}

NormalizedObservations NormalizedObservations::slice_frames(int begin, int end) const {
  begin = std::clamp(begin, 0, frames);
  end = std::clamp(end, begin, frames);
  NormalizedObservations out;
  out.frames = end - begin;
  out.bins = bins;
  out.channels = channels;
  out.z.resize(static_cast<std::size_t>(out.frames) * bins * channels);
  out.active.resize(static_cast<std::size_t>(out.frames) * bins);
  for (int f = 0; f < bins; ++f) {
    std::copy_n(at(begin, f), static_cast<std::size_t>(out.frames) * channels,
                out.z.data() + static_cast<std::size_t>(f) * out.frames * channels);
    std::copy_n(active.data() + static_cast<std::size_t>(f) * frames + begin, out.frames,
                out.active.data() + static_cast<std::size_t>(f) * out.frames);
  }
  return out;
}

NormalizedObservations normalize_observations(const StftTensor& y) {
  if (y.channels < 2) throw InputError("spatial mixture model needs at least 2 channels");
  NormalizedObservations out;
  out.frames = y.frames;
  out.bins = y.bins;
  out.channels = y.channels;
  out.z.assign(static_cast<std::size_t>(y.frames) * y.bins * y.channels, Complex{});
  out.active.assign(static_cast<std::size_t>(y.frames) * y.bins, 0);
  for (int f = 0; f < y.bins; ++f) {
    for (int l = 0; l < y.frames; ++l) {
      double energy = 0.0;
      for (int c = 0; c < y.channels; ++c) energy += std::norm(y.at(c, l, f));
      if (!(energy > 0.0) || !std::isfinite(energy)) continue;
      const double inv = 1.0 / std::sqrt(energy);
      Complex* z = out.z.data() + (static_cast<std::size_t>(f) * y.frames + l) * y.channels;
      for (int c = 0; c < y.channels; ++c) z[c] = y.at(c, l, f) * inv;
      out.active[static_cast<std::size_t>(f) * y.frames + l] = 1;
    }
  }
  return out;
}

PosteriorTensor init_posterior_from_diarization(const DiarizationMatrix& d, int num_bins) {
  if (num_bins < 1) throw InputError("num_bins must be >= 1");
  if (d.speakers() < 1) throw InputError("diarization must have at least one speaker");
  if (!d.d.allFinite() || d.d.minCoeff() < 0.0 || d.d.maxCoeff() > 1.0) {
    throw InputError("diarization entries must lie in [0, 1]");
  }
  const int speakers = d.speakers();
  const int classes = speakers + 1;
  PosteriorTensor gamma(d.frames(), num_bins, classes);
  std::vector<double> row(static_cast<std::size_t>(classes));
  for (int l = 0; l < d.frames(); ++l) {
    double sum = 1.0;  // noise class
    for (int k = 0; k < speakers; ++k) {
      row[static_cast<std::size_t>(k)] = d.d(l, k);
      sum += d.d(l, k);
    }
    row[static_cast<std::size_t>(speakers)] = 1.0;
    for (double& v : row) v /= sum;
    for (int f = 0; f < num_bins; ++f) {
      std::copy(row.begin(), row.end(), &gamma.at(l, f, 0));
    }
  }
  return gamma;
}

CacgmmParams m_step(const NormalizedObservations& z, const PosteriorTensor& gamma,
                    const EmOptions& opts, const CacgmmParams* previous) {
  opts.validate();
  check_shapes(z, gamma);
  if (previous != nullptr) {
    check_params(z, *previous);
    if (previous->classes != gamma.classes) {
      throw InputError("previous parameters have a different class count");
    }
  }
  CacgmmParams params;
  params.bins = z.bins;
  params.classes = gamma.classes;
  params.channels = z.channels;
  params.shape.resize(static_cast<std::size_t>(z.bins) * gamma.classes);
  std::vector<double> updated(static_cast<std::size_t>(z.bins) * gamma.classes);

  parallel_for(static_cast<std::size_t>(z.bins), [&](std::size_t fi) {
    const int f = static_cast<int>(fi);
    const BinView bin = bin_view(z, f);
    const std::vector<double> g = gather_bin(gamma, f);
    std::vector<double> quad;
    if (previous != nullptr) {
      quad.resize(g.size());
      std::vector<Complex> work(static_cast<std::size_t>(z.channels));
      for (int k = 0; k < gamma.classes; ++k) {
        const Factor fac = factorize(previous->shape_matrix(f, k), f, k);
        for (int l = 0; l < z.frames; ++l) {
          quad[static_cast<std::size_t>(l) * gamma.classes + k] =
              bin.active[l] ? quadratic_form(fac, bin.z + static_cast<std::size_t>(l) * z.channels,
                                             z.channels, work.data())
                            : 1.0;
        }
      }
    }
    std::vector<Eigen::MatrixXcd> shapes;
    std::vector<Factor> factors;
    std::vector<double> priors;
    m_step_bin(bin, g.data(), previous ? quad.data() : nullptr, gamma.classes, opts.load_eps, f,
               shapes, factors, priors);
    for (int k = 0; k < gamma.classes; ++k) {
      params.shape[fi * gamma.classes + static_cast<std::size_t>(k)] =
          std::move(shapes[static_cast<std::size_t>(k)]);
      updated[fi * gamma.classes + static_cast<std::size_t>(k)] = priors[static_cast<std::size_t>(k)];
    }
  });

  if (opts.prior_mode == PriorMode::updated) {
    params.priors = std::move(updated);
  } else if (previous != nullptr) {
    params.prior_frames = previous->prior_frames;
    params.priors = previous->priors;
  } else {
    params.prior_frames = gamma.frames;
    params.priors = gamma.values;
  }
  return params;
}

PosteriorTensor e_step(const NormalizedObservations& z, const CacgmmParams& params,
                       const EmOptions& opts) {
  PosteriorTensor out(z.frames, z.bins, params.classes);
  e_step_all(z, params, opts, &out);
  return out;
}

double log_likelihood(const NormalizedObservations& z, const CacgmmParams& params,
                      const EmOptions& opts) {
  return e_step_all(z, params, opts, nullptr);
}

EmResult run_em(const NormalizedObservations& z, const PosteriorTensor& gamma_init,
                const EmOptions& opts) {
  opts.validate();
  check_shapes(z, gamma_init);
  const int classes = gamma_init.classes;
  const int iterations = opts.iterations;
  const int frozen_iterations = opts.prior_mode == PriorMode::frozen   ? iterations
                                : opts.prior_mode == PriorMode::guided ? (iterations + 2) / 3
                                                                       : 0;

  EmResult result;
  result.posterior = PosteriorTensor(z.frames, z.bins, classes);
  CacgmmParams& params = result.params;
  params.bins = z.bins;
  params.classes = classes;
  params.channels = z.channels;
  params.shape.resize(static_cast<std::size_t>(z.bins) * classes);
  std::vector<double> final_priors(static_cast<std::size_t>(z.bins) * classes);
  std::vector<double> ll(static_cast<std::size_t>(iterations) * z.bins, 0.0);
  std::vector<int> counts(static_cast<std::size_t>(z.bins), 0);

  parallel_for(static_cast<std::size_t>(z.bins), [&](std::size_t fi) {
    const int f = static_cast<int>(fi);
    const BinView bin = bin_view(z, f);
    counts[fi] = active_count(bin);
    const std::vector<double> initial = gather_bin(gamma_init, f);
    std::vector<double> gamma = initial;
    std::vector<double> quad(gamma.size(), 1.0);
    std::vector<Eigen::MatrixXcd> shapes;
    std::vector<Factor> factors;
    std::vector<double> priors;
    for (int it = 0; it < iterations; ++it) {
      m_step_bin(bin, gamma.data(), it == 0 ? nullptr : quad.data(), classes, opts.load_eps, f,
                 shapes, factors, priors);
      const PriorView view = it < frozen_iterations ? PriorView{initial.data(),
                                                                static_cast<std::size_t>(classes)}
                                                    : PriorView{priors.data(), 0};
      ll[static_cast<std::size_t>(it) * z.bins + fi] =
          e_step_bin(bin, factors, view, classes, opts.inverse_eps, f, gamma.data(), quad.data());
    }
    scatter_bin(gamma, f, result.posterior);
    for (int k = 0; k < classes; ++k) {
      params.shape[fi * classes + static_cast<std::size_t>(k)] = std::move(shapes[static_cast<std::size_t>(k)]);
      final_priors[fi * classes + static_cast<std::size_t>(k)] = priors[static_cast<std::size_t>(k)];
    }
  });

  if (frozen_iterations >= iterations) {
    params.prior_frames = z.frames;
    params.priors = gamma_init.values;
  } else {
    params.priors = std::move(final_priors);
  }

  long long count = 0;
  for (int c : counts) count += c;
  result.log_likelihood.resize(static_cast<std::size_t>(iterations), 0.0);
  for (int it = 0; it < iterations; ++it) {
    double total = 0.0;
    for (int f = 0; f < z.bins; ++f) total += ll[static_cast<std::size_t>(it) * z.bins + f];
    result.log_likelihood[static_cast<std::size_t>(it)] =
        count > 0 ? total / static_cast<double>(count) : 0.0;
  }
  return result;
}

}  // namespace spatial_diar
