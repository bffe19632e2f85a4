#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "spatial_diar/cacgmm.hpp"
#include "spatial_diar/errors.hpp"

using namespace spatial_diar;

namespace {

NormalizedObservations random_observations(int frames, int bins, int channels, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  NormalizedObservations z;
  z.frames = frames;
  z.bins = bins;
  z.channels = channels;
  z.z.resize(static_cast<std::size_t>(frames) * bins * channels);
  z.active.assign(static_cast<std::size_t>(frames) * bins, 1);
  for (std::size_t i = 0; i < z.z.size(); i += channels) {
    double norm = 0.0;
    for (int c = 0; c < channels; ++c) {
      z.z[i + c] = {g(rng), g(rng)};
      norm += std::norm(z.z[i + c]);
    }
    for (int c = 0; c < channels; ++c) z.z[i + c] /= std::sqrt(norm);
  }
  return z;
}

// Observations drawn around `classes` random directions so EM has structure.
NormalizedObservations clustered_observations(int frames, int bins, int channels, int classes,
                                              std::mt19937_64& rng, std::vector<int>* labels = nullptr) {
  std::normal_distribution<double> g;
  std::uniform_int_distribution<int> pick(0, classes - 1);
  NormalizedObservations z = random_observations(frames, bins, channels, rng);
  std::vector<Eigen::VectorXcd> dirs;
  for (int k = 0; k < classes * bins; ++k) {
    Eigen::VectorXcd d(channels);
    for (int c = 0; c < channels; ++c) d(c) = {g(rng), g(rng)};
    dirs.push_back(d.normalized());
  }
  for (int l = 0; l < frames; ++l) {
    const int k = pick(rng);
    if (labels) labels->push_back(k);
    for (int f = 0; f < bins; ++f) {
      Eigen::VectorXcd v = dirs[static_cast<std::size_t>(f * classes + k)];
      for (int c = 0; c < channels; ++c) v(c) += 0.15 * Complex(g(rng), g(rng));
      v.normalize();
      for (int c = 0; c < channels; ++c) z.z[(static_cast<std::size_t>(f) * frames + l) * channels + c] = v(c);
    }
  }
  return z;
}

PosteriorTensor random_posterior(int frames, int bins, int classes, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  PosteriorTensor p(frames, bins, classes);
  for (int l = 0; l < frames; ++l)
    for (int f = 0; f < bins; ++f) {
      double s = 0.0;
      for (int k = 0; k < classes; ++k) s += p.at(l, f, k) = u(rng);
      for (int k = 0; k < classes; ++k) p.at(l, f, k) /= s;
    }
  return p;
}

oracle::Herm2 random_herm2(std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  const Complex a0(g(rng), g(rng)), a1(g(rng), g(rng)), b0(g(rng), g(rng)), b1(g(rng), g(rng));
  // A A^H + 0.1 I
  oracle::Herm2 h;
  h.a = std::norm(a0) + std::norm(a1) + 0.1;
  h.d = std::norm(b0) + std::norm(b1) + 0.1;
  h.b = a0 * std::conj(b0) + a1 * std::conj(b1);
  return h;
}

Eigen::MatrixXcd to_eigen(const oracle::Herm2& h) {
  Eigen::MatrixXcd m(2, 2);
  m << h.a, h.b, std::conj(h.b), h.d;
  return m;
}

}  // namespace

TEST(Cacgmm, EStepMatchesScalarDensity) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    const int frames = 6, bins = 3, classes = 2;
    const auto z = random_observations(frames, bins, 2, rng);
    CacgmmParams p;
    p.bins = bins;
    p.classes = classes;
    p.channels = 2;
    p.prior_frames = trial % 2 == 0 ? 0 : frames;
    std::vector<oracle::Herm2> h;
    for (int i = 0; i < bins * classes; ++i) {
      h.push_back(random_herm2(rng));
      p.shape.push_back(to_eigen(h.back()));
    }
    const std::size_t prior_count = (p.prior_frames ? frames : 1) * static_cast<std::size_t>(bins) * classes;
    for (std::size_t i = 0; i < prior_count; i += classes) {
      const double a = u(rng);
      p.priors.push_back(a);
      p.priors.push_back(1.0 - a);
    }
    EmOptions opts;
    opts.inverse_eps = 1e-300;
    const PosteriorTensor gamma = e_step(z, p, opts);
    for (int l = 0; l < frames; ++l)
      for (int f = 0; f < bins; ++f) {
        const Complex* zz = z.at(l, f);
        const auto ref = oracle::acg_posterior_2ch({zz[0], zz[1]}, {h[f * 2], h[f * 2 + 1]},
                                                   {p.prior(l, f, 0), p.prior(l, f, 1)});
        EXPECT_NEAR(gamma.at(l, f, 0), ref[0], 1e-10);
        EXPECT_NEAR(gamma.at(l, f, 1), ref[1], 1e-10);
      }
  }
}

TEST(Cacgmm, InitPosteriorFromDiarization) {
  DiarizationMatrix d{RealMatrix(3, 2), 62.5};
  d.d << 1, 0, 0, 0, 1, 1;
  const auto g = init_posterior_from_diarization(d, 4);
  EXPECT_EQ(g.classes, 3);
  EXPECT_DOUBLE_EQ(g.at(0, 2, 0), 0.5);
  EXPECT_DOUBLE_EQ(g.at(0, 2, 1), 0.0);
  EXPECT_DOUBLE_EQ(g.at(0, 2, 2), 0.5);
  EXPECT_DOUBLE_EQ(g.at(1, 0, 2), 1.0);
  EXPECT_DOUBLE_EQ(g.at(2, 3, 0), 1.0 / 3.0);
  d.d(0, 0) = 1.5;
  EXPECT_THROW(init_posterior_from_diarization(d, 4), InputError);
}

TEST(Cacgmm, MStepShapesAreHermitianLoadedAndTraceNormalized) {
  std::mt19937_64 rng(2);
  const auto z = random_observations(40, 5, 4, rng);
  const auto gamma = random_posterior(40, 5, 3, rng);
  EmOptions opts;
  const auto p = m_step(z, gamma, opts);
  for (const auto& b : p.shape) {
    EXPECT_LE((b - b.adjoint()).norm(), 1e-12);
    EXPECT_NEAR(b.trace().real(), 4.0, 1e-10);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(b);
    EXPECT_GE(es.eigenvalues().minCoeff(), opts.load_eps / (1.0 + opts.load_eps) - 1e-12);
  }
  // Updated priors are mean responsibilities and sum to one per bin.
  for (int f = 0; f < 5; ++f) {
    double s = 0.0, mean0 = 0.0;
    for (int k = 0; k < 3; ++k) s += p.prior(0, f, k);
    for (int l = 0; l < 40; ++l) mean0 += gamma.at(l, f, 0) / 40.0;
    EXPECT_NEAR(s, 1.0, 1e-12);
    EXPECT_NEAR(p.prior(0, f, 0), mean0, 1e-12);
  }
}

TEST(Cacgmm, EmptyClassFallsBackToIdentity) {
  std::mt19937_64 rng(3);
  const auto z = random_observations(10, 2, 3, rng);
  PosteriorTensor g(10, 2, 2, 0.0);
  for (int l = 0; l < 10; ++l)
    for (int f = 0; f < 2; ++f) g.at(l, f, 0) = 1.0;
  const auto p = m_step(z, g, {});
  EXPECT_LE((p.shape_matrix(1, 1) - Eigen::MatrixXcd::Identity(3, 3)).norm(), 1e-15);
}

TEST(Cacgmm, InactiveBinsGetUniformPosterior) {
  std::mt19937_64 rng(4);
  auto z = random_observations(8, 2, 2, rng);
  z.active[3] = 0;  // bin 0, frame 3
  const auto p = m_step(z, random_posterior(8, 2, 3, rng), {});
  const auto g = e_step(z, p);
  for (int k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(g.at(3, 0, k), 1.0 / 3.0);
}

TEST(Cacgmm, NormalizeMarksSilentBinsInactive) {
  StftTensor y(2, 3, StftConfig{8, 4, WindowType::sqrt_hann}, 16000, 8);
  for (auto& v : y.data) v = {1.0, -1.0};
  y.at(0, 1, 2) = 0.0;
  y.at(1, 1, 2) = 0.0;
  const auto z = normalize_observations(y);
  EXPECT_FALSE(z.is_active(1, 2));
  EXPECT_TRUE(z.is_active(0, 2));
  EXPECT_NEAR(std::norm(z.at(0, 2)[0]) + std::norm(z.at(0, 2)[1]), 1.0, 1e-15);
  StftTensor mono(1, 3, StftConfig{8, 4, WindowType::sqrt_hann}, 16000, 8);
  EXPECT_THROW(normalize_observations(mono), InputError);
}

TEST(Cacgmm, PosteriorsAreDistributions) {
  std::mt19937_64 rng(5);
  const auto z = clustered_observations(60, 4, 3, 3, rng);
  const auto r = run_em(z, random_posterior(60, 4, 3, rng), {});
  for (int l = 0; l < 60; ++l)
    for (int f = 0; f < 4; ++f) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) {
        EXPECT_GE(r.posterior.at(l, f, k), 0.0);
        s += r.posterior.at(l, f, k);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Cacgmm, ChannelPermutationEquivariance) {
  std::mt19937_64 rng(6);
  const auto z = clustered_observations(50, 3, 3, 2, rng);
  auto swapped = z;
  for (std::size_t i = 0; i < z.z.size(); i += 3) {
    swapped.z[i] = z.z[i + 2];
    swapped.z[i + 2] = z.z[i];
  }
  const auto init = random_posterior(50, 3, 2, rng);
  const auto a = run_em(z, init, {});
  const auto b = run_em(swapped, init, {});
  for (std::size_t i = 0; i < a.posterior.values.size(); ++i) {
    EXPECT_NEAR(a.posterior.values[i], b.posterior.values[i], 1e-8);
  }
}

TEST(Cacgmm, PhaseInvariance) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 6.283185307179586);
  const auto z = clustered_observations(50, 3, 2, 2, rng);
  auto rotated = z;
  for (std::size_t i = 0; i < z.z.size(); i += 2) {
    const Complex ph = std::polar(1.0, u(rng));
    rotated.z[i] *= ph;
    rotated.z[i + 1] *= ph;
  }
  const auto init = random_posterior(50, 3, 2, rng);
  const auto a = run_em(z, init, {});
  const auto b = run_em(rotated, init, {});
  for (std::size_t i = 0; i < a.posterior.values.size(); ++i) {
    EXPECT_NEAR(a.posterior.values[i], b.posterior.values[i], 1e-8);
  }
}

TEST(Cacgmm, LogLikelihoodNonDecreasing) {
  for (PriorMode mode : {PriorMode::updated, PriorMode::frozen}) {
    std::mt19937_64 rng(8);
    const auto z = clustered_observations(80, 4, 3, 3, rng);
    EmOptions opts;
    opts.prior_mode = mode;
    const auto r = run_em(z, random_posterior(80, 4, 3, rng), opts);
    ASSERT_EQ(r.log_likelihood.size(), 20u);
    for (std::size_t i = 1; i < r.log_likelihood.size(); ++i) {
      EXPECT_GE(r.log_likelihood[i], r.log_likelihood[i - 1] - 1e-4);
    }
  }
}

TEST(Cacgmm, RunEmTraceAgreesWithLogLikelihood) {
  std::mt19937_64 rng(9);
  const auto z = clustered_observations(30, 3, 2, 2, rng);
  const auto r = run_em(z, random_posterior(30, 3, 2, rng), {});
  EXPECT_NEAR(r.log_likelihood.back(), log_likelihood(z, r.params), 1e-9);
}

TEST(Cacgmm, RecoversClusteredLabels) {
  std::mt19937_64 rng(10);
  std::vector<int> labels;
  const auto z = clustered_observations(200, 2, 4, 2, rng, &labels);
  // A mildly informative start from the true labels.
  PosteriorTensor init(200, 2, 2);
  for (int l = 0; l < 200; ++l)
    for (int f = 0; f < 2; ++f) {
      init.at(l, f, labels[l]) = 0.6;
      init.at(l, f, 1 - labels[l]) = 0.4;
    }
  const auto r = run_em(z, init, {});
  int hits = 0;
  for (int l = 0; l < 200; ++l) hits += (r.posterior.at(l, 0, labels[l]) > 0.5);
  EXPECT_GE(hits, 195);
}

TEST(Cacgmm, ShapeMismatchThrows) {
  std::mt19937_64 rng(11);
  const auto z = random_observations(10, 2, 2, rng);
  EXPECT_THROW(run_em(z, random_posterior(9, 2, 2, rng), {}), InputError);
  EmOptions bad;
  bad.iterations = 0;
  EXPECT_THROW(run_em(z, random_posterior(10, 2, 2, rng), bad), InputError);
}

TEST(Cacgmm, GuidedSwitchesToUpdatedPriors) {
  std::mt19937_64 rng(12);
  const auto z = clustered_observations(40, 2, 2, 2, rng);
  const auto init = random_posterior(40, 2, 2, rng);
  EmOptions guided;
  guided.prior_mode = PriorMode::guided;
  const auto r = run_em(z, init, guided);
  EXPECT_EQ(r.params.prior_frames, 0);
  EmOptions frozen;
  frozen.prior_mode = PriorMode::frozen;
  const auto s = run_em(z, init, frozen);
  EXPECT_EQ(s.params.prior_frames, 40);
}
