#include <gtest/gtest.h>

#include <random>

#include "fixtures.hpp"
#include "spatial_diar/beamform.hpp"
#include "spatial_diar/errors.hpp"

using namespace spatial_diar;

namespace {

Eigen::MatrixXcd random_pd(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Eigen::MatrixXcd a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = {g(rng), g(rng)};
  return a * a.adjoint() + 0.1 * Eigen::MatrixXcd::Identity(n, n);
}

}  // namespace

TEST(Beamform, MvdrIsDistortionlessTowardsSteeringVector) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  const int n = 4, bins = 3;
  SpatialCovarianceSet target, noise;
  std::vector<Eigen::VectorXcd> steering;
  for (int f = 0; f < bins; ++f) {
    Eigen::VectorXcd v(n);
    for (int c = 0; c < n; ++c) v(c) = {g(rng), g(rng)};
    steering.push_back(v);
    target.phi.push_back(2.5 * v * v.adjoint());
    noise.phi.push_back(random_pd(n, rng));
  }
  for (int ref = 0; ref < n; ++ref) {
    const auto w = mvdr_weights(target, noise, ref);
    EXPECT_EQ(w.reference, ref);
    for (int f = 0; f < bins; ++f) {
      const Eigen::VectorXcd wf = w.w.row(f).transpose();
      const Complex response = wf.adjoint() * steering[f];
      // w^H v = v_ref, equivalently v^H w = conj(v_ref).
      EXPECT_NEAR(std::abs(response - steering[f](ref)), 0.0, 1e-9);
      const Complex other = steering[f].adjoint() * wf;
      EXPECT_NEAR(std::abs(other - std::conj(steering[f](ref))), 0.0, 1e-9);
    }
  }
  EXPECT_THROW(mvdr_weights(target, noise, n), InputError);
}

TEST(Beamform, ScmIsHermitianAndFallsBackToIdentity) {
  const auto spec = fixtures::turn_taking_scene(2, 3.0, 2);
  const auto y = stft(simulate_scene(spec).audio, spec.stft);
  RealMatrix mask = RealMatrix::Constant(y.frames, y.bins, 0.5);
  mask.col(7).setZero();
  const auto scm = estimate_scm(y, mask);
  ASSERT_EQ(scm.phi.size(), static_cast<std::size_t>(y.bins));
  for (int f : {0, 10, 100}) EXPECT_LE((scm.phi[f] - scm.phi[f].adjoint()).norm(), 1e-12 * scm.phi[f].norm());
  EXPECT_LE((scm.phi[7] - Eigen::MatrixXcd::Identity(4, 4)).norm(), 1e-15);
  EXPECT_THROW(estimate_scm(y, RealMatrix::Ones(3, 3)), InputError);
}

TEST(Beamform, UnitWeightsSelectReferenceChannel) {
  const auto spec = fixtures::turn_taking_scene(2, 2.0, 3);
  const auto truth = simulate_scene(spec);
  const auto y = stft(truth.audio, spec.stft);
  BeamformerWeights w;
  w.reference = 2;
  w.w = Eigen::MatrixXcd::Zero(y.bins, y.channels);
  w.w.col(2).setOnes();
  const auto out = istft(apply_beamformer(y, w));
  EXPECT_LE((out.samples.row(0) - truth.audio.samples.row(2)).norm(), 1e-9 * truth.audio.samples.row(2).norm());
}

TEST(Beamform, ReferenceIsLoudestChannel) {
  const auto spec = fixtures::turn_taking_scene(2, 2.0, 4);
  auto truth = simulate_scene(spec);
  truth.audio.samples.row(3) *= 3.0;
  EXPECT_EQ(select_reference_channel(stft(truth.audio, spec.stft)), 3);
}

TEST(Beamform, OracleMaskMvdrImprovesSir) {
  const auto spec = fixtures::overlapped_pair(11);
  const auto truth = simulate_scene(spec);
  const auto g = fixtures::oracle_mask_mvdr(truth, spec.stft, 1);
  EXPECT_GE(g.gain(), 10.0) << "in " << g.input_db << " out " << g.output_db;
}

TEST(Beamform, GssExtractImprovesSir) {
  const auto spec = fixtures::overlapped_pair(12);
  const auto truth = simulate_scene(spec);
  const auto& a = spec.sources[1].activity[0];
  const auto g = fixtures::gss_segment_sir(truth, spec.stft, 1, a.first, a.second);
  EXPECT_GE(g.gain(), 8.0) << "in " << g.input_db << " out " << g.output_db;
}

TEST(Beamform, GssExtractShapesAndErrors) {
  const auto spec = fixtures::overlapped_pair(13, 4.0);
  const auto truth = simulate_scene(spec);
  const auto y = stft(truth.audio, spec.stft);
  SpeakerActivityMatrix act;
  act.frame_rate = y.frame_rate();
  act.m = (truth.activities.d.array() > 0.5).cast<std::uint8_t>().matrix();
  GssOptions opts;
  opts.em.iterations = 3;
  const auto out = gss_extract(y, act, 30, 80, 0, opts);
  EXPECT_EQ(out.channels(), 1);
  EXPECT_EQ(out.samples.cols(), 50 * spec.stft.hop);
  EXPECT_THROW(gss_extract(y, act, 80, 80, 0, opts), InputError);
  EXPECT_THROW(gss_extract(y, act, 0, 10, 1, opts), InputError);  // speaker 1 starts at 1.2 s
  EXPECT_THROW(gss_extract(y, act, 30, 80, 5, opts), InputError);
  opts.reference = 3;
  EXPECT_EQ(gss_estimate(y, act, 30, 80, 0, opts).weights.reference, 3);
}
