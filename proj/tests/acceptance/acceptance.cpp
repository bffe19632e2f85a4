// One PASS/FAIL line per acceptance criterion. Exit status is the number of
// failed criteria.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "../fixtures.hpp"
#include "../oracles.hpp"
#include "spatial_diar/cacgmm.hpp"
#include "spatial_diar/clustering.hpp"
#include "spatial_diar/commands.hpp"
#include "spatial_diar/rectifier.hpp"
#include "spatial_diar/scoring.hpp"
#include "spatial_diar/signal.hpp"
#include "spatial_diar/simulate.hpp"

using namespace spatial_diar;

namespace {

struct Outcome {
  bool ok = false;
  std::string detail;
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c);
  return buf;
}

NormalizedObservations random_observations(int frames, int bins, int channels, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  NormalizedObservations z;
  z.frames = frames;
  z.bins = bins;
  z.channels = channels;
  z.z.resize(static_cast<std::size_t>(frames) * bins * channels);
  z.active.assign(static_cast<std::size_t>(frames) * bins, 1);
  for (std::size_t i = 0; i < z.z.size(); i += static_cast<std::size_t>(channels)) {
    double norm = 0.0;
    for (int c = 0; c < channels; ++c) {
      z.z[i + c] = {g(rng), g(rng)};
      norm += std::norm(z.z[i + c]);
    }
    for (int c = 0; c < channels; ++c) z.z[i + c] /= std::sqrt(norm);
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

// 1. Published rows satisfy FA + MISS + SpkErr = DER.
Outcome table_rows() {
  const auto checks = check_table_rows(read_table_rows(SPATIAL_DIAR_TEST_DATA "/published_rows.csv"), 0.02);
  int good = 0;
  std::string bad;
  for (const auto& c : checks) {
    if (c.ok) ++good;
    else bad += " " + c.row.label;
  }
  return {!checks.empty() && good == static_cast<int>(checks.size()),
          std::to_string(good) + "/" + std::to_string(checks.size()) + " rows within 0.02" + bad};
}

// 2. E-step posteriors against the scalar two-channel density.
Outcome estep_oracle() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> frames_d(1, 8), bins_d(1, 4);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  std::normal_distribution<double> g;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int frames = frames_d(rng), bins = bins_d(rng);
    const auto z = random_observations(frames, bins, 2, rng);
    CacgmmParams p;
    p.bins = bins;
    p.classes = 2;
    p.channels = 2;
    p.prior_frames = trial % 2 ? frames : 0;
    std::vector<oracle::Herm2> h;
    for (int i = 0; i < bins * 2; ++i) {
      const Complex a0(g(rng), g(rng)), a1(g(rng), g(rng)), b0(g(rng), g(rng)), b1(g(rng), g(rng));
      oracle::Herm2 m;
      m.a = std::norm(a0) + std::norm(a1) + 0.1;
      m.d = std::norm(b0) + std::norm(b1) + 0.1;
      m.b = a0 * std::conj(b0) + a1 * std::conj(b1);
      h.push_back(m);
      Eigen::MatrixXcd e(2, 2);
      e << m.a, m.b, std::conj(m.b), m.d;
      p.shape.push_back(e);
    }
    const int prior_rows = (p.prior_frames ? frames : 1) * bins;
    for (int i = 0; i < prior_rows; ++i) {
      const double a = u(rng);
      p.priors.push_back(a);
      p.priors.push_back(1.0 - a);
    }
    EmOptions opts;
    opts.inverse_eps = 1e-300;
    const auto gamma = e_step(z, p, opts);
    for (int l = 0; l < frames; ++l)
      for (int f = 0; f < bins; ++f) {
        const Complex* zz = z.at(l, f);
        const auto ref = oracle::acg_posterior_2ch({zz[0], zz[1]}, {h[f * 2], h[f * 2 + 1]},
                                                   {p.prior(l, f, 0), p.prior(l, f, 1)});
        for (int k = 0; k < 2; ++k) worst = std::max(worst, std::abs(gamma.at(l, f, k) - ref[static_cast<std::size_t>(k)]));
      }
  }
  return {worst <= 1e-10, fmt("100 instances, max abs error %.3g (tol 1e-10)", worst)};
}

// 3. EM log-likelihood never drops by more than 1e-4.
Outcome em_monotone() {
  std::mt19937_64 rng(77);
  double worst = 0.0;
  int runs = 0;
  auto check = [&](const NormalizedObservations& z, const PosteriorTensor& init, PriorMode mode) {
    EmOptions opts;
    opts.iterations = 20;
    opts.prior_mode = mode;
    const auto r = run_em(z, init, opts);
    for (std::size_t i = 1; i < r.log_likelihood.size(); ++i)
      worst = std::max(worst, r.log_likelihood[i - 1] - r.log_likelihood[i]);
    ++runs;
  };
  for (int trial = 0; trial < 20; ++trial) {
    const int channels = 2 + trial % 3, classes = 2 + trial % 2;
    const auto z = random_observations(60, 6, channels, rng);
    check(z, random_posterior(60, 6, classes, rng), trial % 2 ? PriorMode::frozen : PriorMode::updated);
  }
  for (int s = 0; s < 5; ++s) {
    const auto spec = fixtures::turn_taking_scene(2 + s % 2, 4.0, 300 + static_cast<std::uint64_t>(s));
    const auto truth = simulate_scene(spec);
    const auto z = normalize_observations(stft(truth.audio, spec.stft));
    check(z, init_posterior_from_diarization(truth.activities, z.bins), s % 2 ? PriorMode::frozen : PriorMode::updated);
  }
  return {worst <= 1e-4, std::to_string(runs) + " runs x 20 iterations, largest decrease " + fmt("%.3g (tol 1e-4)", worst)};
}

// 4. Rectification of a confused diarization on simulated meetings.
Outcome rectifier_der() {
  std::vector<double> reductions;
  std::string per_scene;
  for (int s = 0; s < 10; ++s) {
    MeetingOptions mo;
    mo.seed = 100 + static_cast<std::uint64_t>(s);
    mo.duration_s = 60.0;
    mo.session = "m" + std::to_string(s);
    const SceneSpec spec = make_meeting_spec(mo);
    const SceneTruth truth = simulate_scene(spec);
    const StftTensor y = stft(truth.audio, spec.stft);
    CorruptionOptions co;
    co.confusion_rate = 0.2;
    co.seed = static_cast<std::uint64_t>(s);
    const DiarizationMatrix corrupted = corrupt_diarization(truth.activities, co);
    std::vector<std::string> names;
    for (std::size_t k = 0; k < spec.sources.size(); ++k) names.push_back("spk" + std::to_string(k));
    SpeakerActivityMatrix cm{(corrupted.d.array() > 0.5).cast<std::uint8_t>().matrix(), corrupted.frame_rate};
    const double before = compute_der(truth.rttm, mask_to_segments(cm, y.frame_rate(), mo.session, {}, names)).der;
    const RectifyResult r = rectify(y, corrupted, {});
    const double after =
        compute_der(truth.rttm, mask_to_segments(r.activities, y.frame_rate(), mo.session, {}, names)).der;
    reductions.push_back((before - after) / before);
    per_scene += fmt(" %.1f->%.1f", before, after);
  }
  const double m = median(reductions);
  return {m >= 0.30, fmt("median relative DER reduction %.1f%% (need >= 30%%);", 100.0 * m) + per_scene};
}

// 5. Overlap-add fusion and VAD hangover.
Outcome fusion_and_vad() {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int total = 37, block = 8, bins = 3, classes = 3;
  const BlockPlan plan = plan_blocks(total, block);
  std::vector<PosteriorTensor> blocks;
  for (const auto& [a, b] : plan.spans) {
    PosteriorTensor p(b - a, bins, classes);
    for (double& v : p.values) v = u(rng);
    blocks.push_back(p);
  }
  const auto fused = overlap_add_posteriors(blocks, plan);
  double worst = 0.0;
  for (int l = 0; l < total; ++l) {
    const int s = l / (block / 2);
    for (int f = 0; f < bins; ++f)
      for (int k = 0; k < classes; ++k) {
        const auto& cur = blocks[static_cast<std::size_t>(s)];
        double expected = cur.at(l - plan.spans[static_cast<std::size_t>(s)].first, f, k);
        if (s > 0) {
          const auto& prev = blocks[static_cast<std::size_t>(s - 1)];
          expected = 0.5 * (expected + prev.at(l - plan.spans[static_cast<std::size_t>(s - 1)].first, f, k));
        }
        worst = std::max(worst, std::abs(fused.at(l, f, k) - expected));
      }
  }
  // One supra-threshold frame with the default hangover.
  PosteriorTensor spike(50, 4, 2);
  for (int l = 0; l < 50; ++l)
    for (int f = 0; f < 4; ++f) spike.at(l, f, 1) = 1.0;
  for (int f = 0; f < 4; ++f) {
    spike.at(30, f, 0) = 0.6;
    spike.at(30, f, 1) = 0.4;
  }
  const auto vad = mask_to_vad(spike);
  int active = 0;
  bool span_ok = true;
  for (int l = 0; l < 50; ++l) {
    active += vad.m(l, 0);
    span_ok = span_ok && (vad.m(l, 0) == ((l >= 24 && l <= 30) ? 1 : 0));
  }
  return {worst == 0.0 && span_ok && active == 7,
          fmt("overlap-add max error %.3g (exact); hangover active frames %.0f (expect 7)", worst, active)};
}

// 6. SIR gains of oracle-mask MVDR and GSS.
Outcome beamformer_sir() {
  std::vector<double> mvdr, gss;
  for (int s = 0; s < 10; ++s) {
    const auto spec = fixtures::overlapped_pair(static_cast<std::uint64_t>(s));
    const auto truth = simulate_scene(spec);
    mvdr.push_back(fixtures::oracle_mask_mvdr(truth, spec.stft, 0).gain());
    const auto& a = spec.sources[0].activity[0];
    gss.push_back(fixtures::gss_segment_sir(truth, spec.stft, 0, a.first, a.second).gain());
  }
  const double m = median(mvdr), g = median(gss);
  return {m >= 10.0 && g >= 8.0, fmt("median MVDR gain %.2f dB (need >= 10), GSS gain %.2f dB (need >= 8)", m, g)};
}

// 7. STFT round trip at the default configuration.
Outcome stft_round_trip() {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g;
  std::uniform_int_distribution<int> len(1, 48000), chans(1, 4);
  const StftConfig config;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    MultichannelAudio a;
    a.sample_rate = 16000;
    a.samples.resize(chans(rng), len(rng));
    for (Eigen::Index i = 0; i < a.samples.size(); ++i) a.samples.data()[i] = g(rng);
    const auto back = istft(stft(a, config));
    worst = std::max(worst, (back.samples - a.samples).norm() / a.samples.norm());
  }
  return {worst <= 1e-6, fmt("100 signals, max relative error %.3g (tol 1e-6)", worst)};
}

// 8. DER against exhaustive mapping on tiny sessions.
Outcome der_brute_force() {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> speakers(1, 3), frames(1, 20);
  std::bernoulli_distribution on(0.4);
  int exact = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = frames(rng);
    std::vector<std::vector<std::uint8_t>> ref(static_cast<std::size_t>(speakers(rng)),
                                               std::vector<std::uint8_t>(static_cast<std::size_t>(n)));
    auto hyp = std::vector<std::vector<std::uint8_t>>(static_cast<std::size_t>(speakers(rng)),
                                                      std::vector<std::uint8_t>(static_cast<std::size_t>(n)));
    for (auto* grid : {&ref, &hyp})
      for (auto& row : *grid)
        for (auto& v : row) v = on(rng);
    ref[0][0] = 1;
    auto to_segments = [](const std::vector<std::vector<std::uint8_t>>& grid, const std::string& prefix) {
      SegmentList out;
      for (std::size_t k = 0; k < grid.size(); ++k)
        for (std::size_t t = 0; t < grid[k].size();) {
          if (!grid[k][t]) {
            ++t;
            continue;
          }
          std::size_t e = t;
          while (e < grid[k].size() && grid[k][e]) ++e;
          out.push_back({"tiny", prefix + std::to_string(k), static_cast<double>(t) * 0.01,
                         static_cast<double>(e - t) * 0.01});
          t = e;
        }
      return out;
    };
    const auto counts = oracle::brute_force_der(ref, hyp);
    const auto r = compute_der(to_segments(ref, "r"), to_segments(hyp, "h"));
    const double scale = 100.0 / static_cast<double>(counts.ref);
    exact += r.fa == scale * static_cast<double>(counts.fa) && r.miss == scale * static_cast<double>(counts.miss) &&
             r.spkerr == scale * static_cast<double>(counts.spkerr);
  }
  return {exact == 200, std::to_string(exact) + "/200 sessions identical to exhaustive mapping"};
}

// 9. Spectral clustering on synthetic embeddings.
Outcome clustering_recovery() {
  int runs = 0, good = 0;
  double worst_acc = 1.0, min_intra = 1.0, max_inter = -1.0;
  for (int classes = 4; classes <= 6; ++classes)
    for (int seed = 0; seed < 20; ++seed) {
      const auto e = synthetic_embeddings(classes, 10, 64, 0.03, 900 + static_cast<std::uint64_t>(seed));
      const RealMatrix a = cosine_affinity(e.vectors);
      for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = i + 1; j < a.cols(); ++j) {
          const double c = e.vectors.row(i).dot(e.vectors.row(j)) / (e.vectors.row(i).norm() * e.vectors.row(j).norm());
          if (e.labels[static_cast<std::size_t>(i)] == e.labels[static_cast<std::size_t>(j)]) min_intra = std::min(min_intra, c);
          else max_inter = std::max(max_inter, c);
        }
      const int k = estimate_num_speakers(a);
      const auto c = spectral_cluster(a, k);
      const double acc = oracle::best_permutation_accuracy(e.labels, c.labels);
      worst_acc = std::min(worst_acc, acc);
      ++runs;
      good += k == classes && acc >= 0.95;
    }
  const bool geometry = min_intra >= 0.8 && max_inter <= 0.2;
  return {good == runs && geometry,
          std::to_string(good) + "/" + std::to_string(runs) +
              fmt(" runs with exact K and accuracy >= 95%% (worst %.3f); intra cos >= %.3f, inter <= %.3f", worst_acc,
                  min_intra, max_inter)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 10. Rerunning the pipeline reproduces every artifact byte for byte.
Outcome pipeline_determinism() {
  const auto root = fixtures::scratch_dir("acceptance_pipeline");
  auto spec = fixtures::turn_taking_scene(3, 12.0, 10, 2.0);
  spec.session = "det";
  const fs::path in = root / "in" / spec.session;
  fs::create_directories(in);
  {
    std::ofstream(in / "scene.json") << scene_spec_to_json(spec);
  }
  const SceneTruth truth = cmd_simulate(in / "scene.json", in);
  CorruptionOptions co;
  co.confusion_rate = 0.2;
  co.seed = 10;
  const DiarizationMatrix bad = corrupt_diarization(truth.activities, co);
  SpeakerActivityMatrix m{(bad.d.array() > 0.5).cast<std::uint8_t>().matrix(), bad.frame_rate};
  write_rttm_file(in / "initial.rttm", mask_to_segments(m, bad.frame_rate, spec.session));

  PipelineConfig config;
  config.rectify.block_length = 376;
  config.gss.context_s = 3.0;
  cmd_pipeline(root / "in", config, {}, root / "a");
  cmd_pipeline(root / "in", config, {}, root / "b");
  int files = 0, same = 0;
  for (const auto& entry : fs::recursive_directory_iterator(root / "a")) {
    if (!entry.is_regular_file()) continue;
    ++files;
    const fs::path other = root / "b" / fs::relative(entry.path(), root / "a");
    same += fs::exists(other) && slurp(entry.path()) == slurp(other);
  }
  int files_b = 0;
  for (const auto& entry : fs::recursive_directory_iterator(root / "b")) files_b += entry.is_regular_file();
  return {files > 0 && same == files && files_b == files,
          std::to_string(same) + "/" + std::to_string(files) + " artifacts identical across reruns"};
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "published table additivity", 1.0, table_rows},
      {2, "E-step matches scalar density", 10.0, estep_oracle},
      {3, "EM log-likelihood monotone", 120.0, em_monotone},
      {4, "rectifier reduces DER of confused diarization", 300.0, rectifier_der},
      {5, "block fusion and VAD hangover", 1.0, fusion_and_vad},
      {6, "MVDR and GSS SIR gains", 180.0, beamformer_sir},
      {7, "STFT perfect reconstruction", 10.0, stft_round_trip},
      {8, "DER matches exhaustive mapping", 30.0, der_brute_force},
      {9, "speaker count and clustering accuracy", 60.0, clustering_recovery},
      {10, "pipeline reruns are byte-identical", 600.0, pipeline_determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.budget_s;
    const bool pass = o.ok && in_time;
    failed += !pass;
    std::printf("criterion %2d %s  %s: %s [%.2f s, budget %.0f s%s]\n", c.id, pass ? "PASS" : "FAIL", c.name,
                o.detail.c_str(), secs, c.budget_s, in_time ? "" : ", over budget");
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
