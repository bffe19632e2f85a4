#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "spatial_diar/commands.hpp"
#include "spatial_diar/errors.hpp"

namespace sd = spatial_diar;

namespace {

struct ConfigFlags {
  std::string config_path;
  std::optional<int> fft_size;
  std::optional<int> hop;
  std::optional<std::string> window;
  std::optional<int> block_length;
  std::optional<double> threshold;
  std::optional<int> hangover;
  std::optional<int> rounds;
  std::optional<double> context;
  std::optional<int> reference;
  std::optional<int> max_k;
  std::optional<int> min_words;
  std::optional<double> min_duration;
  std::optional<double> collar;
  std::optional<double> frame;
};

void add_config(CLI::App* app, ConfigFlags& f) {
  app->add_option("--config", f.config_path, "Pipeline config JSON")->check(CLI::ExistingFile);
  app->add_option("--fft-size", f.fft_size, "STFT size");
  app->add_option("--hop", f.hop, "STFT hop");
  app->add_option("--window", f.window, "sqrt_hann | hann | rect");
}

void add_rectify_flags(CLI::App* app, ConfigFlags& f) {
  app->add_option("--block-length", f.block_length, "Rectifier block length B in frames");
  app->add_option("--threshold", f.threshold, "VAD threshold on frequency-averaged posteriors");
  app->add_option("--hangover", f.hangover, "VAD hangover in frames");
  app->add_option("--rounds", f.rounds, "Rectification rounds");
}

void add_gss_flags(CLI::App* app, ConfigFlags& f) {
  app->add_option("--context", f.context, "GSS context in seconds on each side");
  app->add_option("--reference", f.reference, "Beamformer reference channel (default: highest energy)");
}

void add_cluster_flags(CLI::App* app, ConfigFlags& f) {
  app->add_option("--max-k", f.max_k, "Largest speaker count considered");
  app->add_option("--min-words", f.min_words, "Keep segments with at least this many words");
  app->add_option("--min-duration", f.min_duration, "Duration filter (s) when word counts are absent");
}

void add_score_flags(CLI::App* app, ConfigFlags& f) {
  app->add_option("--collar", f.collar, "Collar in seconds around reference boundaries");
  app->add_option("--frame", f.frame, "Scoring frame in seconds");
}

sd::PipelineConfig resolve(const ConfigFlags& f) {
  sd::PipelineConfig c = f.config_path.empty() ? sd::PipelineConfig{} : sd::read_pipeline_config(f.config_path);
  if (f.fft_size) c.stft.fft_size = *f.fft_size;
  if (f.hop) c.stft.hop = *f.hop;
  if (f.window) c.stft.window = sd::parse_window(*f.window);
  if (f.block_length) c.rectify.block_length = *f.block_length;
  if (f.threshold) c.rectify.vad.threshold = *f.threshold;
  if (f.hangover) c.rectify.vad.hangover = *f.hangover;
  if (f.rounds) c.rounds = *f.rounds;
  if (f.context) c.gss.context_s = *f.context;
  if (f.reference) c.gss.reference = *f.reference;
  if (f.max_k) c.cluster.max_k = *f.max_k;
  if (f.min_words) c.cluster.filter.min_words = *f.min_words;
  if (f.min_duration) c.cluster.filter.min_duration_s = *f.min_duration;
  if (f.collar) c.der.collar_s = *f.collar;
  if (f.frame) c.der.frame_s = *f.frame;
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multichannel speaker diarization toolkit"};
  app.require_subcommand(1);
  ConfigFlags flags;

  std::string spec_path, out, audio, diar, rttm, embeddings, manifest, ref, hyp, table, input;
  std::string nsd_hook, embed_hook;
  std::optional<int> threads;
  bool show_table = false;

  auto* simulate = app.add_subcommand("simulate", "Render a scene spec to audio, references and masks");
  simulate->add_option("--spec", spec_path, "Scene spec JSON")->required()->check(CLI::ExistingFile);
  simulate->add_option("--out", out, "Output directory")->required();

  auto* stft = app.add_subcommand("stft", "Write the complex STFT of a WAV file as a tensor");
  stft->add_option("--audio", audio, "Input WAV")->required();
  stft->add_option("--out", out, "Output tensor")->required();
  add_config(stft, flags);

  auto* rectify = app.add_subcommand("rectify", "Re-estimate speaker activity with guided mixture masks");
  rectify->add_option("--audio", audio, "Multichannel WAV")->required();
  rectify->add_option("--diar", diar, "Initial diarization (.rttm or f32 tensor)")->required();
  rectify->add_option("--out", out, "Output directory")->required();
  add_config(rectify, flags);
  add_rectify_flags(rectify, flags);

  auto* gss = app.add_subcommand("gss", "Extract every RTTM segment with guided source separation");
  gss->add_option("--audio", audio, "Multichannel WAV")->required();
  gss->add_option("--rttm", rttm, "Segments to extract")->required();
  gss->add_option("--out", out, "Output directory")->required();
  add_config(gss, flags);
  add_gss_flags(gss, flags);

  auto* cluster = app.add_subcommand("cluster", "Spectral clustering of segment embeddings");
  cluster->add_option("--embeddings", embeddings, "f32 [rows, dim] tensor")->required();
  cluster->add_option("--manifest", manifest, "JSONL segment manifest")->required();
  cluster->add_option("--out", out, "Output RTTM")->required();
  add_config(cluster, flags);
  add_cluster_flags(cluster, flags);

  auto* score = app.add_subcommand("score", "Diarization error rate of a hypothesis RTTM");
  score->add_option("--ref", ref, "Reference RTTM");
  score->add_option("--hyp", hyp, "Hypothesis RTTM");
  score->add_flag("--table", show_table, "Print an aligned text table instead of JSON");
  score->add_option("--check-table", table, "Check FA+MISS+SpkErr=DER on a CSV of published rows");
  add_config(score, flags);
  add_score_flags(score, flags);

  auto* pipeline = app.add_subcommand("pipeline", "Run the three-stage pipeline over session directories");
  pipeline->add_option("--input", input, "Session directory or directory of sessions")->required();
  pipeline->add_option("--out", out, "Output directory")->required();
  pipeline->add_option("--nsd-hook", nsd_hook, "Command run as: <cmd> <stage> <session_dir> <audio> <in.rttm> <out.rttm>");
  pipeline->add_option("--embed-hook", embed_hook, "Command run as: <cmd> embed <gss_dir> <segments.jsonl> <out.tensor>");
  pipeline->add_option("--threads", threads, "Worker cap (overrides SPATIAL_DIAR_THREADS)");
  add_config(pipeline, flags);
  add_rectify_flags(pipeline, flags);
  add_gss_flags(pipeline, flags);
  add_cluster_flags(pipeline, flags);
  add_score_flags(pipeline, flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*simulate) {
      const auto truth = sd::cmd_simulate(spec_path, out);
      std::cout << "wrote " << truth.images.size() << " sources, " << truth.rttm.size() << " segments to " << out
                << "\n";
    } else if (*stft) {
      const auto y = sd::cmd_stft(audio, out, resolve(flags).stft);
      std::cout << y.channels << " x " << y.frames << " x " << y.bins << "\n";
    } else if (*rectify) {
      const auto result = sd::cmd_rectify(audio, diar, resolve(flags), out);
      for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
    } else if (*gss) {
      const auto segments = sd::cmd_gss(audio, rttm, resolve(flags), out);
      std::cout << segments.size() << " segments\n";
    } else if (*cluster) {
      const auto segments = sd::cmd_cluster(embeddings, manifest, resolve(flags), out);
      std::cout << sd::speaker_labels(segments).size() << " speakers\n";
    } else if (*score) {
      if (!table.empty()) {
        bool all = true;
        for (const auto& c : sd::check_table_rows(sd::read_table_rows(table))) {
          std::printf("%-40s %6.2f + %6.2f + %6.2f = %6.2f vs %6.2f  %s\n", c.row.label.c_str(), c.row.fa,
                      c.row.miss, c.row.spkerr, c.recomputed, c.row.der, c.ok ? "ok" : "MISMATCH");
          all = all && c.ok;
        }
        return all ? 0 : 1;
      }
      if (ref.empty() || hyp.empty()) throw sd::InputError("score needs --ref and --hyp");
      const auto config = resolve(flags);
      const auto report = sd::cmd_score(ref, hyp, config.der);
      std::cout << (show_table ? sd::der_report_table(report) : sd::der_report_to_json(report));
    } else if (*pipeline) {
      if (threads) setenv("SPATIAL_DIAR_THREADS", std::to_string(*threads).c_str(), 1);
      const auto config = resolve(flags);
      const auto reports = sd::cmd_pipeline(input, config, {nsd_hook, embed_hook}, out);
      for (const auto& r : reports) {
        std::cout << r.session;
        if (r.stage1) std::cout << " stage1 " << r.stage1->der;
        if (r.stage2) std::cout << " stage2 " << r.stage2->der;
        if (r.stage3) std::cout << " stage3 " << r.stage3->der;
        std::cout << "\n";
        for (const auto& w : r.warnings) std::cerr << r.session << ": warning: " << w << "\n";
      }
    }
  } catch (const sd::InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const sd::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const sd::HookError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.status() > 0 && e.status() < 256 ? e.status() : 1;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
