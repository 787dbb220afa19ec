// dtts: data preparation, training, synthesis and model checks.
#include "dtts/dataset.hpp"
#include "dtts/diagnostics.hpp"
#include "dtts/errors.hpp"
#include "dtts/synthetic.hpp"
#include "dtts/trainer.hpp"
#include "dtts/vocoder.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <iostream>

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

int exit_code(const dtts::Error& e) {
  switch (e.kind()) {
    case dtts::ErrorKind::kUsage: return kExitUsage;
    case dtts::ErrorKind::kNumeric: return kExitNumeric;
    case dtts::ErrorKind::kData:
    case dtts::ErrorKind::kContract: return kExitData;
  }
  return kExitData;
}

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  try {
    return json::parse(dtts::read_file(path));
  } catch (const json::parse_error& e) {
    throw dtts::UsageError("config " + path + ": " + e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dtts: phoneme-to-mel acoustic model toolkit"};
  app.require_subcommand(1);

  // make-synthetic
  dtts::SyntheticCorpusSpec syn;
  std::string syn_out;
  auto* make_syn = app.add_subcommand("make-synthetic", "Write a deterministic tone corpus");
  make_syn->add_option("--out", syn_out, "Output directory")->required();
  make_syn->add_option("--utterances", syn.num_utterances, "Number of utterances")->capture_default_str();
  make_syn->add_option("--vocab", syn.vocab_size, "Phoneme inventory size")->capture_default_str();
  make_syn->add_option("--speakers", syn.num_speakers, "Number of speakers")->capture_default_str();
  make_syn->add_option("--languages", syn.num_languages, "Number of languages")->capture_default_str();
  make_syn->add_option("--min-phonemes", syn.min_phonemes)->capture_default_str();
  make_syn->add_option("--max-phonemes", syn.max_phonemes)->capture_default_str();
  make_syn->add_option("--seed", syn.seed)->capture_default_str();

  // prepare-data
  std::vector<std::string> prep_manifests;
  std::string prep_cache;
  auto* prep = app.add_subcommand("prepare-data", "Compute mel and pitch features into the cache");
  prep->add_option("--manifest", prep_manifests, "Manifest file (repeatable)")->required();
  prep->add_option("--cache-dir", prep_cache, "Feature cache (default $DTTS_CACHE_DIR or ./dtts_cache)");

  // train
  std::string train_config, train_cache, train_out;
  std::vector<std::string> overrides;
  int log_every = 50;
  auto* train = app.add_subcommand("train", "Train an acoustic model");
  train->add_option("--config", train_config, "JSON config file");
  train->add_option("--override", overrides, "key=value, dotted keys allowed (repeatable)");
  train->add_option("--cache-dir", train_cache, "Feature cache directory");
  train->add_option("--out-dir", train_out, "Run directory");
  train->add_option("--log-every", log_every, "Progress line interval on stderr")->capture_default_str();

  // synthesize
  std::string syn_ckpt, syn_phonemes, syn_dir, syn_vocoder, syn_name;
  int syn_speaker = 0, syn_language = 0;
  auto* synth = app.add_subcommand("synthesize", "Generate a mel (and optionally audio) from phonemes");
  synth->add_option("--checkpoint", syn_ckpt)->required();
  synth->add_option("--phonemes", syn_phonemes, "Text file of phoneme tokens")->required();
  synth->add_option("--speaker", syn_speaker)->capture_default_str();
  synth->add_option("--language", syn_language)->capture_default_str();
  synth->add_option("--out-dir", syn_dir)->required();
  synth->add_option("--vocoder", syn_vocoder, "Also write 48 kHz audio with this vocoder (e.g. baseline)");
  synth->add_option("--name", syn_name, "Output file stem (default: phoneme file stem)");

  // eval-props
  std::string ev_ckpt, ev_preset, ev_manifest, ev_cache;
  long ev_budget = 6000;
  auto* evp = app.add_subcommand("eval-props", "Report architecture, structural checks and losses");
  auto* ev_ck = evp->add_option("--checkpoint", ev_ckpt, "Trained checkpoint");
  evp->add_option("--preset", ev_preset, "Fresh model from a preset instead (paper|toy)")->excludes(ev_ck);
  evp->add_option("--manifest", ev_manifest, "Evaluate teacher-forced losses on these utterances");
  evp->add_option("--cache-dir", ev_cache);
  evp->add_option("--frame-budget", ev_budget)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*make_syn) {
      const fs::path manifest = dtts::make_synthetic_corpus(syn, syn_out);
      std::cout << manifest.string() << "\n";
    } else if (*prep) {
      std::vector<fs::path> paths(prep_manifests.begin(), prep_manifests.end());
      const fs::path cache = prep_cache.empty() ? dtts::default_cache_dir() : fs::path(prep_cache);
      const std::size_t n = dtts::prepare_data(paths, cache);
      std::cout << "prepared " << n << " utterances in " << cache.string() << "\n";
    } else if (*train) {
      json cfg = load_config_file(train_config);
      for (const auto& o : overrides) dtts::apply_override(cfg, o);
      if (!train_cache.empty()) cfg["cache_dir"] = train_cache;
      if (!train_out.empty()) cfg["out_dir"] = train_out;
      const dtts::TrainConfig tc = dtts::TrainConfig::from_json(cfg);
      const auto result = dtts::train(tc, [&](const json& rec) {
        const long step = rec["step"].get<long>();
        if (log_every > 0 && step % log_every == 0) {
          std::fprintf(stderr, "[%s] step %ld total %.5f mel_l1 %.5f lr %.2e\n",
                       rec["phase"].get<std::string>().c_str(), step, rec["total"].get<double>(),
                       rec["mel_l1"].get<double>(), rec["lr"].get<double>());
        }
      });
      json summary = {{"checkpoint", result.checkpoint.string()},
                      {"steps", result.steps},
                      {"final_eval", result.final_eval.to_json()}};
      std::cout << summary.dump(2) << "\n";
    } else if (*synth) {
      const auto out = dtts::synthesize_file(syn_ckpt, syn_phonemes, syn_speaker, syn_language, syn_dir,
                                             syn_vocoder, syn_name);
      std::cout << out.mel_path.string() << "\n";
      if (out.wav_path) std::cout << out.wav_path->string() << "\n";
    } else if (*evp) {
      std::unique_ptr<dtts::AcousticModel> model;
      if (!ev_ckpt.empty()) {
        model = std::move(dtts::load_model_checkpoint(ev_ckpt).model);
      } else {
        model = std::make_unique<dtts::AcousticModel>(
            dtts::ModelConfig::from_preset(ev_preset.empty() ? "toy" : ev_preset));
      }
      json report;
      report["architecture"] = dtts::architecture_report(*model);
      const auto& enc = model->config().encoder;
      if (model->encoder_blocks() > 0) {
        report["toeplitz_deviation"] =
            dtts::attention_toeplitz_deviation(model->encoder().block(0).attention(), enc.dim, 16);
      }
      report["inference_reference_calls"] = dtts::inference_reference_calls(*model, {0, 0, 0});
      if (!ev_manifest.empty()) {
        const fs::path cache = ev_cache.empty() ? dtts::default_cache_dir() : fs::path(ev_cache);
        const auto data = dtts::load_dataset(cache).select(dtts::read_manifest(ev_manifest));
        report["eval"] = dtts::evaluate(*model, data, ev_budget).to_json();
        std::vector<dtts::PhonemeUtterance> probe(
            data.utterances.begin(),
            data.utterances.begin() + static_cast<long>(std::min<std::size_t>(4, data.utterances.size())));
        report["padding_invariance_gap"] = dtts::padding_invariance_gap(*model, probe);
      }
      std::cout << report.dump(2) << "\n";
    }
  } catch (const dtts::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::out_of_range& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}
