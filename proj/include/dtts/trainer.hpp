// Training loop, evaluation, checkpoint I/O for models and synthesis.
#pragma once

#include "dtts/acoustic_model.hpp"
#include "dtts/batching.hpp"
#include "dtts/dataset.hpp"
#include "dtts/losses.hpp"
#include "dtts/optim.hpp"

#include <json.hpp>

#include <functional>
#include <memory>
#include <optional>
#include <string>

namespace dtts {

/// Bumped whenever parameter naming or model structure changes.
inline constexpr int kModelCodeVersion = 1;

struct TrainConfig {
  std::string preset = "toy";
  long frame_budget = 6000;
  double base_lr = 1e-3;
  int warmup = 4000;
  double grad_clip = 1.0;
  long max_steps = 1000;
  long finetune_steps = 0;  // 0: same as max_steps
  long checkpoint_every = 500;
  std::string pretrain_manifest;
  std::string finetune_manifest;
  std::string cache_dir;  // empty: $DTTS_CACHE_DIR or ./dtts_cache
  std::string out_dir = "run";
  std::uint64_t seed = 0;
  LossWeights loss_weights;
  nlohmann::json model = nlohmann::json::object();  // ModelConfig overrides

  /// Preset-specific optimizer defaults: "paper" keeps warmup 4000 and
  /// base_lr 1e-3; "toy" uses a short warmup and larger base rate.
  static TrainConfig for_preset(const std::string& preset);
  /// Starts from for_preset(j["preset"]) and applies the remaining keys.
  static TrainConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;
};

/// Sets a dotted key ("model.encoder.dim", "max_steps") in a JSON object.
/// The value is parsed as JSON when possible, else kept as a string.
void apply_override(nlohmann::json& config, const std::string& assignment);

struct EvalResult {
  double l_utt = 0, l_phone = 0, l_pitch = 0, l_dur = 0, l_iter = 0, l_ssim = 0, total = 0;
  double mel_l1 = 0;  // final block, teacher-forced, masked
  nlohmann::json to_json() const;
};

/// Teacher-forced losses without dropout, averaged over the fixed
/// (seed 0) batch plan weighted by item count; mel_l1 pools all frames.
EvalResult evaluate(const AcousticModel& model, const Dataset& data, long frame_budget);

/// Model configuration for a dataset: preset + overrides, vocabulary size
/// and speaker/language counts taken from the data.
ModelConfig model_config_for(const TrainConfig& config, const Dataset& data);

struct LoadedModel {
  std::unique_ptr<AcousticModel> model;
  Vocabulary vocab;
  PitchStats pitch_stats;
  nlohmann::json meta;
  std::map<std::string, Matrix> optimizer_state;
};

void save_model_checkpoint(const fs::path& path, const AcousticModel& model, const Vocabulary& vocab,
                           const PitchStats& stats, const nlohmann::json& extra,
                           const Adam* optimizer = nullptr);
/// Throws DataError when the file is not a checkpoint of this code version.
LoadedModel load_model_checkpoint(const fs::path& path);
/// Copies parameter values by name; shapes must match.
void load_parameters(AcousticModel& model, const std::map<std::string, Matrix>& tensors);

struct TrainResult {
  fs::path checkpoint;
  long steps = 0;
  EvalResult final_eval;
  std::optional<EvalResult> pretrain_final_on_finetune;
  std::optional<EvalResult> finetune_start;
};

/// Called once per step with the metrics record.
using StepCallback = std::function<void(const nlohmann::json&)>;

/// Writes <out_dir>/metrics.jsonl (one object per step), eval.jsonl,
/// pretrain.ckpt, finetune.ckpt (when two-phase), last_good.ckpt and
/// model.ckpt. A non-finite loss or gradient throws NumericError and
/// leaves last_good.ckpt in place.
TrainResult train(const TrainConfig& config, const StepCallback& on_step = {});

struct SynthesisOutput {
  Matrix mel;
  fs::path mel_path;
  std::optional<fs::path> wav_path;
};

/// Reads whitespace-separated phoneme tokens, synthesizes a mel and writes
/// <out_dir>/<name>.mel.f32 (+ sidecar); when vocoder is non-empty also
/// writes <out_dir>/<name>.wav at 48 kHz.
SynthesisOutput synthesize_file(const fs::path& checkpoint, const fs::path& phoneme_file,
                                int speaker, int language, const fs::path& out_dir,
                                const std::string& vocoder = "", const std::string& name = "");

}  // namespace dtts
