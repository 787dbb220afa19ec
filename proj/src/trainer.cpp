#include "dtts/trainer.hpp"

#include "dtts/checkpoint.hpp"
#include "dtts/errors.hpp"
#include "dtts/vocoder.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <random>

namespace dtts {
namespace {

using nlohmann::json;

std::vector<SizedItem> sized_items(const Dataset& data) {
  std::vector<SizedItem> items;
  for (std::size_t i = 0; i < data.utterances.size(); ++i) {
    items.push_back({data.utterances[i].utt_id, static_cast<long>(data.frames(i))});
  }
  return items;
}

std::vector<PhonemeUtterance> gather(const Dataset& data, const std::vector<std::size_t>& idx) {
  std::vector<PhonemeUtterance> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(data.utterances[i]);
  return out;
}

// Masked L1 of the final block against the padded target, as sum and count.
std::pair<double, double> final_mel_error(const AcousticOutputs& out, const LossTargets& t) {
  const Matrix diff = (out.final_mel().value() - t.mel).cwiseAbs().cwiseProduct(t.mel_mask);
  return {diff.sum(), t.mel_mask.sum()};
}

void append_line(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw DataError("cannot append to " + path.string());
  out << j.dump() << "\n";
}

template <typename T>
void read_key(const json& j, const char* key, T& dst) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw UsageError(std::string("config key '") + key + "': " + e.what());
  }
}

struct PhaseContext {
  const TrainConfig& cfg;
  const Dataset& all;
  fs::path out_dir;
  fs::path metrics;
};

long run_phase(const PhaseContext& pc, const std::string& phase, int phase_index,
               AcousticModel& model, const Dataset& data, long steps, const StepCallback& on_step) {
  const TrainConfig& cfg = pc.cfg;
  const auto& params = model.params().parameters();
  Adam adam(params);
  const LrSchedule schedule{cfg.base_lr, cfg.warmup, model.config().dim()};
  std::mt19937_64 dropout_rng(cfg.seed * 7919ULL + static_cast<std::uint64_t>(phase_index) + 1);
  const auto items = sized_items(data);
  const fs::path last_good = pc.out_dir / "last_good.ckpt";
  auto save = [&](const fs::path& path, long step) {
    save_model_checkpoint(path, model, pc.all.vocab, pc.all.pitch_stats,
                          {{"phase", phase}, {"step", step}, {"train_config", cfg.to_json()}}, &adam);
  };
  save(last_good, 0);

  const auto t0 = std::chrono::steady_clock::now();
  long step = 0;
  for (long epoch = 0; step < steps; ++epoch) {
    const BatchPlan plan = build_batches(
        items, cfg.frame_budget,
        cfg.seed + 1000003ULL * static_cast<std::uint64_t>(epoch) + static_cast<std::uint64_t>(phase_index));
    for (const auto& idx : plan) {
      if (step >= steps) break;
      ++step;
      const auto batch = gather(data, idx);
      model.params().zero_grad();
      const ForwardContext ctx{true, &dropout_rng};
      const AcousticOutputs out = model.forward_train(batch, ctx);
      const LossTargets targets = make_loss_targets(batch, out);
      const LossBreakdown loss = total_loss(out, targets, cfg.loss_weights);
      if (!std::isfinite(loss.total)) {
        throw NumericError(phase + " step " + std::to_string(step) + ": non-finite loss; last good checkpoint kept at " +
                           last_good.string());
      }
      loss.objective.backward();
      const double grad_norm = clip_grad_norm(params, cfg.grad_clip);
      if (!std::isfinite(grad_norm)) {
        throw NumericError(phase + " step " + std::to_string(step) + ": non-finite gradient; last good checkpoint kept at " +
                           last_good.string());
      }
      const double lr = schedule.at(step);
      adam.step(lr);
      const auto [err, count] = final_mel_error(out, targets);
      long frames = 0;
      for (const auto& u : batch) frames += static_cast<long>(u.mel->rows());
      json rec = loss.to_json();
      rec["phase"] = phase;
      rec["step"] = step;
      rec["epoch"] = epoch;
      rec["lr"] = lr;
      rec["grad_norm"] = grad_norm;
      rec["items"] = batch.size();
      rec["frames"] = frames;
      rec["mel_l1"] = err / count;
      rec["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      append_line(pc.metrics, rec);
      if (on_step) on_step(rec);
      if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) save(last_good, step);
    }
  }
  save(pc.out_dir / (phase + ".ckpt"), step);
  save(last_good, step);
  return step;
}

}  // namespace

TrainConfig TrainConfig::for_preset(const std::string& preset) {
  TrainConfig c;
  c.preset = preset;
  if (preset == "toy") {
    c.base_lr = 0.02;
    c.warmup = 100;
    c.max_steps = 2000;
  } else if (preset != "paper") {
    throw UsageError("unknown preset '" + preset + "' (expected paper or toy)");
  }
  return c;
}

TrainConfig TrainConfig::from_json(const json& j) {
  if (!j.is_object()) throw UsageError("config must be a JSON object");
  static const std::vector<std::string> known = {
      "preset",        "frame_budget",     "base_lr",           "warmup",    "grad_clip",
      "max_steps",     "finetune_steps",   "checkpoint_every",  "pretrain_manifest",
      "finetune_manifest", "cache_dir",    "out_dir",           "seed",      "loss_weights",
      "model"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw UsageError("unknown config key '" + key + "'");
    }
  }
  TrainConfig c = for_preset(j.value("preset", std::string("toy")));
  read_key(j, "frame_budget", c.frame_budget);
  read_key(j, "base_lr", c.base_lr);
  read_key(j, "warmup", c.warmup);
  read_key(j, "grad_clip", c.grad_clip);
  read_key(j, "max_steps", c.max_steps);
  read_key(j, "finetune_steps", c.finetune_steps);
  read_key(j, "checkpoint_every", c.checkpoint_every);
  read_key(j, "pretrain_manifest", c.pretrain_manifest);
  read_key(j, "finetune_manifest", c.finetune_manifest);
  read_key(j, "cache_dir", c.cache_dir);
  read_key(j, "out_dir", c.out_dir);
  read_key(j, "seed", c.seed);
  read_key(j, "model", c.model);
  if (j.contains("loss_weights")) {
    const json& w = j["loss_weights"];
    read_key(w, "utterance", c.loss_weights.utterance);
    read_key(w, "phoneme", c.loss_weights.phoneme);
    read_key(w, "pitch", c.loss_weights.pitch);
    read_key(w, "duration", c.loss_weights.duration);
    read_key(w, "iterative", c.loss_weights.iterative);
    read_key(w, "ssim", c.loss_weights.ssim);
  }
  return c;
}

json TrainConfig::to_json() const {
  const auto& w = loss_weights;
  return {{"preset", preset},
          {"frame_budget", frame_budget},
          {"base_lr", base_lr},
          {"warmup", warmup},
          {"grad_clip", grad_clip},
          {"max_steps", max_steps},
          {"finetune_steps", finetune_steps},
          {"checkpoint_every", checkpoint_every},
          {"pretrain_manifest", pretrain_manifest},
          {"finetune_manifest", finetune_manifest},
          {"cache_dir", cache_dir},
          {"out_dir", out_dir},
          {"seed", seed},
          {"loss_weights",
           {{"utterance", w.utterance},
            {"phoneme", w.phoneme},
            {"pitch", w.pitch},
            {"duration", w.duration},
            {"iterative", w.iterative},
            {"ssim", w.ssim}}},
          {"model", model}};
}

void TrainConfig::validate() const {
  if (preset != "paper" && preset != "toy") throw UsageError("unknown preset '" + preset + "'");
  if (frame_budget < 1) throw UsageError("frame_budget must be positive");
  if (!(base_lr > 0.0)) throw UsageError("base_lr must be positive");
  if (warmup < 1) throw UsageError("warmup must be at least 1");
  if (max_steps < 0 || finetune_steps < 0) throw UsageError("step counts must be non-negative");
  if (pretrain_manifest.empty()) throw UsageError("pretrain_manifest is required");
  if (out_dir.empty()) throw UsageError("out_dir is required");
}

void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw UsageError("override '" + assignment + "' must look like key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &config;
  std::size_t start = 0;
  for (std::size_t dot; (dot = key.find('.', start)) != std::string::npos; start = dot + 1) {
    const std::string part = key.substr(start, dot - start);
    if (part.empty()) throw UsageError("override key '" + key + "' has an empty component");
    json& next = (*node)[part];
    if (next.is_null()) next = json::object();
    if (!next.is_object()) throw UsageError("override key '" + key + "' descends into a non-object");
    node = &next;
  }
  const std::string leaf = key.substr(start);
  if (leaf.empty()) throw UsageError("override key '" + key + "' has an empty component");
  (*node)[leaf] = value;
}

json EvalResult::to_json() const {
  return {{"l_utt", l_utt},   {"l_phone", l_phone}, {"l_pitch", l_pitch}, {"l_dur", l_dur},
          {"l_iter", l_iter}, {"l_ssim", l_ssim},   {"total", total},     {"mel_l1", mel_l1}};
}

EvalResult evaluate(const AcousticModel& model, const Dataset& data, long frame_budget) {
  ag::NoGradGuard no_grad;
  EvalResult r;
  double items = 0.0, err = 0.0, count = 0.0;
  for (const auto& idx : build_batches(sized_items(data), frame_budget, 0)) {
    const auto batch = gather(data, idx);
    const AcousticOutputs out = model.forward_train(batch, ForwardContext{});
    const LossTargets targets = make_loss_targets(batch, out);
    const LossBreakdown loss = total_loss(out, targets);
    const double n = static_cast<double>(batch.size());
    r.l_utt += n * loss.l_utt;
    r.l_phone += n * loss.l_phone;
    r.l_pitch += n * loss.l_pitch;
    r.l_dur += n * loss.l_dur;
    r.l_iter += n * loss.l_iter;
    r.l_ssim += n * loss.l_ssim;
    r.total += n * loss.total;
    items += n;
    const auto [e, c] = final_mel_error(out, targets);
    err += e;
    count += c;
  }
  if (items == 0.0) throw DataError("evaluation set is empty");
  for (double* v : {&r.l_utt, &r.l_phone, &r.l_pitch, &r.l_dur, &r.l_iter, &r.l_ssim, &r.total}) {
    *v /= items;
  }
  r.mel_l1 = err / count;
  return r;
}

ModelConfig model_config_for(const TrainConfig& config, const Dataset& data) {
  json j = ModelConfig::from_preset(config.preset).to_json();
  j.merge_patch(config.model);
  j["vocab_size"] = std::max<Index>(1, data.vocab.size());
  j["variance"]["num_speakers"] = data.num_speakers;
  j["variance"]["num_languages"] = data.num_languages;
  ModelConfig mc = ModelConfig::from_json(j);
  mc.validate();
  return mc;
}

void save_model_checkpoint(const fs::path& path, const AcousticModel& model, const Vocabulary& vocab,
                           const PitchStats& stats, const json& extra, const Adam* optimizer) {
  json meta = extra;
  meta["code_version"] = kModelCodeVersion;
  meta["model"] = model.config().to_json();
  meta["vocab"] = vocab.tokens();
  meta["pitch_stats"] = {{"mean", stats.mean}, {"stddev", stats.stddev}};
  std::map<std::string, const Matrix*> tensors;
  for (const auto& p : model.params().parameters()) tensors[p.name] = &p.var.value();
  if (optimizer != nullptr) {
    meta["optimizer_steps"] = optimizer->steps();
    tensors.merge(optimizer->state());
  }
  save_checkpoint(path, meta, tensors);
}

void load_parameters(AcousticModel& model, const std::map<std::string, Matrix>& tensors) {
  for (const auto& p : model.params().parameters()) {
    const auto it = tensors.find(p.name);
    if (it == tensors.end()) throw DataError("checkpoint lacks parameter " + p.name);
    if (it->second.rows() != p.rows || it->second.cols() != p.cols) {
      throw DataError("parameter " + p.name + " has shape " + std::to_string(it->second.rows()) + "x" +
                      std::to_string(it->second.cols()) + " in checkpoint, model expects " +
                      std::to_string(p.rows) + "x" + std::to_string(p.cols));
    }
    Var v = p.var;
    v.mutable_value() = it->second;
  }
}

LoadedModel load_model_checkpoint(const fs::path& path) {
  CheckpointData data = load_checkpoint(path);
  const int version = data.meta.value("code_version", -1);
  if (version != kModelCodeVersion) {
    throw DataError(path.string() + ": model code version " + std::to_string(version) + ", expected " +
                    std::to_string(kModelCodeVersion));
  }
  LoadedModel out;
  out.meta = data.meta;
  out.model = std::make_unique<AcousticModel>(ModelConfig::from_json(data.meta.at("model")));
  load_parameters(*out.model, data.tensors);
  out.vocab = Vocabulary(data.meta.at("vocab").get<std::vector<std::string>>());
  out.pitch_stats.mean = data.meta.at("pitch_stats").at("mean").get<double>();
  out.pitch_stats.stddev = data.meta.at("pitch_stats").at("stddev").get<double>();
  for (auto& [name, m] : data.tensors) {
    if (name.rfind("adam.", 0) == 0) out.optimizer_state.emplace(name, std::move(m));
  }
  return out;
}

TrainResult train(const TrainConfig& config, const StepCallback& on_step) {
  config.validate();
  const fs::path cache = config.cache_dir.empty() ? default_cache_dir() : fs::path(config.cache_dir);
  const Dataset all = load_dataset(cache);
  const Dataset pretrain = all.select(read_manifest(config.pretrain_manifest));
  std::optional<Dataset> finetune;
  if (!config.finetune_manifest.empty()) finetune = all.select(read_manifest(config.finetune_manifest));

  const ModelConfig mc = model_config_for(config, all);
  const fs::path out_dir = config.out_dir;
  fs::create_directories(out_dir);
  const PhaseContext pc{config, all, out_dir, out_dir / "metrics.jsonl"};
  const fs::path eval_log = out_dir / "eval.jsonl";

  TrainResult result;
  auto model = std::make_unique<AcousticModel>(mc, config.seed);
  result.steps = run_phase(pc, "pretrain", 0, *model, pretrain, config.max_steps, on_step);
  fs::path final_ckpt = out_dir / "pretrain.ckpt";

  if (finetune) {
    EvalResult before = evaluate(*model, *finetune, config.frame_budget);
    json rec = before.to_json();
    rec["phase"] = "pretrain";
    rec["event"] = "final";
    rec["data"] = "finetune";
    append_line(eval_log, rec);
    result.pretrain_final_on_finetune = before;

    // Weights carry over through the checkpoint; the optimizer starts fresh.
    LoadedModel loaded = load_model_checkpoint(final_ckpt);
    model = std::move(loaded.model);
    EvalResult start = evaluate(*model, *finetune, config.frame_budget);
    rec = start.to_json();
    rec["phase"] = "finetune";
    rec["event"] = "start";
    rec["data"] = "finetune";
    append_line(eval_log, rec);
    result.finetune_start = start;

    const long steps = config.finetune_steps > 0 ? config.finetune_steps : config.max_steps;
    result.steps += run_phase(pc, "finetune", 1, *model, *finetune, steps, on_step);
    final_ckpt = out_dir / "finetune.ckpt";
  }

  const Dataset& last = finetune ? *finetune : pretrain;
  result.final_eval = evaluate(*model, last, config.frame_budget);
  json rec = result.final_eval.to_json();
  rec["phase"] = finetune ? "finetune" : "pretrain";
  rec["event"] = "final";
  rec["data"] = finetune ? "finetune" : "pretrain";
  append_line(eval_log, rec);
  fs::copy_file(final_ckpt, out_dir / "model.ckpt", fs::copy_options::overwrite_existing);
  result.checkpoint = out_dir / "model.ckpt";
  return result;
}

SynthesisOutput synthesize_file(const fs::path& checkpoint, const fs::path& phoneme_file, int speaker,
                                int language, const fs::path& out_dir, const std::string& vocoder,
                                const std::string& name) {
  const auto tokens = read_phoneme_file(phoneme_file);
  if (tokens.empty()) throw UsageError("phoneme file " + phoneme_file.string() + " is empty");
  LoadedModel loaded = load_model_checkpoint(checkpoint);
  const auto& vc = loaded.model->config().variance;
  if (speaker < 0 || speaker >= vc.num_speakers) {
    throw UsageError("unknown speaker id " + std::to_string(speaker) + "; known ids: 0.." +
                     std::to_string(vc.num_speakers - 1));
  }
  if (language < 0 || language >= vc.num_languages) {
    throw UsageError("unknown language id " + std::to_string(language) + "; known ids: 0.." +
                     std::to_string(vc.num_languages - 1));
  }
  const auto ids = loaded.vocab.encode(tokens);
  SynthesisOutput out;
  out.mel = loaded.model->synthesize(ids, speaker, language);
  const std::string stem = name.empty() ? phoneme_file.stem().string() : name;
  fs::create_directories(out_dir);
  out.mel_path = out_dir / (stem + ".mel.f32");
  write_feature(out.mel_path, out.mel);
  if (!vocoder.empty()) {
    const Waveform w = VocoderRegistry::with_baseline().run(vocoder, MelSpectrogram{out.mel});
    out.wav_path = out_dir / (stem + ".wav");
    write_wav(*out.wav_path, w);
  }
  return out;
}

}  // namespace dtts
