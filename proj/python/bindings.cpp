#include "dtts/batching.hpp"
#include "dtts/dataset.hpp"
#include "dtts/diagnostics.hpp"
#include "dtts/errors.hpp"
#include "dtts/losses.hpp"
#include "dtts/synthetic.hpp"
#include "dtts/trainer.hpp"
#include "dtts/vocoder.hpp"

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;

namespace {

dtts::Waveform to_waveform(std::vector<double> samples, int rate) {
  dtts::Waveform w{std::move(samples), rate};
  w.validate();
  return w;
}

nlohmann::json from_python(const py::handle& obj) {
  const auto dumps = py::module_::import("json").attr("dumps");
  return nlohmann::json::parse(dumps(obj).cast<std::string>());
}

py::object to_python(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

}  // namespace

PYBIND11_MODULE(_dtts, m) {
  m.doc() = "Phoneme-to-mel acoustic model: features, model, losses, training and vocoder bridge";

  auto base = py::register_exception<dtts::Error>(m, "DttsError", PyExc_RuntimeError);
  py::register_exception<dtts::UsageError>(m, "UsageError", base.ptr());
  py::register_exception<dtts::DataError>(m, "DataError", base.ptr());
  py::register_exception<dtts::NumericError>(m, "NumericError", base.ptr());
  py::register_exception<dtts::ContractError>(m, "ContractError", base.ptr());

  m.attr("ANALYSIS_RATE") = dtts::kAnalysisRate;
  m.attr("OUTPUT_RATE") = dtts::kOutputRate;
  m.attr("HOP") = dtts::kHopSamples;
  m.attr("MEL_CHANNELS") = dtts::kMelChannels;
  m.attr("SAMPLES_PER_FRAME") = dtts::kSamplesPerFrame;

  // features
  m.def("resample_48k_to_16k",
        [](std::vector<double> x) { return dtts::resample_48k_to_16k(to_waveform(std::move(x), 48000)).samples; },
        py::arg("samples"));
  m.def("compute_mel",
        [](std::vector<double> x) { return dtts::compute_mel(to_waveform(std::move(x), 16000)).frames; },
        py::arg("samples"), "T x 80 log-mel of 16 kHz samples");
  m.def("mel_frame_count", &dtts::mel_frame_count, py::arg("num_samples"));
  m.def(
      "extract_pitch",
      [](std::vector<double> x) {
        const auto c = dtts::extract_pitch(to_waveform(std::move(x), 16000));
        std::vector<bool> voiced(c.voiced.begin(), c.voiced.end());
        return py::make_tuple(c.f0, voiced);
      },
      py::arg("samples"), "(f0 Hz per frame, voiced flags)");
  m.def(
      "phoneme_log_pitch",
      [](std::vector<double> f0, std::vector<int> durations) {
        dtts::PitchContour c;
        for (double f : f0) c.voiced.push_back(f > 0.0 ? 1 : 0);
        c.f0 = std::move(f0);
        return dtts::phoneme_log_pitch(c, durations);
      },
      py::arg("f0"), py::arg("durations"));
  m.def("mel_filterbank", []() { return dtts::mel_filterbank(); });

  // vocoder
  m.def(
      "baseline_vocode",
      [](const dtts::Matrix& mel, int iterations, std::uint64_t seed) {
        dtts::BaselineVocoderOptions o;
        o.griffin_lim_iterations = iterations;
        o.seed = seed;
        return dtts::baseline_vocode(dtts::MelSpectrogram{mel}, o).samples;
      },
      py::arg("mel"), py::arg("iterations") = 60, py::arg("seed") = 0, "48 kHz samples, 600 per frame");

  // losses
  m.def(
      "ssim",
      [](const dtts::Matrix& pred, const dtts::Matrix& target) {
        return dtts::ssim(dtts::ag::constant(pred), target).item();
      },
      py::arg("pred"), py::arg("target"));

  // batching
  m.def(
      "build_batches",
      [](const std::vector<std::pair<std::string, long>>& items, long budget, std::uint64_t seed) {
        std::vector<dtts::SizedItem> sized;
        for (const auto& [id, frames] : items) sized.push_back({id, frames});
        return dtts::build_batches(sized, budget, seed);
      },
      py::arg("items"), py::arg("frame_budget") = 6000, py::arg("seed") = 0,
      "items: [(utt_id, frames)]; returns lists of indices");

  // data
  m.def(
      "make_synthetic_corpus",
      [](const std::filesystem::path& out, int utterances, int vocab, int speakers, int languages,
         std::uint64_t seed) {
        dtts::SyntheticCorpusSpec s;
        s.num_utterances = utterances;
        s.vocab_size = vocab;
        s.num_speakers = speakers;
        s.num_languages = languages;
        s.seed = seed;
        return dtts::make_synthetic_corpus(s, out);
      },
      py::arg("out_dir"), py::arg("utterances") = 8, py::arg("vocab") = 6, py::arg("speakers") = 1,
      py::arg("languages") = 1, py::arg("seed") = 0);
  m.def("prepare_data", &dtts::prepare_data, py::arg("manifests"), py::arg("cache_dir"));

  // model
  py::class_<dtts::AcousticModel>(m, "AcousticModel")
      .def(py::init([](const std::string& preset, int vocab_size, std::uint64_t seed) {
             auto c = dtts::ModelConfig::from_preset(preset);
             c.vocab_size = vocab_size;
             return std::make_unique<dtts::AcousticModel>(c, seed);
           }),
           py::arg("preset") = "toy", py::arg("vocab_size") = 64, py::arg("seed") = 0)
      .def_static(
          "load",
          [](const std::filesystem::path& p) { return std::move(dtts::load_model_checkpoint(p).model); },
          py::arg("checkpoint"))
      .def("count_parameters", &dtts::AcousticModel::count_parameters)
      .def("parameter_breakdown", &dtts::AcousticModel::parameter_breakdown)
      .def("config", [](const dtts::AcousticModel& a) { return to_python(a.config().to_json()); })
      .def("architecture", [](const dtts::AcousticModel& a) { return to_python(dtts::architecture_report(a)); })
      .def("synthesize", &dtts::AcousticModel::synthesize, py::arg("phonemes"), py::arg("speaker") = 0,
           py::arg("language") = 0, "T' x 80 predicted mel")
      .def_property_readonly("reference_encoder_calls", &dtts::AcousticModel::reference_encoder_calls);

  // training
  m.def(
      "train",
      [](const py::dict& config, const std::vector<std::string>& overrides) {
        nlohmann::json j = from_python(config);
        for (const auto& o : overrides) dtts::apply_override(j, o);
        dtts::TrainResult r;
        {
          py::gil_scoped_release release;
          r = dtts::train(dtts::TrainConfig::from_json(j));
        }
        nlohmann::json out = {{"checkpoint", r.checkpoint.string()},
                              {"steps", r.steps},
                              {"final_eval", r.final_eval.to_json()}};
        if (r.finetune_start) out["finetune_start"] = r.finetune_start->to_json();
        if (r.pretrain_final_on_finetune) {
          out["pretrain_final_on_finetune"] = r.pretrain_final_on_finetune->to_json();
        }
        return to_python(out);
      },
      py::arg("config"), py::arg("overrides") = std::vector<std::string>{});
  m.def(
      "synthesize",
      [](const std::filesystem::path& ckpt, const std::filesystem::path& phonemes, int speaker, int language,
         const std::filesystem::path& out_dir, const std::string& vocoder) {
        const auto r = dtts::synthesize_file(ckpt, phonemes, speaker, language, out_dir, vocoder);
        py::dict d;
        d["mel"] = r.mel;
        d["mel_path"] = r.mel_path;
        d["wav_path"] = r.wav_path ? py::cast(*r.wav_path) : py::none();
        return d;
      },
      py::arg("checkpoint"), py::arg("phoneme_file"), py::arg("speaker") = 0, py::arg("language") = 0,
      py::arg("out_dir") = ".", py::arg("vocoder") = "");
}
