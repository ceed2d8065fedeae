#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "autofi/config.hpp"
#include "autofi/data.hpp"
#include "autofi/eval.hpp"
#include "autofi/gradsuite.hpp"
#include "autofi/kernels.hpp"
#include "autofi/model.hpp"
#include "autofi/trainer.hpp"

namespace fs = std::filesystem;
using namespace autofi;

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kAbort = 2;

struct CommonFlags {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  std::string data;
  std::string checkpoint;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "key=value config file");
  cmd->add_option("--seed", f.seed, "seed for generation, training and episode sampling");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--data", f.data, "input data file");
  cmd->add_option("--checkpoint", f.checkpoint, "input checkpoint");
}

config::Settings settings_from(const CommonFlags& f) {
  config::Settings s;
  if (!f.config.empty()) config::apply(config::load(f.config), s);
  s.stream.seed = f.seed;
  s.train.seed = f.seed;
  s.episodes.seed = f.seed;
  return s;
}

const std::string& require(const std::string& value, const char* flag) {
  if (value.empty()) throw config::ConfigError(std::string("missing required flag ") + flag);
  return value;
}

fs::path existing_file(const std::string& path, const char* flag) {
  require(path, flag);
  if (!fs::is_regular_file(path)) throw config::ConfigError(std::string(flag) + ": no such file " + path);
  return path;
}

fs::path out_dir(const CommonFlags& f) {
  const fs::path dir = require(f.out, "--out");
  fs::create_directories(dir);
  return dir;
}

fs::path labels_path(const config::Settings& s, const fs::path& data) {
  fs::path p = s.labels.empty() ? fs::path(data).replace_extension(".aflb") : fs::path(s.labels);
  if (!fs::is_regular_file(p)) throw config::ConfigError("labels file not found: " + p.string());
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void check_input_dims(const std::vector<data::CsiSample>& samples, const model::EncoderArch& arch) {
  for (const auto& s : samples) {
    if (s.values.dims() != arch.input) {
      throw config::ConfigError("sample shape " + shape_to_string(s.values.dims()) + " does not match the configured input " +
                                shape_to_string(arch.input));
    }
  }
}

int cmd_gen(const CommonFlags& f) {
  config::Settings s = settings_from(f);
  const fs::path dir = out_dir(f);
  const auto& g = s.generator;
  // Classes [label_offset, label_offset + num_classes) of one signature family.
  const auto family = data::random_signatures(s.stream.label_offset + s.stream.num_classes, g.tones_per_class,
                                              g.tone_amplitude, g.max_frequency, g.signature_seed);
  s.stream.class_signatures.assign(family.begin() + s.stream.label_offset, family.end());
  const data::Stream stream = data::generate_stream(s.stream);
  const data::CsiSample whole{stream.values, std::nullopt, std::nullopt};
  data::write_dataset(dir / "stream.afcs", std::span(&whole, 1));
  data::write_event_log(dir / "events.jsonl", stream.events);
  std::cout << nlohmann::ordered_json{{"length", s.stream.length()}, {"events", stream.events.size()}}.dump() << "\n";
  return kOk;
}

int cmd_segment(const CommonFlags& f) {
  const config::Settings s = settings_from(f);
  const fs::path input = existing_file(f.data, "--data");
  const fs::path dir = out_dir(f);
  const auto streams = data::read_dataset(input);
  if (streams.size() != 1) throw config::ConfigError("segment expects a file holding one stream");
  std::vector<data::CsiSample> segments = data::segment_stream(streams[0].values, s.segment);
  data::write_dataset(dir / "segments.afcs", segments);

  const fs::path events_path = input.parent_path() / "events.jsonl";
  std::size_t labeled_count = 0;
  if (fs::is_regular_file(events_path)) {
    const auto events = data::read_event_log(events_path);
    std::vector<data::CsiSample> labeled;
    std::vector<data::Label> labels;
    for (const auto& seg : segments) {
      const auto y = data::label_by_overlap(seg.provenance->start, s.segment.window, events);
      if (!y) continue;
      labeled.push_back({seg.values, y, seg.provenance});
      labels.push_back(*y);
    }
    data::write_dataset(dir / "labeled.afcs", labeled);
    data::write_labels(dir / "labeled.aflb", labels);
    labeled_count = labeled.size();
  }
  std::cout << nlohmann::ordered_json{{"segments", segments.size()}, {"labeled", labeled_count}}.dump() << "\n";
  return kOk;
}

int cmd_pretrain(const CommonFlags& f) {
  const config::Settings s = settings_from(f);
  const auto samples = data::read_dataset(existing_file(f.data, "--data"));
  const model::EncoderArch arch = s.encoder_arch();
  check_input_dims(samples, arch);
  s.train.validate();
  const fs::path dir = out_dir(f);
  trainer::GssState state = f.checkpoint.empty()
                                ? trainer::init_gss(arch, samples, s.train)
                                : trainer::gss_from_checkpoint(model::load_checkpoint(existing_file(f.checkpoint, "--checkpoint")));
  try {
    const trainer::GssResult r = trainer::train_gss(samples, std::move(state), s.train);
    model::save_checkpoint(dir / "gss.afck", trainer::to_checkpoint(r.state));
    write_text(dir / "gss_runlog.jsonl", r.log.to_jsonl());
    const auto& last = r.log.records.empty() ? trainer::EpochRecord{} : r.log.records.back();
    std::cout << nlohmann::ordered_json{{"epochs", r.state.epochs_done}, {"total", last.total},
                                {"marginal_entropy", last.marginal_entropy}, {"seconds", r.log.wall_seconds}}
                     .dump()
              << "\n";
  } catch (const trainer::TrainingAborted& e) {
    model::save_checkpoint(dir / "last_good.afck", e.last_good());
    throw;
  }
  return kOk;
}

int cmd_calibrate(const CommonFlags& f) {
  const config::Settings s = settings_from(f);
  const fs::path data_path = existing_file(f.data, "--data");
  const auto support = data::read_labeled_dataset(data_path, labels_path(s, data_path));
  const ParamSet ck = model::load_checkpoint(existing_file(f.checkpoint, "--checkpoint"));
  const model::EncoderArch arch = trainer::arch_of(ck);
  check_input_dims(support, arch);
  s.train.validate();
  const fs::path dir = out_dir(f);
  try {
    const trainer::FscResult r = trainer::train_fsc(support, arch, eval::encoder_from_checkpoint(ck, s.train.branch), s.train);
    model::save_checkpoint(dir / "fsc.afck", trainer::to_checkpoint(r.model));
    write_text(dir / "fsc_runlog.jsonl", r.log.to_jsonl());
    std::cout << nlohmann::ordered_json{{"classes", r.model.protos.class_ids}, {"support", support.size()}}.dump() << "\n";
  } catch (const trainer::TrainingAborted& e) {
    model::save_checkpoint(dir / "last_good.afck", e.last_good());
    throw;
  }
  return kOk;
}

int cmd_eval(const CommonFlags& f) {
  const config::Settings s = settings_from(f);
  const fs::path data_path = existing_file(f.data, "--data");
  const auto dataset = data::read_labeled_dataset(data_path, labels_path(s, data_path));
  const ParamSet ck = model::load_checkpoint(existing_file(f.checkpoint, "--checkpoint"));
  check_input_dims(dataset, trainer::arch_of(ck));
  s.train.validate();
  s.episodes.validate();
  const fs::path dir = out_dir(f);
  const eval::EvalResult r = eval::evaluate_episodes(dataset, ck, s.episodes, s.train);
  write_text(dir / "metrics.jsonl", r.metrics_jsonl());
  const std::string summary = nlohmann::ordered_json{{"episodes", r.accuracies.size()}, {"mean", r.mean},
                                             {"ci_low", r.ci_low()}, {"ci_high", r.ci_high()}}
                                  .dump();
  write_text(dir / "summary.json", summary + "\n");
  std::cout << summary << "\n";
  return kOk;
}

int cmd_infer(const CommonFlags& f) {
  const ParamSet ck = model::load_checkpoint(existing_file(f.checkpoint, "--checkpoint"));
  const trainer::FscModel m = trainer::fsc_from_checkpoint(ck);
  const auto samples = data::read_dataset(existing_file(f.data, "--data"));
  check_input_dims(samples, m.arch);
  std::string lines;
  for (const auto& x : samples) {
    const trainer::Prediction p = trainer::predict(m, x.values);
    lines += nlohmann::ordered_json{{"class", p.label}, {"posterior", p.posterior}}.dump() + "\n";
  }
  std::cout << lines;
  if (!f.out.empty()) write_text(out_dir(f) / "predictions.jsonl", lines);
  return kOk;
}

int cmd_gradcheck(const CommonFlags& f) {
  const config::Settings s = settings_from(f);
  const auto names = gradsuite::registered_losses();
  std::vector<double> worst(names.size(), 0.0);
  for (std::size_t k = 0; k < s.grad_seeds; ++k) {
    const auto checks = gradsuite::run(f.seed + k, s.grad_batch, s.grad_dim);
    for (std::size_t i = 0; i < checks.size(); ++i) worst[i] = std::max(worst[i], checks[i].report.max_rel_error);
  }
  bool ok = true;
  std::string lines;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const bool pass = worst[i] <= gradsuite::kTolerance;
    ok = ok && pass;
    lines += nlohmann::ordered_json{{"loss", names[i]}, {"max_rel_error", worst[i]}, {"pass", pass}}.dump() + "\n";
  }
  std::cout << lines;
  if (!f.out.empty()) write_text(out_dir(f) / "gradcheck.jsonl", lines);
  return ok ? kOk : kAbort;
}

std::string keys_help() {
  std::string text = "Config keys (key = value, one per line):\n";
  for (const auto& [key, help] : config::documented_keys()) text += "  " + key + ": " + help + "\n";
  return text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("WiFi CSI self-supervised pretraining and few-shot calibration");
  app.footer(keys_help());
  app.require_subcommand(1);

  struct Command {
    const char* name;
    const char* help;
    int (*run)(const CommonFlags&);
  };
  const Command commands[] = {
      {"gen", "generate a synthetic CSI stream and its event log", cmd_gen},
      {"segment", "cut a stream into threshold-triggered windows", cmd_segment},
      {"pretrain", "self-supervised pretraining on unlabeled windows", cmd_pretrain},
      {"calibrate", "few-shot calibration on labelled windows", cmd_calibrate},
      {"eval", "N-way K-shot episode evaluation", cmd_eval},
      {"infer", "classify windows with a calibrated checkpoint", cmd_infer},
      {"gradcheck", "check loss gradients against finite differences", cmd_gradcheck},
  };
  CommonFlags flags;
  std::vector<std::pair<CLI::App*, const Command*>> subs;
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    add_common(sub, flags);
    subs.emplace_back(sub, &c);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    for (const auto& [sub, cmd] : subs) {
      if (sub->parsed()) return cmd->run(flags);
    }
  } catch (const trainer::TrainingAborted& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kAbort;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kAbort;
  }
  return kValidation;
}
