#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sdmg/checkpoint.hpp"
#include "sdmg/config.hpp"
#include "sdmg/evaluation.hpp"
#include "sdmg/synthgen.hpp"
#include "sdmg/training.hpp"

namespace fs = std::filesystem;
using namespace sdmg;

namespace {

enum class Level { kQuiet = 0, kInfo = 1, kDebug = 2 };

// SDMG_LOG=quiet|info|debug
Level log_level() {
  const char* v = std::getenv("SDMG_LOG");
  if (!v) return Level::kInfo;
  const std::string s(v);
  if (s == "quiet" || s == "0") return Level::kQuiet;
  if (s == "debug" || s == "2") return Level::kDebug;
  return Level::kInfo;
}

void log(Level at, const std::string& msg) {
  static const Level current = log_level();
  if (static_cast<int>(at) <= static_cast<int>(current)) std::cerr << "[sdmg] " << msg << '\n';
}

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A data path is either an annotations file or a directory holding
/// annotations.jsonl; rasters are resolved relative to that directory.
Corpus load_corpus(const std::string& path, const ParseOptions& opts, bool with_images) {
  fs::path file = path;
  if (fs::is_directory(file)) file /= "annotations.jsonl";
  Corpus c = parse_annotations_file(file, opts);
  if (with_images) load_images(c, file.parent_path());
  log(Level::kInfo, "loaded " + std::to_string(c.size()) + " documents from " + file.string());
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

Corpus resized(const Corpus& c, std::size_t size) {
  Corpus out;
  out.reserve(c.size());
  for (const auto& s : c) out.push_back(s.width == size && s.height == size ? s : resize_sample(s, size));
  return out;
}

std::vector<int> parse_label_map(const std::string& text) {
  std::vector<int> out;
  std::string item;
  for (std::size_t i = 0; i <= text.size(); ++i) {
    if (i == text.size() || text[i] == ',') {
      if (!item.empty()) out.push_back(std::stoi(item));
      item.clear();
    } else if (text[i] != ' ') {
      item += text[i];
    }
  }
  return out;
}

struct SynthArgs {
  std::size_t templates = 25, docs = 10;
  std::uint64_t seed = 0;
  double test_fraction = 0.2;
  std::string out;
};

int cmd_synth(const SynthArgs& a) {
  if (a.templates < 2) throw UsageError("--templates must be at least 2");
  const auto c = synth::generate_corpus(a.templates, a.docs, a.seed, a.test_fraction);
  synth::write_corpus(c.train, fs::path(a.out) / "train");
  synth::write_corpus(c.test, fs::path(a.out) / "test");
  log(Level::kInfo, "wrote " + std::to_string(c.train.size()) + " train and " + std::to_string(c.test.size()) + " test documents to " +
                        a.out);
  return 0;
}

struct TrainArgs {
  std::string train, val, config, out, metrics, ablation, preset, label_map;
  std::vector<std::string> set;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& a) {
  RunConfig rc;
  if (!a.preset.empty()) apply_setting(rc, "preset", a.preset);
  if (!a.config.empty()) apply_config_file(rc, a.config);
  for (const auto& kv : a.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    apply_setting(rc, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
  }
  if (!a.ablation.empty()) apply_ablation(rc.model, a.ablation);
  if (a.epochs) {
    rc.train.max_epochs = *a.epochs;
    std::erase_if(rc.train.decay_epochs, [&](std::size_t e) { return e >= *a.epochs; });
  }
  if (a.seed) rc.train.seed = *a.seed;
  rc.model.validate();
  rc.train.validate();
  const nlohmann::json resolved = {{"model", to_json(rc.model)}, {"train", to_json(rc.train)}};
  log(Level::kInfo, "run config " + resolved.dump());

  ParseOptions opts;
  if (!a.label_map.empty()) opts.label_map = parse_label_map(a.label_map);
  const bool images = rc.model.use_visual;
  const Corpus train_set = resized(load_corpus(a.train, opts, images), rc.model.image_size);
  std::optional<Corpus> val;
  if (!a.val.empty()) val = resized(load_corpus(a.val, opts, images), rc.model.image_size);
  if (val && rc.train.val_every == 0) rc.train.val_every = 1;

  Model<float> model(rc.model, rc.train.seed);
  check_training_corpus(train_set, model);
  log(Level::kInfo, std::to_string(model.params().count()) + " parameters");
  AdamState<float> opt;
  nlohmann::json epochs = nlohmann::json::array();
  train(model, train_set, rc.train, opt, val ? &*val : nullptr, [&](const EpochLog& e) {
    epochs.push_back(to_json(e));
    std::string line = "epoch " + std::to_string(e.epoch) + " lr " + std::to_string(e.lr) + " loss " + std::to_string(e.mean_loss);
    if (e.val_macro_f1) line += " val_macro_f1 " + std::to_string(*e.val_macro_f1);
    log(Level::kInfo, line);
  });
  save_checkpoint(a.out, model, &opt);
  nlohmann::json metrics = {{"config", resolved}, {"epochs", std::move(epochs)}};
  if (val) metrics["validation"] = to_json(evaluate(model, *val));
  const fs::path mpath = a.metrics.empty() ? fs::path(a.out) / "metrics.json" : fs::path(a.metrics);
  write_text(mpath, metrics.dump(2) + "\n");
  log(Level::kInfo, "checkpoint written to " + a.out + ", metrics to " + mpath.string());
  return 0;
}

struct EvalArgs {
  std::string ckpt, data, detected, out, label_map;
};

int cmd_eval(const EvalArgs& a) {
  auto model = load_checkpoint<float>(a.ckpt);
  ParseOptions opts;
  if (!a.label_map.empty()) opts.label_map = parse_label_map(a.label_map);
  Corpus data = load_corpus(a.data, opts, model->config().use_visual);
  std::vector<int> pred, truth;
  if (a.detected.empty()) {
    std::tie(pred, truth) = predict_corpus(*model, data);
  } else {
    ParseOptions det_opts = opts;
    const Corpus detected = load_corpus(a.detected, det_opts, false);
    std::map<std::string, const DocumentSample*> by_name;
    for (const auto& d : detected) by_name[d.file_name] = &d;
    for (const auto& gt : data) {
      const auto it = by_name.find(gt.file_name);
      if (it == by_name.end()) throw ValidationError("no detected boxes for " + gt.file_name);
      DocumentSample doc = gt;
      doc.regions = it->second->regions;
      for (auto& r : doc.regions) r.label.reset();
      const auto t = transfer_labels_by_iou(doc.regions, gt.regions);
      const auto p = model->predict(doc);
      pred.insert(pred.end(), p.begin(), p.end());
      truth.insert(truth.end(), t.begin(), t.end());
    }
  }
  const auto rep = f1_report(pred, truth);
  std::cout << to_table(rep);
  if (!a.out.empty()) write_text(a.out, to_json(rep).dump(2) + "\n");
  return 0;
}

struct PredictArgs {
  std::string ckpt, data, out;
};

int cmd_predict(const PredictArgs& a) {
  auto model = load_checkpoint<float>(a.ckpt);
  Corpus data = load_corpus(a.data, {}, model->config().use_visual);
  std::ostringstream os;
  for (auto& s : data) {
    const auto p = model->predict(s);
    for (std::size_t i = 0; i < p.size(); ++i) s.regions[i].label = p[i];
    auto rec = to_json(s);
    for (std::size_t i = 0; i < p.size(); ++i) rec["annotations"][i]["category"] = std::string(CategorySet::kNames[p[i]]);
    os << rec.dump() << '\n';
  }
  if (a.out.empty()) std::cout << os.str();
  else write_text(a.out, os.str());
  return 0;
}

struct ExportArgs {
  std::string ckpt, data, out;
  double min_weight = 0.0;
};

int cmd_export_edges(const ExportArgs& a) {
  auto model = load_checkpoint<float>(a.ckpt);
  const Corpus data = load_corpus(a.data, {}, model->config().use_visual);
  fs::create_directories(a.out);
  for (const auto& s : data) {
    const auto out = model->forward(s, true);
    std::string stem = fs::path(s.file_name).stem().string();
    write_text(fs::path(a.out) / (stem + ".edges.json"), edge_trace_json(out.trace, s, a.min_weight).dump() + "\n");
  }
  log(Level::kInfo, "exported " + std::to_string(data.size()) + " edge traces to " + a.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Key information extraction with multimodal graph reasoning"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic receipt corpus with disjoint train/test templates");
  synth->add_option("--templates", sa.templates, "Number of layout templates")->capture_default_str();
  synth->add_option("--docs-per-template", sa.docs, "Documents per template")->capture_default_str();
  synth->add_option("--seed", sa.seed, "Random seed")->capture_default_str();
  synth->add_option("--test-fraction", sa.test_fraction, "Share of templates held out for test")->capture_default_str();
  synth->add_option("--out", sa.out, "Output directory")->required();

  TrainArgs ta;
  auto* trn = app.add_subcommand("train", "Train a model and write a checkpoint plus metrics log");
  trn->add_option("--train", ta.train, "Training annotations (file or directory)")->required();
  trn->add_option("--val", ta.val, "Validation annotations");
  trn->add_option("--config", ta.config, "key = value settings file");
  trn->add_option("--preset", ta.preset, "Model preset: full, desk, toy");
  trn->add_option("--set", ta.set, "Override one setting, key=value (repeatable)");
  trn->add_option("--ablation", ta.ablation, "no-spatial, no-graph, no-text, no-visual or no-key");
  trn->add_option("--epochs", ta.epochs, "Override max_epochs");
  trn->add_option("--seed", ta.seed, "Override the training seed");
  trn->add_option("--label-map", ta.label_map, "Comma-separated external-to-internal label table");
  trn->add_option("--metrics", ta.metrics, "Metrics JSON path (default <out>/metrics.json)");
  trn->add_option("--out", ta.out, "Checkpoint directory")->required();

  EvalArgs ea;
  auto* evl = app.add_subcommand("eval", "Score a checkpoint on annotated documents");
  evl->add_option("--ckpt", ea.ckpt, "Checkpoint directory")->required();
  evl->add_option("--data", ea.data, "Ground-truth annotations")->required();
  evl->add_option("--detected-boxes", ea.detected, "Detected boxes (same record format) labelled by max IOU");
  evl->add_option("--label-map", ea.label_map, "Comma-separated external-to-internal label table");
  evl->add_option("--out", ea.out, "Report JSON path");

  PredictArgs pa;
  auto* prd = app.add_subcommand("predict", "Label every region of the given documents");
  prd->add_option("--ckpt", pa.ckpt, "Checkpoint directory")->required();
  prd->add_option("--data", pa.data, "Annotations (labels optional)")->required();
  prd->add_option("--out", pa.out, "Output JSONL (default stdout)");

  ExportArgs xa;
  auto* exp = app.add_subcommand("export-edges", "Write per-document edge weight traces");
  exp->add_option("--ckpt", xa.ckpt, "Checkpoint directory")->required();
  exp->add_option("--data", xa.data, "Annotations")->required();
  exp->add_option("--out", xa.out, "Output directory")->required();
  exp->add_option("--min-weight", xa.min_weight, "List edges whose weight reaches this value")->check(CLI::Range(0.0, 1.0));

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
    if (*synth) return cmd_synth(sa);
    if (*trn) return cmd_train(ta);
    if (*evl) return cmd_eval(ea);
    if (*prd) return cmd_predict(pa);
    if (*exp) return cmd_export_edges(xa);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
