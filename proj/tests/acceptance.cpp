// End-to-end acceptance runner: one PASS/FAIL line per criterion.
// Usage: acceptance [criterion numbers...]   (default: all)

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>

#include "gradient_suite.hpp"
#include "sdmg/checkpoint.hpp"
#include "sdmg/evaluation.hpp"
#include "sdmg/synthgen.hpp"
#include "sdmg/training.hpp"

using namespace sdmg;
using sdmg::testing::random_tensor;
using sdmg::testing::Rng;
using Td = Tensor<double>;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---- 1 ------------------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t failed = 0, checked = 0;
  std::string worst;
  for (const auto& c : sdmg::testing::gradient_cases()) {
    const auto r = c.run();
    checked += r.checked;
    if (!(r.max_rel < c.tol)) {
      ++failed;
      worst += " " + c.name + "(" + fmt("%.2e", r.max_rel) + ")";
    }
  }
  const double t = seconds_since(t0);
  return {failed == 0 && t < 120,
          std::to_string(sdmg::testing::gradient_cases().size()) + " cases, " + std::to_string(checked) + " partials, " +
              std::to_string(failed) + " over tolerance" + worst + ", " + fmt("%.1f s", t)};
}

// ---- 2 ------------------------------------------------------------------

Outcome fusion_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(2);
  std::uniform_int_distribution<std::size_t> dn(1, 8);
  double worst = 0;
  std::size_t configs = 0;
  for (std::size_t d : {4, 6, 8})
    for (std::size_t b : {1, 2})
      for (std::size_t R : {1, 2, 3})
        for (int rep = 0; rep < 6; ++rep) {
          ParamStore<double> s;
          auto p = make_block_term(s, "f", d, d, dn(rng), b, b, b, R);
          s.init_uniform(rng());
          auto t = random_tensor(rng, {4, d}, false), v = random_tensor(rng, {4, d}, false);
          const auto x = fuse_block_term(t, v, p), y = fuse_kronecker_explicit(t, v, assemble_kronecker_map(p));
          for (std::size_t i = 0; i < x.numel(); ++i) worst = std::max(worst, std::abs(x[i] - y[i]));
          ++configs;
        }
  const double t = seconds_since(t0);
  return {configs >= 100 && worst < 1e-10 && t < 30,
          std::to_string(configs) + " configurations, max abs diff " + fmt("%.2e", worst) + ", " + fmt("%.2f s", t)};
}

// ---- 3 ------------------------------------------------------------------

Outcome parameter_count() {
  const auto dec = block_term_param_count(256, 256, 256, 52, 52, 52, 20);
  const auto full = full_tensor_param_count(256, 256, 256);
  ParamStore<float> s;
  make_block_term(s, "f", 256, 256, 256, 52, 52, 52, 20);
  const double ratio = static_cast<double>(full) / static_cast<double>(dec);
  return {dec < full && ratio > 4 && s.count() == dec,
          "decomposed " + std::to_string(dec) + " vs full " + std::to_string(full) + ", ratio " + fmt("%.3f", ratio)};
}

// ---- 4 ------------------------------------------------------------------

std::vector<TextRegion> random_boxes(Rng& rng, std::size_t n) {
  std::uniform_real_distribution<double> pos(0, 500), ext(2, 80);
  std::vector<TextRegion> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({pos(rng), pos(rng), ext(rng), ext(rng), "x", 0});
  return out;
}

Outcome attention_invariants() {
  Rng rng(4);
  std::uniform_int_distribution<std::size_t> nodes(1, 40);
  std::uniform_real_distribution<double> shift(-50, 50);
  double row_err = 0, diag = 0, shift_err = 0, perm_err = 0;
  for (int g = 0; g < 1000; ++g) {
    const std::size_t n = nodes(rng);
    ParamStore<double> s;
    auto p = make_graph(s, "g", 6, 5, 8, 2);
    s.init_uniform(rng());
    auto x = random_tensor(rng, {n, 6}, false);
    EdgeTrace trace;
    reason(x, random_boxes(rng, n), p, true, true, &trace);
    for (const auto& it : trace.iterations) {
      for (std::size_t i = 0; i < n; ++i) {
        double sum = 0;
        for (std::size_t j = 0; j < n; ++j) sum += it.alpha[i * n + j];
        if (n > 1) row_err = std::max(row_err, std::abs(sum - 1));
        diag = std::max(diag, std::abs(it.alpha[i * n + i]));
      }
      const double c = shift(rng);
      std::vector<double> moved = it.scores;
      for (auto& v : moved) v += c;
      const auto a = attention(Td({n, n}, it.scores)), b = attention(Td({n, n}, moved));
      for (std::size_t k = 0; k < n * n; ++k) shift_err = std::max(shift_err, std::abs(a[k] - b[k]));
    }
  }
  for (int g = 0; g < 200; ++g) {
    ParamStore<double> s;
    auto p = make_graph(s, "g", 6, 5, 8, 2);
    s.init_uniform(rng());
    auto x = random_tensor(rng, {5, 6}, false);
    auto boxes = random_boxes(rng, 5);
    std::vector<std::size_t> perm(5);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> px;
    std::vector<TextRegion> pb;
    for (std::size_t i : perm) {
      for (std::size_t k = 0; k < 6; ++k) px.push_back(x.at(i, k));
      pb.push_back(boxes[i]);
    }
    const auto a = reason(x, boxes, p, true), b = reason(Td({5, 6}, px), pb, p, true);
    for (std::size_t r = 0; r < 5; ++r)
      for (std::size_t k = 0; k < 6; ++k) perm_err = std::max(perm_err, std::abs(b.at(r, k) - a.at(perm[r], k)));
  }
  return {row_err < 1e-6 && diag == 0 && shift_err < 1e-9 && perm_err < 1e-9,
          "1000 graphs: row-sum err " + fmt("%.1e", row_err) + ", max diagonal " + fmt("%.1e", diag) + ", shift err " +
              fmt("%.1e", shift_err) + "; permutation err " + fmt("%.1e", perm_err)};
}

// ---- 5 ------------------------------------------------------------------

Outcome metric_oracle() {
  Rng rng(5);
  std::uniform_int_distribution<int> label(0, 24);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 80;
    std::vector<int> truth(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = label(rng);
      pred[i] = rng() % 2 ? truth[i] : label(rng);
    }
    std::array<std::array<std::size_t, 25>, 25> m{};
    for (std::size_t i = 0; i < n; ++i) ++m[truth[i]][pred[i]];
    const auto rep = f1_report(pred, truth);
    double sum = 0;
    std::size_t counted = 0;
    for (std::size_t c = 0; c < 25; ++c) {
      std::size_t row = 0, col = 0;
      for (std::size_t k = 0; k < 25; ++k) {
        row += m[c][k];
        col += m[k][c];
      }
      const double tp = static_cast<double>(m[c][c]);
      const double p = col ? tp / static_cast<double>(col) : 0.0, r = row ? tp / static_cast<double>(row) : 0.0;
      const double f1 = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
      if (rep.per[c].tp != m[c][c] || rep.per[c].fp != col - m[c][c] || rep.per[c].fn != row - m[c][c] || rep.per[c].f1 != f1)
        ++mismatches;
      if (CategorySet::is_value(static_cast<int>(c)) && row + col > 0) {
        sum += f1;
        ++counted;
      }
    }
    if (rep.macro_f1 != (counted ? sum / static_cast<double>(counted) : 0.0)) ++mismatches;
  }
  std::size_t iou_mismatch = 0;
  std::uniform_real_distribution<double> pos(0, 100), ext(1, 40);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<TextRegion> gt, det;
    for (std::size_t i = 0, n = 1 + rng() % 15; i < n; ++i) gt.push_back({pos(rng), pos(rng), ext(rng), ext(rng), "g", label(rng)});
    for (std::size_t i = 0, n = 1 + rng() % 15; i < n; ++i) det.push_back({pos(rng), pos(rng), ext(rng), ext(rng), "d", {}});
    // occasional exact copies exercise IOU = 1 and ties
    if (trial % 4 == 0) det.push_back(gt[0]);
    const auto got = transfer_labels_by_iou(det, gt);
    for (std::size_t d = 0; d < det.size(); ++d) {
      double best = 0;
      int want = CategorySet::kOthers;
      for (std::size_t g = 0; g < gt.size(); ++g) {
        const double ix = std::max(0.0, std::min(det[d].x + det[d].w, gt[g].x + gt[g].w) - std::max(det[d].x, gt[g].x));
        const double iy = std::max(0.0, std::min(det[d].y + det[d].h, gt[g].y + gt[g].h) - std::max(det[d].y, gt[g].y));
        const double inter = ix * iy, v = inter / (det[d].w * det[d].h + gt[g].w * gt[g].h - inter);
        if (v > best) {
          best = v;
          want = *gt[g].label;
        }
      }
      iou_mismatch += got[d] != want;
    }
  }
  return {mismatches == 0 && iou_mismatch == 0, "1000 labelings: " + std::to_string(mismatches) + " mismatches; 200 box sets: " +
                                                    std::to_string(iou_mismatch) + " label-transfer mismatches"};
}

// ---- 6 ------------------------------------------------------------------

Outcome overfit_smoke() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto doc = synth::generate_corpus(2, 1, 6).train.at(0);
  Model<float> m(ModelConfig::toy(), 6);
  Corpus one{resize_sample(doc, m.config().image_size)};
  TrainConfig tc;
  tc.batch_size = 1;
  tc.max_epochs = 200;
  tc.decay_epochs = {};
  tc.crop_prob = 0;
  tc.base_lr = 1e-3;
  AdamState<float> opt;
  train(m, one, tc, opt);
  const double loss = static_cast<double>(m.loss(m.forward(one[0]).logits, one[0]).item());
  const auto rep = evaluate(m, one);
  const double t = seconds_since(t0);
  return {loss < 0.05 && rep.macro_f1 == 1.0 && t < 60, std::to_string(one[0].regions.size()) + " regions, 200 steps: loss " +
                                                             fmt("%.4f", loss) + ", self macro-F1 " + fmt("%.3f", rep.macro_f1) +
                                                             ", " + fmt("%.1f s", t)};
}

// ---- 7, 8 ---------------------------------------------------------------

struct Benchmark {
  Corpus train, test;
};

const Benchmark& benchmark() {
  static const Benchmark b = [] {
    auto c = synth::generate_corpus(25, 10, 2024);
    const std::size_t size = ModelConfig::desk().image_size;
    Benchmark out;
    for (const auto& s : c.train) out.train.push_back(resize_sample(s, size));
    for (const auto& s : c.test) out.test.push_back(resize_sample(s, size));
    return out;
  }();
  return b;
}

inline constexpr std::size_t kDeskEpochs = 30;

TrainConfig desk_schedule(std::uint64_t seed) {
  TrainConfig tc;
  tc.max_epochs = kDeskEpochs;
  tc.decay_epochs = {20, 25};
  tc.seed = seed;
  return tc;
}

struct DeskRun {
  double macro_f1 = 0;
  double seconds = 0;
};

DeskRun desk_run(const std::string& ablation, std::uint64_t seed) {
  static std::map<std::pair<std::string, std::uint64_t>, DeskRun> cache;
  const auto key = std::make_pair(ablation, seed);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  const auto& b = benchmark();
  auto cfg = ModelConfig::desk();
  apply_ablation(cfg, ablation);
  const auto t0 = std::chrono::steady_clock::now();
  Model<float> m(cfg, seed);
  AdamState<float> opt;
  train(m, b.train, desk_schedule(seed), opt);
  DeskRun r{evaluate(m, b.test).macro_f1, 0};
  r.seconds = seconds_since(t0);
  std::printf("  [%s seed %llu] macro-F1 %.4f in %.0f s\n", ablation.c_str(), static_cast<unsigned long long>(seed), r.macro_f1,
              r.seconds);
  std::fflush(stdout);
  cache[key] = r;
  return r;
}

Outcome generalization() {
  const auto& b = benchmark();
  const auto split = verify_split_disjoint(b.train, b.test);
  const auto r = desk_run("none", 1);
  return {split.disjoint() && b.train.size() == 200 && b.test.size() == 50 && r.macro_f1 >= 0.90 && r.seconds < 900,
          std::to_string(split.train_templates) + "/" + std::to_string(split.test_templates) + " templates, unseen-template macro-F1 " +
              fmt("%.4f", r.macro_f1) + " after " + std::to_string(kDeskEpochs) + " epochs, " + fmt("%.0f s", r.seconds)};
}

Outcome ablation_ordering() {
  double full = 0, flat = 0, nospatial = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    full += desk_run("none", seed).macro_f1 / 3;
    flat += desk_run("no-graph", seed).macro_f1 / 3;
    nospatial += desk_run("no-spatial", seed).macro_f1 / 3;
  }
  return {full - flat >= 0.05 && full - nospatial >= 0.03, "mean over 3 seeds: full " + fmt("%.4f", full) + ", no-graph " +
                                                               fmt("%.4f", flat) + " (gap " + fmt("%.4f", full - flat) +
                                                               "), no-spatial " + fmt("%.4f", nospatial) + " (gap " +
                                                               fmt("%.4f", full - nospatial) + ")"};
}

// ---- 9 ------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism() {
  const auto c = synth::generate_corpus(4, 3, 9);
  auto cfg = ModelConfig::toy();
  cfg.image_size = 32;
  cfg.unet_depth = 2;
  Corpus train_set, test_set;
  for (const auto& s : c.train) train_set.push_back(resize_sample(s, cfg.image_size));
  for (const auto& s : c.test) test_set.push_back(resize_sample(s, cfg.image_size));
  std::vector<std::string> ckpts, reports;
  for (int run = 0; run < 2; ++run) {
    Model<float> m(cfg, 9);
    AdamState<float> opt;
    TrainConfig tc;
    tc.max_epochs = 4;
    tc.decay_epochs = {2};
    tc.seed = 9;
    train(m, train_set, tc, opt);
    const auto dir = fs::temp_directory_path() / ("sdmg_accept_det" + std::to_string(run));
    fs::remove_all(dir);
    save_checkpoint(dir, m, &opt);
    ckpts.push_back(slurp(dir / "manifest.json") + slurp(dir / "params.bin"));
    reports.push_back(to_json(evaluate(m, test_set)).dump());
    fs::remove_all(dir);
  }
  return {ckpts[0] == ckpts[1] && reports[0] == reports[1],
          std::string("checkpoints ") + (ckpts[0] == ckpts[1] ? "identical" : "differ") + " (" + std::to_string(ckpts[0].size()) +
              " bytes), reports " + (reports[0] == reports[1] ? "identical" : "differ")};
}

// ---- 10 -----------------------------------------------------------------

template <class E, class F>
bool raises(F&& f) {
  try {
    f();
  } catch (const E&) {
    return true;
  } catch (...) {
    return false;
  }
  return false;
}

Outcome round_trips() {
  std::vector<std::string> failures;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  };

  const auto corpus = synth::generate_corpus(5, 4, 10).train;
  std::ostringstream os;
  serialize_annotations(corpus, os);
  std::istringstream is(os.str());
  const auto back = parse_annotations(is);
  bool same = back.size() == corpus.size();
  for (std::size_t i = 0; same && i < back.size(); ++i) same = back[i].same_annotation(corpus[i]);
  std::ostringstream again;
  serialize_annotations(back, again);
  expect(same && again.str() == os.str(), "annotation round trip");

  const auto dir = fs::temp_directory_path() / "sdmg_accept_rt";
  fs::remove_all(dir);
  synth::write_corpus(corpus, dir);
  auto loaded = parse_annotations_file(dir / "annotations.jsonl");
  load_images(loaded, dir);
  bool pixels = loaded.size() == corpus.size();
  for (std::size_t i = 0; pixels && i < loaded.size(); ++i) pixels = loaded[i].image == corpus[i].image;
  expect(pixels, "PNG round trip");

  Model<float> m(ModelConfig::toy(), 10);
  AdamState<float> opt;
  TrainConfig tc;
  tc.max_epochs = 1;
  tc.decay_epochs = {};
  Corpus small;
  for (const auto& s : loaded) small.push_back(resize_sample(s, 8));
  train(m, small, tc, opt);
  const auto ck = dir / "ckpt";
  save_checkpoint(ck, m, &opt);
  AdamState<float> opt2;
  auto m2 = load_checkpoint<float>(ck, &opt2);
  bool exact = m2->params().size() == m.params().size() && opt2.m == opt.m && opt2.v == opt.v && opt2.step == opt.step;
  for (std::size_t k = 0; exact && k < m.params().size(); ++k)
    exact = m.params().entries()[k].tensor.to_vector() == m2->params().entries()[k].tensor.to_vector();
  expect(exact, "checkpoint round trip");

  std::istringstream bad_json(
      "{\"file_name\":\"a.png\",\"height\":10,\"width\":10,\"annotations\":[{\"box\":[1,1,5,1,5,5,1,5],\"text\":\"x\"}]}\n{oops\n");
  std::size_t bad_line = 0;
  try {
    parse_annotations(bad_json);
  } catch (const ParseError& e) {
    bad_line = e.line();
  } catch (const std::exception&) {
  }
  expect(bad_line == 2, "malformed JSON line -> ParseError on line 2");
  std::istringstream bad_box(
      "{\"file_name\":\"a.png\",\"height\":10,\"width\":10,\"annotations\":[{\"box\":[1,1,1,1,1,1,1,1],\"text\":\"x\",\"label\":0}]}\n");
  expect(raises<ValidationError>([&] { parse_annotations(bad_box); }), "zero-area box -> ValidationError");
  std::istringstream bad_label(
      "{\"file_name\":\"a.png\",\"height\":10,\"width\":10,\"annotations\":[{\"box\":[1,1,5,1,5,5,1,5],\"text\":\"x\",\"label\":40}]}\n");
  expect(raises<ValidationError>([&] { parse_annotations(bad_label); }), "label out of range -> ValidationError");

  {
    std::ofstream(dir / "broken.png", std::ios::binary) << "\x89PNG\r\n\x1a\n garbage";
    expect(raises<IoError>([&] { read_image(dir / "broken.png"); }), "corrupt PNG -> IoError");
  }

  const std::string manifest = slurp(ck / "manifest.json"), blob = slurp(ck / "params.bin");
  auto write = [&](const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; };
  write(ck / "params.bin", blob.substr(0, blob.size() / 2));
  expect(raises<CheckpointTruncatedError>([&] { load_checkpoint<float>(ck); }), "truncated blob -> CheckpointTruncatedError");
  write(ck / "params.bin", blob);
  auto j = nlohmann::json::parse(manifest);
  j["format_version"] = 99;
  write(ck / "manifest.json", j.dump());
  expect(raises<CheckpointVersionError>([&] { load_checkpoint<float>(ck); }), "version -> CheckpointVersionError");
  j = nlohmann::json::parse(manifest);
  j["params"][1]["shape"] = {3, 3};
  write(ck / "manifest.json", j.dump());
  expect(raises<CheckpointShapeError>([&] { load_checkpoint<float>(ck); }), "tampered shape -> CheckpointShapeError");
  write(ck / "manifest.json", "{\"format_version\": 1, ");
  expect(raises<CheckpointError>([&] { load_checkpoint<float>(ck); }), "malformed manifest -> CheckpointError");
  fs::remove_all(dir);

  std::string detail = failures.empty() ? "annotations, PNG and checkpoint exact; 8 corruption cases raise their error kinds"
                                        : "failed:";
  for (const auto& f : failures) detail += " [" + f + "]";
  return {failures.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient suite", gradient_suite},
      {"block-term fusion equals explicit Kronecker map", fusion_equivalence},
      {"decomposed parameter count", parameter_count},
      {"attention invariants", attention_invariants},
      {"metric oracle", metric_oracle},
      {"single-document overfit", overfit_smoke},
      {"unseen-template generalization", generalization},
      {"ablation ordering", ablation_ordering},
      {"determinism", determinism},
      {"format round trips", round_trips},
  };
  std::set<std::size_t> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(static_cast<std::size_t>(std::stoul(argv[i])));
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    if (!wanted.empty() && !wanted.count(k + 1)) continue;
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("CRITERION %zu %s %s: %s\n", k + 1, o.pass ? "PASS" : "FAIL", criteria[k].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
