#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "sdmg/dataset.hpp"
#include "sdmg/evaluation.hpp"
#include "sdmg/model.hpp"
#include "sdmg/params.hpp"

namespace sdmg {

template <class T>
struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<T>> m, v;
};

/// Bias-corrected Adam over every parameter. Missing gradients count as
/// zero; a non-finite gradient aborts before any parameter changes.
template <class T>
void adam_step(ParamStore<T>& store, AdamState<T>& st, double lr) {
  const auto& entries = store.entries();
  for (const auto& e : entries) {
    if (!e.tensor.has_grad()) continue;
    for (T g : e.tensor.grad())
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + e.name);
  }
  if (st.m.size() != entries.size()) {
    st.m.clear();
    st.v.clear();
    for (const auto& e : entries) {
      st.m.emplace_back(e.tensor.numel(), T(0));
      st.v.emplace_back(e.tensor.numel(), T(0));
    }
  }
  ++st.step;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t k = 0; k < entries.size(); ++k) {
    auto t = entries[k].tensor;
    if (!t.has_grad()) continue;
    auto g = t.grad();
    auto w = t.mutable_data();
    auto& m = st.m[k];
    auto& v = st.v[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = static_cast<T>(st.beta1 * m[i] + (1 - st.beta1) * g[i]);
      v[i] = static_cast<T>(st.beta2 * v[i] + (1 - st.beta2) * static_cast<double>(g[i]) * g[i]);
      const double mh = m[i] / c1, vh = v[i] / c2;
      w[i] = static_cast<T>(w[i] - lr * mh / (std::sqrt(vh) + st.eps));
    }
  }
}

struct TrainConfig {
  std::size_t batch_size = 4;
  std::size_t max_epochs = 60;
  double base_lr = 1e-3;
  std::vector<std::size_t> decay_epochs = {40, 50};
  double decay_factor = 0.1;
  double crop_prob = 0.5;
  std::uint64_t seed = 0;
  std::size_t val_every = 0;  // epochs between validation passes, 0 = never

  void validate() const {
    if (batch_size == 0) throw ValidationError("batch_size must be positive");
    if (max_epochs == 0) throw ValidationError("max_epochs must be positive");
    if (!(base_lr > 0)) throw ValidationError("base_lr must be positive");
    if (crop_prob < 0 || crop_prob > 1) throw ValidationError("crop_prob must lie in [0,1]");
    for (std::size_t i = 0; i < decay_epochs.size(); ++i) {
      if (decay_epochs[i] >= max_epochs) throw ValidationError("decay epochs must be below max_epochs");
      if (i && decay_epochs[i] <= decay_epochs[i - 1]) throw ValidationError("decay epochs must be strictly increasing");
    }
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size}, {"max_epochs", c.max_epochs},   {"base_lr", c.base_lr},
          {"decay_epochs", c.decay_epochs}, {"decay_factor", c.decay_factor}, {"crop_prob", c.crop_prob},
          {"seed", c.seed},               {"val_every", c.val_every}};
}

inline bool set_field(TrainConfig& c, const std::string& key, const std::string& v) {
  if (key == "batch_size") c.batch_size = detail::parse_size(key, v);
  else if (key == "max_epochs") c.max_epochs = detail::parse_size(key, v);
  else if (key == "base_lr") c.base_lr = detail::parse_double(key, v);
  else if (key == "decay_factor") c.decay_factor = detail::parse_double(key, v);
  else if (key == "crop_prob") c.crop_prob = detail::parse_double(key, v);
  else if (key == "seed") c.seed = detail::parse_size(key, v);
  else if (key == "val_every") c.val_every = detail::parse_size(key, v);
  else if (key == "decay_epochs") {
    c.decay_epochs.clear();
    std::string item;
    for (std::size_t i = 0; i <= v.size(); ++i) {
      if (i == v.size() || v[i] == ',') {
        if (!item.empty()) c.decay_epochs.push_back(detail::parse_size(key, item));
        item.clear();
      } else if (v[i] != ' ') {
        item += v[i];
      }
    }
  } else {
    return false;
  }
  return true;
}

/// Piecewise-constant schedule: base_lr times decay_factor per passed decay epoch.
inline double lr_at(std::size_t epoch, const TrainConfig& c) {
  double lr = c.base_lr;
  for (std::size_t d : c.decay_epochs)
    if (epoch >= d) lr *= c.decay_factor;
  return lr;
}

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0;
  double mean_loss = 0;
  std::optional<double> val_macro_f1;
  double seconds = 0;
};

inline nlohmann::json to_json(const EpochLog& e) {
  nlohmann::json j = {{"epoch", e.epoch}, {"lr", e.lr}, {"loss", e.mean_loss}, {"seconds", e.seconds}};
  j["val_macro_f1"] = e.val_macro_f1 ? nlohmann::json(*e.val_macro_f1) : nlohmann::json(nullptr);
  return j;
}

/// Checks that every sample is usable for training before any step is taken.
template <class T>
void check_training_corpus(const Corpus& corpus, const Model<T>& model) {
  if (corpus.empty()) throw ValidationError("training corpus is empty");
  for (const auto& s : corpus) {
    if (s.regions.empty()) throw ValidationError(s.source_id + ": document has no regions");
    for (const auto& r : s.regions)
      if (!r.label) throw ValidationError(s.source_id + ": region '" + r.text + "' has no label");
    if (model.config().use_visual && s.image.empty()) throw ValidationError(s.source_id + ": image not loaded");
  }
}

/// Predictions and ground truth of every box in `corpus`, in corpus order.
template <class T>
std::pair<std::vector<int>, std::vector<int>> predict_corpus(const Model<T>& model, const Corpus& corpus) {
  std::vector<int> pred, truth;
  for (const auto& s : corpus) {
    auto p = model.predict(s);
    auto y = s.labels();
    pred.insert(pred.end(), p.begin(), p.end());
    truth.insert(truth.end(), y.begin(), y.end());
  }
  return {pred, truth};
}

template <class T>
CategoryReport evaluate(const Model<T>& model, const Corpus& corpus) {
  auto [pred, truth] = predict_corpus(model, corpus);
  return f1_report(pred, truth);
}

/// Runs TrainConfig::max_epochs epochs of shuffled mini-batches. Each
/// sample contributes loss / batch_size, so a step follows the gradient of
/// the mean batch loss. `on_epoch` sees every log entry as it is produced.
template <class T>
std::vector<EpochLog> train(Model<T>& model, const Corpus& corpus, const TrainConfig& cfg, AdamState<T>& opt,
                            const Corpus* val = nullptr, const std::function<void(const EpochLog&)>& on_epoch = {}) {
  cfg.validate();
  check_training_corpus(corpus, model);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<EpochLog> logs;
  auto& store = model.params();
  store.zero_grad();
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = lr_at(epoch, cfg);
    double total = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + cfg.batch_size);
      const T inv = T(1) / static_cast<T>(b1 - b0);
      for (std::size_t k = b0; k < b1; ++k) {
        const DocumentSample& src = corpus[order[k]];
        const DocumentSample sample = cfg.crop_prob > 0 ? random_crop(src, cfg.crop_prob, rng) : src;
        auto out = model.forward(sample);
        auto loss = model.loss(out.logits, sample);
        total += static_cast<double>(loss.item());
        backward(scale(loss, inv));
      }
      adam_step(store, opt, lr);
      store.zero_grad();
    }
    EpochLog log;
    log.epoch = epoch;
    log.lr = lr;
    log.mean_loss = total / static_cast<double>(corpus.size());
    if (val && !val->empty() && cfg.val_every && ((epoch + 1) % cfg.val_every == 0 || epoch + 1 == cfg.max_epochs))
      log.val_macro_f1 = evaluate(model, *val).macro_f1;
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    logs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return logs;
}

}  // namespace sdmg
