#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "sdmg/categories.hpp"
#include "sdmg/dataset.hpp"
#include "sdmg/fusion.hpp"
#include "sdmg/graph.hpp"
#include "sdmg/ops.hpp"
#include "sdmg/params.hpp"
#include "sdmg/text_encoder.hpp"
#include "sdmg/visual_encoder.hpp"

namespace sdmg {

struct ModelConfig {
  std::size_t image_size = 512;
  std::size_t image_channels = 3;
  std::size_t char_embed = 32;  // D_s
  std::size_t text_dim = 256;   // D_t
  TextReduce text_reduce = TextReduce::kFinalState;
  std::size_t unet_base = 16;
  std::size_t unet_depth = 3;
  std::size_t unet_out = 64;
  std::size_t roi_grid = 3;
  RoiMode roi_mode = RoiMode::kMax;
  std::size_t visual_dim = 256;  // D_v
  FusionKind fusion = FusionKind::kBlockTerm;
  std::size_t block_dim = 52;  // D_t^b = D_v^b = D_n^b
  std::size_t blocks = 20;     // R
  std::size_t mlp_hidden = 512;
  std::size_t node_dim = 256;  // D_n
  std::size_t edge_dim = 256;  // D_e
  std::size_t score_hidden = 256;
  std::size_t iterations = 2;  // L
  double relation_norm = 10.0;
  bool use_textual = true;
  bool use_visual = true;
  bool use_spatial = true;
  bool use_graph = true;
  bool train_key_categories = true;
  bool use_bias = true;

  static ModelConfig full() { return {}; }

  /// Single-core scale used by the synthetic end-to-end checks.
  static ModelConfig desk() {
    ModelConfig c;
    c.image_size = 128;
    c.image_channels = 1;
    c.text_dim = 64;
    c.unet_base = 4;
    c.unet_depth = 3;
    c.unet_out = 16;
    c.visual_dim = 64;
    c.block_dim = 16;
    c.blocks = 8;
    c.mlp_hidden = 64;
    c.node_dim = 64;
    c.edge_dim = 64;
    c.score_hidden = 64;
    return c;
  }

  static ModelConfig toy() {
    ModelConfig c;
    c.image_size = 8;
    c.image_channels = 1;
    c.char_embed = 4;
    c.text_dim = 8;
    c.unet_base = 2;
    c.unet_depth = 1;
    c.unet_out = 2;
    c.roi_grid = 2;
    c.visual_dim = 8;
    c.block_dim = 2;
    c.blocks = 2;
    c.mlp_hidden = 8;
    c.node_dim = 8;
    c.edge_dim = 8;
    c.score_hidden = 8;
    return c;
  }

  void validate() const {
    if (!use_textual && !use_visual) throw ValidationError("model needs textual or visual features (both disabled)");
    if (text_dim % 2 != 0) throw ValidationError("text_dim must be even");
    if (image_channels != 1 && image_channels != 3) throw ValidationError("image_channels must be 1 or 3");
    if (image_size % (std::size_t{1} << unet_depth) != 0)
      throw ValidationError("image_size " + std::to_string(image_size) + " not divisible by 2^unet_depth");
    for (std::size_t v : {image_size, char_embed, text_dim, unet_base, unet_out, roi_grid, visual_dim, block_dim, blocks,
                          mlp_hidden, node_dim, edge_dim, score_hidden})
      if (v == 0) throw ValidationError("model dimensions must be positive");
    if (!(relation_norm > 0)) throw ValidationError("relation_norm must be positive");
  }

  std::size_t effective_iterations() const { return use_graph ? iterations : 0; }
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"image_size", c.image_size},
          {"image_channels", c.image_channels},
          {"char_embed", c.char_embed},
          {"text_dim", c.text_dim},
          {"text_reduce", c.text_reduce == TextReduce::kMean ? "mean" : "final"},
          {"unet_base", c.unet_base},
          {"unet_depth", c.unet_depth},
          {"unet_out", c.unet_out},
          {"roi_grid", c.roi_grid},
          {"roi_mode", c.roi_mode == RoiMode::kAverage ? "average" : "max"},
          {"visual_dim", c.visual_dim},
          {"fusion", fusion_name(c.fusion)},
          {"block_dim", c.block_dim},
          {"blocks", c.blocks},
          {"mlp_hidden", c.mlp_hidden},
          {"node_dim", c.node_dim},
          {"edge_dim", c.edge_dim},
          {"score_hidden", c.score_hidden},
          {"iterations", c.iterations},
          {"relation_norm", c.relation_norm},
          {"use_textual", c.use_textual},
          {"use_visual", c.use_visual},
          {"use_spatial", c.use_spatial},
          {"use_graph", c.use_graph},
          {"train_key_categories", c.train_key_categories},
          {"use_bias", c.use_bias}};
}

namespace detail {

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ValidationError(key + ": expected a boolean, got '" + v + "'");
}

inline std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long x = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    x = std::stoull(v, &pos);
  } catch (const std::exception&) {
    throw ValidationError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  if (pos != v.size()) throw ValidationError(key + ": expected a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(x);
}

inline double parse_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double x = 0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw ValidationError(key + ": expected a number, got '" + v + "'");
  }
  if (pos != v.size()) throw ValidationError(key + ": expected a number, got '" + v + "'");
  return x;
}

}  // namespace detail

/// Sets one field by name from its text form. Returns false for unknown keys.
inline bool set_field(ModelConfig& c, const std::string& key, const std::string& v) {
  using detail::parse_bool, detail::parse_size;
  auto size_field = [&](std::size_t& f) { f = parse_size(key, v); };
  if (key == "image_size") size_field(c.image_size);
  else if (key == "image_channels") size_field(c.image_channels);
  else if (key == "char_embed") size_field(c.char_embed);
  else if (key == "text_dim") size_field(c.text_dim);
  else if (key == "text_reduce") {
    if (v != "final" && v != "mean") throw ValidationError("text_reduce: expected final or mean, got '" + v + "'");
    c.text_reduce = v == "mean" ? TextReduce::kMean : TextReduce::kFinalState;
  } else if (key == "unet_base") size_field(c.unet_base);
  else if (key == "unet_depth") size_field(c.unet_depth);
  else if (key == "unet_out") size_field(c.unet_out);
  else if (key == "roi_grid") size_field(c.roi_grid);
  else if (key == "roi_mode") {
    if (v != "max" && v != "average") throw ValidationError("roi_mode: expected max or average, got '" + v + "'");
    c.roi_mode = v == "average" ? RoiMode::kAverage : RoiMode::kMax;
  } else if (key == "visual_dim") size_field(c.visual_dim);
  else if (key == "fusion") c.fusion = parse_fusion(v);
  else if (key == "block_dim") size_field(c.block_dim);
  else if (key == "blocks") size_field(c.blocks);
  else if (key == "mlp_hidden") size_field(c.mlp_hidden);
  else if (key == "node_dim") size_field(c.node_dim);
  else if (key == "edge_dim") size_field(c.edge_dim);
  else if (key == "score_hidden") size_field(c.score_hidden);
  else if (key == "iterations") size_field(c.iterations);
  else if (key == "relation_norm") c.relation_norm = detail::parse_double(key, v);
  else if (key == "use_textual") c.use_textual = parse_bool(key, v);
  else if (key == "use_visual") c.use_visual = parse_bool(key, v);
  else if (key == "use_spatial") c.use_spatial = parse_bool(key, v);
  else if (key == "use_graph") c.use_graph = parse_bool(key, v);
  else if (key == "train_key_categories") c.train_key_categories = parse_bool(key, v);
  else if (key == "use_bias") c.use_bias = parse_bool(key, v);
  else return false;
  return true;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  if (!j.is_object()) throw ValidationError("model_config must be a JSON object");
  for (const auto& [key, val] : j.items()) {
    const std::string text = val.is_string() ? val.get<std::string>() : val.dump();
    if (!set_field(c, key, text)) throw ValidationError("unknown model_config field '" + key + "'");
  }
  return c;
}

/// Names the ablation switches accepted on the command line.
inline void apply_ablation(ModelConfig& c, const std::string& name) {
  if (name == "none" || name.empty()) return;
  if (name == "no-spatial") c.use_spatial = false;
  else if (name == "no-graph") c.use_graph = false;
  else if (name == "no-text") c.use_textual = false;
  else if (name == "no-visual") c.use_visual = false;
  else if (name == "no-key") c.train_key_categories = false;
  else throw ValidationError("unknown ablation '" + name + "' (no-spatial, no-graph, no-text, no-visual, no-key)");
}

/// Full pipeline: resize → text/visual encoders → fusion → graph → classifier.
template <class T>
class Model {
 public:
  struct Output {
    Tensor<T> logits;  // [n × 25]
    EdgeTrace trace;
  };

  explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const auto& c = cfg_;
    const bool b = c.use_bias;
    if (c.use_textual) text_ = make_text_encoder(store_, "text", c.char_embed, c.text_dim, b, c.text_reduce);
    if (c.use_visual) {
      unet_ = make_unet(store_, "unet", c.image_channels, c.unet_base, c.unet_depth, c.unet_out, b);
      reduce_ = make_visual_reduce(store_, "roi_reduce", c.unet_out, c.roi_grid, c.visual_dim, b, c.roi_mode);
    }
    if (c.use_textual && c.use_visual) {
      switch (c.fusion) {
        case FusionKind::kBlockTerm:
          block_ = make_block_term(store_, "fusion", c.text_dim, c.visual_dim, c.node_dim, c.block_dim, c.block_dim, c.block_dim,
                                   c.blocks, b);
          break;
        case FusionKind::kLinearSum:
          linear_sum_ = make_linear_sum(store_, "fusion", c.text_dim, c.visual_dim, c.mlp_hidden, c.node_dim, b);
          break;
        case FusionKind::kConcatMlp:
          concat_ = make_concat_mlp(store_, "fusion", c.text_dim, c.visual_dim, c.mlp_hidden, c.node_dim, b);
          break;
      }
    } else {
      const std::size_t in = c.use_textual ? c.text_dim : c.visual_dim;
      bypass_w_ = store_.add("bypass.w", {c.node_dim, in}, in);
      if (b) bypass_b_ = store_.add("bypass.b", {c.node_dim}, in);
    }
    graph_ = make_graph(store_, "graph", c.node_dim, c.edge_dim, c.score_hidden, c.effective_iterations(), c.relation_norm, b);
    cls_w_ = store_.add("classifier.w", {CategorySet::kCount, c.node_dim}, c.node_dim);
    cls_b_ = store_.add("classifier.b", {CategorySet::kCount}, c.node_dim);
  }

  Model(ModelConfig cfg, std::uint64_t seed) : Model(std::move(cfg)) { store_.init_uniform(seed); }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }

  /// Brings a sample to the model's square input resolution and channel count.
  DocumentSample prepare(const DocumentSample& s) const {
    if (s.regions.empty()) throw ValidationError(s.source_id + ": document has no regions");
    DocumentSample out = (s.width == cfg_.image_size && s.height == cfg_.image_size) ? s : resize_sample(s, cfg_.image_size);
    if (cfg_.use_visual) {
      if (out.image.empty()) throw ValidationError(s.source_id + ": image not loaded");
      out.image = convert_channels(out.image, cfg_.image_channels);
    }
    return out;
  }

  /// Node features before graph reasoning, [n × D_n]. `s` must be prepared.
  /// Pixels enter the U-Net centred on zero.
  Tensor<T> node_features(const DocumentSample& s) const {
    Tensor<T> t, v;
    if (cfg_.use_textual) {
      std::vector<std::string> texts;
      for (const auto& r : s.regions) texts.push_back(r.text);
      t = encode_texts(texts, text_);
    }
    if (cfg_.use_visual) {
      const auto& im = s.image;
      std::vector<T> px(im.data.size());
      for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<T>(im.data[i]) - T(0.5);
      Tensor<T> img({im.channels, im.height, im.width}, std::move(px));
      v = encode_regions_visual(unet_forward(img, unet_), s.regions, reduce_);
    }
    if (t.defined() && v.defined()) {
      switch (cfg_.fusion) {
        case FusionKind::kBlockTerm: return fuse_block_term(t, v, block_);
        case FusionKind::kLinearSum: return fuse_linear_sum(t, v, linear_sum_);
        case FusionKind::kConcatMlp: return fuse_concat_mlp(t, v, concat_);
      }
    }
    return linear(t.defined() ? t : v, bypass_w_, bypass_b_);
  }

  Output forward(const DocumentSample& sample, bool keep_trace = false) const {
    const DocumentSample s = prepare(sample);
    Output out;
    auto nodes = node_features(s);
    nodes = reason(nodes, s.regions, graph_, cfg_.use_spatial, cfg_.use_graph, keep_trace ? &out.trace : nullptr);
    out.logits = linear(nodes, cls_w_, cls_b_);
    return out;
  }

  /// Labels as trained: keys fold into Others when key classification is off.
  std::vector<int> training_labels(const DocumentSample& s) const {
    auto y = s.labels();
    if (!cfg_.train_key_categories)
      for (auto& v : y)
        if (CategorySet::is_key(v)) v = CategorySet::kOthers;
    return y;
  }

  /// Mean cross-entropy over regions.
  Tensor<T> loss(const Tensor<T>& logits, const DocumentSample& s) const { return cross_entropy(logits, training_labels(s)); }

  std::vector<int> predict(const DocumentSample& s) const { return argmax_rows(forward(s).logits); }

  static std::vector<int> argmax_rows(const Tensor<T>& logits) {
    const std::size_t n = logits.extent(0), k = logits.extent(1);
    std::vector<int> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < k; ++j)
        if (logits.at(i, j) > logits.at(i, best)) best = j;
      out[i] = static_cast<int>(best);
    }
    return out;
  }

  const GraphParams<T>& graph() const { return graph_; }

 private:
  ModelConfig cfg_;
  ParamStore<T> store_;
  TextEncoderParams<T> text_;
  UNetParams<T> unet_;
  VisualReduceParams<T> reduce_;
  BlockTermParams<T> block_;
  LinearSumParams<T> linear_sum_;
  MlpParams<T> concat_;
  Tensor<T> bypass_w_, bypass_b_;
  GraphParams<T> graph_;
  Tensor<T> cls_w_, cls_b_;
};

}  // namespace sdmg
