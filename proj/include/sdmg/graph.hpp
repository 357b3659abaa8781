#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "sdmg/dataset.hpp"
#include "sdmg/ops.hpp"
#include "sdmg/params.hpp"

namespace sdmg {

struct SpatialRelation {
  double dx = 0, dy = 0;
  std::array<double, 5> r{};  // [dx/d, dy/d, w_i/h_i, h_j/h_i, w_j/h_i]
};

inline SpatialRelation spatial_relation(const TextRegion& ri, const TextRegion& rj, double d = 10.0) {
  if (!(ri.h > 0)) throw ValidationError("spatial_relation: box height must be positive, got " + std::to_string(ri.h));
  if (!(d > 0)) throw ValidationError("spatial_relation: normalization constant must be positive");
  SpatialRelation s;
  s.dx = rj.x - ri.x;
  s.dy = rj.y - ri.y;
  s.r = {s.dx / d, s.dy / d, ri.w / ri.h, rj.h / ri.h, rj.w / ri.h};
  return s;
}

/// All pairwise relation vectors, row i·n + j holding r_ij. [n·n × 5]
template <class T>
Tensor<T> relation_matrix(const std::vector<TextRegion>& regions, double d = 10.0) {
  const std::size_t n = regions.size();
  if (n == 0) throw ValidationError("relation_matrix: no regions");
  std::vector<T> out(n * n * 5);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const auto rel = spatial_relation(regions[i], regions[j], d);
      for (std::size_t k = 0; k < 5; ++k) out[(i * n + j) * 5 + k] = static_cast<T>(rel.r[k]);
    }
  return Tensor<T>({n * n, 5}, std::move(out));
}

template <class T>
struct GraphParams {
  Tensor<T> embed;             // E [D_e × 5]
  Tensor<T> score_w1, score_b1;  // M layer 1 [H × (2·D_n + D_e)], input order n_i ∥ e′_ij ∥ n_j
  Tensor<T> score_w2, score_b2;  // M layer 2 [1 × H]
  std::vector<Tensor<T>> update_w, update_b;  // W^l [D_n × (2·D_n + D_e)]
  std::size_t node_dim = 0, edge_dim = 0;
  double norm = 10.0;

  std::size_t iterations() const { return update_w.size(); }
};

template <class T>
GraphParams<T> make_graph(ParamStore<T>& store, const std::string& prefix, std::size_t node_dim, std::size_t edge_dim,
                          std::size_t score_hidden, std::size_t iterations, double norm = 10.0, bool use_bias = true) {
  GraphParams<T> p;
  const std::size_t in = 2 * node_dim + edge_dim;
  p.embed = store.add(prefix + ".embed", {edge_dim, 5}, 5);
  p.score_w1 = store.add(prefix + ".score.0.w", {score_hidden, in}, in);
  if (use_bias) p.score_b1 = store.add(prefix + ".score.0.b", {score_hidden}, in);
  p.score_w2 = store.add(prefix + ".score.1.w", {1, score_hidden}, score_hidden);
  if (use_bias) p.score_b2 = store.add(prefix + ".score.1.b", {1}, score_hidden);
  for (std::size_t l = 0; l < iterations; ++l) {
    const std::string n = prefix + ".update" + std::to_string(l);
    p.update_w.push_back(store.add(n + ".w", {node_dim, in}, in));
    p.update_b.push_back(use_bias ? store.add(n + ".b", {node_dim}, in) : Tensor<T>());
  }
  p.node_dim = node_dim;
  p.edge_dim = edge_dim;
  p.norm = norm;
  return p;
}

/// e′ = N_l2(E·r) per pair, [n·n × D_e]; all zeros when the spatial cue is off.
template <class T>
Tensor<T> edge_embed(const Tensor<T>& relations, const Tensor<T>& embed, bool use_spatial = true) {
  if (!use_spatial) return Tensor<T>({relations.extent(0), embed.extent(0)});
  return l2_normalize(linear(relations, embed));
}

/// Raw scores e_ij = M(n_i ∥ e′_ij ∥ n_j), [n×n]. The first layer of M is
/// applied blockwise so the n² concatenations are never formed.
template <class T>
Tensor<T> edge_scores(const Tensor<T>& nodes, const Tensor<T>& eprime, const GraphParams<T>& p) {
  const std::size_t n = nodes.extent(0), D = p.node_dim, E = p.edge_dim;
  detail::check(nodes.rank() == 2 && nodes.extent(1) == D && eprime.rank() == 2 && eprime.extent(0) == n * n &&
                    eprime.extent(1) == E,
                "edge_scores: nodes " + shape_str(nodes.shape()) + " / edges " + shape_str(eprime.shape()) +
                    " incompatible with node size " + std::to_string(D) + ", edge size " + std::to_string(E));
  auto a = linear(nodes, slice_cols(p.score_w1, 0, D));
  auto c = linear(nodes, slice_cols(p.score_w1, D + E, 2 * D + E));
  auto be = linear(eprime, slice_cols(p.score_w1, D, D + E), p.score_b1);
  auto hidden = relu(add(pair_sum(a, c), be));
  return reshape(linear(hidden, p.score_w2, p.score_b2), {n, n});
}

/// α = row softmax over j ≠ i. A one-node graph gives an all-zero row.
template <class T>
Tensor<T> attention(const Tensor<T>& scores) {
  detail::require_rank(scores, 2, "attention");
  const std::size_t n = scores.extent(0);
  detail::check(scores.extent(1) == n, "attention: scores must be square, got " + shape_str(scores.shape()));
  std::vector<std::uint8_t> mask(n * n, 0);
  for (std::size_t i = 0; i < n; ++i) mask[i * n + i] = 1;
  return softmax_rows(scores, mask, true);
}

struct EdgeIteration {
  std::vector<double> alpha;   // n×n row-major
  std::vector<double> scores;  // n×n row-major
};

struct EdgeTrace {
  std::size_t nodes = 0;
  std::vector<EdgeIteration> iterations;
};

/// One refinement: n ← n + ReLU(W^l · Σ_j α_ij (n_i ∥ e′_ij ∥ n_j)).
template <class T>
Tensor<T> reason_step(const Tensor<T>& nodes, const Tensor<T>& eprime, const GraphParams<T>& p, std::size_t l,
                      EdgeTrace* trace = nullptr) {
  const std::size_t n = nodes.extent(0);
  auto scores = edge_scores(nodes, eprime, p);
  auto alpha = attention(scores);
  if (trace) {
    trace->nodes = n;
    trace->iterations.push_back({std::vector<double>(alpha.data().begin(), alpha.data().end()),
                                 std::vector<double>(scores.data().begin(), scores.data().end())});
  }
  // Σ_j α_ij n_i is n_i itself whenever node i has neighbours.
  auto self = n > 1 ? nodes : Tensor<T>(nodes.shape());
  auto message = concat_cols<T>({self, pair_weighted_sum(alpha, eprime), matmul(alpha, nodes)});
  return add(nodes, relu(linear(message, p.update_w.at(l), p.update_b.at(l))));
}

/// Applies every iteration of `p` (none when `enabled` is false).
template <class T>
Tensor<T> reason(const Tensor<T>& nodes, const std::vector<TextRegion>& regions, const GraphParams<T>& p, bool use_spatial,
                 bool enabled = true, EdgeTrace* trace = nullptr) {
  if (trace) *trace = EdgeTrace{nodes.extent(0), {}};
  if (!enabled || p.iterations() == 0) return nodes;
  detail::check(nodes.extent(0) == regions.size(), "reason: " + std::to_string(regions.size()) + " regions but node features " +
                                                       shape_str(nodes.shape()));
  auto eprime = edge_embed(relation_matrix<T>(regions, p.norm), p.embed, use_spatial);
  Tensor<T> h = nodes;
  for (std::size_t l = 0; l < p.iterations(); ++l) h = reason_step(h, eprime, p, l, trace);
  return h;
}

/// {source_id, boxes, iterations:[{alpha, scores}]}; with `min_weight` > 0
/// each iteration also lists the edges whose weight reaches it.
inline nlohmann::json edge_trace_json(const EdgeTrace& trace, const DocumentSample& sample, double min_weight = 0.0) {
  nlohmann::json boxes = nlohmann::json::array();
  for (const auto& r : sample.regions) boxes.push_back({{"x", r.x}, {"y", r.y}, {"w", r.w}, {"h", r.h}, {"text", r.text}});
  nlohmann::json its = nlohmann::json::array();
  const std::size_t n = trace.nodes;
  for (const auto& it : trace.iterations) {
    nlohmann::json j;
    j["alpha"] = it.alpha;
    j["scores"] = it.scores;
    if (min_weight > 0) {
      nlohmann::json edges = nlohmann::json::array();
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b)
          if (a != b && it.alpha[a * n + b] >= min_weight) edges.push_back({{"from", a}, {"to", b}, {"weight", it.alpha[a * n + b]}});
      j["edges"] = std::move(edges);
    }
    its.push_back(std::move(j));
  }
  return {{"source_id", sample.source_id}, {"nodes", n}, {"boxes", std::move(boxes)}, {"iterations", std::move(its)}};
}

}  // namespace sdmg
