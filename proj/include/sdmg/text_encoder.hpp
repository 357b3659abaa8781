#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "sdmg/char_dictionary.hpp"
#include "sdmg/ops.hpp"
#include "sdmg/params.hpp"

namespace sdmg {

enum class TextReduce { kFinalState, kMean };

template <class T>
struct TextEncoderParams {
  Tensor<T> w_s;  // [D_s × D_c], column c is the projection of one-hot char c
  LstmParams<T> fwd, bwd;
  TextReduce reduce = TextReduce::kFinalState;

  std::size_t dim() const { return 2 * fwd.hidden(); }
};

template <class T>
TextEncoderParams<T> make_text_encoder(ParamStore<T>& store, const std::string& prefix, std::size_t embed_dim, std::size_t out_dim,
                                       bool use_bias = true, TextReduce reduce = TextReduce::kFinalState) {
  if (out_dim % 2 != 0) throw ValidationError("text feature size must be even, got " + std::to_string(out_dim));
  const std::size_t H = out_dim / 2, V = CharDictionary::kSize;
  TextEncoderParams<T> p;
  p.w_s = store.add(prefix + ".w_s", {embed_dim, V}, V);
  for (auto [dir, lp] : {std::pair{"fwd", &p.fwd}, std::pair{"bwd", &p.bwd}}) {
    const std::string base = prefix + "." + dir;
    lp->w_ih = store.add(base + ".w_ih", {4 * H, embed_dim}, H);
    lp->w_hh = store.add(base + ".w_hh", {4 * H, H}, H);
    if (use_bias) lp->bias = store.add(base + ".bias", {4 * H}, H);
  }
  p.reduce = reduce;
  return p;
}

namespace detail {

// Runs one direction over a batch of index sequences of unequal length.
// Rows whose sequence has ended keep their state.
template <class T>
Tensor<T> run_direction(const std::vector<std::vector<std::size_t>>& seqs, bool reversed, const Tensor<T>& w_s,
                        const LstmParams<T>& p, TextReduce reduce) {
  const std::size_t n = seqs.size(), H = p.hidden();
  std::size_t steps = 0;
  for (const auto& s : seqs) steps = std::max(steps, s.size());
  Tensor<T> h({n, H}), c({n, H});
  Tensor<T> acc;
  std::vector<std::uint8_t> live(n);
  std::vector<std::size_t> ids(n);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t len = seqs[i].size();
      live[i] = t < len;
      ids[i] = live[i] ? seqs[i][reversed ? len - 1 - t : t] : seqs[i][0];
    }
    auto [h2, c2] = lstm_cell(gather_cols(w_s, ids), h, c, p);
    const bool all_live = std::all_of(live.begin(), live.end(), [](std::uint8_t v) { return v != 0; });
    h = all_live ? h2 : select_rows(live, h2, h);
    c = all_live ? c2 : select_rows(live, c2, c);
    if (reduce == TextReduce::kMean) {
      auto contrib = all_live ? h2 : select_rows(live, h2, Tensor<T>({n, H}));
      acc = acc.defined() ? add(acc, contrib) : contrib;
    }
  }
  if (reduce == TextReduce::kFinalState) return h;
  std::vector<T> inv(n * H);
  for (std::size_t i = 0; i < n; ++i) std::fill_n(inv.begin() + i * H, H, T(1) / static_cast<T>(seqs[i].size()));
  return mul(acc, Tensor<T>({n, H}, std::move(inv)));
}

}  // namespace detail

/// Encodes each text into [forward final state ∥ backward final state]
/// (or the per-direction step means). Result [n × D_t]. Empty strings are
/// read as a single unknown character.
template <class T>
Tensor<T> encode_texts(const std::vector<std::string>& texts, const TextEncoderParams<T>& p) {
  if (texts.empty()) throw ValidationError("encode_texts: no texts");
  std::vector<std::vector<std::size_t>> seqs;
  seqs.reserve(texts.size());
  for (const auto& s : texts) {
    auto ids = encode_text(s);
    if (ids.empty()) ids.push_back(CharDictionary::kUnknown);
    seqs.push_back(std::move(ids));
  }
  auto f = detail::run_direction(seqs, false, p.w_s, p.fwd, p.reduce);
  auto b = detail::run_direction(seqs, true, p.w_s, p.bwd, p.reduce);
  return concat_cols<T>({f, b});
}

template <class T>
Tensor<T> encode_text(const std::string& text, const TextEncoderParams<T>& p) {
  return reshape(encode_texts<T>({text}, p), {p.dim()});
}

}  // namespace sdmg
