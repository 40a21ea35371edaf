#pragma once

// Text conditioning: a whitespace tokenizer with byte fallback and a small
// causal transformer without any position embedding. Order information comes
// only from causal masking plus the leading BOS token.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "hdm/autograd.hpp"
#include "hdm/params.hpp"

namespace hdm::textcond {

class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;

  Tokenizer();

  int vocab_size() const { return static_cast<int>(words_.size()) + kFirstWord + 256; }
  // Word ids for a lowercased whitespace split; unknown words become one id
  // per UTF-8 byte. No BOS is added.
  std::vector<int> encode(std::string_view text) const;
  std::string decode(const std::vector<int>& ids) const;

  const std::vector<std::string>& words() const { return words_; }

 private:
  static constexpr int kFirstWord = 2;
  int byte_base() const { return kFirstWord + static_cast<int>(words_.size()); }
  std::vector<std::string> words_;
};

struct TextEncoderConfig {
  int context_dim = 64;
  int max_context = 32;  // including BOS
  int n_layers = 2;
  int n_heads = 4;
  int mlp_dim = 128;
  std::uint64_t seed = 1234;

  void validate() const;
  bool operator==(const TextEncoderConfig&) const = default;
};

// Token ids plus a per-row flag marking real (non-padding) rows.
struct Context {
  ag::Mat<float> rows;  // n x context_dim
  std::vector<std::uint8_t> valid;
  bool truncated = false;

  // Rows whose flag is set, in order.
  ag::Mat<float> valid_rows() const;
};

class ToyCausalEncoder {
 public:
  explicit ToyCausalEncoder(const TextEncoderConfig& cfg);

  const TextEncoderConfig& config() const { return cfg_; }
  const Tokenizer& tokenizer() const { return tokenizer_; }

  // Frozen weights from cfg.seed. The null row starts at zero.
  void init();

  // Final-layer hidden states, one row per id. `valid` (optional, one flag
  // per id) hides padding rows from attention as keys.
  ag::Mat<float> encode(std::span<const int> ids, std::span<const std::uint8_t> valid = {}) const;

  // BOS + tokens, head kept when longer than max_context. A prompt with no
  // tokens maps to the null row.
  Context encode_prompt(std::string_view prompt) const;

  // The learned unconditional context, 1 x context_dim.
  ag::Mat<float> null_condition() const { return params_[static_cast<std::size_t>(null_id_)].value; }
  ag::Mat<float>& null_row() { return params_[static_cast<std::size_t>(null_id_)].value; }

  ParamSet<float>& params() { return params_; }
  const ParamSet<float>& params() const { return params_; }
  std::int64_t parameter_count() const { return params_.count(); }

 private:
  struct LayerIds {
    int qkv_w, qkv_b, out_w, out_b, fc1_w, fc1_b, fc2_w, fc2_b;
  };

  TextEncoderConfig cfg_;
  Tokenizer tokenizer_;
  ParamSet<float> params_;
  int embed_id_ = 0;
  int null_id_ = 0;
  std::vector<LayerIds> layers_;
};

// Reads an externally computed context matrix (tensor "context") from a
// tensor container file.
ag::Mat<float> load_context_file(const std::filesystem::path& path);
void save_context_file(const std::filesystem::path& path, const ag::Mat<float>& context);

}  // namespace hdm::textcond
