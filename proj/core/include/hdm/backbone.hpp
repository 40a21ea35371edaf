#pragma once

// Cross-U transformer backbone.
//
// Token stream layout: image tokens first, then projected text tokens. Only
// image tokens carry rotary positions; text rows are left unrotated.
//
// Execution order of transformer blocks (this is also the index order used
// for routing bounds):
//   N pre blocks
//   encoder blocks for depth 1..n_depth (n_enc each), state after depth d kept
//   decoder levels 1..n_depth (n_dec each); the first block of level l also
//     cross-attends to encoder state n_depth - l + 1 and adds the result to
//     its own output
//   M post blocks
// Every block is pre-norm with a gated residual; all blocks share one set of
// six modulation vectors produced once per forward pass.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hdm/autograd.hpp"
#include "hdm/geometry.hpp"
#include "hdm/image.hpp"
#include "hdm/params.hpp"
#include "hdm/routing.hpp"
#include "hdm/xut_config.hpp"

namespace hdm::backbone {

template <typename T>
struct Patches {
  ag::Mat<T> tokens;  // (grid_h * grid_w) x (C * patch^2)
  int grid_h = 0;
  int grid_w = 0;
};

// Token layout inside a patch: channel-major, then row, then column.
template <typename T>
Patches<T> patchify(const Image& image, int patch);

template <typename T>
Image unpatchify(const ag::Mat<T>& tokens, int grid_h, int grid_w, int patch, int channels);

// gamma ⊙ standardize(x) + beta with gamma, beta as 1 x d rows.
template <typename T>
ag::Var<T> adaln(const ag::Var<T>& x, const ag::Var<T>& gamma, const ag::Var<T>& beta);

template <typename T>
ag::Mat<T> shared_adaln(const ag::Mat<T>& x, const ag::Mat<T>& gamma, const ag::Mat<T>& beta);

// [cos(t * 1000 * f_k), sin(t * 1000 * f_k)], f_k = 10000^(-k / (dim / 2)).
template <typename T>
ag::Mat<T> timestep_features(double t, int dim);

// Encoder state a decoder level cross-attends to (both 1-based).
constexpr int skip_source_depth(int level, int n_depth) { return n_depth - level + 1; }

// The shared modulation set of one forward pass.
template <typename T>
struct Conditioning {
  ag::Var<T> embedding;
  ag::Var<T> shift_attn;
  ag::Var<T> gamma_attn;
  ag::Var<T> gate_attn;
  ag::Var<T> shift_mlp;
  ag::Var<T> gamma_mlp;
  ag::Var<T> gate_mlp;
};

struct TraceEvent {
  enum class Kind { kPre, kEncoder, kDecoder, kCross, kPost };
  Kind kind = Kind::kPre;
  int block = -1;        // flattened block index; -1 for cross-attention
  int depth = 0;         // encoder depth or decoder level, 1-based; 0 outside the U
  int skip_depth = 0;    // kCross only: encoder state read
  std::int64_t rows = 0; // stream rows processed
};

struct ForwardTrace {
  std::vector<TraceEvent> events;
};

template <typename T>
struct ForwardInputs {
  ag::Mat<T> image_tokens;                     // n_image x patch_dim
  std::span<const geometry::Coord> positions;  // n_image coordinates
  ag::Mat<T> text;                             // n_text x context_dim
  double t = 0.0;
  const routing::RouteMask* route = nullptr;
  // When set, used instead of `text` so gradients reach a learned context
  // (the null embedding during caption dropout).
  std::optional<ag::Var<T>> text_var;
};

template <typename T>
class XutModel {
 public:
  using Bound = std::vector<ag::Var<T>>;

  // allocate = false builds the parameter layout only (for counting).
  explicit XutModel(const XutConfig& cfg, bool allocate = true);

  // Truncated normal (std 0.02) projections; zero biases, modulation output and head.
  void init(std::uint64_t seed);
  // Overwrites every tensor with N(0, stddev^2); for gradient probes.
  void randomize(std::uint64_t seed, double stddev);

  const XutConfig& config() const { return cfg_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  Bound bind(ag::Tape<T>& tape, bool trainable) const { return params_.bind(tape, trainable); }

  int total_blocks() const { return cfg_.u_blocks() + cfg_.tread_before + cfg_.tread_after; }
  int pre_block(int j) const { return j; }
  int encoder_block(int depth, int j) const { return cfg_.tread_before + (depth - 1) * cfg_.n_enc + j; }
  int decoder_block(int level, int j) const {
    return cfg_.tread_before + cfg_.n_depth * cfg_.n_enc + (level - 1) * cfg_.n_dec + j;
  }
  int post_block(int j) const { return cfg_.tread_before + cfg_.u_blocks() + j; }

  Conditioning<T> conditioning(ag::Tape<T>& tape, const Bound& p, double t) const;

  ag::Var<T> block(const Bound& p, int index, const ag::Var<T>& h, const Conditioning<T>& cond,
                   const ag::RotaryTable<T>& rope) const;

  // gate ⊙ Attn(adaLN(h) as query, skip as key/value); no residual.
  ag::Var<T> cross_attention(const Bound& p, int level, const ag::Var<T>& h, const ag::Var<T>& skip,
                             const Conditioning<T>& cond, const ag::RotaryTable<T>& rope_q,
                             const ag::RotaryTable<T>& rope_kv) const;

  ag::Var<T> encoder_pass(const Bound& p, int depth, const ag::Var<T>& h, const Conditioning<T>& cond,
                          const ag::RotaryTable<T>& rope, ForwardTrace* trace = nullptr) const;

  // skips[d - 1] holds the encoder state of depth d. Skip states share the
  // query stream's rows, so the same rotary table applies to both.
  ag::Var<T> decoder_pass(const Bound& p, int level, const ag::Var<T>& h, std::span<const ag::Var<T>> skips,
                          const Conditioning<T>& cond, const ag::RotaryTable<T>& rope,
                          ForwardTrace* trace = nullptr) const;

  // Velocity tokens for the image rows (n_image x patch_dim).
  ag::Var<T> forward(ag::Tape<T>& tape, const Bound& p, const ForwardInputs<T>& in,
                     ForwardTrace* trace = nullptr) const;

  std::map<std::string, std::int64_t> parameter_count_by_module() const;

  template <typename U>
  XutModel<U> cast() const {
    XutModel<U> out(cfg_);
    out.params() = params_.template cast<U>();
    return out;
  }

 private:
  struct BlockIds {
    int qkv_w, qkv_b, out_w, out_b, fc1_w, fc1_b, fc2_w, fc2_b;
  };
  struct CrossIds {
    int q_w, q_b, kv_w, kv_b, out_w, out_b;
  };

  XutConfig cfg_;
  ParamSet<T> params_;
  int patch_w_, patch_b_, text_w_, text_b_;
  int time1_w_, time1_b_, time2_w_, time2_b_;
  int adaln_w_, adaln_b_;
  int head_w_, head_b_;
  std::vector<BlockIds> blocks_;
  std::vector<CrossIds> cross_;
};

// Convenience forward on a float model: image in, velocity image out.
Image xut_forward(const XutModel<float>& model, const Image& image, const geometry::PositionMap& pos,
                  const ag::Mat<float>& text, double t, const routing::RouteMask* route = nullptr);

extern template class XutModel<float>;
extern template class XutModel<double>;

}  // namespace hdm::backbone
