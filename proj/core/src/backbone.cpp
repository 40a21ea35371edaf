#include "hdm/backbone.hpp"

#include <cmath>
#include <random>
#include <string>

namespace hdm::backbone {

// ---------------------------------------------------------------------------
// XutConfig

void XutConfig::validate() const {
  auto check = [](bool ok, const std::string& what) { require(ok, ErrorKind::kInvalidConfig, what); };
  check(model_dim > 0 && context_dim > 0 && mlp_dim > 0, "dimensions must be positive");
  check(n_heads > 0 && head_dim > 0, "head count and head_dim must be positive");
  check(n_heads * head_dim == model_dim, "n_heads * head_dim must equal model_dim");
  check(n_depth >= 1, "n_depth must be at least 1");
  check(n_enc >= 1 && n_dec >= 1, "every depth needs at least one encoder and one decoder block");
  check(tread_before >= 0 && tread_after >= 0, "TREAD block counts must be non-negative");
  check(patch_size >= 1 && in_channels >= 1, "patch size and channel count must be positive");
  check(time_freq_dim >= 2 && time_freq_dim % 2 == 0, "time_freq_dim must be even");
  try {
    rope().validate();
  } catch (const Error& e) {
    fail(ErrorKind::kInvalidConfig, e.what());
  }
}

geometry::RopeFrequencies XutConfig::rope() const {
  return {head_dim, rope_fraction, rope_base, rope_freq_scale};
}

XutConfig XutConfig::xut_small() {
  XutConfig c;
  c.model_dim = 896;
  c.context_dim = 640;
  c.mlp_dim = 3072;
  c.n_heads = 14;
  c.head_dim = 64;
  c.n_depth = 4;
  c.n_enc = 1;
  c.n_dec = 2;
  c.tread_before = 1;
  c.tread_after = 3;
  c.patch_size = 2;
  c.in_channels = 4;
  c.time_freq_dim = 256;
  return c;
}

XutConfig XutConfig::xut_base() {
  XutConfig c = xut_small();
  c.model_dim = 1024;
  c.context_dim = 1024;
  c.n_heads = 16;
  c.n_dec = 3;
  return c;
}

XutConfig XutConfig::xut_large() {
  XutConfig c = xut_base();
  c.model_dim = 1152;
  c.context_dim = 1152;
  c.mlp_dim = 5120;
  c.n_heads = 12;
  c.head_dim = 96;
  return c;
}

XutConfig XutConfig::toy() { return XutConfig{}; }

XutConfig XutConfig::micro() {
  XutConfig c;
  c.model_dim = 16;
  c.context_dim = 8;
  c.mlp_dim = 32;
  c.n_heads = 2;
  c.head_dim = 8;
  c.n_depth = 2;
  c.n_enc = 1;
  c.n_dec = 2;
  c.tread_before = 1;
  c.tread_after = 1;
  c.time_freq_dim = 16;
  return c;
}

void to_json(nlohmann::json& j, const XutConfig& c) {
  j = nlohmann::json{{"model_dim", c.model_dim},
                     {"context_dim", c.context_dim},
                     {"mlp_dim", c.mlp_dim},
                     {"n_heads", c.n_heads},
                     {"head_dim", c.head_dim},
                     {"n_depth", c.n_depth},
                     {"n_enc", c.n_enc},
                     {"n_dec", c.n_dec},
                     {"tread_before", c.tread_before},
                     {"tread_after", c.tread_after},
                     {"patch_size", c.patch_size},
                     {"in_channels", c.in_channels},
                     {"time_freq_dim", c.time_freq_dim},
                     {"rope_base", c.rope_base},
                     {"rope_fraction", c.rope_fraction},
                     {"rope_freq_scale", c.rope_freq_scale}};
}

void from_json(const nlohmann::json& j, XutConfig& c) {
  const XutConfig d;
  c.model_dim = j.value("model_dim", d.model_dim);
  c.context_dim = j.value("context_dim", d.context_dim);
  c.mlp_dim = j.value("mlp_dim", d.mlp_dim);
  c.n_heads = j.value("n_heads", d.n_heads);
  c.head_dim = j.value("head_dim", d.head_dim);
  c.n_depth = j.value("n_depth", d.n_depth);
  c.n_enc = j.value("n_enc", d.n_enc);
  c.n_dec = j.value("n_dec", d.n_dec);
  c.tread_before = j.value("tread_before", d.tread_before);
  c.tread_after = j.value("tread_after", d.tread_after);
  c.patch_size = j.value("patch_size", d.patch_size);
  c.in_channels = j.value("in_channels", d.in_channels);
  c.time_freq_dim = j.value("time_freq_dim", d.time_freq_dim);
  c.rope_base = j.value("rope_base", d.rope_base);
  c.rope_fraction = j.value("rope_fraction", d.rope_fraction);
  c.rope_freq_scale = j.value("rope_freq_scale", d.rope_freq_scale);
}

DerivedCounts derived_counts(const XutConfig& cfg, int pixel_image_size) {
  DerivedCounts out;
  out.total_blocks = static_cast<std::int64_t>(cfg.n_enc + cfg.n_dec) * cfg.n_depth + cfg.tread_before +
                     cfg.tread_after;
  out.total_attention_layers = out.total_blocks + cfg.n_depth;
  const std::int64_t latent_side = 256 / (8 * cfg.patch_size);
  out.seq_len_latent_256 = latent_side * latent_side;
  const std::int64_t pixel_side = pixel_image_size / cfg.patch_size;
  out.seq_len_pixel = pixel_side * pixel_side;
  return out;
}

// ---------------------------------------------------------------------------
// Free functions

template <typename T>
Patches<T> patchify(const Image& image, int patch) {
  require(patch >= 1, ErrorKind::kShape, "patch size must be positive");
  require(image.height % patch == 0 && image.width % patch == 0, ErrorKind::kShape,
          "image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
              " is not divisible by patch " + std::to_string(patch));
  Patches<T> out;
  out.grid_h = image.height / patch;
  out.grid_w = image.width / patch;
  out.tokens.resize(static_cast<ag::Index>(out.grid_h) * out.grid_w, image.channels * patch * patch);
  for (int gy = 0; gy < out.grid_h; ++gy) {
    for (int gx = 0; gx < out.grid_w; ++gx) {
      const ag::Index row = static_cast<ag::Index>(gy) * out.grid_w + gx;
      ag::Index col = 0;
      for (int c = 0; c < image.channels; ++c) {
        for (int dy = 0; dy < patch; ++dy) {
          for (int dx = 0; dx < patch; ++dx) {
            out.tokens(row, col++) = static_cast<T>(image.at(c, gy * patch + dy, gx * patch + dx));
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
Image unpatchify(const ag::Mat<T>& tokens, int grid_h, int grid_w, int patch, int channels) {
  require(tokens.rows() == static_cast<ag::Index>(grid_h) * grid_w &&
              tokens.cols() == static_cast<ag::Index>(channels) * patch * patch,
          ErrorKind::kShape, "token matrix does not match the patch grid");
  Image img(channels, grid_h * patch, grid_w * patch);
  for (int gy = 0; gy < grid_h; ++gy) {
    for (int gx = 0; gx < grid_w; ++gx) {
      const ag::Index row = static_cast<ag::Index>(gy) * grid_w + gx;
      ag::Index col = 0;
      for (int c = 0; c < channels; ++c) {
        for (int dy = 0; dy < patch; ++dy) {
          for (int dx = 0; dx < patch; ++dx) {
            img.at(c, gy * patch + dy, gx * patch + dx) = static_cast<float>(tokens(row, col++));
          }
        }
      }
    }
  }
  return img;
}

template <typename T>
ag::Var<T> adaln(const ag::Var<T>& x, const ag::Var<T>& gamma, const ag::Var<T>& beta) {
  return ag::add_row(ag::mul_row(ag::layer_norm(x), gamma), beta);
}

template <typename T>
ag::Mat<T> shared_adaln(const ag::Mat<T>& x, const ag::Mat<T>& gamma, const ag::Mat<T>& beta) {
  require(gamma.rows() == 1 && beta.rows() == 1 && gamma.cols() == x.cols() && beta.cols() == x.cols(),
          ErrorKind::kShape, "modulation vectors must be 1 x model_dim");
  ag::Tape<T> tape;
  return adaln(tape.constant(x), tape.constant(gamma), tape.constant(beta)).value();
}

template <typename T>
ag::Mat<T> timestep_features(double t, int dim) {
  const int half = dim / 2;
  ag::Mat<T> out(1, dim);
  for (int k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * k / half);
    const double arg = t * 1000.0 * freq;
    out(0, k) = static_cast<T>(std::cos(arg));
    out(0, half + k) = static_cast<T>(std::sin(arg));
  }
  return out;
}

// ---------------------------------------------------------------------------
// XutModel

template <typename T>
XutModel<T>::XutModel(const XutConfig& cfg, bool allocate) : cfg_(cfg), params_(allocate) {
  cfg_.validate();
  const int d = cfg_.model_dim;
  patch_w_ = params_.add("patch_in.w", cfg_.patch_dim(), d);
  patch_b_ = params_.add("patch_in.b", 1, d);
  text_w_ = params_.add("text_in.w", cfg_.context_dim, d);
  text_b_ = params_.add("text_in.b", 1, d);
  time1_w_ = params_.add("time_mlp.fc1.w", cfg_.time_freq_dim, d);
  time1_b_ = params_.add("time_mlp.fc1.b", 1, d);
  time2_w_ = params_.add("time_mlp.fc2.w", d, d);
  time2_b_ = params_.add("time_mlp.fc2.b", 1, d);
  adaln_w_ = params_.add("adaln.w", d, 6 * d);
  adaln_b_ = params_.add("adaln.b", 1, 6 * d);

  auto add_block = [&](const std::string& prefix) {
    BlockIds b{};
    b.qkv_w = params_.add(prefix + ".attn.qkv.w", d, 3 * d);
    b.qkv_b = params_.add(prefix + ".attn.qkv.b", 1, 3 * d);
    b.out_w = params_.add(prefix + ".attn.out.w", d, d);
    b.out_b = params_.add(prefix + ".attn.out.b", 1, d);
    b.fc1_w = params_.add(prefix + ".mlp.fc1.w", d, cfg_.mlp_dim);
    b.fc1_b = params_.add(prefix + ".mlp.fc1.b", 1, cfg_.mlp_dim);
    b.fc2_w = params_.add(prefix + ".mlp.fc2.w", cfg_.mlp_dim, d);
    b.fc2_b = params_.add(prefix + ".mlp.fc2.b", 1, d);
    blocks_.push_back(b);
  };
  for (int j = 0; j < cfg_.tread_before; ++j) add_block("pre." + std::to_string(j));
  for (int dep = 1; dep <= cfg_.n_depth; ++dep) {
    for (int j = 0; j < cfg_.n_enc; ++j) add_block("enc." + std::to_string(dep) + "." + std::to_string(j));
  }
  for (int lvl = 1; lvl <= cfg_.n_depth; ++lvl) {
    for (int j = 0; j < cfg_.n_dec; ++j) add_block("dec." + std::to_string(lvl) + "." + std::to_string(j));
  }
  for (int j = 0; j < cfg_.tread_after; ++j) add_block("post." + std::to_string(j));

  for (int lvl = 1; lvl <= cfg_.n_depth; ++lvl) {
    const std::string prefix = "cross." + std::to_string(lvl);
    CrossIds c{};
    c.q_w = params_.add(prefix + ".q.w", d, d);
    c.q_b = params_.add(prefix + ".q.b", 1, d);
    c.kv_w = params_.add(prefix + ".kv.w", d, 2 * d);
    c.kv_b = params_.add(prefix + ".kv.b", 1, 2 * d);
    c.out_w = params_.add(prefix + ".out.w", d, d);
    c.out_b = params_.add(prefix + ".out.b", 1, d);
    cross_.push_back(c);
  }

  head_w_ = params_.add("head.w", d, cfg_.patch_dim());
  head_b_ = params_.add("head.b", 1, cfg_.patch_dim());
}

template <typename T>
void XutModel<T>::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto trunc_normal = [&] {
    double v;
    do {
      v = normal(rng);
    } while (std::abs(v) > 2.0);
    return 0.02 * v;
  };
  for (auto& t : params_) {
    const bool is_weight = t.name.ends_with(".w");
    const bool zero_init = t.name.starts_with("adaln.") || t.name.starts_with("head.");
    if (!is_weight || zero_init) {
      t.value.setZero();
      continue;
    }
    for (ag::Index i = 0; i < t.value.size(); ++i) t.value.data()[i] = static_cast<T>(trunc_normal());
  }
}

template <typename T>
void XutModel<T>::randomize(std::uint64_t seed, double stddev) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, stddev);
  for (auto& t : params_) {
    for (ag::Index i = 0; i < t.value.size(); ++i) t.value.data()[i] = static_cast<T>(normal(rng));
  }
}

template <typename T>
Conditioning<T> XutModel<T>::conditioning(ag::Tape<T>& tape, const Bound& p, double t) const {
  const ag::Index d = cfg_.model_dim;
  auto feat = tape.constant(timestep_features<T>(t, cfg_.time_freq_dim));
  auto hidden = ag::silu(ag::linear(feat, p[time1_w_], p[time1_b_]));
  Conditioning<T> c;
  c.embedding = ag::linear(hidden, p[time2_w_], p[time2_b_]);
  auto mod = ag::linear(ag::silu(c.embedding), p[adaln_w_], p[adaln_b_]);
  c.shift_attn = ag::slice_cols(mod, 0, d);
  c.gamma_attn = ag::add_scalar(ag::slice_cols(mod, d, d), T(1));
  c.gate_attn = ag::slice_cols(mod, 2 * d, d);
  c.shift_mlp = ag::slice_cols(mod, 3 * d, d);
  c.gamma_mlp = ag::add_scalar(ag::slice_cols(mod, 4 * d, d), T(1));
  c.gate_mlp = ag::slice_cols(mod, 5 * d, d);
  return c;
}

template <typename T>
ag::Var<T> XutModel<T>::block(const Bound& p, int index, const ag::Var<T>& h, const Conditioning<T>& cond,
                              const ag::RotaryTable<T>& rope) const {
  require(index >= 0 && index < static_cast<int>(blocks_.size()), ErrorKind::kInvariant, "block index out of range");
  const auto& b = blocks_[static_cast<std::size_t>(index)];
  const ag::Index d = cfg_.model_dim;
  auto a = adaln(h, cond.gamma_attn, cond.shift_attn);
  auto qkv = ag::linear(a, p[b.qkv_w], p[b.qkv_b]);
  auto q = ag::rotary(ag::slice_cols(qkv, 0, d), rope, cfg_.n_heads);
  auto k = ag::rotary(ag::slice_cols(qkv, d, d), rope, cfg_.n_heads);
  auto v = ag::slice_cols(qkv, 2 * d, d);
  auto att = ag::attention(q, k, v, cfg_.n_heads);
  auto x = ag::add(h, ag::mul_row(ag::linear(att, p[b.out_w], p[b.out_b]), cond.gate_attn));
  auto m = adaln(x, cond.gamma_mlp, cond.shift_mlp);
  auto mlp = ag::linear(ag::gelu(ag::linear(m, p[b.fc1_w], p[b.fc1_b])), p[b.fc2_w], p[b.fc2_b]);
  return ag::add(x, ag::mul_row(mlp, cond.gate_mlp));
}

template <typename T>
ag::Var<T> XutModel<T>::cross_attention(const Bound& p, int level, const ag::Var<T>& h, const ag::Var<T>& skip,
                                        const Conditioning<T>& cond, const ag::RotaryTable<T>& rope_q,
                                        const ag::RotaryTable<T>& rope_kv) const {
  require(level >= 1 && level <= cfg_.n_depth, ErrorKind::kInvariant, "decoder level out of range");
  const auto& c = cross_[static_cast<std::size_t>(level - 1)];
  const ag::Index d = cfg_.model_dim;
  auto a = adaln(h, cond.gamma_attn, cond.shift_attn);
  auto q = ag::rotary(ag::linear(a, p[c.q_w], p[c.q_b]), rope_q, cfg_.n_heads);
  auto kv = ag::linear(skip, p[c.kv_w], p[c.kv_b]);
  auto k = ag::rotary(ag::slice_cols(kv, 0, d), rope_kv, cfg_.n_heads);
  auto v = ag::slice_cols(kv, d, d);
  auto att = ag::attention(q, k, v, cfg_.n_heads);
  return ag::mul_row(ag::linear(att, p[c.out_w], p[c.out_b]), cond.gate_attn);
}

template <typename T>
ag::Var<T> XutModel<T>::encoder_pass(const Bound& p, int depth, const ag::Var<T>& h, const Conditioning<T>& cond,
                                     const ag::RotaryTable<T>& rope, ForwardTrace* trace) const {
  require(depth >= 1 && depth <= cfg_.n_depth, ErrorKind::kInvariant, "encoder depth out of range");
  auto x = h;
  for (int j = 0; j < cfg_.n_enc; ++j) {
    const int idx = encoder_block(depth, j);
    x = block(p, idx, x, cond, rope);
    if (trace) trace->events.push_back({TraceEvent::Kind::kEncoder, idx, depth, 0, x.rows()});
  }
  return x;
}

template <typename T>
ag::Var<T> XutModel<T>::decoder_pass(const Bound& p, int level, const ag::Var<T>& h,
                                     std::span<const ag::Var<T>> skips, const Conditioning<T>& cond,
                                     const ag::RotaryTable<T>& rope, ForwardTrace* trace) const {
  require(level >= 1 && level <= cfg_.n_depth, ErrorKind::kInvariant, "decoder level out of range");
  const int src = skip_source_depth(level, cfg_.n_depth);
  require(src >= 1 && src <= static_cast<int>(skips.size()) && skips[static_cast<std::size_t>(src - 1)].valid(),
          ErrorKind::kInvariant, "missing encoder state " + std::to_string(src) + " for decoder level " +
                                     std::to_string(level));
  const auto& skip = skips[static_cast<std::size_t>(src - 1)];
  require(skip.rows() == h.rows(), ErrorKind::kInvariant, "skip state rows differ from the decoder stream");

  const int first = decoder_block(level, 0);
  auto x = block(p, first, h, cond, rope);
  if (trace) trace->events.push_back({TraceEvent::Kind::kDecoder, first, level, 0, x.rows()});
  x = ag::add(x, cross_attention(p, level, h, skip, cond, rope, rope));
  if (trace) trace->events.push_back({TraceEvent::Kind::kCross, -1, level, src, x.rows()});
  for (int j = 1; j < cfg_.n_dec; ++j) {
    const int idx = decoder_block(level, j);
    x = block(p, idx, x, cond, rope);
    if (trace) trace->events.push_back({TraceEvent::Kind::kDecoder, idx, level, 0, x.rows()});
  }
  return x;
}

template <typename T>
ag::Var<T> XutModel<T>::forward(ag::Tape<T>& tape, const Bound& p, const ForwardInputs<T>& in,
                                ForwardTrace* trace) const {
  const auto n_image = in.image_tokens.rows();
  require(in.image_tokens.cols() == cfg_.patch_dim(), ErrorKind::kShape, "image token width != C * patch^2");
  require(static_cast<ag::Index>(in.positions.size()) == n_image, ErrorKind::kShape,
          "position map size does not match the image token grid");
  const auto n_text = in.text_var ? in.text_var->rows() : in.text.rows();
  require((in.text_var ? in.text_var->cols() : in.text.cols()) == cfg_.context_dim, ErrorKind::kShape,
          "text width != context_dim");
  require(in.t >= 0.0 && in.t <= 1.0, ErrorKind::kShape, "time must lie in [0, 1]");
  require(p.size() == params_.size(), ErrorKind::kInvariant, "bound parameters do not match the model");

  auto x_img = ag::linear(tape.constant(in.image_tokens), p[patch_w_], p[patch_b_]);
  auto x_txt = ag::linear(in.text_var ? *in.text_var : tape.constant(in.text), p[text_w_], p[text_b_]);
  auto h = ag::concat_rows(x_img, x_txt);
  const auto cond = conditioning(tape, p, in.t);
  const auto rope_full =
      geometry::make_rotary_table<T>(in.positions, static_cast<int>(n_text), cfg_.rope());

  for (int j = 0; j < cfg_.tread_before; ++j) {
    h = block(p, pre_block(j), h, cond, rope_full);
    if (trace) trace->events.push_back({TraceEvent::Kind::kPre, pre_block(j), 0, 0, h.rows()});
  }

  std::optional<routing::RouteSplit<T>> split;
  ag::RotaryTable<T> rope_u;
  if (in.route) {
    split = routing::route_split(h, static_cast<int>(n_image), *in.route);
    h = split->kept;
    rope_u = rope_full.gather(split->kept_rows);
  }
  const auto& rope = in.route ? rope_u : rope_full;

  std::vector<ag::Var<T>> skips;
  skips.reserve(static_cast<std::size_t>(cfg_.n_depth));
  for (int dep = 1; dep <= cfg_.n_depth; ++dep) {
    h = encoder_pass(p, dep, h, cond, rope, trace);
    skips.push_back(h);
  }
  for (int lvl = 1; lvl <= cfg_.n_depth; ++lvl) h = decoder_pass(p, lvl, h, skips, cond, rope, trace);

  if (split) h = routing::route_merge(h, *split);

  for (int j = 0; j < cfg_.tread_after; ++j) {
    h = block(p, post_block(j), h, cond, rope_full);
    if (trace) trace->events.push_back({TraceEvent::Kind::kPost, post_block(j), 0, 0, h.rows()});
  }

  auto img = ag::slice_rows(h, 0, n_image);
  return ag::linear(adaln(img, cond.gamma_attn, cond.shift_attn), p[head_w_], p[head_b_]);
}

template <typename T>
std::map<std::string, std::int64_t> XutModel<T>::parameter_count_by_module() const {
  std::map<std::string, std::int64_t> out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& name = params_[i].name;
    const auto [r, c] = params_.shape(i);
    out[name.substr(0, name.find('.'))] += r * c;
  }
  return out;
}

Image xut_forward(const XutModel<float>& model, const Image& image, const geometry::PositionMap& pos,
                  const ag::Mat<float>& text, double t, const routing::RouteMask* route) {
  const auto& cfg = model.config();
  require(image.channels == cfg.in_channels, ErrorKind::kShape, "image channel count does not match the model");
  auto patches = patchify<float>(image, cfg.patch_size);
  require(pos.height() == patches.grid_h && pos.width() == patches.grid_w, ErrorKind::kShape,
          "position map grid does not match the image token grid");
  ag::Tape<float> tape;
  const auto bound = model.bind(tape, false);
  ForwardInputs<float> in{std::move(patches.tokens), pos.coords(), text, t, route, std::nullopt};
  auto out = model.forward(tape, bound, in);
  return unpatchify(out.value(), patches.grid_h, patches.grid_w, cfg.patch_size, cfg.in_channels);
}

template Patches<float> patchify<float>(const Image&, int);
template Patches<double> patchify<double>(const Image&, int);
template Image unpatchify<float>(const ag::Mat<float>&, int, int, int, int);
template Image unpatchify<double>(const ag::Mat<double>&, int, int, int, int);
template ag::Var<float> adaln<float>(const ag::Var<float>&, const ag::Var<float>&, const ag::Var<float>&);
template ag::Var<double> adaln<double>(const ag::Var<double>&, const ag::Var<double>&, const ag::Var<double>&);
template ag::Mat<float> shared_adaln<float>(const ag::Mat<float>&, const ag::Mat<float>&, const ag::Mat<float>&);
template ag::Mat<double> shared_adaln<double>(const ag::Mat<double>&, const ag::Mat<double>&,
                                              const ag::Mat<double>&);
template ag::Mat<float> timestep_features<float>(double, int);
template ag::Mat<double> timestep_features<double>(double, int);

template class XutModel<float>;
template class XutModel<double>;

}  // namespace hdm::backbone
