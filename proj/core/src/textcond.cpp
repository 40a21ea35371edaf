#include "hdm/textcond.hpp"

#include <algorithm>
#include <cctype>
#include <random>
#include <sstream>

#include "hdm/container.hpp"

namespace hdm::textcond {

namespace {

const char* const kWords[] = {
    // scene vocabulary of the procedural dataset
    "circle", "square", "triangle", "red", "green", "blue", "yellow", "cyan", "magenta", "white", "top", "bottom",
    "left", "right", "center",
    // glue words
    "a", "an", "the", "of", "in", "on", "at", "and", "with", "small", "large", "big", "shape", "image", "background",
    "black", "photo", "picture", "corner", "middle", "upper", "lower"};

}  // namespace

Tokenizer::Tokenizer() : words_(std::begin(kWords), std::end(kWords)) {}

std::vector<int> Tokenizer::encode(std::string_view text) const {
  std::vector<int> out;
  std::istringstream in{std::string(text)};
  std::string word;
  while (in >> word) {
    std::string lower = word;
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    auto it = std::find(words_.begin(), words_.end(), lower);
    if (it != words_.end()) {
      out.push_back(kFirstWord + static_cast<int>(it - words_.begin()));
      continue;
    }
    for (unsigned char c : word) out.push_back(byte_base() + c);
  }
  return out;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
  std::string out;
  bool in_bytes = false;
  for (int id : ids) {
    if (id == kPad || id == kBos) continue;
    if (id >= byte_base()) {
      if (!in_bytes && !out.empty()) out += ' ';
      out += static_cast<char>(id - byte_base());
      in_bytes = true;
      continue;
    }
    if (!out.empty()) out += ' ';
    out += words_.at(static_cast<std::size_t>(id - kFirstWord));
    in_bytes = false;
  }
  return out;
}

void TextEncoderConfig::validate() const {
  require(context_dim > 0 && n_heads > 0 && context_dim % n_heads == 0, ErrorKind::kInvalidConfig,
          "text context_dim must be a positive multiple of n_heads");
  require(max_context >= 2, ErrorKind::kInvalidConfig, "text max_context must leave room for BOS and a token");
  require(n_layers >= 1 && mlp_dim > 0, ErrorKind::kInvalidConfig, "text encoder needs layers and an MLP");
}

ag::Mat<float> Context::valid_rows() const {
  std::vector<int> keep;
  for (std::size_t i = 0; i < valid.size(); ++i) {
    if (valid[i]) keep.push_back(static_cast<int>(i));
  }
  ag::Mat<float> out(static_cast<ag::Index>(keep.size()), rows.cols());
  for (std::size_t i = 0; i < keep.size(); ++i) out.row(static_cast<ag::Index>(i)) = rows.row(keep[i]);
  return out;
}

ToyCausalEncoder::ToyCausalEncoder(const TextEncoderConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int d = cfg_.context_dim;
  embed_id_ = params_.add("embed", tokenizer_.vocab_size(), d);
  for (int l = 0; l < cfg_.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l);
    LayerIds ids{};
    ids.qkv_w = params_.add(p + ".qkv.w", d, 3 * d);
    ids.qkv_b = params_.add(p + ".qkv.b", 1, 3 * d);
    ids.out_w = params_.add(p + ".out.w", d, d);
    ids.out_b = params_.add(p + ".out.b", 1, d);
    ids.fc1_w = params_.add(p + ".fc1.w", d, cfg_.mlp_dim);
    ids.fc1_b = params_.add(p + ".fc1.b", 1, cfg_.mlp_dim);
    ids.fc2_w = params_.add(p + ".fc2.w", cfg_.mlp_dim, d);
    ids.fc2_b = params_.add(p + ".fc2.b", 1, d);
    layers_.push_back(ids);
  }
  null_id_ = params_.add("null", 1, d);
  init();
}

void ToyCausalEncoder::init() {
  std::mt19937_64 rng(cfg_.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& t : params_) {
    t.value.setZero();
    if (!t.name.ends_with(".w") && t.name != "embed") continue;
    // Unit-variance embeddings, fan-in scaled projections.
    const double stddev = t.name == "embed" ? 1.0 : 1.0 / std::sqrt(static_cast<double>(t.value.rows()));
    for (ag::Index i = 0; i < t.value.size(); ++i) t.value.data()[i] = static_cast<float>(stddev * normal(rng));
  }
}

ag::Mat<float> ToyCausalEncoder::encode(std::span<const int> ids, std::span<const std::uint8_t> valid) const {
  require(valid.empty() || valid.size() == ids.size(), ErrorKind::kShape, "padding mask length mismatch");
  const int vocab = tokenizer_.vocab_size();
  for (int id : ids) require(id >= 0 && id < vocab, ErrorKind::kShape, "token id outside the vocabulary");
  ag::Tape<float> tape;
  const auto p = params_.bind(tape, false);
  std::vector<int> rows(ids.begin(), ids.end());
  auto h = ag::gather_rows(p[static_cast<std::size_t>(embed_id_)], std::span<const int>(rows));
  ag::AttentionMask mask;
  mask.causal = true;
  mask.key_valid.assign(valid.begin(), valid.end());
  for (const auto& l : layers_) {
    const ag::Index d = cfg_.context_dim;
    auto qkv = ag::linear(ag::layer_norm(h), p[static_cast<std::size_t>(l.qkv_w)], p[static_cast<std::size_t>(l.qkv_b)]);
    auto att = ag::attention(ag::slice_cols(qkv, 0, d), ag::slice_cols(qkv, d, d), ag::slice_cols(qkv, 2 * d, d),
                             cfg_.n_heads, &mask);
    h = ag::add(h, ag::linear(att, p[static_cast<std::size_t>(l.out_w)], p[static_cast<std::size_t>(l.out_b)]));
    auto mlp = ag::linear(ag::gelu(ag::linear(ag::layer_norm(h), p[static_cast<std::size_t>(l.fc1_w)],
                                              p[static_cast<std::size_t>(l.fc1_b)])),
                          p[static_cast<std::size_t>(l.fc2_w)], p[static_cast<std::size_t>(l.fc2_b)]);
    h = ag::add(h, mlp);
  }
  return ag::layer_norm(h).value();
}

Context ToyCausalEncoder::encode_prompt(std::string_view prompt) const {
  auto words = tokenizer_.encode(prompt);
  Context ctx;
  if (words.empty()) {
    ctx.rows = null_condition();
    ctx.valid = {1};
    return ctx;
  }
  std::vector<int> ids;
  ids.reserve(words.size() + 1);
  ids.push_back(Tokenizer::kBos);
  ids.insert(ids.end(), words.begin(), words.end());
  if (static_cast<int>(ids.size()) > cfg_.max_context) {
    ids.resize(static_cast<std::size_t>(cfg_.max_context));
    ctx.truncated = true;
  }
  ctx.rows = encode(ids);
  ctx.valid.assign(ids.size(), 1);
  return ctx;
}

ag::Mat<float> load_context_file(const std::filesystem::path& path) {
  return container::TensorFile::load(path).get("context");
}

void save_context_file(const std::filesystem::path& path, const ag::Mat<float>& context) {
  container::TensorFile f;
  f.add("context", context);
  f.metadata()["kind"] = "context";
  f.save(path);
}

}  // namespace hdm::textcond
