#pragma once

// Tensor container file:
//
//   bytes [0, 8)      magic "HDMTNSR1"
//   bytes [8, 16)     little-endian u64 header length L
//   bytes [16, 16+L)  UTF-8 JSON header
//   bytes [16+L, ...) tensor blob
//
// Header: {"metadata": {...}, "blob_fnv1a": "<16 hex digits>",
//          "tensors": {name: {"dtype": "F32", "shape": [r, c],
//                             "offset": byte offset in blob, "nbytes": n}}}
// JSON keys are emitted sorted, tensors are laid out in insertion order, so
// save(load(file)) reproduces file byte for byte.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "hdm/autograd.hpp"

namespace hdm::container {

inline constexpr char kMagic[9] = "HDMTNSR1";

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed = 0xcbf29ce484222325ULL);

class TensorFile {
 public:
  void add(const std::string& name, const ag::Mat<float>& value);
  bool contains(const std::string& name) const;
  ag::Mat<float> get(const std::string& name) const;
  std::vector<std::string> names() const;  // insertion (blob) order

  nlohmann::json& metadata() { return metadata_; }
  const nlohmann::json& metadata() const { return metadata_; }

  std::string serialize() const;
  // Throws kIntegrity on malformed input or checksum mismatch.
  static TensorFile deserialize(const std::string& bytes);

  void save(const std::filesystem::path& path) const;
  static TensorFile load(const std::filesystem::path& path);

  // Blob bytes only (weights), for byte-identity checks.
  std::string blob() const;

 private:
  struct Entry {
    std::string name;
    ag::Index rows = 0;
    ag::Index cols = 0;
    std::vector<float> data;
  };
  std::vector<Entry> entries_;
  nlohmann::json metadata_ = nlohmann::json::object();
};

}  // namespace hdm::container
