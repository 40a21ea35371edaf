#include "hdm/container.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "hdm/error.hpp"

namespace hdm::container {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed) {
  std::uint64_t h = seed;
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

void TensorFile::add(const std::string& name, const ag::Mat<float>& value) {
  require(!contains(name), ErrorKind::kInvariant, "duplicate tensor " + name);
  Entry e;
  e.name = name;
  e.rows = value.rows();
  e.cols = value.cols();
  e.data.assign(value.data(), value.data() + value.size());
  entries_.push_back(std::move(e));
}

bool TensorFile::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.name == name; });
}

ag::Mat<float> TensorFile::get(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name != name) continue;
    ag::Mat<float> out(e.rows, e.cols);
    std::copy(e.data.begin(), e.data.end(), out.data());
    return out;
  }
  fail(ErrorKind::kIntegrity, "tensor " + name + " not present in container");
}

std::vector<std::string> TensorFile::names() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

std::string TensorFile::blob() const {
  std::string out;
  for (const auto& e : entries_) {
    out.append(reinterpret_cast<const char*>(e.data.data()), e.data.size() * sizeof(float));
  }
  return out;
}

std::string TensorFile::serialize() const {
  const std::string body = blob();
  nlohmann::json tensors = nlohmann::json::object();
  std::uint64_t offset = 0;
  for (const auto& e : entries_) {
    const std::uint64_t nbytes = e.data.size() * sizeof(float);
    tensors[e.name] = {{"dtype", "F32"}, {"shape", {e.rows, e.cols}}, {"offset", offset}, {"nbytes", nbytes}};
    offset += nbytes;
  }
  nlohmann::json header = {{"metadata", metadata_},
                           {"tensors", tensors},
                           {"blob_fnv1a", hex64(fnv1a(body.data(), body.size()))}};
  const std::string text = header.dump();
  const std::uint64_t len = text.size();
  std::string out(kMagic, 8);
  out.append(reinterpret_cast<const char*>(&len), sizeof(len));
  out += text;
  out += body;
  return out;
}

TensorFile TensorFile::deserialize(const std::string& bytes) {
  require(bytes.size() >= 16 && bytes.compare(0, 8, kMagic) == 0, ErrorKind::kIntegrity,
          "not a tensor container (bad magic)");
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, sizeof(len));
  require(len <= bytes.size() - 16, ErrorKind::kIntegrity, "truncated container header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, len));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kIntegrity, std::string("container header is not valid JSON: ") + e.what());
  }
  const std::string body = bytes.substr(16 + len);
  require(header.contains("tensors") && header["tensors"].is_object(), ErrorKind::kIntegrity,
          "container header lacks a tensor table");
  require(header.value("blob_fnv1a", std::string{}) == hex64(fnv1a(body.data(), body.size())),
          ErrorKind::kIntegrity, "container blob checksum mismatch");

  struct Located {
    std::string name;
    std::uint64_t offset, nbytes;
    ag::Index rows, cols;
  };
  std::vector<Located> located;
  try {
    for (const auto& [name, info] : header["tensors"].items()) {
      require(info.at("dtype").get<std::string>() == "F32", ErrorKind::kIntegrity, "unsupported dtype for " + name);
      const auto shape = info.at("shape").get<std::vector<std::int64_t>>();
      require(shape.size() == 2 && shape[0] >= 0 && shape[1] >= 0, ErrorKind::kIntegrity, "bad shape for " + name);
      located.push_back({name, info.at("offset").get<std::uint64_t>(), info.at("nbytes").get<std::uint64_t>(),
                         shape[0], shape[1]});
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kIntegrity, std::string("malformed tensor table: ") + e.what());
  }
  std::sort(located.begin(), located.end(), [](const Located& a, const Located& b) { return a.offset < b.offset; });

  TensorFile out;
  std::uint64_t expect = 0;
  for (const auto& l : located) {
    require(l.offset == expect, ErrorKind::kIntegrity, "tensor blob has gaps or overlaps");
    require(l.nbytes == static_cast<std::uint64_t>(l.rows * l.cols) * sizeof(float), ErrorKind::kIntegrity,
            "tensor byte count does not match its shape: " + l.name);
    require(l.offset + l.nbytes <= body.size(), ErrorKind::kIntegrity, "tensor extends past the blob: " + l.name);
    Entry e;
    e.name = l.name;
    e.rows = l.rows;
    e.cols = l.cols;
    e.data.resize(static_cast<std::size_t>(l.rows * l.cols));
    std::memcpy(e.data.data(), body.data() + l.offset, l.nbytes);
    out.entries_.push_back(std::move(e));
    expect += l.nbytes;
  }
  require(expect == body.size(), ErrorKind::kIntegrity, "trailing bytes after the last tensor");
  out.metadata_ = header.value("metadata", nlohmann::json::object());
  return out;
}

void TensorFile::save(const std::filesystem::path& path) const {
  const std::string bytes = serialize();
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(f), ErrorKind::kIo, "cannot open " + tmp + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(f), ErrorKind::kIo, "write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

TensorFile TensorFile::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorKind::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize(ss.str());
}

}  // namespace hdm::container
