#pragma once

// Shorter-edge resize, token-aligned shifted square crops with matching
// position-map slices, a procedural captioned dataset and a PNG corpus.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "hdm/geometry.hpp"
#include "hdm/image.hpp"
#include "hdm/textcond.hpp"

namespace hdm::datapipe {

// Bilinear resize so that min(H', W') == target; the long side is floored.
// Returns the input unchanged when its short side already equals target.
Image resize_min_dim(const Image& image, int target);

// Bilinear resample to an exact size (half-pixel centers, edge clamped).
Image resize_bilinear(const Image& image, int height, int width);

struct Crop {
  Image image;                // X x X
  geometry::PositionMap pos;  // X/patch x X/patch
  int y0 = 0;                 // pixel origin in the resized image
  int x0 = 0;
};

// Square crop of side min(H, W) along the long axis. The offset is a
// uniformly drawn multiple of patch so that the pixel crop and the token-grid
// slice of pos_map cover the same window. pos_map must have
// (H / patch) x (W / patch) entries.
Crop shifted_square_crop(const Image& image, const geometry::PositionMap& pos_map, int patch,
                         std::mt19937_64& gen);

// Full uncropped token-resolution map for a target size, camera applied.
geometry::PositionMap inference_position_map(int height, int width, int patch, const geometry::CameraTransform& cam);

struct CropSample {
  Image image;
  geometry::PositionMap pos;
  std::string caption;
  std::vector<int> caption_tokens;
  int y0 = 0;
  int x0 = 0;
  int source_height = 0;  // resized, before cropping
  int source_width = 0;
};

struct RawSample {
  Image image;
  std::string caption;
};

// Colored shapes on black. Every draw is a pure function of (seed, index).
class ProceduralDataset {
 public:
  static const std::vector<std::string>& shapes();
  static const std::vector<std::string>& colors();
  static const std::vector<std::string>& placements();

  ProceduralDataset(std::uint64_t seed, int size, double rect_fraction = 0.0);

  // With probability rect_fraction the image is 2:1 or 1:2 instead of square.
  RawSample sample(std::uint64_t index) const;
  // Renders a described scene on an H x W canvas; caption "<color> <shape> <placement>".
  static RawSample render(int shape, int color, int placement, int height, int width);

  std::uint64_t seed() const { return seed_; }
  int size() const { return size_; }

 private:
  std::uint64_t seed_;
  int size_;
  double rect_fraction_;
};

struct CorpusEntry {
  std::filesystem::path image;
  std::string caption;
};

struct CorpusReport {
  std::size_t listed = 0;
  std::size_t skipped = 0;  // failed the decode probe
};

// Images with same-stem .txt captions in a directory, or a JSON manifest
// [{"image": path, "caption": text}, ...] with paths relative to the file.
class Corpus {
 public:
  // Throws kIo for an unreadable source and kCorpus when nothing usable is
  // found or more than half of the listed files fail to decode.
  static Corpus load(const std::filesystem::path& source);

  const std::vector<CorpusEntry>& entries() const { return entries_; }
  const CorpusReport& report() const { return report_; }

  // Decodes entry index % size() from disk; nothing is cached.
  RawSample sample(std::uint64_t index) const;

 private:
  std::vector<CorpusEntry> entries_;
  CorpusReport report_;
};

// "procedural:<seed>" or a corpus path.
struct DatasetSpec {
  std::string source = "procedural:0";
  int train_size = 32;
  std::uint64_t seed = 0;  // crop offsets and shuffling
  bool shuffle = true;
  double rect_fraction = 0.0;  // procedural only
};

class Pipeline {
 public:
  Pipeline(const DatasetSpec& spec, int patch, const textcond::Tokenizer& tokenizer);

  // decode -> resize_min_dim -> position map -> shifted crop -> tokenize.
  CropSample sample(std::uint64_t index) const;

  const DatasetSpec& spec() const { return spec_; }
  bool procedural() const { return procedural_ != nullptr; }
  const Corpus* corpus() const { return corpus_.get(); }

 private:
  DatasetSpec spec_;
  int patch_;
  textcond::Tokenizer tokenizer_;
  std::unique_ptr<ProceduralDataset> procedural_;
  std::unique_ptr<Corpus> corpus_;
};

// Full pipeline on an already decoded image.
CropSample make_crop_sample(const RawSample& raw, int train_size, int patch, std::mt19937_64& gen,
                            const textcond::Tokenizer& tokenizer);

}  // namespace hdm::datapipe
